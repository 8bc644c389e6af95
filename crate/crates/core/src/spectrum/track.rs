//! Adiabatic level tracking along a one-parameter path.
//!
//! Consecutive eigensystems are matched by maximal eigenvector overlap. When
//! the best overlap is ambiguous the interval is bisected, so narrow avoided
//! crossings are followed adiabatically instead of swapping labels.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{eigh_at, unique_labels, StateLabel};
use crate::error::{Error, Result};
use crate::hamiltonian::SpinSystemParams;
use crate::spin::{fix_phase, Eigensystem};

/// Overlap^2 below which an interval is subdivided.
const REFINE_BELOW: f64 = 0.75;
/// Overlap^2 that must be exceeded once refinement is exhausted.
const ACCEPT_ABOVE: f64 = 0.5;
/// Default bisection depth per grid interval.
pub const MAX_REFINE_DEPTH: u32 = 40;

/// One adiabatically continued energy level.
#[derive(Clone, Debug)]
pub struct LevelBranch {
    pub fields: Vec<f64>,
    /// MHz, one per field.
    pub energies: Vec<f64>,
    /// Label at the highest field of the sweep.
    pub label: StateLabel,
}

/// Eigensystems on a grid together with the branch permutation at each point.
#[derive(Clone, Debug)]
pub struct TrackedSweep {
    pub fields: Vec<f64>,
    pub eigen: Vec<Eigensystem>,
    /// `order[k][branch]` is the eigenvalue index of `branch` at grid point `k`.
    pub order: Vec<Vec<usize>>,
    /// Branch labels at the highest field; branch `b` is the `b`-th lowest
    /// level there.
    pub labels: Vec<StateLabel>,
}

impl TrackedSweep {
    pub fn n_branches(&self) -> usize {
        self.labels.len()
    }

    pub fn energy(&self, k: usize, branch: usize) -> f64 {
        self.eigen[k].values[self.order[k][branch]]
    }

    pub fn vector(&self, k: usize, branch: usize) -> DVector<Complex64> {
        self.eigen[k].vector(self.order[k][branch])
    }

    pub fn branch_of(&self, label: &StateLabel) -> Option<usize> {
        self.labels.iter().position(|l| l.same_state(label))
    }

    pub fn branches(&self) -> Vec<LevelBranch> {
        (0..self.n_branches())
            .map(|b| LevelBranch {
                fields: self.fields.clone(),
                energies: (0..self.fields.len()).map(|k| self.energy(k, b)).collect(),
                label: self.labels[b],
            })
            .collect()
    }
}

/// 16 adiabatically continued levels over an ascending field grid.
pub fn eigensystem_vs_field(params: &SpinSystemParams, grid: &[f64]) -> Result<Vec<LevelBranch>> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("field grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("field grid must be strictly ascending".into()));
    }
    Ok(track_field(params, grid)?.branches())
}

/// Tracks all levels along `grid`, which may run in either direction.
pub fn track_field(params: &SpinSystemParams, grid: &[f64]) -> Result<TrackedSweep> {
    track_field_with(params, grid, MAX_REFINE_DEPTH)
}

/// As [`track_field`] with an explicit bisection depth; depth 0 matches only
/// the supplied grid points.
pub fn track_field_with(params: &SpinSystemParams, grid: &[f64], max_depth: u32) -> Result<TrackedSweep> {
    params.validate()?;
    if grid.is_empty() || grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidParameter("field grid must be non-empty and finite".into()));
    }
    let eval = |b: f64| eigh_at(params, b);
    let (eigen, order) = track_path(&eval, grid, max_depth)?;
    let top = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    // Renumber branches by energy rank at the highest field.
    let n = order[0].len();
    let mut by_rank = vec![0; n];
    for (b, &e) in order[top].iter().enumerate() {
        by_rank[e] = b;
    }
    let order: Vec<Vec<usize>> = order
        .into_iter()
        .map(|o| by_rank.iter().map(|&b| o[b]).collect())
        .collect();
    let top_labels = unique_labels(&eigen[top], params.nuclear_spin);
    let labels = (0..n).map(|b| top_labels[order[top][b]]).collect();
    Ok(TrackedSweep {
        fields: grid.to_vec(),
        eigen,
        order,
        labels,
    })
}

/// Generic tracker: `eval(t)` must return an eigensystem of constant size.
/// Returns the (gauge-aligned) eigensystems at each `t` and the branch
/// permutations, with branch `b` defined as eigen index `b` at `ts[0]`.
pub(crate) fn track_path<F>(eval: &F, ts: &[f64], max_depth: u32) -> Result<(Vec<Eigensystem>, Vec<Vec<usize>>)>
where
    F: Fn(f64) -> Result<Eigensystem> + Sync,
{
    let mut eigen: Vec<Eigensystem> = ts.par_iter().map(|&t| eval(t)).collect::<Result<_>>()?;
    let n = eigen[0].dim();
    if eigen.len() > 1 {
        let next: Vec<_> = (0..n).map(|e| eigen[1].vector(e)).collect();
        align_clusters(&mut eigen[0], &next);
    }
    let mut order = vec![(0..n).collect::<Vec<_>>()];
    for k in 1..ts.len() {
        let prev: Vec<DVector<Complex64>> = order[k - 1].iter().map(|&e| eigen[k - 1].vector(e)).collect();
        let (_, tail) = eigen.split_at_mut(k);
        let perm = step(eval, &prev, ts[k - 1], ts[k], &mut tail[0], 0, max_depth)?;
        order.push(perm);
    }
    Ok((eigen, order))
}

fn step<F>(
    eval: &F,
    prev: &[DVector<Complex64>],
    ta: f64,
    tb: f64,
    next: &mut Eigensystem,
    depth: u32,
    max_depth: u32,
) -> Result<Vec<usize>>
where
    F: Fn(f64) -> Result<Eigensystem> + Sync,
{
    align_clusters(next, prev);
    let (perm, worst) = best_match(prev, next);
    let threshold = if depth < max_depth { REFINE_BELOW } else { ACCEPT_ABOVE };
    if let Some(perm) = perm {
        if worst >= threshold {
            return Ok(perm);
        }
    }
    if depth >= max_depth {
        return Err(Error::Tracking {
            from_mt: ta,
            to_mt: tb,
            overlap: worst,
        });
    }
    let tm = 0.5 * (ta + tb);
    let mut mid = eval(tm)?;
    let perm_mid = step(eval, prev, ta, tm, &mut mid, depth + 1, max_depth)?;
    let mid_vecs: Vec<_> = perm_mid.iter().map(|&e| mid.vector(e)).collect();
    step(eval, &mid_vecs, tm, tb, next, depth + 1, max_depth).map_err(|e| match e {
        Error::Tracking { overlap, .. } => Error::Tracking {
            from_mt: ta,
            to_mt: tb,
            overlap,
        },
        other => other,
    })
}

/// For each reference vector, the eigenvector with the largest overlap.
/// Returns `None` for the permutation if two references pick the same state.
fn best_match(prev: &[DVector<Complex64>], next: &Eigensystem) -> (Option<Vec<usize>>, f64) {
    let n = next.dim();
    let mut perm = Vec::with_capacity(prev.len());
    let mut used = vec![false; n];
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for r in prev {
        let mut best = 0;
        let mut best_ov = -1.0;
        for e in 0..n {
            let ov = next.vectors.column(e).dotc(r).norm_sqr();
            if ov > best_ov {
                best_ov = ov;
                best = e;
            }
        }
        worst = worst.min(best_ov);
        if used[best] {
            ok = false;
        }
        used[best] = true;
        perm.push(best);
    }
    (ok.then_some(perm), worst)
}

/// Rotates each exactly degenerate eigenspace of `es` onto the projections of
/// the reference vectors that live in it, so that matching is well defined.
pub(crate) fn align_clusters(es: &mut Eigensystem, reference: &[DVector<Complex64>]) {
    let scale = es.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    for cluster in es.clusters(tol) {
        if cluster.len() < 2 {
            continue;
        }
        let cols: Vec<DVector<Complex64>> = cluster.clone().map(|e| es.vector(e)).collect();
        let mut ranked: Vec<(f64, usize)> = reference
            .iter()
            .enumerate()
            .map(|(a, r)| (cols.iter().map(|c| c.dotc(r).norm_sqr()).sum::<f64>(), a))
            .collect();
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut basis: Vec<DVector<Complex64>> = Vec::with_capacity(cols.len());
        let candidates = ranked
            .iter()
            .take(cols.len())
            .map(|&(_, a)| {
                cols.iter()
                    .fold(DVector::zeros(es.dim()), |acc: DVector<Complex64>, c| acc + c * c.dotc(&reference[a]))
            })
            .chain(cols.iter().cloned());
        for mut v in candidates {
            if basis.len() == cols.len() {
                break;
            }
            for u in &basis {
                let proj = u.dotc(&v);
                v -= u * proj;
            }
            if v.norm() > 1e-6 {
                fix_phase(&mut v);
                basis.push(v);
            }
        }
        for (e, v) in cluster.zip(basis) {
            es.vectors.set_column(e, &v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{strainless_limit, HyperfineTensor};

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|k| lo + step * k as f64).collect()
    }

    #[test]
    fn zero_hyperfine_branches_are_straight_lines() {
        let p = SpinSystemParams::default().with_hyperfine(HyperfineTensor::ZERO);
        let g = grid(0.0, 20.0, 1.0);
        let branches = eigensystem_vs_field(&p, &g).unwrap();
        assert_eq!(branches.len(), 16);
        for br in &branches {
            let slope = br.label.pseudospin.ms() * p.electron_zeeman() + br.label.m_i() * p.nuclear_zeeman();
            for (b, e) in br.fields.iter().zip(&br.energies) {
                assert!((e - slope * b).abs() < 1e-9, "{}: {e} vs {}", br.label, slope * b);
            }
        }
    }

    #[test]
    fn reference_sweep_tracks_without_failure() {
        let p = SpinSystemParams::default();
        let g = grid(0.0, 50.0, 0.1);
        let branches = eigensystem_vs_field(&p, &g).unwrap();
        assert_eq!(branches.len(), 16);
        // Continuity: no jump exceeds the largest possible Zeeman slope by much.
        let bound = (p.electron_zeeman().abs() + 8.0 * p.nuclear_zeeman().abs()) * 0.1 * 1.5;
        for br in &branches {
            for w in br.energies.windows(2) {
                assert!((w[1] - w[0]).abs() <= bound);
            }
        }
        let mut labels: Vec<_> = branches.iter().map(|b| b.label.to_string()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 16);
    }

    #[test]
    fn reversed_grid_gives_same_branch_set() {
        let p = SpinSystemParams::default();
        let g = grid(5.0, 40.0, 0.25);
        let fwd = track_field(&p, &g).unwrap();
        let rev_grid: Vec<f64> = g.iter().rev().copied().collect();
        let rev = track_field(&p, &rev_grid).unwrap();
        let n = g.len();
        for b in 0..16 {
            assert!(fwd.labels[b].same_state(&rev.labels[b]));
            for k in 0..n {
                assert!((fwd.energy(k, b) - rev.energy(n - 1 - k, b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn exact_degeneracy_at_zero_field() {
        // a_zz only: every level doubly degenerate at B = 0
        let p = strainless_limit(&SpinSystemParams::default()).with_hyperfine(HyperfineTensor {
            a_zz: -230.0,
            ..HyperfineTensor::ZERO
        });
        let g = grid(0.0, 5.0, 0.5);
        let branches = eigensystem_vs_field(&p, &g).unwrap();
        for br in &branches {
            let ms = br.label.pseudospin.ms();
            let slope = ms * p.electron_zeeman() + br.label.m_i() * p.nuclear_zeeman();
            let off = -230.0 * ms * br.label.m_i();
            for (b, e) in br.fields.iter().zip(&br.energies) {
                assert!((e - (off + slope * b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coarse_grid_without_refinement_fails() {
        let p = SpinSystemParams::default();
        let err = track_field_with(&p, &[0.0, 25.0, 50.0], 0).unwrap_err();
        assert!(matches!(err, Error::Tracking { .. }));
        assert!(err.to_string().contains("refine the field grid"));
        track_field(&p, &[0.0, 25.0, 50.0]).unwrap();
    }

    #[test]
    fn rejects_bad_grids() {
        let p = SpinSystemParams::default();
        assert!(eigensystem_vs_field(&p, &[1.0]).is_err());
        assert!(eigensystem_vs_field(&p, &[2.0, 1.0]).is_err());
        assert!(eigensystem_vs_field(&p, &[1.0, f64::NAN]).is_err());
    }
}
