//! Clock transitions (df/dB = 0) and transition moments.

use nalgebra::DVector;
use num_complex::Complex64;

use super::track::{track_field, track_path, MAX_REFINE_DEPTH};
use super::{drive_operator_real, eigh_at, max_offdiag, strength_matrix, FieldEigensystem, StateLabel, DEFAULT_RELATIVE_FLOOR};
use crate::error::{Error, Result};
use crate::hamiltonian::SpinSystemParams;
use crate::spin::Eigensystem;

/// Grid intervals used to bracket clock points inside a window.
const CLOCK_GRID: usize = 2000;
/// |df/dB| in MHz/mT accepted as stationary.
const SLOPE_TOL: f64 = 1e-4;
/// Finite-difference step, mT.
const FD_STEP: f64 = 1e-3;
/// Step of the fallback tracking path, mT.
const RESOLVE_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClockPoint {
    pub b_mt: f64,
    /// MHz.
    pub frequency: f64,
    /// d^2 f / dB^2, MHz per mT^2.
    pub curvature: f64,
}

/// Eigen indices of `initial` and `final_` at `b_mt`.
///
/// Where either label is mixed (purity below 1/2, e.g. at an avoided
/// crossing) the levels are followed adiabatically in from a field further
/// from zero where both labels are clean.
pub fn resolve_levels(
    params: &SpinSystemParams,
    b_mt: f64,
    initial: &StateLabel,
    final_: &StateLabel,
) -> Result<(FieldEigensystem, usize, usize)> {
    if initial.same_state(final_) {
        return Err(Error::InvalidParameter(format!("initial and final state are both {initial}")));
    }
    for l in [initial, final_] {
        if l.basis_index(params.nuclear_spin).is_none() {
            return Err(Error::InvalidParameter(format!("label {l} is outside the nuclear spin")));
        }
    }
    let here = FieldEigensystem::new(params, b_mt)?;
    if let (Some(i), Some(f)) = (here.find(initial), here.find(final_)) {
        return Ok((here, i, f));
    }
    let dir = if b_mt < 0.0 { -1.0 } else { 1.0 };
    let mut d = 0.5;
    while d <= 512.0 {
        let far = FieldEigensystem::new(params, b_mt + dir * d)?;
        if let (Some(i), Some(f)) = (far.find(initial), far.find(final_)) {
            let n = (d / RESOLVE_STEP).ceil() as usize;
            let ts: Vec<f64> = (0..=n).map(|k| b_mt + dir * d * (1.0 - k as f64 / n as f64)).collect();
            let eval = |b: f64| eigh_at(params, b);
            let (eigen, order) = track_path(&eval, &ts, MAX_REFINE_DEPTH)?;
            let last = order.len() - 1;
            // track_path re-evaluates the far end; indices agree since eigh is deterministic.
            let (ii, ff) = (order[last][i], order[last][f]);
            let here = FieldEigensystem {
                b_mt,
                eigen: eigen.into_iter().last().unwrap(),
                labels: here.labels,
            };
            return Ok((here, ii, ff));
        }
        d *= 2.0;
    }
    let worst = [initial, final_]
        .into_iter()
        .map(|l| (l, here.best_purity(l, params.nuclear_spin)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    Err(Error::LabelUnresolved {
        label: worst.0.to_string(),
        field_mt: b_mt,
        purity: worst.1,
    })
}

/// `|<f|M_z|i>|`, MHz per mT.
pub fn transition_moment(
    params: &SpinSystemParams,
    b_mt: f64,
    initial: &StateLabel,
    final_: &StateLabel,
) -> Result<f64> {
    let (fe, i, f) = resolve_levels(params, b_mt, initial, final_)?;
    let s = strength_matrix(&fe.eigen, &drive_operator_real(params));
    Ok(s[(i, f)].sqrt())
}

/// Effective gyromagnetic ratio of the line, `|<f|M_z|i>| / 2`, MHz per mT.
///
/// The factor 1/2 is the rotating-wave share of a linearly polarised drive.
pub fn gyromagnetic_moment(
    params: &SpinSystemParams,
    b_mt: f64,
    initial: &StateLabel,
    final_: &StateLabel,
) -> Result<f64> {
    Ok(0.5 * transition_moment(params, b_mt, initial, final_)?)
}

fn overlap_pick(es: &Eigensystem, reference: &DVector<Complex64>) -> usize {
    (0..es.dim())
        .map(|k| (k, es.vector(k).dotc(reference).norm_sqr()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap()
}

struct LocalLine<'a> {
    params: &'a SpinSystemParams,
    ref_a: DVector<Complex64>,
    ref_b: DVector<Complex64>,
}

impl LocalLine<'_> {
    fn freq(&self, b: f64) -> Result<f64> {
        let es = eigh_at(self.params, b)?;
        let (a, c) = (overlap_pick(&es, &self.ref_a), overlap_pick(&es, &self.ref_b));
        Ok((es.values[c] - es.values[a]).abs())
    }

    fn slope(&self, b: f64) -> Result<f64> {
        Ok((self.freq(b + FD_STEP)? - self.freq(b - FD_STEP)?) / (2.0 * FD_STEP))
    }
}

/// Stationary points of the `initial <-> final_` frequency inside `window`
/// (mT), in ascending field.
///
/// Returns an empty list when the frequency is monotonic in the window and
/// [`Error::LineVanished`] when the line has no strength at a stationary point.
pub fn clock_transitions(
    params: &SpinSystemParams,
    initial: &StateLabel,
    final_: &StateLabel,
    window: (f64, f64),
) -> Result<Vec<ClockPoint>> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidParameter(format!("clock window ({lo}, {hi}) must be finite and ascending")));
    }
    let step = (hi - lo) / CLOCK_GRID as f64;
    let grid: Vec<f64> = (0..=CLOCK_GRID).map(|k| lo + step * k as f64).collect();
    let sweep = track_field(params, &grid)?;
    let top = CLOCK_GRID;
    let (_, ti, tf) = resolve_levels(params, hi, initial, final_)?;
    let branch = |e: usize| sweep.order[top].iter().position(|&x| x == e).unwrap();
    let (ba, bb) = (branch(ti), branch(tf));
    let f: Vec<f64> = (0..grid.len())
        .map(|k| (sweep.energy(k, bb) - sweep.energy(k, ba)).abs())
        .collect();
    let d: Vec<f64> = (1..grid.len() - 1).map(|k| (f[k + 1] - f[k - 1]) / (2.0 * step)).collect();
    let drive = drive_operator_real(params);
    let mut out = Vec::new();
    for j in 0..d.len().saturating_sub(1) {
        if !(d[j] == 0.0 || d[j].signum() != d[j + 1].signum()) {
            continue;
        }
        let (k0, k1) = (j + 1, j + 2);
        let near = if d[j].abs() < d[j + 1].abs() { k0 } else { k1 };
        let line = LocalLine {
            params,
            ref_a: sweep.vector(near, ba),
            ref_b: sweep.vector(near, bb),
        };
        let (mut a, mut b) = (grid[k0], grid[k1]);
        let mut sa = line.slope(a)?;
        let mut x = if d[j] == 0.0 { a } else { 0.5 * (a + b) };
        let mut sx = line.slope(x)?;
        for _ in 0..200 {
            if sx.abs() < SLOPE_TOL || b - a < 1e-12 {
                break;
            }
            if sx.signum() == sa.signum() {
                a = x;
                sa = sx;
            } else {
                b = x;
            }
            x = 0.5 * (a + b);
            sx = line.slope(x)?;
        }
        if sx.abs() >= SLOPE_TOL {
            // A cusp where two levels cross, not a smooth extremum.
            continue;
        }
        let f0 = line.freq(x)?;
        let curvature = (line.freq(x + FD_STEP)? - 2.0 * f0 + line.freq(x - FD_STEP)?) / (FD_STEP * FD_STEP);
        let es = eigh_at(params, x)?;
        let s = strength_matrix(&es, &drive);
        let (ia, ib) = (overlap_pick(&es, &line.ref_a), overlap_pick(&es, &line.ref_b));
        let floor = DEFAULT_RELATIVE_FLOOR * max_offdiag(&s);
        if s[(ia, ib)] < floor {
            return Err(Error::LineVanished {
                line: format!("{initial} <-> {final_}"),
                field_mt: x,
                strength: s[(ia, ib)],
                floor,
            });
        }
        if out.last().is_some_and(|p: &ClockPoint| (p.b_mt - x).abs() < 2.0 * step) {
            continue;
        }
        out.push(ClockPoint {
            b_mt: x,
            frequency: f0,
            curvature,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HyperfineTensor, SpinSystemParams};

    fn pair() -> (StateLabel, StateLabel) {
        (StateLabel::down(-3.5), StateLabel::up(-2.5))
    }

    #[test]
    fn pure_zeeman_has_no_clock_points() {
        let p = SpinSystemParams::default().with_hyperfine(HyperfineTensor::ZERO);
        let (i, f) = pair();
        assert!(clock_transitions(&p, &i, &f, (1.0, 60.0)).unwrap().is_empty());
    }

    #[test]
    fn default_parameters_have_a_clock_point_near_high_field_anchor() {
        let p = SpinSystemParams::default();
        let (i, f) = pair();
        let pts = clock_transitions(&p, &i, &f, (1.0, 60.0)).unwrap();
        assert!(!pts.is_empty());
        let c = pts.iter().find(|c| (c.b_mt - 29.0).abs() < 8.0);
        assert!(c.is_some(), "{pts:?}");
    }

    #[test]
    fn clock_point_is_stationary() {
        let p = SpinSystemParams::default();
        let (i, f) = pair();
        for c in clock_transitions(&p, &i, &f, (1.0, 60.0)).unwrap() {
            let g = |b: f64| {
                let (fe, a, z) = resolve_levels(&p, b, &i, &f).unwrap();
                (fe.eigen.values[z] - fe.eigen.values[a]).abs()
            };
            let h = 0.01;
            let slope = (g(c.b_mt + h) - g(c.b_mt - h)) / (2.0 * h);
            assert!(slope.abs() < 1e-2, "slope {slope} at {}", c.b_mt);
            assert!((g(c.b_mt) - c.frequency).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_window() {
        let (i, f) = pair();
        assert!(clock_transitions(&SpinSystemParams::default(), &i, &f, (10.0, 5.0)).is_err());
    }

    #[test]
    fn moment_of_uncoupled_double_flip_is_zero() {
        let p = SpinSystemParams::default().with_hyperfine(HyperfineTensor::ZERO);
        let (i, f) = pair();
        assert!(transition_moment(&p, 30.0, &i, &f).unwrap() < 1e-12);
    }

    #[test]
    fn gyromagnetic_is_half_the_bare_moment() {
        let p = SpinSystemParams::default();
        let (i, f) = pair();
        let bare = transition_moment(&p, 20.0, &i, &f).unwrap();
        let g = gyromagnetic_moment(&p, 20.0, &i, &f).unwrap();
        assert!(bare > 0.0);
        assert!((g - 0.5 * bare).abs() < 1e-12);
    }

    #[test]
    fn moment_ignores_global_phase() {
        let p = SpinSystemParams::default();
        let (i, f) = pair();
        let (fe, a, z) = resolve_levels(&p, 25.0, &i, &f).unwrap();
        let m = super::super::drive_operator(&p);
        let phase = Complex64::from_polar(1.0, 0.7);
        let va = fe.eigen.vector(a) * phase;
        let vz = fe.eigen.vector(z) * phase.conj();
        let direct = vz.dotc(&(m.as_matrix() * va)).norm();
        assert!((direct - transition_moment(&p, 25.0, &i, &f).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mixed_label_resolves_by_tracking() {
        let p = SpinSystemParams::default();
        let (i, f) = pair();
        // scan for a field where a plain lookup fails
        let mixed = (1..400).map(|k| k as f64 * 0.1).find(|&b| {
            let fe = FieldEigensystem::new(&p, b).unwrap();
            fe.find(&i).is_none() || fe.find(&f).is_none()
        });
        if let Some(b) = mixed {
            let (_, a, z) = resolve_levels(&p, b, &i, &f).unwrap();
            assert_ne!(a, z);
        }
    }
}
