//! Eigensystems over field sweeps, parallel-drive transition lines,
//! selection-rule classification, clock points and transition moments.

mod classify;
mod clock;
mod map;
mod track;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::{hamiltonian_real, ProductOperators, SpinSystemParams};
use crate::spin::{eigh, Eigensystem, Spin, SpinMatrix};

pub use classify::{classify_transitions, classify_with_fits, strain_exponent, ClassifyOptions, StrainFit};
pub use clock::{
    clock_transitions, gyromagnetic_moment, resolve_levels, transition_moment, ClockPoint,
};
pub use map::{odmr_line_map, write_map_csv, MapRecord, MAP_CSV_HEADER};
pub use track::{eigensystem_vs_field, track_field, track_field_with, LevelBranch, TrackedSweep, MAX_REFINE_DEPTH};

/// Relative floor below which a line counts as numerically absent.
pub const NUMERICAL_FLOOR: f64 = 1e-12;
/// Default display floor relative to the strongest line at the same field.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pseudospin {
    Up,
    Down,
}

impl Pseudospin {
    pub fn ms(self) -> f64 {
        match self {
            Pseudospin::Up => 0.5,
            Pseudospin::Down => -0.5,
        }
    }

    fn major_index(self) -> usize {
        match self {
            Pseudospin::Up => 0,
            Pseudospin::Down => 1,
        }
    }
}

/// A product-basis label `|pseudospin, m_I>` plus the eigenvector's weight on
/// that basis state.
#[derive(Clone, Copy, Debug)]
pub struct StateLabel {
    pub pseudospin: Pseudospin,
    /// Twice the nuclear projection, so -7/2 is stored as -7.
    pub two_m: i32,
    pub purity: f64,
}

impl StateLabel {
    pub fn new(pseudospin: Pseudospin, m_i: f64) -> Self {
        StateLabel {
            pseudospin,
            two_m: (2.0 * m_i).round() as i32,
            purity: 1.0,
        }
    }

    pub fn up(m_i: f64) -> Self {
        Self::new(Pseudospin::Up, m_i)
    }

    pub fn down(m_i: f64) -> Self {
        Self::new(Pseudospin::Down, m_i)
    }

    pub fn m_i(&self) -> f64 {
        self.two_m as f64 / 2.0
    }

    /// Same basis state, purity ignored.
    pub fn same_state(&self, other: &StateLabel) -> bool {
        self.pseudospin == other.pseudospin && self.two_m == other.two_m
    }

    pub fn is_mixed(&self) -> bool {
        self.purity < 0.5
    }

    pub fn basis_index(&self, nuclear_spin: Spin) -> Option<usize> {
        let k = nuclear_spin.index_of(self.m_i())?;
        Some(self.pseudospin.major_index() * nuclear_spin.dim() + k)
    }

    pub fn from_basis_index(index: usize, nuclear_spin: Spin, purity: f64) -> Self {
        let n = nuclear_spin.dim();
        let pseudospin = if index < n { Pseudospin::Up } else { Pseudospin::Down };
        StateLabel {
            pseudospin,
            two_m: nuclear_spin.twice() as i32 - 2 * (index % n) as i32,
            purity,
        }
    }
}

impl PartialEq for StateLabel {
    fn eq(&self, other: &Self) -> bool {
        self.same_state(other)
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.pseudospin {
            Pseudospin::Up => "up",
            Pseudospin::Down => "down",
        };
        if self.two_m % 2 == 0 {
            write!(f, "{s}:{:+}", self.two_m / 2)
        } else {
            write!(f, "{s}:{:+}/2", self.two_m)
        }
    }
}

impl FromStr for StateLabel {
    type Err = Error;

    /// Accepts `down:-7/2`, `up,+5/2`, `d-3.5`, `↓,-7/2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse state label {s:?} (expected e.g. down:-7/2)"));
        let t = s.trim();
        let (spin_part, m_part) = if let Some(pos) = t.find([':', ',']) {
            (&t[..pos], &t[pos + 1..])
        } else {
            let pos = t.find(['+', '-']).ok_or_else(bad)?;
            (&t[..pos], &t[pos..])
        };
        let pseudospin = match spin_part.trim().to_ascii_lowercase().as_str() {
            "up" | "u" | "↑" => Pseudospin::Up,
            "down" | "d" | "↓" => Pseudospin::Down,
            _ => return Err(bad()),
        };
        let m_part = m_part.trim();
        let m = if let Some((num, den)) = m_part.split_once('/') {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            num / den
        } else {
            m_part.parse::<f64>().map_err(|_| bad())?
        };
        if ((2.0 * m) - (2.0 * m).round()).abs() > 1e-9 {
            return Err(bad());
        }
        Ok(StateLabel::new(pseudospin, m))
    }
}

/// Selection-rule order of a line under transverse strain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LineClass {
    /// Present without strain.
    Allowed,
    /// Matrix element linear in strain (strength quadratic).
    StrainLinear,
    /// Matrix element of higher or mixed order in strain.
    StrainHigher,
    Forbidden,
}

impl LineClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LineClass::Allowed => "allowed",
            LineClass::StrainLinear => "strain_linear",
            LineClass::StrainHigher => "strain_higher",
            LineClass::Forbidden => "forbidden",
        }
    }
}

impl fmt::Display for LineClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One magnetic-dipole transition between eigenstates at a fixed field.
#[derive(Clone, Debug)]
pub struct TransitionLine {
    pub initial: StateLabel,
    pub final_: StateLabel,
    /// MHz, always positive.
    pub frequency: f64,
    /// `|<f|M_z|i>|^2`, MHz^2 per mT^2.
    pub strength: f64,
    /// `None` until classified.
    pub class: Option<LineClass>,
    /// Eigenvalue indices (ascending order) of the lower and upper level.
    pub lower: usize,
    pub upper: usize,
}

impl TransitionLine {
    /// Label-independent check `{initial, final} == {a, b}`.
    pub fn connects(&self, a: &StateLabel, b: &StateLabel) -> bool {
        (self.initial.same_state(a) && self.final_.same_state(b))
            || (self.initial.same_state(b) && self.final_.same_state(a))
    }

    /// Same pseudospin on both ends.
    pub fn is_direct_hyperfine(&self) -> bool {
        self.initial.pseudospin == self.final_.pseudospin
    }

    /// `|down,m> <-> |up,m+1>`.
    pub fn is_double_flip(&self) -> bool {
        let (d, u) = match (self.initial.pseudospin, self.final_.pseudospin) {
            (Pseudospin::Down, Pseudospin::Up) => (&self.initial, &self.final_),
            (Pseudospin::Up, Pseudospin::Down) => (&self.final_, &self.initial),
            _ => return false,
        };
        u.two_m - d.two_m == 2
    }
}

/// Strength cut-off for line lists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrengthFloor {
    Absolute(f64),
    /// Fraction of the strongest line at the same field.
    Relative(f64),
}

impl Default for StrengthFloor {
    fn default() -> Self {
        StrengthFloor::Relative(DEFAULT_RELATIVE_FLOOR)
    }
}

impl StrengthFloor {
    pub fn resolve(self, max_strength: f64) -> f64 {
        match self {
            StrengthFloor::Absolute(x) => x,
            StrengthFloor::Relative(r) => r * max_strength,
        }
    }
}

/// Parallel-drive coupling `M_z = μB gz Sz + μN gN Iz`, MHz per mT.
pub fn drive_operator(params: &SpinSystemParams) -> SpinMatrix {
    SpinMatrix::from_real(&drive_operator_real(params)).expect("square by construction")
}

pub(crate) fn drive_operator_real(params: &SpinSystemParams) -> DMatrix<f64> {
    ProductOperators::shared(params.nuclear_spin).zeeman(params)
}

/// Eigensystem at one field with dominant-overlap labels.
#[derive(Clone, Debug)]
pub struct FieldEigensystem {
    pub b_mt: f64,
    pub eigen: Eigensystem,
    pub labels: Vec<StateLabel>,
}

impl FieldEigensystem {
    pub fn new(params: &SpinSystemParams, b_mt: f64) -> Result<Self> {
        params.validate()?;
        let eigen = eigh_at(params, b_mt)?;
        let labels = dominant_labels(&eigen, params.nuclear_spin);
        Ok(FieldEigensystem { b_mt, eigen, labels })
    }

    /// Eigen index of the state whose dominant label is `label` with purity
    /// at least 1/2.
    pub fn find(&self, label: &StateLabel) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.same_state(label) && !l.is_mixed())
    }

    /// Largest weight any eigenstate has on `label`'s basis state.
    pub fn best_purity(&self, label: &StateLabel, nuclear_spin: Spin) -> f64 {
        label
            .basis_index(nuclear_spin)
            .map(|b| {
                (0..self.eigen.dim())
                    .map(|k| self.eigen.weight(k, b))
                    .fold(0.0, f64::max)
            })
            .unwrap_or(0.0)
    }
}

pub(crate) fn eigh_at(params: &SpinSystemParams, b_mt: f64) -> Result<Eigensystem> {
    let h = SpinMatrix::from_real(&hamiltonian_real(params, b_mt))?;
    eigh(&h)
}

/// Each eigenvector labelled by its largest product-basis component.
pub fn dominant_labels(es: &Eigensystem, nuclear_spin: Spin) -> Vec<StateLabel> {
    (0..es.dim())
        .map(|k| {
            let mut best = 0;
            let mut best_w = -1.0;
            for b in 0..es.dim() {
                let w = es.weight(k, b);
                if w > best_w + 1e-15 {
                    best_w = w;
                    best = b;
                }
            }
            StateLabel::from_basis_index(best, nuclear_spin, best_w)
        })
        .collect()
}

/// Unique labels: greedy one-to-one matching of eigenstates to basis states
/// in order of decreasing weight.
pub fn unique_labels(es: &Eigensystem, nuclear_spin: Spin) -> Vec<StateLabel> {
    let n = es.dim();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for k in 0..n {
        for b in 0..n {
            pairs.push((es.weight(k, b), k, b));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut state_used = vec![false; n];
    let mut basis_used = vec![false; n];
    let mut out = vec![StateLabel::up(0.0); n];
    for (w, k, b) in pairs {
        if !state_used[k] && !basis_used[b] {
            state_used[k] = true;
            basis_used[b] = true;
            out[k] = StateLabel::from_basis_index(b, nuclear_spin, w);
        }
    }
    out
}

/// `|<a|M|b>|^2` for all eigenpairs.
pub(crate) fn strength_matrix(es: &Eigensystem, drive: &DMatrix<f64>) -> DMatrix<f64> {
    let v = &es.vectors;
    let m: DMatrix<Complex64> = v.adjoint() * drive.map(|x| Complex64::new(x, 0.0)) * v;
    m.map(|z| z.norm_sqr())
}

pub(crate) fn max_offdiag(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut m = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max(s[(i, j)]);
        }
    }
    m
}

/// All parallel-drive lines at field `b_mt` whose strength is at least
/// `min_strength` (MHz^2/mT^2).
pub fn transitions(params: &SpinSystemParams, b_mt: f64, min_strength: f64) -> Result<Vec<TransitionLine>> {
    if !(min_strength >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "min_strength {min_strength} must be non-negative"
        )));
    }
    transitions_with(params, b_mt, StrengthFloor::Absolute(min_strength))
}

pub fn transitions_with(
    params: &SpinSystemParams,
    b_mt: f64,
    floor: StrengthFloor,
) -> Result<Vec<TransitionLine>> {
    let fe = FieldEigensystem::new(params, b_mt)?;
    Ok(lines_of(&fe, &drive_operator_real(params), floor))
}

pub(crate) fn lines_of(fe: &FieldEigensystem, drive: &DMatrix<f64>, floor: StrengthFloor) -> Vec<TransitionLine> {
    let s = strength_matrix(&fe.eigen, drive);
    let cut = floor.resolve(max_offdiag(&s));
    let n = fe.eigen.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for f in (i + 1)..n {
            let freq = fe.eigen.values[f] - fe.eigen.values[i];
            if s[(i, f)] >= cut && freq > 0.0 {
                out.push(TransitionLine {
                    initial: fe.labels[i],
                    final_: fe.labels[f],
                    frequency: freq,
                    strength: s[(i, f)],
                    class: None,
                    lower: i,
                    upper: f,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{strainless_limit, HyperfineTensor};
    use proptest::prelude::*;

    #[test]
    fn label_round_trip() {
        for s in ["down:-7/2", "up:+5/2", "d-3.5", "up,1/2", "↓,-7/2"] {
            let l: StateLabel = s.parse().unwrap();
            let back: StateLabel = l.to_string().parse().unwrap();
            assert_eq!(l, back);
        }
        assert_eq!("down:-7/2".parse::<StateLabel>().unwrap(), StateLabel::down(-3.5));
        assert!("sideways:1/2".parse::<StateLabel>().is_err());
        assert!("up:1/3".parse::<StateLabel>().is_err());
    }

    #[test]
    fn basis_index_convention() {
        let i = Spin::from_twice(7);
        assert_eq!(StateLabel::up(3.5).basis_index(i), Some(0));
        assert_eq!(StateLabel::up(-3.5).basis_index(i), Some(7));
        assert_eq!(StateLabel::down(3.5).basis_index(i), Some(8));
        assert_eq!(StateLabel::down(-3.5).basis_index(i), Some(15));
        assert_eq!(StateLabel::down(4.5).basis_index(i), None);
        assert_eq!(StateLabel::from_basis_index(13, i, 1.0), StateLabel::down(-1.5));
    }

    #[test]
    fn drive_operator_cases() {
        let mut p = SpinSystemParams::default();
        p.g_n = 0.0;
        let m = drive_operator(&p);
        for k in 0..16 {
            let want = if k < 8 { 0.5 } else { -0.5 } * p.g_z * p.mu_b_over_h;
            assert!((m.get(k, k).re - want).abs() < 1e-12);
        }
        let m = drive_operator(&SpinSystemParams::default());
        assert!(m.trace().norm() < 1e-12);
        // commutes with the diagonal (zz + Zeeman) Hamiltonian
        let p = SpinSystemParams::default().with_hyperfine(HyperfineTensor {
            a_zz: -230.0,
            ..HyperfineTensor::ZERO
        });
        let h = crate::hamiltonian::build_hamiltonian(&p, crate::hamiltonian::FieldPoint(30.0)).unwrap();
        assert!(m.commutator(&h).norm() < 1e-9);
    }

    #[test]
    fn strainless_selection_rule() {
        let p = strainless_limit(&SpinSystemParams::default());
        let lines = transitions(&p, 50.0, 0.0).unwrap();
        let max = lines.iter().map(|l| l.strength).fold(0.0, f64::max);
        for l in &lines {
            if l.strength > 1e-12 * max {
                assert!(l.is_double_flip(), "{} <-> {} strength {}", l.initial, l.final_, l.strength);
            }
        }
        assert!(lines.iter().any(|l| l.is_double_flip() && l.strength > 1e-3 * max));
    }

    #[test]
    fn gate_zero_floor_keeps_everything() {
        let lines = transitions(&SpinSystemParams::default(), 20.0, 0.0).unwrap();
        assert_eq!(lines.len(), 16 * 15 / 2);
        assert!(transitions(&SpinSystemParams::default(), 20.0, -1.0).is_err());
    }

    fn completeness(p: &SpinSystemParams, b: f64) -> (f64, f64) {
        let fe = FieldEigensystem::new(p, b).unwrap();
        let drive = drive_operator_real(p);
        let s = strength_matrix(&fe.eigen, &drive);
        let n = s.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!((s[(i, j)] - s[(j, i)]).abs() <= 1e-9 * s[(i, j)].max(1.0));
                }
                total += s[(i, j)];
            }
        }
        (total, (&drive * &drive).trace())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn strength_completeness(
            g_z in -2.5f64..2.5, a_zz in -400.0f64..400.0, a_plus in -100.0f64..100.0,
            a_minus in -400.0f64..400.0, a_zx in -50.0f64..50.0, a_xz in -50.0f64..50.0,
            b in -80.0f64..80.0,
        ) {
            let p = SpinSystemParams {
                g_z,
                hyperfine: HyperfineTensor { a_zz, a_plus, a_minus, a_zx, a_xz },
                ..SpinSystemParams::default()
            };
            let (total, tr) = completeness(&p, b);
            prop_assert!((total - tr).abs() <= 1e-9 * tr);
        }
    }
}
