//! Hyperfine parameters from measured ODMR peak positions by bounded
//! damped least squares with alternating nearest-line assignment.

pub mod lm;
mod peaks;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{hamiltonian_real, SpinSystemParams};
use crate::spectrum::{transitions_with, StateLabel, StrengthFloor};
use lm::{levenberg_marquardt_with, LmOptions};
pub use peaks::{Peak, PeakList, PEAK_CSV_HEADER};

pub const DEFAULT_GATE: f64 = 10.0;
pub const MAX_STARTS: usize = 243;
const LATTICE: [f64; 3] = [1.0, 0.8, 1.2];
/// Singular-value ratio below which the Jacobian counts as rank deficient.
const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FitParam {
    AZz,
    APlus,
    AMinus,
    AZx,
    AXz,
    GZ,
    /// Field offset (mT) added to every peak of one region.
    FieldOffset(u32),
}

impl FitParam {
    pub fn is_hyperfine(self) -> bool {
        matches!(self, FitParam::AZz | FitParam::APlus | FitParam::AMinus | FitParam::AZx | FitParam::AXz)
    }

    pub fn value_in(self, params: &SpinSystemParams) -> f64 {
        let h = &params.hyperfine;
        match self {
            FitParam::AZz => h.a_zz,
            FitParam::APlus => h.a_plus,
            FitParam::AMinus => h.a_minus,
            FitParam::AZx => h.a_zx,
            FitParam::AXz => h.a_xz,
            FitParam::GZ => params.g_z,
            FitParam::FieldOffset(_) => 0.0,
        }
    }

    fn set(self, params: &mut SpinSystemParams, offsets: &mut BTreeMap<u32, f64>, v: f64) {
        let h = &mut params.hyperfine;
        match self {
            FitParam::AZz => h.a_zz = v,
            FitParam::APlus => h.a_plus = v,
            FitParam::AMinus => h.a_minus = v,
            FitParam::AZx => h.a_zx = v,
            FitParam::AXz => h.a_xz = v,
            FitParam::GZ => params.g_z = v,
            FitParam::FieldOffset(r) => {
                offsets.insert(r, v);
            }
        }
    }
}

impl fmt::Display for FitParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitParam::AZz => f.write_str("a_zz"),
            FitParam::APlus => f.write_str("a_plus"),
            FitParam::AMinus => f.write_str("a_minus"),
            FitParam::AZx => f.write_str("a_zx"),
            FitParam::AXz => f.write_str("a_xz"),
            FitParam::GZ => f.write_str("g_z"),
            FitParam::FieldOffset(r) => write!(f, "field_offset[{r}]"),
        }
    }
}

impl FromStr for FitParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Ok(match t {
            "a_zz" => FitParam::AZz,
            "a_plus" => FitParam::APlus,
            "a_minus" => FitParam::AMinus,
            "a_zx" => FitParam::AZx,
            "a_xz" => FitParam::AXz,
            "g_z" => FitParam::GZ,
            _ => {
                let region = t
                    .strip_prefix("field_offset[")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|r| r.trim().parse().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown fit parameter {t:?} (expected a_zz, a_plus, a_minus, a_zx, a_xz, g_z or field_offset[N])"
                        ))
                    })?;
                FitParam::FieldOffset(region)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeParam {
    pub param: FitParam,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    pub fn new(param: FitParam, initial: f64, lower: f64, upper: f64) -> Self {
        FreeParam {
            param,
            initial,
            lower,
            upper,
        }
    }

    /// Default bounds: hyperfine terms +-max(|x|, 50) MHz, g_z +-50 %,
    /// field offsets +-2 mT.
    pub fn around(param: FitParam, initial: f64) -> Self {
        let half = match param {
            FitParam::FieldOffset(_) => 2.0,
            FitParam::GZ => (0.5 * initial.abs()).max(0.1),
            _ => initial.abs().max(50.0),
        };
        FreeParam::new(param, initial, initial - half, initial + half)
    }
}

#[derive(Clone, Debug)]
pub struct FitSpec {
    /// Values of the parameters that are not free.
    pub base: SpinSystemParams,
    pub free: Vec<FreeParam>,
    /// Largest |f_calc - f_meas| (MHz) at which a peak is assigned.
    pub gate: f64,
    /// Start from the {0.8, 1.0, 1.2} lattice over the free hyperfine terms.
    pub multistart: bool,
    pub max_starts: usize,
    /// Relative uniform jitter applied to every lattice start.
    pub jitter: f64,
    pub seed: u64,
    pub lm: LmOptions,
}

impl FitSpec {
    pub fn new(base: SpinSystemParams, free: Vec<FreeParam>) -> Result<Self> {
        let spec = FitSpec {
            base,
            free,
            gate: DEFAULT_GATE,
            multistart: true,
            max_starts: MAX_STARTS,
            jitter: 0.0,
            seed: 0,
            lm: LmOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Free parameters at their values in `base` with default bounds.
    pub fn with_free(base: SpinSystemParams, names: &[FitParam]) -> Result<Self> {
        let free = names.iter().map(|&p| FreeParam::around(p, p.value_in(&base))).collect();
        Self::new(base, free)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.free.is_empty() {
            return Err(Error::InvalidParameter("no free fit parameters".into()));
        }
        for (k, f) in self.free.iter().enumerate() {
            if self.free[..k].iter().any(|g| g.param == f.param) {
                return Err(Error::InvalidParameter(format!("{} is listed twice", f.param)));
            }
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower <= f.upper) {
                return Err(Error::InvalidParameter(format!("bounds of {} must be finite and ordered", f.param)));
            }
            if !(f.initial >= f.lower && f.initial <= f.upper) {
                return Err(Error::InvalidParameter(format!(
                    "initial {} = {} outside [{}, {}]",
                    f.param, f.initial, f.lower, f.upper
                )));
            }
        }
        if !(self.gate >= 0.0 && self.gate.is_finite()) {
            return Err(Error::InvalidParameter(format!("gate {} must be >= 0", self.gate)));
        }
        if !(self.jitter >= 0.0 && self.jitter < 1.0) {
            return Err(Error::InvalidParameter(format!("jitter {} must be in [0, 1)", self.jitter)));
        }
        Ok(())
    }

    fn apply(&self, theta: &[f64]) -> (SpinSystemParams, BTreeMap<u32, f64>) {
        let mut p = self.base.clone();
        let mut offsets = BTreeMap::new();
        for (f, &v) in self.free.iter().zip(theta) {
            f.param.set(&mut p, &mut offsets, v);
        }
        (p, offsets)
    }

    fn starts(&self) -> Vec<Vec<f64>> {
        let x0: Vec<f64> = self.free.iter().map(|f| f.initial).collect();
        let hyper: Vec<usize> = (0..self.free.len()).filter(|&k| self.free[k].param.is_hyperfine()).collect();
        let mut starts = vec![x0.clone()];
        if self.multistart && !hyper.is_empty() {
            starts.clear();
            let total = 3usize.pow(hyper.len() as u32);
            for code in 0..total {
                let mut x = x0.clone();
                let mut c = code;
                for &k in &hyper {
                    x[k] *= LATTICE[c % 3];
                    c /= 3;
                }
                if !starts.contains(&x) {
                    starts.push(x);
                }
                if starts.len() >= self.max_starts.max(1) {
                    break;
                }
            }
        }
        if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for x in starts.iter_mut() {
                for v in x.iter_mut() {
                    *v *= 1.0 + self.jitter * rng.random_range(-1.0..1.0);
                }
            }
        }
        for x in starts.iter_mut() {
            for (v, f) in x.iter_mut().zip(&self.free) {
                *v = v.clamp(f.lower, f.upper);
            }
        }
        starts
    }
}

/// The calculated line a peak is matched to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssignedLine {
    /// Eigenvalue indices (ascending) at the peak's field.
    pub lower: usize,
    pub upper: usize,
    /// `lower * 16 + upper` for the 16-level manifold.
    pub line_id: usize,
    pub initial: StateLabel,
    pub final_: StateLabel,
    /// MHz.
    pub frequency: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakAssignment {
    pub peak: usize,
    pub line: Option<AssignedLine>,
}

impl PeakAssignment {
    pub fn residual(&self, peaks: &PeakList) -> Option<f64> {
        self.line.map(|l| l.frequency - peaks.peaks()[self.peak].frequency)
    }
}

fn effective_field(peak: &Peak, offsets: &BTreeMap<u32, f64>) -> f64 {
    peak.b_mt + offsets.get(&peak.region_id).copied().unwrap_or(0.0)
}

/// Lines at each distinct field, above the default strength floor.
fn candidate_lines(
    params: &SpinSystemParams,
    peaks: &PeakList,
    offsets: &BTreeMap<u32, f64>,
) -> Result<Vec<Vec<AssignedLine>>> {
    let mut cache: HashMap<u64, Vec<AssignedLine>> = HashMap::new();
    let n = params.dim();
    let mut out = Vec::with_capacity(peaks.len());
    for p in peaks.peaks() {
        let b = effective_field(p, offsets);
        if let Some(c) = cache.get(&b.to_bits()) {
            out.push(c.clone());
            continue;
        }
        let lines: Vec<AssignedLine> = transitions_with(params, b, StrengthFloor::default())?
            .into_iter()
            .map(|l| AssignedLine {
                lower: l.lower,
                upper: l.upper,
                line_id: l.lower * n + l.upper,
                initial: l.initial,
                final_: l.final_,
                frequency: l.frequency,
            })
            .collect();
        cache.insert(b.to_bits(), lines.clone());
        out.push(lines);
    }
    Ok(out)
}

fn nearest(lines: &[AssignedLine], f: f64) -> Option<AssignedLine> {
    lines
        .iter()
        .min_by(|a, b| {
            (a.frequency - f)
                .abs()
                .total_cmp(&(b.frequency - f).abs())
                .then(a.line_id.cmp(&b.line_id))
        })
        .copied()
}

/// Matches every peak to the nearest calculated line at its field; peaks
/// with no line closer than `gate` MHz stay unmatched.
pub fn assign_peaks(params: &SpinSystemParams, peaks: &PeakList, gate: f64) -> Result<Vec<PeakAssignment>> {
    assign_with_offsets(params, peaks, &BTreeMap::new(), gate)
}

fn assign_with_offsets(
    params: &SpinSystemParams,
    peaks: &PeakList,
    offsets: &BTreeMap<u32, f64>,
    gate: f64,
) -> Result<Vec<PeakAssignment>> {
    params.validate()?;
    let cands = candidate_lines(params, peaks, offsets)?;
    Ok(peaks
        .peaks()
        .iter()
        .zip(&cands)
        .enumerate()
        .map(|(k, (p, c))| PeakAssignment {
            peak: k,
            line: nearest(c, p.frequency).filter(|l| (l.frequency - p.frequency).abs() < gate),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FittedValue {
    pub param: FitParam,
    pub value: f64,
    /// From the Gauss-Newton normal matrix at the optimum; approximate.
    pub std_error: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub values: Vec<FittedValue>,
    /// `base` with the fitted values applied.
    pub params: SpinSystemParams,
    pub field_offsets: BTreeMap<u32, f64>,
    pub assignments: Vec<PeakAssignment>,
    /// `f_calc - f_meas` per peak in input order; `None` if unmatched.
    pub residuals: Vec<Option<f64>>,
    /// Weighted SSE of matched peaks plus `weight * gate^2` per unmatched peak.
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost at the start and after every accepted step of the chosen start.
    pub cost_history: Vec<f64>,
    /// Unit direction in parameter space the peaks do not constrain.
    pub null_direction: Option<Vec<f64>>,
    pub starts: usize,
}

impl FitResult {
    pub fn value(&self, param: FitParam) -> Option<f64> {
        self.values.iter().find(|v| v.param == param).map(|v| v.value)
    }

    pub fn matched(&self) -> usize {
        self.residuals.iter().filter(|r| r.is_some()).count()
    }

    pub fn is_degenerate(&self) -> bool {
        self.null_direction.is_some()
    }
}

struct Run {
    x: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
    assignment: Vec<Option<AssignedLine>>,
    jacobian: DMatrix<f64>,
}

fn sorted_eigenvalues(params: &SpinSystemParams, b: f64) -> Vec<f64> {
    let mut e: Vec<f64> = hamiltonian_real(params, b).symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn run_start(spec: &FitSpec, peaks: &PeakList, x0: &[f64]) -> Result<Run> {
    let (p0, off0) = spec.apply(x0);
    let init = assign_with_offsets(&p0, peaks, &off0, spec.gate)?;
    let assignment = RefCell::new(init.iter().map(|a| a.line).collect::<Vec<_>>());
    let sw: Vec<f64> = peaks.peaks().iter().map(|p| p.weight.sqrt()).collect();
    let gate = spec.gate;

    let residuals = |theta: &[f64]| -> Result<Vec<f64>> {
        let (p, off) = spec.apply(theta);
        let asg = assignment.borrow();
        let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
        let mut r = Vec::with_capacity(peaks.len());
        for ((pk, a), w) in peaks.peaks().iter().zip(asg.iter()).zip(&sw) {
            match a {
                Some(line) => {
                    let b = effective_field(pk, &off);
                    let e = cache.entry(b.to_bits()).or_insert_with(|| sorted_eigenvalues(&p, b));
                    r.push(w * (e[line.upper] - e[line.lower] - pk.frequency));
                }
                None => r.push(w * gate),
            }
        }
        Ok(r)
    };

    // Switch a peak only when that lowers its own cost term.
    let reassign = |theta: &[f64]| -> Result<bool> {
        let (p, off) = spec.apply(theta);
        let cands = candidate_lines(&p, peaks, &off)?;
        let mut asg = assignment.borrow_mut();
        let mut changed = false;
        for (k, pk) in peaks.peaks().iter().enumerate() {
            let b = effective_field(pk, &off);
            let current = match asg[k] {
                Some(line) => {
                    let e = sorted_eigenvalues(&p, b);
                    (e[line.upper] - e[line.lower] - pk.frequency).powi(2)
                }
                None => gate * gate,
            };
            let best = nearest(&cands[k], pk.frequency).filter(|l| (l.frequency - pk.frequency).abs() < gate);
            match best {
                Some(l) if (l.frequency - pk.frequency).powi(2) < current && Some(l.line_id) != asg[k].map(|a| a.line_id) => {
                    asg[k] = Some(l);
                    changed = true;
                }
                None if asg[k].is_some() && current > gate * gate => {
                    asg[k] = None;
                    changed = true;
                }
                _ => {}
            }
        }
        Ok(changed)
    };

    let lower: Vec<f64> = spec.free.iter().map(|f| f.lower).collect();
    let upper: Vec<f64> = spec.free.iter().map(|f| f.upper).collect();
    let out = levenberg_marquardt_with(residuals, reassign, x0, &lower, &upper, &spec.lm)?;
    // Refresh labels and frequencies of the final assignment.
    let (p, off) = spec.apply(&out.x);
    let cands = candidate_lines(&p, peaks, &off)?;
    let final_asg = assignment
        .into_inner()
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            a.map(|line| {
                cands[k].iter().find(|c| c.line_id == line.line_id).copied().unwrap_or_else(|| {
                    let e = sorted_eigenvalues(&p, effective_field(&peaks.peaks()[k], &off));
                    AssignedLine {
                        frequency: e[line.upper] - e[line.lower],
                        ..line
                    }
                })
            })
        })
        .collect();
    Ok(Run {
        x: out.x,
        cost: out.cost,
        converged: out.converged,
        iterations: out.iterations,
        history: out.cost_history,
        assignment: final_asg,
        jacobian: out.jacobian,
    })
}

/// Fits the free parameters of `spec` to `peaks`.
///
/// Every lattice start runs independently; the lowest final cost wins, with
/// ties broken by the parameter vector in lexicographic order.
pub fn fit_parameters(peaks: &PeakList, spec: &FitSpec) -> Result<FitResult> {
    spec.validate()?;
    let n = spec.free.len();
    if peaks.len() < n {
        return Err(Error::InsufficientPeaks { peaks: peaks.len(), free: n });
    }
    let starts = spec.starts();
    let runs: Vec<Result<Run>> = starts.par_iter().map(|x0| run_start(spec, peaks, x0)).collect();
    let mut best: Option<Run> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some(b) => run
                        .cost
                        .total_cmp(&b.cost)
                        .then_with(|| {
                            run.x
                                .iter()
                                .zip(&b.x)
                                .map(|(a, c)| a.total_cmp(c))
                                .find(|o| o.is_ne())
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .is_lt(),
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(run) = best else {
        return Err(first_err.expect("at least one start"));
    };

    let (params, field_offsets) = spec.apply(&run.x);
    let residuals: Vec<Option<f64>> = run
        .assignment
        .iter()
        .zip(peaks.peaks())
        .map(|(a, p)| a.map(|l| l.frequency - p.frequency))
        .collect();
    let matched_cost: f64 = residuals
        .iter()
        .zip(peaks.peaks())
        .filter_map(|(r, p)| r.map(|r| p.weight * r * r))
        .sum();
    let matched = residuals.iter().filter(|r| r.is_some()).count();

    let svd = run.jacobian.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let sv = &svd.singular_values;
    let smax = sv.amax();
    let (kmin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &s)| if s < acc.1 { (k, s) } else { acc });
    let degenerate = !(smax > 0.0) || smin <= RANK_TOL * smax || matched < n;
    let null_direction = degenerate.then(|| {
        let mut d: Vec<f64> = v_t.row(kmin).iter().copied().collect();
        // Sign convention: largest component positive.
        let big = d.iter().cloned().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if big < 0.0 {
            d.iter_mut().for_each(|v| *v = -*v);
        }
        d
    });
    let dof = matched as f64 - n as f64;
    let s2 = if dof > 0.0 { matched_cost / dof } else { f64::NAN };
    let std_errors: Vec<f64> = (0..n)
        .map(|j| {
            let var: f64 = (0..sv.len())
                .filter(|&k| sv[k] > RANK_TOL * smax)
                .map(|k| (v_t[(k, j)] / sv[k]).powi(2))
                .sum();
            (var * s2).sqrt()
        })
        .collect();
    let values = spec
        .free
        .iter()
        .zip(&run.x)
        .zip(&std_errors)
        .map(|((f, &value), &std_error)| FittedValue {
            param: f.param,
            value,
            std_error,
        })
        .collect();
    let assignments = run
        .assignment
        .iter()
        .enumerate()
        .map(|(k, &line)| PeakAssignment { peak: k, line })
        .collect();
    Ok(FitResult {
        values,
        params,
        field_offsets,
        assignments,
        residuals,
        cost: run.cost,
        converged: run.converged,
        iterations: run.iterations,
        cost_history: run.history,
        null_direction,
        starts: starts.len(),
    })
}

/// Key-value fit report.
pub fn write_fit_report<W: Write>(mut w: W, result: &FitResult, seed: u64) -> std::io::Result<()> {
    writeln!(w, "# seed={seed}")?;
    writeln!(w, "converged = {}", result.converged)?;
    writeln!(w, "cost = {}", result.cost)?;
    writeln!(w, "iterations = {}", result.iterations)?;
    writeln!(w, "starts = {}", result.starts)?;
    writeln!(w, "matched = {}", result.matched())?;
    writeln!(w, "peaks = {}", result.residuals.len())?;
    for v in &result.values {
        writeln!(w, "{} = {}", v.param, v.value)?;
        writeln!(w, "{}.stderr = {}", v.param, v.std_error)?;
    }
    match &result.null_direction {
        None => writeln!(w, "degenerate = false")?,
        Some(d) => {
            writeln!(w, "degenerate = true")?;
            let parts: Vec<String> = result.values.iter().zip(d).map(|(v, c)| format!("{}:{}", v.param, c)).collect();
            writeln!(w, "null_direction = {}", parts.join(","))?;
        }
    }
    Ok(())
}

pub const RESIDUALS_CSV_HEADER: &str =
    "B_mT,freq_MHz,weight,region_id,line_id,init_label,final_label,calc_MHz,residual_MHz";

pub fn write_residuals_csv<W: Write>(mut w: W, peaks: &PeakList, result: &FitResult) -> std::io::Result<()> {
    writeln!(w, "{RESIDUALS_CSV_HEADER}")?;
    for (p, a) in peaks.peaks().iter().zip(&result.assignments) {
        write!(w, "{},{},{},{},", p.b_mt, p.frequency, p.weight, p.region_id)?;
        match a.line {
            Some(l) => writeln!(
                w,
                "{},{},{},{},{}",
                l.line_id,
                l.initial,
                l.final_,
                l.frequency,
                l.frequency - p.frequency
            )?,
            None => writeln!(w, ",,,,")?,
        }
    }
    Ok(())
}
