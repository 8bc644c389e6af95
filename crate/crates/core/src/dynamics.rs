//! Coherent drive of one transition: two-level reduction, chevrons, Ramsey
//! fringes with static ensemble dephasing, and full 16-level propagation.
//!
//! Frequencies are in MHz and times in µs. Dephasing convention: a Gaussian
//! detuning spread of standard deviation `sigma` gives the Ramsey envelope
//! `exp(-2 (pi sigma tau)^2)`, whose 1/e time is `T2* = sqrt(2) / (2 pi sigma)`.

use std::f64::consts::PI;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fit::lm::{levenberg_marquardt, LmOptions};
use crate::hamiltonian::{hamiltonian_real, SpinSystemParams};
use crate::spectrum::{drive_operator, resolve_levels, transition_moment, StateLabel};

/// Default time steps per carrier period in [`propagate_full`].
pub const STEPS_PER_PERIOD: usize = 40;
/// Norm drift tolerated by [`propagate_full`].
pub const NORM_TOL: f64 = 1e-8;
/// Gaussian quadrature nodes over +-5 sigma.
const ENSEMBLE_NODES: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseSegment {
    /// µs.
    pub duration: f64,
    /// mT.
    pub ac_amplitude: f64,
    /// Carrier, MHz.
    pub frequency: f64,
    /// Carrier phase, radians.
    pub phase: f64,
}

impl PulseSegment {
    pub fn new(duration: f64, ac_amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        let s = PulseSegment {
            duration,
            ac_amplitude,
            frequency,
            phase,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn free(duration: f64) -> Result<Self> {
        Self::new(duration, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("pulse duration {} must be >= 0", self.duration)));
        }
        if !(self.ac_amplitude >= 0.0 && self.ac_amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("ac amplitude {} must be >= 0", self.ac_amplitude)));
        }
        if !(self.frequency.is_finite() && self.phase.is_finite()) {
            return Err(Error::InvalidParameter("carrier frequency and phase must be finite".into()));
        }
        if self.ac_amplitude > 0.0 && !(self.frequency > 0.0) {
            return Err(Error::InvalidParameter("driven segment needs a positive carrier frequency".into()));
        }
        Ok(())
    }

    pub fn is_free(&self) -> bool {
        self.ac_amplitude == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSequence {
    segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn new(segments: Vec<PulseSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("pulse sequence is empty".into()));
        }
        for s in &segments {
            s.validate()?;
        }
        Ok(PulseSequence { segments })
    }

    pub fn segments(&self) -> &[PulseSegment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Static inhomogeneity: a Gaussian detuning spread around each of a set of
/// weighted sub-ensemble offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    /// MHz.
    pub detuning_sigma: f64,
    /// `(offset MHz, weight)`, weights summing to one.
    pub components: Vec<(f64, f64)>,
}

impl EnsembleModel {
    /// Normalises the weights.
    pub fn new(detuning_sigma: f64, components: Vec<(f64, f64)>) -> Result<Self> {
        if !(detuning_sigma >= 0.0 && detuning_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("detuning sigma {detuning_sigma} must be >= 0")));
        }
        if components.is_empty() {
            return Err(Error::InvalidParameter("ensemble needs at least one component".into()));
        }
        if components.iter().any(|&(o, w)| !o.is_finite() || !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("component offsets must be finite and weights >= 0".into()));
        }
        let total: f64 = components.iter().map(|c| c.1).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("component weights sum to zero".into()));
        }
        let components = components.into_iter().map(|(o, w)| (o, w / total)).collect();
        Ok(EnsembleModel {
            detuning_sigma,
            components,
        })
    }

    pub fn single(detuning_sigma: f64) -> Result<Self> {
        Self::new(detuning_sigma, vec![(0.0, 1.0)])
    }

    pub fn t2_star(&self) -> f64 {
        t2_star_from_sigma(self.detuning_sigma)
    }

    /// Discrete `(detuning, weight)` nodes, weights summing to one.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        if self.detuning_sigma == 0.0 {
            return self.components.clone();
        }
        let half = (ENSEMBLE_NODES / 2) as f64;
        let g: Vec<(f64, f64)> = (0..ENSEMBLE_NODES)
            .map(|k| {
                let x = 5.0 * (k as f64 - half) / half;
                (x * self.detuning_sigma, (-0.5 * x * x).exp())
            })
            .collect();
        let norm: f64 = g.iter().map(|n| n.1).sum();
        let mut out = Vec::with_capacity(g.len() * self.components.len());
        for &(o, w) in &self.components {
            for &(d, gw) in &g {
                out.push((o + d, w * gw / norm));
            }
        }
        out
    }
}

pub fn sigma_from_t2_star(t2_star: f64) -> f64 {
    2f64.sqrt() / (2.0 * PI * t2_star)
}

pub fn t2_star_from_sigma(sigma: f64) -> f64 {
    if sigma == 0.0 {
        f64::INFINITY
    } else {
        2f64.sqrt() / (2.0 * PI * sigma)
    }
}

/// Resonant two-level model of one line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoLevel {
    /// Rabi frequency, MHz; on resonance the transfer has period `1/omega0`.
    pub omega0: f64,
    /// Transition frequency, MHz.
    pub f0: f64,
}

/// Two-level reduction of the `initial <-> final_` line at `b_mt` under a
/// parallel drive `ac_amplitude * cos(2 pi f t)`.
///
/// `omega0 = |<f|M_z|i>| * ac_amplitude`: the rotating-wave coupling is half
/// the matrix element and the population oscillates at twice the coupling.
pub fn reduce_to_two_level(
    params: &SpinSystemParams,
    b_mt: f64,
    initial: &StateLabel,
    final_: &StateLabel,
    ac_amplitude: f64,
) -> Result<TwoLevel> {
    if !(ac_amplitude >= 0.0 && ac_amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!("ac amplitude {ac_amplitude} must be >= 0")));
    }
    let (fe, i, f) = resolve_levels(params, b_mt, initial, final_)?;
    let moment = transition_moment(params, b_mt, initial, final_)?;
    Ok(TwoLevel {
        omega0: moment * ac_amplitude,
        f0: (fe.eigen.values[f] - fe.eigen.values[i]).abs(),
    })
}

/// Population transfer after a square pulse of length `t` detuned by `detuning`.
pub fn transfer(two_level: &TwoLevel, detuning: f64, t: f64) -> f64 {
    let w2 = two_level.omega0 * two_level.omega0;
    let g2 = w2 + detuning * detuning;
    if g2 == 0.0 {
        return 0.0;
    }
    w2 / g2 * (PI * g2.sqrt() * t).sin().powi(2)
}

#[derive(Clone, Debug)]
pub struct ChevronMap {
    pub detunings: Vec<f64>,
    pub durations: Vec<f64>,
    /// `transfer[i][j]` at `detunings[i]`, `durations[j]`.
    pub transfer: Vec<Vec<f64>>,
}

pub fn rabi_chevron(two_level: &TwoLevel, detunings: &[f64], durations: &[f64]) -> ChevronMap {
    let transfer = detunings
        .iter()
        .map(|&d| durations.iter().map(|&t| transfer(two_level, d, t)).collect())
        .collect();
    ChevronMap {
        detunings: detunings.to_vec(),
        durations: durations.to_vec(),
        transfer,
    }
}

/// Integrates the Schrödinger equation for `H(t) = H_g(B) + M_z a cos(2 pi f t + phi)`
/// with exponential-midpoint steps, `STEPS_PER_PERIOD` per carrier period.
///
/// Time runs continuously across segments, so carrier phases refer to the
/// start of the sequence.
pub fn propagate_full(
    params: &SpinSystemParams,
    b_mt: f64,
    sequence: &PulseSequence,
    initial_state: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    propagate_full_with(params, b_mt, sequence, initial_state, STEPS_PER_PERIOD)
}

pub fn propagate_full_with(
    params: &SpinSystemParams,
    b_mt: f64,
    sequence: &PulseSequence,
    initial_state: &DVector<Complex64>,
    steps_per_period: usize,
) -> Result<DVector<Complex64>> {
    params.validate()?;
    if steps_per_period < 20 {
        return Err(Error::InvalidParameter(format!(
            "{steps_per_period} steps per carrier period is too coarse (need >= 20)"
        )));
    }
    let dim = params.dim();
    if initial_state.len() != dim {
        return Err(Error::Dimension(format!("state has {} entries, expected {dim}", initial_state.len())));
    }
    let n0 = initial_state.norm();
    if !(n0 > 0.0) {
        return Err(Error::InvalidParameter("initial state is zero".into()));
    }
    let hg = hamiltonian_real(params, b_mt);
    let mz = drive_operator(params).real_part();
    let mut psi = initial_state / Complex64::new(n0, 0.0);
    let mut t0 = 0.0;
    for seg in sequence.segments() {
        if seg.duration == 0.0 {
            continue;
        }
        if seg.is_free() {
            psi = evolve(&hg, seg.duration, &psi);
        } else {
            let n = ((seg.duration * seg.frequency * steps_per_period as f64).ceil() as usize).max(1);
            let dt = seg.duration / n as f64;
            for k in 0..n {
                let t = t0 + (k as f64 + 0.5) * dt;
                let c = seg.ac_amplitude * (2.0 * PI * seg.frequency * t + seg.phase).cos();
                let h = &hg + &mz * c;
                psi = evolve(&h, dt, &psi);
            }
        }
        t0 += seg.duration;
        let drift = (psi.norm() - 1.0).abs();
        if drift > NORM_TOL {
            return Err(Error::NormDrift { drift });
        }
    }
    Ok(psi)
}

fn evolve(h: &nalgebra::DMatrix<f64>, dt: f64, psi: &DVector<Complex64>) -> DVector<Complex64> {
    let es = SymmetricEigen::new(h.clone());
    let v = es.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let mut c = v.transpose() * psi;
    for (ck, &e) in c.iter_mut().zip(es.eigenvalues.iter()) {
        *ck *= Complex64::from_polar(1.0, -2.0 * PI * e * dt);
    }
    v * c
}

/// Population moved from `initial` to `final_` by `sequence`, from full
/// propagation starting in the `initial` eigenstate.
pub fn transfer_full(
    params: &SpinSystemParams,
    b_mt: f64,
    sequence: &PulseSequence,
    initial: &StateLabel,
    final_: &StateLabel,
) -> Result<f64> {
    let (fe, i, f) = resolve_levels(params, b_mt, initial, final_)?;
    let psi = propagate_full(params, b_mt, sequence, &fe.eigen.vector(i))?;
    Ok(fe.eigen.vector(f).dotc(&psi).norm_sqr())
}

/// Ramsey signal with ideal pi/2 pulses:
/// `sum_k w_k exp(-2 (pi sigma tau)^2) cos(2 pi (detuning + offset_k) tau)`.
pub fn ramsey(ensemble: &EnsembleModel, delays: &[f64], detuning: f64) -> Vec<f64> {
    let s = ensemble.detuning_sigma;
    delays
        .iter()
        .map(|&tau| {
            let env = (-2.0 * (PI * s * tau).powi(2)).exp();
            env * ensemble
                .components
                .iter()
                .map(|&(o, w)| w * (2.0 * PI * (detuning + o) * tau).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Least-squares fit of `A cos(2 pi Omega t) exp(-gamma t) + C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RabiFit {
    pub amplitude: f64,
    /// MHz.
    pub rabi_freq: f64,
    /// 1/µs.
    pub decay_rate: f64,
    /// `1 / decay_rate`, infinite without decay.
    pub t2_rabi: f64,
    pub offset: f64,
    pub rms_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct DampedRabi {
    pub durations: Vec<f64>,
    pub signal: Vec<f64>,
    pub fit: RabiFit,
}

/// Ensemble-averaged resonant Rabi oscillation; each sub-ensemble is
/// detuned by its offset plus the Gaussian spread.
pub fn ensemble_transfer(two_level: &TwoLevel, ensemble: &EnsembleModel, durations: &[f64]) -> Vec<f64> {
    let nodes = ensemble.nodes();
    durations
        .par_iter()
        .map(|&t| nodes.iter().map(|&(d, w)| w * transfer(two_level, d, t)).sum())
        .collect()
}

pub fn damped_rabi(two_level: &TwoLevel, ensemble: &EnsembleModel, durations: &[f64]) -> Result<DampedRabi> {
    if !(two_level.omega0 > 0.0) {
        return Err(Error::InvalidParameter("Rabi frequency must be positive".into()));
    }
    let signal = ensemble_transfer(two_level, ensemble, durations);
    let fit = fit_damped_cosine(durations, &signal, two_level.omega0)?;
    Ok(DampedRabi {
        durations: durations.to_vec(),
        signal,
        fit,
    })
}

/// Fits `A cos(2 pi Omega t) exp(-gamma t) + C`, starting from `freq_guess`
/// unless the samples are uniform enough for an FFT estimate.
pub fn fit_damped_cosine(t: &[f64], y: &[f64], freq_guess: f64) -> Result<RabiFit> {
    if t.len() != y.len() {
        return Err(Error::Dimension(format!("{} times but {} samples", t.len(), y.len())));
    }
    if t.len() < 5 {
        return Err(Error::InvalidParameter("need at least 5 samples to fit a damped cosine".into()));
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return Err(Error::InvalidParameter("sample times must increase".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut f0 = freq_guess;
    let dt = span / (t.len() - 1) as f64;
    if t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() < 1e-9 * dt.max(1.0)) {
        if let Some(&p) = spectral_peaks(y, dt, 1).first() {
            if p > 0.0 {
                f0 = p;
            }
        }
    }
    let x0 = [y[0] - mean, f0, 0.1 / span, mean];
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
    let lower = [-4.0 * scale, 0.0, -10.0 / span, -4.0 * scale];
    let upper = [4.0 * scale, 0.5 / dt, 1e3 / span, 4.0 * scale];
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(t.iter()
            .zip(y)
            .map(|(&ti, &yi)| p[0] * (2.0 * PI * p[1] * ti).cos() * (-p[2] * ti).exp() + p[3] - yi)
            .collect())
    };
    let out = levenberg_marquardt(model, &x0, &lower, &upper, &LmOptions::default())?;
    let gamma = out.x[2];
    Ok(RabiFit {
        amplitude: out.x[0],
        rabi_freq: out.x[1],
        decay_rate: gamma,
        t2_rabi: if gamma > 0.0 { 1.0 / gamma } else { f64::INFINITY },
        offset: out.x[3],
        rms_residual: (out.cost / y.len() as f64).sqrt(),
        converged: out.converged,
    })
}

/// Gaussian spread that makes the fitted Rabi decay time equal `target`
/// (µs): a log-spaced scan brackets the first crossing, then bisection.
///
/// The fitted decay time of a detuning-averaged Rabi signal levels off as
/// the spread grows, so short targets can be out of reach; the error then
/// names the shortest time seen.
pub fn tune_sigma_for_t2_rabi(
    two_level: &TwoLevel,
    components: &[(f64, f64)],
    durations: &[f64],
    target: f64,
) -> Result<f64> {
    let t2_at = |sigma: f64| -> Result<f64> {
        let ens = EnsembleModel::new(sigma, components.to_vec())?;
        Ok(damped_rabi(two_level, &ens, durations)?.fit.t2_rabi)
    };
    let sigmas: Vec<f64> = (0..=40)
        .map(|k| two_level.omega0 * 1e-3 * 1e4f64.powf(k as f64 / 40.0))
        .collect();
    let ts: Vec<f64> = sigmas.iter().map(|&s| t2_at(s)).collect::<Result<_>>()?;
    let Some(k) = (0..ts.len() - 1).find(|&k| ts[k] > target && ts[k + 1] <= target) else {
        let shortest = ts.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::InvalidParameter(format!(
            "T2 Rabi of {target} us is out of reach for omega0 = {} MHz (shortest {shortest:.3} us)",
            two_level.omega0
        )));
    };
    let (mut lo, mut hi) = (sigmas[k], sigmas[k + 1]);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if t2_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// How a spectrum is formed from a real signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumKind {
    /// Modulus of the transform of the mean-removed signal.
    Magnitude,
    /// Real part of the transform; absorptive lines for cosine signals that
    /// start at zero phase, as in a Ramsey record.
    Cosine,
}

/// One-sided spectrum, zero-padded to at least `pad` times the signal length.
pub fn amplitude_spectrum(signal: &[f64], dt: f64, pad: usize, kind: SpectrumKind) -> (Vec<f64>, Vec<f64>) {
    let n = (signal.len() * pad.max(1)).next_power_of_two().max(2);
    let mean = match kind {
        SpectrumKind::Magnitude => signal.iter().sum::<f64>() / signal.len().max(1) as f64,
        SpectrumKind::Cosine => 0.0,
    };
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
    if kind == SpectrumKind::Cosine {
        if let Some(first) = buf.first_mut() {
            *first *= 0.5;
        }
    }
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let half = n / 2 + 1;
    let freqs = (0..half).map(|k| k as f64 * df).collect();
    let mags = buf[..half]
        .iter()
        .map(|z| match kind {
            SpectrumKind::Magnitude => z.norm(),
            SpectrumKind::Cosine => z.re,
        })
        .collect();
    (freqs, mags)
}

/// Frequencies of the `max_peaks` largest local maxima of the magnitude
/// spectrum, refined by parabolic interpolation, largest first.
pub fn spectral_peaks(signal: &[f64], dt: f64, max_peaks: usize) -> Vec<f64> {
    spectral_peaks_with(signal, dt, max_peaks, SpectrumKind::Magnitude)
}

pub fn spectral_peaks_with(signal: &[f64], dt: f64, max_peaks: usize, kind: SpectrumKind) -> Vec<f64> {
    let (freqs, mags) = amplitude_spectrum(signal, dt, 16, kind);
    if mags.len() < 3 {
        return Vec::new();
    }
    let df = freqs[1] - freqs[0];
    let mut peaks: Vec<(f64, f64)> = (1..mags.len() - 1)
        .filter(|&k| mags[k] > mags[k - 1] && mags[k] >= mags[k + 1] && mags[k] > 0.0)
        .map(|k| {
            let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            (freqs[k] + shift * df, b)
        })
        .collect();
    peaks.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.total_cmp(&y.0)));
    peaks.into_iter().take(max_peaks).map(|p| p.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::transitions_with;

    fn tl(omega0: f64) -> TwoLevel {
        TwoLevel { omega0, f0: 500.0 }
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn pi_pulse_and_detuned_maximum() {
        let t = tl(20.0);
        assert!((transfer(&t, 0.0, 1.0 / 40.0) - 1.0).abs() < 1e-12);
        let ts = linspace(0.0, 0.2, 4001);
        let max = ts.iter().map(|&x| transfer(&t, 20.0, x)).fold(0.0, f64::max);
        assert!((max - 0.5).abs() < 1e-6);
        // oscillation at sqrt(2) omega0: first maximum at 1/(2 sqrt2 omega0)
        assert!((transfer(&t, 20.0, 1.0 / (2.0 * 2f64.sqrt() * 20.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chevron_is_symmetric() {
        let m = rabi_chevron(&tl(3.0), &[-5.0, -1.0, 0.0, 1.0, 5.0], &linspace(0.0, 1.0, 11));
        for j in 0..11 {
            assert_eq!(m.transfer[0][j], m.transfer[4][j]);
            assert_eq!(m.transfer[1][j], m.transfer[3][j]);
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_rabi_frequency() {
        let p = SpinSystemParams::default();
        let r = reduce_to_two_level(&p, 18.5, &StateLabel::down(-2.5), &StateLabel::up(-1.5), 0.0).unwrap();
        assert_eq!(r.omega0, 0.0);
        assert!(r.f0 > 500.0);
        let r2 = reduce_to_two_level(&p, 18.5, &StateLabel::down(-2.5), &StateLabel::up(-1.5), 2.0).unwrap();
        let r1 = reduce_to_two_level(&p, 18.5, &StateLabel::down(-2.5), &StateLabel::up(-1.5), 1.0).unwrap();
        assert!((r2.omega0 - 2.0 * r1.omega0).abs() < 1e-12);
    }

    #[test]
    fn free_evolution_keeps_populations_and_rotates_phases() {
        let p = SpinSystemParams::default();
        let fe = crate::spectrum::FieldEigensystem::new(&p, 20.0).unwrap();
        let mut psi = DVector::zeros(16);
        for k in 0..16 {
            psi += fe.eigen.vector(k) * Complex64::new(0.25, 0.0);
        }
        let t = 0.0137;
        let seq = PulseSequence::new(vec![PulseSegment::free(t).unwrap()]).unwrap();
        let out = propagate_full(&p, 20.0, &seq, &psi).unwrap();
        for k in 0..16 {
            let c = fe.eigen.vector(k).dotc(&out);
            let want = Complex64::from_polar(0.25, -2.0 * PI * fe.eigen.values[k] * t);
            assert!((c - want).norm() < 1e-9, "{k}: {c} vs {want}");
        }
    }

    #[test]
    fn weak_resonant_pi_pulse_matches_two_level() {
        let p = SpinSystemParams::default();
        let (i, f) = (StateLabel::down(-2.5), StateLabel::up(-1.5));
        let b = 18.5;
        let t1 = reduce_to_two_level(&p, b, &i, &f, 1.0).unwrap();
        let a = 0.3 / t1.omega0;
        let t = reduce_to_two_level(&p, b, &i, &f, a).unwrap();
        let seq = PulseSequence::new(vec![PulseSegment::new(0.5 / t.omega0, a, t.f0, 0.0).unwrap()]).unwrap();
        let full = transfer_full(&p, b, &seq, &i, &f).unwrap();
        assert!((full - 1.0).abs() < 0.02, "transfer {full}");
    }

    #[test]
    fn strong_drive_leaks_to_spectators() {
        let p = SpinSystemParams::default();
        let (i, f) = (StateLabel::down(-2.5), StateLabel::up(-1.5));
        let b = 18.5;
        let lines = transitions_with(&p, b, crate::spectrum::StrengthFloor::default()).unwrap();
        let t1 = reduce_to_two_level(&p, b, &i, &f, 1.0).unwrap();
        let (_, li, lf) = resolve_levels(&p, b, &i, &f).unwrap();
        let shares = |l: &crate::spectrum::TransitionLine| [l.lower, l.upper].iter().any(|k| *k == li || *k == lf);
        let nearest = lines
            .iter()
            .filter(|l| shares(l) && !(l.lower == li.min(lf) && l.upper == li.max(lf)))
            .map(|l| (l.frequency - t1.f0).abs())
            .fold(f64::INFINITY, f64::min);
        let a = 3.0 * nearest / t1.omega0;
        let t = reduce_to_two_level(&p, b, &i, &f, a).unwrap();
        let seq = PulseSequence::new(vec![PulseSegment::new(0.5 / t.omega0, a, t.f0, 0.0).unwrap()]).unwrap();
        let full = transfer_full(&p, b, &seq, &i, &f).unwrap();
        assert!((full - 1.0).abs() > 0.02, "transfer {full}");
    }

    #[test]
    fn rejects_bad_pulses() {
        assert!(PulseSegment::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(PulseSegment::new(1.0, -1.0, 100.0, 0.0).is_err());
        assert!(PulseSegment::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(PulseSequence::new(vec![]).is_err());
    }

    #[test]
    fn ramsey_pure_cosine() {
        let e = EnsembleModel::single(0.0).unwrap();
        let d = linspace(0.0, 4.0, 401);
        let s = ramsey(&e, &d, 1.0);
        for (tau, v) in d.iter().zip(&s) {
            assert!((v - (2.0 * PI * tau).cos()).abs() < 1e-12);
        }
        let peak = spectral_peaks(&s, 0.01, 1)[0];
        assert!((peak - 1.0).abs() < 0.01, "{peak}");
    }

    #[test]
    fn ramsey_envelope_matches_t2_star() {
        let sigma = sigma_from_t2_star(0.41);
        let e = EnsembleModel::single(sigma).unwrap();
        assert!((e.t2_star() - 0.41).abs() < 1e-12);
        let env = ramsey(&e, &[0.41], 0.0)[0];
        assert!((env - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn two_component_beat() {
        let e = EnsembleModel::new(sigma_from_t2_star(0.41), vec![(0.0, 1.0), (1.7, 1.0)]).unwrap();
        let dt = 0.005;
        let d: Vec<f64> = (0..800).map(|k| k as f64 * dt).collect();
        let s = ramsey(&e, &d, 4.0);
        let mut p = spectral_peaks_with(&s, dt, 2, SpectrumKind::Cosine);
        p.sort_by(f64::total_cmp);
        assert!((p[1] - p[0] - 1.7).abs() < 0.1, "{p:?}");
    }

    #[test]
    fn weights_normalise() {
        let e = EnsembleModel::new(0.2, vec![(0.0, 3.0), (1.0, 1.0)]).unwrap();
        assert!((e.components[0].1 - 0.75).abs() < 1e-15);
        let total: f64 = e.nodes().iter().map(|n| n.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(EnsembleModel::new(-1.0, vec![(0.0, 1.0)]).is_err());
        assert!(EnsembleModel::new(0.1, vec![(0.0, 0.0)]).is_err());
    }

    #[test]
    fn undamped_rabi_fit_has_no_decay() {
        let d = linspace(0.0, 2.0, 401);
        let r = damped_rabi(&tl(2.9), &EnsembleModel::single(0.0).unwrap(), &d).unwrap();
        assert!(r.fit.converged);
        assert!((r.fit.rabi_freq - 2.9).abs() < 1e-6);
        assert!(r.fit.t2_rabi > 2.0);
    }

    #[test]
    fn broad_ensemble_damps_within_a_period() {
        let d = linspace(0.0, 2.0, 401);
        let r = damped_rabi(&tl(2.9), &EnsembleModel::single(30.0).unwrap(), &d).unwrap();
        let late: Vec<f64> = d.iter().zip(&r.signal).filter(|(t, _)| **t > 1.0 / 2.9).map(|(_, v)| *v).collect();
        let mean = late.iter().sum::<f64>() / late.len() as f64;
        let swing = late.iter().fold(0.0_f64, |m, v| m.max((v - mean).abs()));
        assert!(swing < 0.05, "swing {swing}");
    }

    #[test]
    fn sigma_tuning_hits_target() {
        let d = linspace(0.0, 2.0, 401);
        let t = tl(2.9);
        let s = tune_sigma_for_t2_rabi(&t, &[(0.0, 1.0)], &d, 1.5).unwrap();
        let r = damped_rabi(&t, &EnsembleModel::single(s).unwrap(), &d).unwrap();
        assert!((r.fit.t2_rabi - 1.5).abs() < 1e-3, "{:?}", r.fit);
    }

    #[test]
    fn detuning_spread_alone_cannot_reach_fast_damping() {
        let d = linspace(0.0, 2.0, 401);
        let err = tune_sigma_for_t2_rabi(&tl(2.9), &[(0.0, 1.0)], &d, 0.26).unwrap_err();
        assert!(err.to_string().contains("out of reach"));
    }
}
