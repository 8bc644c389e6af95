//! Run configuration: spin parameters plus `section.key` options.

use std::path::{Path, PathBuf};

use qss_core::config::{params_from, read_params, KeyValues, PARAM_KEYS};
use qss_core::dynamics::{sigma_from_t2_star, EnsembleModel};
use qss_core::fit::{FitParam, FitSpec, FreeParam, PeakList, DEFAULT_GATE, MAX_STARTS};
use qss_core::spectrum::{StateLabel, DEFAULT_RELATIVE_FLOOR};
use qss_core::{Error, Result, SpinSystemParams};

const KEYS: &[&str] = &[
    "parameter_file",
    "map.b_min",
    "map.b_max",
    "map.b_step",
    "map.f_max",
    "map.floor_rel",
    "clock.initial",
    "clock.final",
    "clock.b_min",
    "clock.b_max",
    "classify.b",
    "drive.b",
    "drive.initial",
    "drive.final",
    "drive.ac_amplitude_mT",
    "drive.moment_MHz_per_mT",
    "ensemble.sigma_MHz",
    "ensemble.t2_star_us",
    "ensemble.offsets_MHz",
    "ensemble.weights",
    "chevron.detuning_min",
    "chevron.detuning_max",
    "chevron.detuning_step",
    "chevron.t_min",
    "chevron.t_max",
    "chevron.t_step",
    "rabi.t_min",
    "rabi.t_max",
    "rabi.t_step",
    "rabi.t2_rabi_target_us",
    "ramsey.detuning_MHz",
    "ramsey.tau_min",
    "ramsey.tau_max",
    "ramsey.tau_step",
    "fit.peaks",
    "fit.free",
    "fit.gate_MHz",
    "fit.multistart",
    "fit.max_starts",
    "fit.jitter",
];

const PREFIXES: &[&str] = &["fit.initial.", "fit.bounds."];

#[derive(Clone, Debug)]
pub struct MapOptions {
    pub grid: Vec<f64>,
    pub f_max: f64,
    pub floor_rel: f64,
}

#[derive(Clone, Debug)]
pub struct ClockOptions {
    pub initial: StateLabel,
    pub final_: StateLabel,
    pub window: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct DriveOptions {
    pub b_mt: f64,
    pub initial: StateLabel,
    pub final_: StateLabel,
    pub ac_amplitude: f64,
    /// Replaces the computed `|<f|M_z|i>|` when set.
    pub moment: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ChevronOptions {
    pub detunings: Vec<f64>,
    pub durations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RabiOptions {
    pub durations: Vec<f64>,
    pub t2_rabi_target: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RamseyOptions {
    pub detuning: f64,
    pub delays: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub peaks: Option<PathBuf>,
    pub free: Vec<FreeParam>,
    pub gate: f64,
    pub multistart: bool,
    pub max_starts: usize,
    pub jitter: f64,
}

/// Everything a command needs, validated up front.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: PathBuf,
    pub params: SpinSystemParams,
    pub map: MapOptions,
    pub clock: ClockOptions,
    pub classify_b: f64,
    pub drive: DriveOptions,
    pub ensemble: EnsembleModel,
    pub chevron: ChevronOptions,
    pub rabi: RabiOptions,
    pub ramsey: RamseyOptions,
    pub fit: FitOptions,
}

/// `min, min + step, ..` up to `max` inclusive (within 1e-9 step).
pub fn uniform_grid(kv: &KeyValues, min_key: &str, max_key: &str, step_key: &str, d: (f64, f64, f64)) -> Result<Vec<f64>> {
    let min = kv.f64_or(min_key, d.0)?;
    let max = kv.f64_or(max_key, d.1)?;
    let step = kv.f64_or(step_key, d.2)?;
    if !(step > 0.0) {
        return Err(kv.error(step_key, format!("step {step} must be positive")));
    }
    if max < min {
        return Err(kv.error(max_key, format!("grid is empty: {max_key} = {max} is below {min_key} = {min}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    if n > 10_000_000 {
        return Err(kv.error(step_key, "grid has more than 1e7 points"));
    }
    Ok((0..=n).map(|k| min + step * k as f64).collect())
}

fn positive(kv: &KeyValues, key: &str, default: f64) -> Result<f64> {
    let v = kv.f64_or(key, default)?;
    if !(v > 0.0) {
        return Err(kv.error(key, format!("{v} must be positive")));
    }
    Ok(v)
}

fn label(kv: &KeyValues, key: &str, default: StateLabel) -> Result<StateLabel> {
    match kv.string(key) {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e| kv.error(key, e)),
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        Self::from_kv(&kv, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn from_kv(kv: &KeyValues, dir: &Path, source: &Path) -> Result<Self> {
        let mut allowed: Vec<&str> = PARAM_KEYS.to_vec();
        allowed.extend_from_slice(KEYS);
        kv.reject_unknown(&allowed, PREFIXES)?;

        let base = match kv.string("parameter_file") {
            Some(p) => {
                let p = resolve(dir, p);
                if !p.is_file() {
                    return Err(kv.error("parameter_file", format!("{} does not exist", p.display())));
                }
                read_params(&p)?
            }
            None => SpinSystemParams::default(),
        };
        let params = params_from(kv, base)?;

        let map = MapOptions {
            grid: uniform_grid(kv, "map.b_min", "map.b_max", "map.b_step", (0.0, 50.0, 0.25))?,
            f_max: positive(kv, "map.f_max", 2000.0)?,
            floor_rel: kv.f64_or("map.floor_rel", DEFAULT_RELATIVE_FLOOR)?,
        };
        if !(map.floor_rel >= 0.0 && map.floor_rel < 1.0) {
            return Err(kv.error("map.floor_rel", "must lie in [0, 1)"));
        }

        let clock = ClockOptions {
            initial: label(kv, "clock.initial", StateLabel::down(-3.5))?,
            final_: label(kv, "clock.final", StateLabel::up(-2.5))?,
            window: (kv.f64_or("clock.b_min", 20.0)?, kv.f64_or("clock.b_max", 40.0)?),
        };
        if !(clock.window.1 > clock.window.0) {
            return Err(kv.error("clock.b_max", "clock window must be ascending"));
        }
        if clock.initial.same_state(&clock.final_) {
            return Err(kv.error("clock.final", "initial and final states coincide"));
        }

        let classify_b = kv.f64_or("classify.b", 17.5)?;

        let drive = DriveOptions {
            b_mt: kv.f64_or("drive.b", 29.0)?,
            initial: label(kv, "drive.initial", StateLabel::down(-3.5))?,
            final_: label(kv, "drive.final", StateLabel::up(-2.5))?,
            ac_amplitude: kv.f64_or("drive.ac_amplitude_mT", 0.25)?,
            moment: kv.f64("drive.moment_MHz_per_mT")?,
        };
        if !(drive.ac_amplitude >= 0.0) {
            return Err(kv.error("drive.ac_amplitude_mT", "must be >= 0"));
        }
        if drive.initial.same_state(&drive.final_) {
            return Err(kv.error("drive.final", "initial and final states coincide"));
        }
        if drive.moment.is_some_and(|m| !(m >= 0.0)) {
            return Err(kv.error("drive.moment_MHz_per_mT", "must be >= 0"));
        }

        let sigma = match (kv.f64("ensemble.sigma_MHz")?, kv.f64("ensemble.t2_star_us")?) {
            (Some(_), Some(_)) => {
                return Err(kv.error("ensemble.t2_star_us", "give either ensemble.sigma_MHz or ensemble.t2_star_us"))
            }
            (Some(s), None) => s,
            (None, Some(t)) => {
                if !(t > 0.0) {
                    return Err(kv.error("ensemble.t2_star_us", "must be positive"));
                }
                sigma_from_t2_star(t)
            }
            (None, None) => 0.0,
        };
        let offsets = kv.f64_list("ensemble.offsets_MHz")?.unwrap_or_else(|| vec![0.0]);
        let weights = kv.f64_list("ensemble.weights")?.unwrap_or_else(|| vec![1.0; offsets.len()]);
        if weights.len() != offsets.len() {
            return Err(kv.error(
                "ensemble.weights",
                format!("{} weights for {} offsets", weights.len(), offsets.len()),
            ));
        }
        let ensemble = EnsembleModel::new(sigma, offsets.into_iter().zip(weights).collect())
            .map_err(|e| kv.error("ensemble.sigma_MHz", e))?;

        let chevron = ChevronOptions {
            detunings: uniform_grid(
                kv,
                "chevron.detuning_min",
                "chevron.detuning_max",
                "chevron.detuning_step",
                (-10.0, 10.0, 0.1),
            )?,
            durations: uniform_grid(kv, "chevron.t_min", "chevron.t_max", "chevron.t_step", (0.0, 2.0, 0.01))?,
        };
        let rabi = RabiOptions {
            durations: uniform_grid(kv, "rabi.t_min", "rabi.t_max", "rabi.t_step", (0.0, 3.0, 0.005))?,
            t2_rabi_target: kv.f64("rabi.t2_rabi_target_us")?,
        };
        if rabi.t2_rabi_target.is_some_and(|t| !(t > 0.0)) {
            return Err(kv.error("rabi.t2_rabi_target_us", "must be positive"));
        }
        let ramsey = RamseyOptions {
            detuning: kv.f64_or("ramsey.detuning_MHz", 4.0)?,
            delays: uniform_grid(kv, "ramsey.tau_min", "ramsey.tau_max", "ramsey.tau_step", (0.0, 4.0, 0.005))?,
        };

        let fit = Self::fit_options(kv, dir, &params)?;
        Ok(RunConfig {
            source: source.to_path_buf(),
            params,
            map,
            clock,
            classify_b,
            drive,
            ensemble,
            chevron,
            rabi,
            ramsey,
            fit,
        })
    }

    fn fit_options(kv: &KeyValues, dir: &Path, params: &SpinSystemParams) -> Result<FitOptions> {
        let peaks = kv.string("fit.peaks").map(|p| resolve(dir, p));
        if let Some(p) = &peaks {
            if !p.is_file() {
                return Err(kv.error("fit.peaks", format!("{} does not exist", p.display())));
            }
        }
        let names: Vec<FitParam> = kv
            .string("fit.free")
            .unwrap_or("a_zz, a_plus, a_minus, a_zx, g_z")
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| kv.error("fit.free", e)))
            .collect::<Result<_>>()?;
        let mut free: Vec<FreeParam> = names.iter().map(|&p| FreeParam::around(p, p.value_in(params))).collect();
        for key in kv.keys() {
            for (prefix, is_bounds) in [("fit.initial.", false), ("fit.bounds.", true)] {
                let Some(name) = key.strip_prefix(prefix) else { continue };
                let param: FitParam = name.parse().map_err(|e| kv.error(key, e))?;
                let Some(slot) = free.iter_mut().find(|f| f.param == param) else {
                    return Err(kv.error(key, format!("{param} is not listed in fit.free")));
                };
                if is_bounds {
                    let v = kv.f64_list(key)?.unwrap_or_default();
                    if v.len() != 2 {
                        return Err(kv.error(key, "expected `lower, upper`"));
                    }
                    slot.lower = v[0];
                    slot.upper = v[1];
                } else {
                    slot.initial = kv.f64(key)?.unwrap_or(slot.initial);
                }
            }
        }
        // Bounds default around the configured initial value.
        for f in &mut free {
            if kv.get(&format!("fit.bounds.{}", f.param)).is_none() {
                let b = FreeParam::around(f.param, f.initial);
                f.lower = b.lower;
                f.upper = b.upper;
            }
        }
        let gate = positive(kv, "fit.gate_MHz", DEFAULT_GATE)?;
        let max_starts = kv.f64_or("fit.max_starts", MAX_STARTS as f64)?;
        if !(max_starts >= 1.0 && max_starts.fract() == 0.0) {
            return Err(kv.error("fit.max_starts", "must be a positive integer"));
        }
        let jitter = kv.f64_or("fit.jitter", 0.0)?;
        if !(0.0..1.0).contains(&jitter) {
            return Err(kv.error("fit.jitter", "must lie in [0, 1)"));
        }
        let opts = FitOptions {
            peaks,
            free,
            gate,
            multistart: kv.bool_or("fit.multistart", true)?,
            max_starts: max_starts as usize,
            jitter,
        };
        FitSpec::new(*params, opts.free.clone()).map_err(|e| Error::Config(format!("fit: {e}")))?;
        Ok(opts)
    }

    pub fn peaks(&self) -> Result<PeakList> {
        let path = self
            .fit
            .peaks
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{}: fit.peaks is required for `fit`", self.source.display())))?;
        PeakList::read_csv(path)
    }
}
