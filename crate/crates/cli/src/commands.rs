use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use qss_core::config::write_atomic;
use qss_core::dynamics::{
    damped_rabi, ramsey, rabi_chevron, reduce_to_two_level, spectral_peaks_with, t2_star_from_sigma,
    tune_sigma_for_t2_rabi, EnsembleModel, SpectrumKind, TwoLevel,
};
use qss_core::fit::{fit_parameters, write_fit_report, write_residuals_csv, FitSpec};
use qss_core::spectrum::{classify_with_fits, ClassifyOptions, StrengthFloor};
use qss_core::{clock_transitions, odmr_line_map, Result};

use crate::config::RunConfig;
use crate::Command;

const FIT_NONCONVERGED: u8 = 3;

pub fn run(command: Command, config: &Path, out: &Path, seed: u64) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let peaks = match command {
        Command::Fit => Some(cfg.peaks()?),
        _ => None,
    };
    std::fs::create_dir_all(out)?;
    log::info!("{command:?} with {}", config.display());
    match command {
        Command::Map => map(&cfg, out),
        Command::Clock => clock(&cfg, out),
        Command::Classify => classify(&cfg, out),
        Command::Chevron => chevron(&cfg, out),
        Command::Rabi => rabi(&cfg, out, seed),
        Command::Ramsey => ramsey_cmd(&cfg, out, seed),
        Command::Fit => {
            let peaks = peaks.unwrap();
            let mut spec = FitSpec::new(cfg.params, cfg.fit.free.clone())?;
            spec.gate = cfg.fit.gate;
            spec.multistart = cfg.fit.multistart;
            spec.max_starts = cfg.fit.max_starts;
            spec.jitter = cfg.fit.jitter;
            spec.seed = seed;
            let result = fit_parameters(&peaks, &spec)?;
            let mut report = Vec::new();
            write_fit_report(&mut report, &result, seed)?;
            write_atomic(&out.join("fit_report.txt"), &report)?;
            let mut csv = Vec::new();
            write_residuals_csv(&mut csv, &peaks, &result)?;
            write_atomic(&out.join("fit_residuals.csv"), &csv)?;
            if result.is_degenerate() {
                eprintln!("qss: warning: fit is degenerate; see null_direction in fit_report.txt");
            }
            if !result.converged {
                eprintln!("qss: fit did not converge");
                return Ok(ExitCode::from(FIT_NONCONVERGED));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn map(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let records = odmr_line_map(&cfg.params, &cfg.map.grid, cfg.map.f_max, StrengthFloor::Relative(cfg.map.floor_rel))?;
    let mut buf = Vec::new();
    qss_core::spectrum::write_map_csv(&mut buf, &records)?;
    write_atomic(&out.join("map.csv"), &buf)?;
    Ok(ExitCode::SUCCESS)
}

fn clock(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let c = &cfg.clock;
    let points = clock_transitions(&cfg.params, &c.initial, &c.final_, c.window)?;
    let mut s = String::from("B_mT,freq_MHz,curvature_MHz_per_mT2\n");
    for p in &points {
        let _ = writeln!(s, "{},{},{}", p.b_mt, p.frequency, p.curvature);
    }
    print!("{s}");
    write_atomic(&out.join("clock.csv"), s.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn classify(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let lines = classify_with_fits(&cfg.params, cfg.classify_b, &ClassifyOptions::default())?;
    let mut s = String::from(
        "B_mT,init_label,final_label,freq_MHz,strength_MHz2_per_mT2,class,strain_exponent,max_rel_residual\n",
    );
    for (l, fit) in &lines {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            cfg.classify_b,
            l.initial,
            l.final_,
            l.frequency,
            l.strength,
            fit.class,
            fit.exponent,
            fit.max_rel_residual
        );
    }
    write_atomic(&out.join("classify.csv"), s.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn two_level(cfg: &RunConfig) -> Result<TwoLevel> {
    let d = &cfg.drive;
    let mut tl = reduce_to_two_level(&cfg.params, d.b_mt, &d.initial, &d.final_, d.ac_amplitude)?;
    if let Some(m) = d.moment {
        tl.omega0 = m * d.ac_amplitude;
    }
    Ok(tl)
}

fn chevron(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let tl = two_level(cfg)?;
    let map = rabi_chevron(&tl, &cfg.chevron.detunings, &cfg.chevron.durations);
    let mut s = String::from("detuning_MHz,duration_us,transfer\n");
    for (d, row) in map.detunings.iter().zip(&map.transfer) {
        for (t, p) in map.durations.iter().zip(row) {
            let _ = writeln!(s, "{d},{t},{p}");
        }
    }
    write_atomic(&out.join("chevron.csv"), s.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn rabi(cfg: &RunConfig, out: &Path, seed: u64) -> Result<ExitCode> {
    let tl = two_level(cfg)?;
    let ensemble = match cfg.rabi.t2_rabi_target {
        Some(target) => {
            let sigma = tune_sigma_for_t2_rabi(&tl, &cfg.ensemble.components, &cfg.rabi.durations, target)?;
            EnsembleModel::new(sigma, cfg.ensemble.components.clone())?
        }
        None => cfg.ensemble.clone(),
    };
    let r = damped_rabi(&tl, &ensemble, &cfg.rabi.durations)?;
    let mut s = String::from("duration_us,signal\n");
    for (t, y) in r.durations.iter().zip(&r.signal) {
        let _ = writeln!(s, "{t},{y}");
    }
    write_atomic(&out.join("rabi.csv"), s.as_bytes())?;
    let f = r.fit;
    let mut k = format!("# seed={seed}\n");
    let _ = writeln!(k, "omega0_MHz = {}", tl.omega0);
    let _ = writeln!(k, "f0_MHz = {}", tl.f0);
    let _ = writeln!(k, "sigma_MHz = {}", ensemble.detuning_sigma);
    let _ = writeln!(k, "amplitude = {}", f.amplitude);
    let _ = writeln!(k, "rabi_freq_MHz = {}", f.rabi_freq);
    let _ = writeln!(k, "decay_rate_per_us = {}", f.decay_rate);
    let _ = writeln!(k, "t2_rabi_us = {}", f.t2_rabi);
    let _ = writeln!(k, "offset = {}", f.offset);
    let _ = writeln!(k, "rms_residual = {}", f.rms_residual);
    let _ = writeln!(k, "converged = {}", f.converged);
    write_atomic(&out.join("rabi_fit.txt"), k.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn ramsey_cmd(cfg: &RunConfig, out: &Path, seed: u64) -> Result<ExitCode> {
    let delays = &cfg.ramsey.delays;
    let signal = ramsey(&cfg.ensemble, delays, cfg.ramsey.detuning);
    let mut s = String::from("delay_us,signal\n");
    for (t, y) in delays.iter().zip(&signal) {
        let _ = writeln!(s, "{t},{y}");
    }
    write_atomic(&out.join("ramsey.csv"), s.as_bytes())?;
    let mut k = format!("# seed={seed}\n");
    let _ = writeln!(k, "detuning_MHz = {}", cfg.ramsey.detuning);
    let _ = writeln!(k, "sigma_MHz = {}", cfg.ensemble.detuning_sigma);
    let _ = writeln!(k, "t2_star_us = {}", t2_star_from_sigma(cfg.ensemble.detuning_sigma));
    if delays.len() >= 2 {
        let dt = delays[1] - delays[0];
        let n = cfg.ensemble.components.len();
        let peaks = spectral_peaks_with(&signal, dt, n, SpectrumKind::Cosine);
        let list: Vec<String> = peaks.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(k, "spectral_peaks_MHz = {}", list.join(", "));
    }
    write_atomic(&out.join("ramsey_report.txt"), k.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
