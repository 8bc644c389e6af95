//! Fixtures shared by the benchmarks.

use qss_core::fit::{Peak, PeakList};
use qss_core::spectrum::{transitions_with, StrengthFloor};
use qss_core::SpinSystemParams;

/// The `per_field` strongest lines below 1500 MHz at each field.
pub fn synthetic_peaks(params: &SpinSystemParams, fields: &[f64], per_field: usize) -> PeakList {
    let mut peaks = Vec::new();
    for &b in fields {
        let mut lines = transitions_with(params, b, StrengthFloor::default()).expect("valid parameters");
        lines.retain(|l| l.frequency < 1500.0);
        lines.sort_by(|a, c| c.strength.total_cmp(&a.strength));
        peaks.extend(lines.iter().take(per_field).map(|l| Peak::new(b, l.frequency)));
    }
    PeakList::new(peaks).expect("finite peaks")
}

pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
