//! Spin Hamiltonian, ODMR spectra, drive dynamics and hyperfine fitting for
//! the 16-level ground manifold of the vanadium alpha-site defect in 4H-SiC.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hamiltonian;
pub mod spectrum;
pub mod spin;

pub use dynamics::{
    damped_rabi, propagate_full, rabi_chevron, ramsey, reduce_to_two_level, transfer, transfer_full, EnsembleModel,
    PulseSequence, TwoLevel,
};
pub use error::{Error, Result};
pub use fit::{assign_peaks, fit_parameters, FitParam, FitResult, FitSpec, Peak, PeakList};
pub use hamiltonian::{build_hamiltonian, FieldPoint, HyperfineTensor, SpinSystemParams};
pub use spectrum::{
    classify_transitions, clock_transitions, gyromagnetic_moment, odmr_line_map, transition_moment, transitions,
    ClockPoint, LineClass, StateLabel, TransitionLine,
};
pub use spin::{eigh, Eigensystem, Spin, SpinMatrix};
