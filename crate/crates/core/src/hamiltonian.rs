//! Physical parameters and the ground-state spin Hamiltonian.
//!
//! The Kramers-doublet pseudospin-1/2 `S` couples to the nuclear spin `I`
//! through
//!
//! ```text
//! H/h = (μB gz Sz + μN gN Iz) B + a_zz Sz Iz + a_xx Sx Ix + a_yy Sy Iy
//!       + a_zx Sz Ix + a_xz Sx Iz
//! ```
//!
//! with `a_xx = (a_plus + a_minus)/2` and `a_yy = (a_plus - a_minus)/2`, so the
//! transverse part reads `a_plus/2 (SxIx + SyIy) + a_minus/2 (SxIx - SyIy)`.
//! Energies are frequencies in MHz and fields are in mT.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spin::{kron, spin_operators, Spin, SpinMatrix};

/// Bohr magneton over Planck constant, MHz/mT.
pub const MU_B_OVER_H: f64 = 13.996245;
/// Nuclear magneton over Planck constant, MHz/mT.
pub const MU_N_OVER_H: f64 = 0.00762259;
/// Nuclear g-factor of 51V.
pub const G_N_V51: f64 = 1.4711;
/// Parallel g-factor of the alpha-site ground doublet from earlier ensemble
/// work; sign fixed so that the `|down,m> <-> |up,m+1>` anticrossings lie at
/// positive field when `a_zz < 0`. Treat as a calibration parameter.
pub const G_Z_PLACEHOLDER: f64 = -1.748;

/// The five independent hyperfine couplings, MHz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperfineTensor {
    pub a_zz: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub a_zx: f64,
    pub a_xz: f64,
}

impl HyperfineTensor {
    pub const ZERO: HyperfineTensor = HyperfineTensor {
        a_zz: 0.0,
        a_plus: 0.0,
        a_minus: 0.0,
        a_zx: 0.0,
        a_xz: 0.0,
    };

    /// Builds the tensor from its Cartesian diagonal elements.
    pub fn from_cartesian(a_xx: f64, a_yy: f64, a_zz: f64, a_zx: f64, a_xz: f64) -> Self {
        HyperfineTensor {
            a_zz,
            a_plus: a_xx + a_yy,
            a_minus: a_xx - a_yy,
            a_zx,
            a_xz,
        }
    }

    /// Couplings fitted to the strained micromachined ensemble:
    /// a_xx = 176.5, a_yy = -148.5, a_zz = -230, a_zx = 5 MHz.
    pub fn strained_ensemble() -> Self {
        Self::from_cartesian(176.5, -148.5, -230.0, 5.0, 0.0)
    }

    pub fn a_xx(&self) -> f64 {
        (self.a_plus + self.a_minus) / 2.0
    }

    pub fn a_yy(&self) -> f64 {
        (self.a_plus - self.a_minus) / 2.0
    }

    /// Largest magnitude among the Cartesian tensor elements.
    pub fn max_abs(&self) -> f64 {
        [self.a_xx(), self.a_yy(), self.a_zz, self.a_zx, self.a_xz]
            .iter()
            .fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a_zz", self.a_zz),
            ("a_plus", self.a_plus),
            ("a_minus", self.a_minus),
            ("a_zx", self.a_zx),
            ("a_xz", self.a_xz),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} is not finite")));
            }
        }
        Ok(())
    }
}

impl Default for HyperfineTensor {
    fn default() -> Self {
        Self::strained_ensemble()
    }
}

/// Everything needed to build the Hamiltonian at a given field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinSystemParams {
    pub g_z: f64,
    pub g_n: f64,
    pub mu_b_over_h: f64,
    pub mu_n_over_h: f64,
    pub nuclear_spin: Spin,
    pub hyperfine: HyperfineTensor,
}

impl Default for SpinSystemParams {
    fn default() -> Self {
        SpinSystemParams {
            g_z: G_Z_PLACEHOLDER,
            g_n: G_N_V51,
            mu_b_over_h: MU_B_OVER_H,
            mu_n_over_h: MU_N_OVER_H,
            nuclear_spin: Spin::from_twice(7),
            hyperfine: HyperfineTensor::default(),
        }
    }
}

impl SpinSystemParams {
    pub fn with_hyperfine(mut self, hyperfine: HyperfineTensor) -> Self {
        self.hyperfine = hyperfine;
        self
    }

    pub fn with_g_z(mut self, g_z: f64) -> Self {
        self.g_z = g_z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_b_over_h > 0.0) || !self.mu_b_over_h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu_B/h = {} must be positive",
                self.mu_b_over_h
            )));
        }
        if !(self.mu_n_over_h > 0.0) || !self.mu_n_over_h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu_N/h = {} must be positive",
                self.mu_n_over_h
            )));
        }
        if !self.g_z.is_finite() || !self.g_n.is_finite() {
            return Err(Error::InvalidParameter("g-factors must be finite".into()));
        }
        if self.nuclear_spin.twice() == 0 {
            return Err(Error::InvalidParameter("nuclear spin must be positive".into()));
        }
        self.hyperfine.validate()
    }

    /// Hilbert-space dimension, `2 (2I + 1)`.
    pub fn dim(&self) -> usize {
        2 * self.nuclear_spin.dim()
    }

    /// Zeeman frequency of the pseudospin per mT.
    pub fn electron_zeeman(&self) -> f64 {
        self.mu_b_over_h * self.g_z
    }

    pub fn nuclear_zeeman(&self) -> f64 {
        self.mu_n_over_h * self.g_n
    }

    pub fn has_strain(&self) -> bool {
        let h = &self.hyperfine;
        h.a_plus != 0.0 || h.a_zx != 0.0 || h.a_xz != 0.0
    }
}

/// Static bias field along the c-axis, mT.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct FieldPoint(pub f64);

impl FieldPoint {
    pub fn new(b_mt: f64) -> Result<Self> {
        if !b_mt.is_finite() {
            return Err(Error::InvalidParameter(format!("field {b_mt} mT is not finite")));
        }
        Ok(FieldPoint(b_mt))
    }

    pub fn mt(self) -> f64 {
        self.0
    }
}

/// Product-space operators `S_u ⊗ I_v`, built once per nuclear spin.
#[derive(Debug)]
pub struct ProductOperators {
    pub nuclear_spin: Spin,
    pub sz: DMatrix<f64>,
    pub iz: DMatrix<f64>,
    pub sz_iz: DMatrix<f64>,
    pub sx_ix: DMatrix<f64>,
    pub sy_iy: DMatrix<f64>,
    pub sz_ix: DMatrix<f64>,
    pub sx_iz: DMatrix<f64>,
}

impl ProductOperators {
    pub fn new(nuclear_spin: Spin) -> Self {
        let s = spin_operators(Spin::HALF);
        let i = spin_operators(nuclear_spin);
        let e2 = SpinMatrix::identity(2);
        let en = SpinMatrix::identity(nuclear_spin.dim());
        // All six products are real: Sy Iy is (imaginary) x (imaginary).
        let re = |m: SpinMatrix| m.real_part();
        ProductOperators {
            nuclear_spin,
            sz: re(kron(&s.jz, &en)),
            iz: re(kron(&e2, &i.jz)),
            sz_iz: re(kron(&s.jz, &i.jz)),
            sx_ix: re(kron(&s.jx, &i.jx)),
            sy_iy: re(kron(&s.jy, &i.jy)),
            sz_ix: re(kron(&s.jz, &i.jx)),
            sx_iz: re(kron(&s.jx, &i.jz)),
        }
    }

    /// Shared operator set for a nuclear spin; cached for the common 7/2 case.
    pub fn shared(nuclear_spin: Spin) -> Arc<ProductOperators> {
        static V51: std::sync::OnceLock<Arc<ProductOperators>> = std::sync::OnceLock::new();
        if nuclear_spin.twice() == 7 {
            V51.get_or_init(|| Arc::new(ProductOperators::new(nuclear_spin))).clone()
        } else {
            Arc::new(ProductOperators::new(nuclear_spin))
        }
    }

    /// Field-independent hyperfine part.
    pub fn hyperfine(&self, hf: &HyperfineTensor) -> DMatrix<f64> {
        &self.sz_iz * hf.a_zz
            + &self.sx_ix * hf.a_xx()
            + &self.sy_iy * hf.a_yy()
            + &self.sz_ix * hf.a_zx
            + &self.sx_iz * hf.a_xz
    }

    /// Zeeman coupling operator per mT.
    pub fn zeeman(&self, params: &SpinSystemParams) -> DMatrix<f64> {
        &self.sz * params.electron_zeeman() + &self.iz * params.nuclear_zeeman()
    }

    pub fn hamiltonian(&self, params: &SpinSystemParams, b_mt: f64) -> DMatrix<f64> {
        self.zeeman(params) * b_mt + self.hyperfine(&params.hyperfine)
    }
}

/// Real symmetric Hamiltonian, MHz. Skips validation; used in hot loops.
pub fn hamiltonian_real(params: &SpinSystemParams, b_mt: f64) -> DMatrix<f64> {
    ProductOperators::shared(params.nuclear_spin).hamiltonian(params, b_mt)
}

/// The Hamiltonian at a given field as a Hermitian matrix in MHz.
pub fn build_hamiltonian(params: &SpinSystemParams, field: FieldPoint) -> Result<SpinMatrix> {
    params.validate()?;
    FieldPoint::new(field.0)?;
    SpinMatrix::from_real(&hamiltonian_real(params, field.0))
}

/// Zeeman-only part `(μB gz Sz + μN gN Iz) B`.
pub fn zeeman_hamiltonian(params: &SpinSystemParams, field: FieldPoint) -> Result<SpinMatrix> {
    params.validate()?;
    let ops = ProductOperators::shared(params.nuclear_spin);
    SpinMatrix::from_real(&(ops.zeeman(params) * field.0))
}

/// Zero-strain counterpart: the couplings that are linear (a_plus, a_zx) or
/// quadratic (a_xz) in transverse strain vanish; the rest are kept.
pub fn strainless_limit(params: &SpinSystemParams) -> SpinSystemParams {
    let mut out = *params;
    out.hyperfine.a_plus = 0.0;
    out.hyperfine.a_zx = 0.0;
    out.hyperfine.a_xz = 0.0;
    out
}

/// Copy with the strain-linear couplings scaled by `lambda`.
pub fn scale_linear_strain(params: &SpinSystemParams, lambda: f64) -> SpinSystemParams {
    let mut out = *params;
    out.hyperfine.a_plus *= lambda;
    out.hyperfine.a_zx *= lambda;
    out
}
