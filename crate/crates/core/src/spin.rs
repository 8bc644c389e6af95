//! Angular-momentum operators, Kronecker products and the dense Hermitian
//! eigendecomposition used by every other module.
//!
//! Basis ordering is global: `m` runs from `+j` down to `-j`, and in product
//! spaces the first factor is the major index.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Dense complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinMatrix(DMatrix<Complex64>);

impl SpinMatrix {
    pub fn zeros(dim: usize) -> Self {
        SpinMatrix(DMatrix::from_element(dim, dim, C0))
    }

    pub fn identity(dim: usize) -> Self {
        SpinMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.0[(i, i)] = Complex64::new(*d, 0.0);
        }
        m
    }

    /// Wraps a matrix; fails if it is not square or empty.
    pub fn from_matrix(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(SpinMatrix(m))
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_matrix(m.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn adjoint(&self) -> Self {
        SpinMatrix(self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        SpinMatrix(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        SpinMatrix(self.0.map(|z| z * s))
    }

    /// Largest `|H_ij - conj(H_ji)|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Largest absolute imaginary part of any entry.
    pub fn max_imag(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.0.map(|z| z.re)
    }

    pub fn commutator(&self, other: &SpinMatrix) -> SpinMatrix {
        self * other - other * self
    }

    /// `<u| self |v>`.
    pub fn sandwich(&self, u: &DVector<Complex64>, v: &DVector<Complex64>) -> Complex64 {
        u.dotc(&(&self.0 * v))
    }

    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.0 * v
    }
}

impl std::ops::Add for &SpinMatrix {
    type Output = SpinMatrix;
    fn add(self, rhs: &SpinMatrix) -> SpinMatrix {
        SpinMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &SpinMatrix {
    type Output = SpinMatrix;
    fn sub(self, rhs: &SpinMatrix) -> SpinMatrix {
        SpinMatrix(&self.0 - &rhs.0)
    }
}

impl std::ops::Sub for SpinMatrix {
    type Output = SpinMatrix;
    fn sub(self, rhs: SpinMatrix) -> SpinMatrix {
        SpinMatrix(self.0 - rhs.0)
    }
}

impl std::ops::Add for SpinMatrix {
    type Output = SpinMatrix;
    fn add(self, rhs: SpinMatrix) -> SpinMatrix {
        SpinMatrix(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign<&SpinMatrix> for SpinMatrix {
    fn add_assign(&mut self, rhs: &SpinMatrix) {
        self.0 += &rhs.0;
    }
}

impl std::ops::Mul for &SpinMatrix {
    type Output = SpinMatrix;
    fn mul(self, rhs: &SpinMatrix) -> SpinMatrix {
        SpinMatrix(&self.0 * &rhs.0)
    }
}

/// A spin quantum number stored as `2j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin(u32);

impl Spin {
    pub const HALF: Spin = Spin(1);

    /// Accepts any non-negative half-integer.
    pub fn new(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        if !j.is_finite() || j < 0.0 || (twice - twice.round()).abs() > 1e-9 {
            return Err(Error::InvalidSpin(j));
        }
        Ok(Spin(twice.round() as u32))
    }

    pub fn from_twice(two_j: u32) -> Self {
        Spin(two_j)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }

    /// Projection quantum number of basis index `k` (descending order).
    pub fn m_of(self, k: usize) -> f64 {
        self.value() - k as f64
    }

    /// Basis index of projection `m`, if it belongs to this multiplet.
    pub fn index_of(self, m: f64) -> Option<usize> {
        let k = self.value() - m;
        let kr = k.round();
        if (k - kr).abs() > 1e-9 || kr < 0.0 || kr as usize >= self.dim() {
            None
        } else {
            Some(kr as usize)
        }
    }
}

/// `(Jx, Jy, Jz)` for spin `j`, in units of ħ.
#[derive(Clone, Debug)]
pub struct AngularMomentum {
    pub jx: SpinMatrix,
    pub jy: SpinMatrix,
    pub jz: SpinMatrix,
}

pub fn angular_momentum_operators(j: f64) -> Result<AngularMomentum> {
    Ok(spin_operators(Spin::new(j)?))
}

pub fn spin_operators(spin: Spin) -> AngularMomentum {
    let j = spin.value();
    let n = spin.dim();
    let mut jp = DMatrix::<f64>::zeros(n, n);
    // <m+1|J+|m> sits one row above the diagonal in descending order.
    for k in 1..n {
        let m = spin.m_of(k);
        jp[(k - 1, k)] = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
    }
    let jm = jp.transpose();
    let jx = (&jp + &jm).map(|x| Complex64::new(0.5 * x, 0.0));
    let jy = (&jp - &jm).map(|x| Complex64::new(0.0, -0.5 * x));
    let jz = DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(spin.m_of(r), 0.0)
        } else {
            C0
        }
    });
    AngularMomentum {
        jx: SpinMatrix(jx),
        jy: SpinMatrix(jy),
        jz: SpinMatrix(jz),
    }
}

/// Standard Kronecker product, `a` major.
pub fn kron(a: &SpinMatrix, b: &SpinMatrix) -> SpinMatrix {
    SpinMatrix(a.0.kronecker(&b.0))
}

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> DVector<Complex64> {
        self.vectors.column(k).into_owned()
    }

    /// `|<basis b|k>|^2`.
    pub fn weight(&self, k: usize, basis: usize) -> f64 {
        self.vectors[(basis, k)].norm_sqr()
    }

    /// `V^† A V`, the operator in the eigenbasis.
    pub fn transform(&self, op: &SpinMatrix) -> DMatrix<Complex64> {
        self.vectors.adjoint() * &op.0 * &self.vectors
    }

    /// Groups of eigenvalue indices closer than `tol` to their neighbour.
    pub fn clusters(&self, tol: f64) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.values.len() {
            if k == self.values.len() || self.values[k] - self.values[k - 1] > tol {
                out.push(start..k);
                start = k;
            }
        }
        out
    }
}

/// Hermitian eigendecomposition.
///
/// Real symmetric input takes a real solver path. Each eigenvector is rotated
/// so that its largest-magnitude component is real and positive.
pub fn eigh(h: &SpinMatrix) -> Result<Eigensystem> {
    let scale = h.norm();
    let asym = h.max_asymmetry();
    if asym > 1e-9 * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(Error::NotHermitian { max_asymmetry: asym });
    }
    let n = h.dim();
    let (values, vectors) = if h.max_imag() == 0.0 {
        let re = h.real_part();
        let re = (&re + re.transpose()) * 0.5;
        let se = SymmetricEigen::new(re);
        (
            se.eigenvalues.iter().copied().collect::<Vec<_>>(),
            se.eigenvectors.map(|x| Complex64::new(x, 0.0)),
        )
    } else {
        let herm = (&h.0 + h.0.adjoint()) * Complex64::new(0.5, 0.0);
        let se = SymmetricEigen::new(herm);
        (
            se.eigenvalues.iter().copied().collect::<Vec<_>>(),
            se.eigenvectors,
        )
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut sorted = DMatrix::from_element(n, n, C0);
    let mut vals = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vals.push(values[src]);
        let mut col = vectors.column(src).into_owned();
        fix_phase(&mut col);
        sorted.set_column(dst, &col);
    }
    Ok(Eigensystem {
        values: vals,
        vectors: sorted,
    })
}

/// Rotates `v` so its largest-magnitude component is real positive.
pub fn fix_phase(v: &mut DVector<Complex64>) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // Small slack so near-ties resolve to the lowest index.
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best_mag = z.norm();
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / v[best].norm();
        v.apply(|z| *z *= phase);
    }
    let norm = v.norm();
    if norm > 0.0 {
        *v /= Complex64::new(norm, 0.0);
    }
}

/// `exp(-i 2π H t)` for Hermitian `H` given in frequency units (`t` in the
/// reciprocal unit).
pub fn propagator(h: &SpinMatrix, t: f64) -> Result<DMatrix<Complex64>> {
    let es = eigh(h)?;
    Ok(propagator_from(&es, t))
}

pub fn propagator_from(es: &Eigensystem, t: f64) -> DMatrix<Complex64> {
    let n = es.dim();
    let mut scaled = es.vectors.clone();
    for k in 0..n {
        let phase = Complex64::from_polar(1.0, -std::f64::consts::TAU * es.values[k] * t);
        scaled.column_mut(k).apply(|z| *z *= phase);
    }
    scaled * es.vectors.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &SpinMatrix, b: &SpinMatrix, tol: f64) -> bool {
        (a - b).0.iter().all(|z| z.norm() <= tol)
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let ops = angular_momentum_operators(0.5).unwrap();
        assert_eq!(ops.jz, SpinMatrix::from_diagonal(&[0.5, -0.5]));
        assert_eq!(ops.jx.get(0, 1), Complex64::new(0.5, 0.0));
        assert_eq!(ops.jx.get(1, 0), Complex64::new(0.5, 0.0));
        assert_eq!(ops.jy.get(0, 1), Complex64::new(0.0, -0.5));
    }

    #[test]
    fn seven_halves_ladder() {
        let ops = angular_momentum_operators(3.5).unwrap();
        assert_eq!(ops.jz.dim(), 8);
        let diag: Vec<f64> = (0..8).map(|k| ops.jz.get(k, k).re).collect();
        assert_eq!(diag, vec![3.5, 2.5, 1.5, 0.5, -0.5, -1.5, -2.5, -3.5]);
        // J+ = Jx + i Jy
        let jp = &ops.jx + &ops.jy.scale_complex(Complex64::i());
        assert!((jp.get(0, 1).re - 7f64.sqrt()).abs() < 1e-14);
        assert!(jp.get(1, 0).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_spin() {
        assert!(matches!(angular_momentum_operators(0.3), Err(Error::InvalidSpin(_))));
        assert!(angular_momentum_operators(-0.5).is_err());
        assert!(angular_momentum_operators(f64::NAN).is_err());
        assert_eq!(angular_momentum_operators(0.0).unwrap().jz.dim(), 1);
    }

    #[test]
    fn su2_algebra_and_casimir() {
        for two_j in 1..=9 {
            let j = two_j as f64 / 2.0;
            let o = angular_momentum_operators(j).unwrap();
            let i = Complex64::i();
            assert!(close(&o.jx.commutator(&o.jy), &o.jz.scale_complex(i), 1e-12));
            assert!(close(&o.jy.commutator(&o.jz), &o.jx.scale_complex(i), 1e-12));
            assert!(close(&o.jz.commutator(&o.jx), &o.jy.scale_complex(i), 1e-12));
            let cas = &(&(&o.jx * &o.jx) + &(&o.jy * &o.jy)) + &(&o.jz * &o.jz);
            let expect = SpinMatrix::identity(o.jz.dim()).scale(j * (j + 1.0));
            assert!(close(&cas, &expect, 1e-12), "j = {j}");
            for op in [&o.jx, &o.jy, &o.jz] {
                assert_eq!(op.max_asymmetry(), 0.0);
            }
        }
    }

    #[test]
    fn kron_identities() {
        let id = kron(&SpinMatrix::identity(2), &SpinMatrix::identity(8));
        assert_eq!(id, SpinMatrix::identity(16));
        let sz = kron(&SpinMatrix::from_diagonal(&[0.5, -0.5]), &SpinMatrix::identity(8));
        for k in 0..16 {
            let want = if k < 8 { 0.5 } else { -0.5 };
            assert_eq!(sz.get(k, k).re, want);
        }
    }

    #[test]
    fn eigh_small_cases() {
        let es = eigh(&SpinMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(es.values, vec![1.0, 2.0, 3.0]);
        let px = SpinMatrix::from_real(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let es = eigh(&px).unwrap();
        assert!((es.values[0] + 1.0).abs() < 1e-14 && (es.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let m = SpinMatrix::from_real(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0])).unwrap();
        match eigh(&m) {
            Err(Error::NotHermitian { max_asymmetry }) => assert!((max_asymmetry - 0.5).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phase_convention() {
        let o = angular_momentum_operators(1.5).unwrap();
        let h = &o.jx + &o.jy.scale(0.3);
        let es = eigh(&h).unwrap();
        for k in 0..es.dim() {
            let v = es.vector(k);
            let (idx, _) = v
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 + 1e-12 { (i, z.norm()) } else { acc });
            assert!(v[idx].im.abs() < 1e-14 && v[idx].re > 0.0);
        }
    }

    fn random_hermitian(n: usize, entries: &[(f64, f64)]) -> SpinMatrix {
        let mut m = DMatrix::from_element(n, n, C0);
        let mut it = entries.iter().cycle();
        for i in 0..n {
            for j in i..n {
                let &(re, im) = it.next().unwrap();
                if i == j {
                    m[(i, i)] = Complex64::new(re, 0.0);
                } else {
                    m[(i, j)] = Complex64::new(re, im);
                    m[(j, i)] = Complex64::new(re, -im);
                }
            }
        }
        SpinMatrix(m)
    }

    proptest! {
        #[test]
        fn eigh_reconstructs(entries in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 136)) {
            let h = random_hermitian(16, &entries);
            let es = eigh(&h).unwrap();
            let lam = DMatrix::from_diagonal(&DVector::from_iterator(16, es.values.iter().map(|&x| Complex64::new(x, 0.0))));
            let rec = &es.vectors * lam * es.vectors.adjoint();
            let resid = (rec - h.as_matrix()).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(resid <= 1e-9 * h.norm());
            let gram = es.vectors.adjoint() * &es.vectors;
            for i in 0..16 {
                for j in 0..16 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((gram[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-9);
                }
            }
            prop_assert!(es.values.windows(2).all(|w| w[0] <= w[1]));
            // Deterministic on identical input.
            let again = eigh(&h).unwrap();
            prop_assert_eq!(&again.values, &es.values);
            prop_assert_eq!(&again.vectors, &es.vectors);
        }

        #[test]
        fn kron_trace_multiplies(a in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3),
                                 b in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 10)) {
            let ma = random_hermitian(2, &a);
            let mb = random_hermitian(4, &b);
            let t = kron(&ma, &mb).trace();
            let want = ma.trace() * mb.trace();
            prop_assert!((t - want).norm() < 1e-10);
        }
    }

    #[test]
    fn propagator_is_unitary() {
        let o = angular_momentum_operators(3.5).unwrap();
        let h = &o.jx.scale(3.0) + &o.jz;
        let u = propagator(&h, 0.37).unwrap();
        let g = u.adjoint() * &u;
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }
}
