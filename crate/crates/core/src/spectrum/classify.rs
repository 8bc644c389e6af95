//! Selection-rule order from the numerical scaling of line strengths with
//! the strain-linear couplings.

use nalgebra::DMatrix;

use super::{
    dominant_labels, drive_operator_real, eigh_at, max_offdiag, strength_matrix, track::track_path, LineClass,
    TransitionLine, NUMERICAL_FLOOR,
};
use crate::error::Result;
use crate::hamiltonian::{scale_linear_strain, SpinSystemParams};

#[derive(Clone, Debug)]
pub struct ClassifyOptions {
    /// Scale factors applied to a_plus and a_zx; the first must be 1.
    pub lambdas: Vec<f64>,
    /// Relative strength below which a line is forbidden.
    pub numerical_floor: f64,
    /// Largest tolerated relative deviation from a pure power law.
    pub residual_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            lambdas: vec![1.0, 0.5, 0.25, 0.125],
            numerical_floor: NUMERICAL_FLOOR,
            residual_tol: 0.1,
        }
    }
}

/// Power-law fit `strength ∝ λ^exponent`.
#[derive(Clone, Debug)]
pub struct StrainFit {
    pub exponent: f64,
    /// Max over the ladder of `|s / s_fit - 1|`.
    pub max_rel_residual: f64,
    /// Strength at each λ of the ladder.
    pub strengths: Vec<f64>,
    pub class: LineClass,
}

/// Least-squares slope of `ln s` against `ln λ` plus the worst relative
/// residual.
pub fn strain_exponent(lambdas: &[f64], strengths: &[f64]) -> (f64, f64) {
    let n = lambdas.len() as f64;
    let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = strengths.iter().map(|s| s.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let resid = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| ((y - (my + slope * (x - mx))).exp() - 1.0).abs())
        .fold(0.0, f64::max);
    (slope, resid)
}

fn class_of(fit_strengths: &[f64], lambdas: &[f64], floors: &[f64], opts: &ClassifyOptions) -> StrainFit {
    let strengths = fit_strengths.to_vec();
    if strengths[0] < floors[0] {
        return StrainFit {
            exponent: f64::NAN,
            max_rel_residual: f64::NAN,
            strengths,
            class: LineClass::Forbidden,
        };
    }
    let (ls, ss): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(&strengths)
        .zip(floors)
        .filter(|((_, s), fl)| **s >= **fl && **s > 0.0)
        .map(|((l, s), _)| (*l, *s))
        .unzip();
    if ls.len() < 2 {
        return StrainFit {
            exponent: f64::INFINITY,
            max_rel_residual: f64::NAN,
            strengths,
            class: LineClass::StrainHigher,
        };
    }
    let (p, resid) = strain_exponent(&ls, &ss);
    let class = if ls.len() < lambdas.len() || resid > opts.residual_tol {
        log::debug!("mixed-order strain scaling (exponent {p:.3}, residual {resid:.3}); classed strain_higher");
        LineClass::StrainHigher
    } else if p < 1.0 {
        LineClass::Allowed
    } else if p < 3.0 {
        LineClass::StrainLinear
    } else {
        LineClass::StrainHigher
    };
    StrainFit {
        exponent: p,
        max_rel_residual: resid,
        strengths,
        class,
    }
}

/// Every eigenpair at field `b_mt` with its strain class.
pub fn classify_transitions(params: &SpinSystemParams, b_mt: f64) -> Result<Vec<TransitionLine>> {
    Ok(classify_with_fits(params, b_mt, &ClassifyOptions::default())?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

/// As [`classify_transitions`], keeping the power-law fit of each line.
pub fn classify_with_fits(
    params: &SpinSystemParams,
    b_mt: f64,
    opts: &ClassifyOptions,
) -> Result<Vec<(TransitionLine, StrainFit)>> {
    params.validate()?;
    let drive = drive_operator_real(params);
    let eval = |lambda: f64| eigh_at(&scale_linear_strain(params, lambda), b_mt);
    let (eigen, order) = track_path(&eval, &opts.lambdas, super::MAX_REFINE_DEPTH)?;
    let strengths: Vec<DMatrix<f64>> = eigen.iter().map(|es| strength_matrix(es, &drive)).collect();
    let floors: Vec<f64> = strengths.iter().map(|s| opts.numerical_floor * max_offdiag(s)).collect();
    let labels = dominant_labels(&eigen[0], params.nuclear_spin);
    let n = eigen[0].dim();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for f in (i + 1)..n {
            let ladder: Vec<f64> = (0..opts.lambdas.len())
                .map(|k| strengths[k][(order[k][i], order[k][f])])
                .collect();
            let fit = class_of(&ladder, &opts.lambdas, &floors, opts);
            out.push((
                TransitionLine {
                    initial: labels[i],
                    final_: labels[f],
                    frequency: eigen[0].values[f] - eigen[0].values[i],
                    strength: ladder[0],
                    class: Some(fit.class),
                    lower: i,
                    upper: f,
                },
                fit,
            ));
        }
    }
    Ok(out)
}

/// Classes for all eigenpairs `(i, f)`, indexed `i * n + f` with `i < f`.
pub(crate) fn class_table(params: &SpinSystemParams, b_mt: f64) -> Result<Vec<Option<LineClass>>> {
    let fits = classify_with_fits(params, b_mt, &ClassifyOptions::default())?;
    let n = params.dim();
    let mut table = vec![None; n * n];
    for (line, fit) in fits {
        table[line.lower * n + line.upper] = Some(fit.class);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::strainless_limit;

    #[test]
    fn exponent_of_pure_power_laws() {
        let l = [1.0, 0.5, 0.25, 0.125];
        let s: Vec<f64> = l.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        let (p, r) = strain_exponent(&l, &s);
        assert!((p - 2.0).abs() < 1e-12 && r < 1e-12);
        let (p, _) = strain_exponent(&l, &[5.0; 4]);
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn strainless_lines_are_allowed_or_forbidden() {
        let p = strainless_limit(&SpinSystemParams::default());
        for line in classify_transitions(&p, 50.0).unwrap() {
            let c = line.class.unwrap();
            assert!(matches!(c, LineClass::Allowed | LineClass::Forbidden), "{c}");
            if c == LineClass::Allowed {
                assert!(line.is_double_flip());
            }
        }
    }

    #[test]
    fn high_field_orders() {
        let p = SpinSystemParams::default();
        let b = 200.0 * p.hyperfine.max_abs() / p.electron_zeeman().abs();
        let fits = classify_with_fits(&p, b, &ClassifyOptions::default()).unwrap();
        let mut n_allowed = 0;
        let mut n_linear = 0;
        for (line, fit) in &fits {
            if line.is_double_flip() {
                assert!(fit.exponent.abs() < 0.2, "{} {} p={}", line.initial, line.final_, fit.exponent);
                assert_eq!(fit.class, LineClass::Allowed);
                n_allowed += 1;
            }
            let same = line.initial.pseudospin == line.final_.pseudospin;
            if same && (line.initial.two_m - line.final_.two_m).abs() == 2 {
                assert!((fit.exponent - 2.0).abs() < 0.1, "{} {} p={}", line.initial, line.final_, fit.exponent);
                assert_eq!(fit.class, LineClass::StrainLinear);
                n_linear += 1;
            }
        }
        assert_eq!(n_allowed, 7);
        assert_eq!(n_linear, 14);
    }
}
