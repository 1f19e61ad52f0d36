use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Adds `scale * (A ⊗ x xᵀ)` to `acc`, where `A` is the `d x d` matrix given
/// by `a(r, q)` and indices follow the stacked layout `r * k + j`.
pub(crate) fn add_kron_outer(
    acc: &mut DMatrix<f64>,
    scale: f64,
    d: usize,
    a: impl Fn(usize, usize) -> f64,
    x: &[f64],
) {
    let k = x.len();
    for r in 0..d {
        for q in 0..d {
            let arq = scale * a(r, q);
            if arq == 0.0 {
                continue;
            }
            for j in 0..k {
                let row = r * k + j;
                let axj = arq * x[j];
                for (l, xl) in x.iter().enumerate() {
                    acc[(row, q * k + l)] += axj * xl;
                }
            }
        }
    }
}

/// `Δ(p*)[r, q] = p_r δ_rq - p_r p_q` for the first `d` entries of `p`.
pub(crate) fn multinomial_cov(p: &[f64], r: usize, q: usize) -> f64 {
    let off = -p[r] * p[q];
    if r == q {
        p[r] + off
    } else {
        off
    }
}

/// Inverse of a symmetric positive (semi-)definite matrix, rejecting
/// matrices whose condition number exceeds [`MAX_CONDITION`].
///
/// `num_covariates` is used to label near-null directions as `beta[r,j]`.
pub(crate) fn inverse_spd(m: &DMatrix<f64>, context: &str, num_covariates: usize) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if max.is_nan() || max <= 0.0 || !condition.is_finite() || condition > MAX_CONDITION || !min.is_finite() {
        return Err(Error::Singular {
            context: context.to_string(),
            condition,
            directions: null_directions(&eig, max, num_covariates),
        });
    }
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        inv += (v * v.transpose()) / ev;
    }
    Ok(symmetrize(&inv))
}

fn null_directions(eig: &SymmetricEigen<f64, nalgebra::Dyn>, max: f64, num_covariates: usize) -> String {
    let cutoff = max.max(f64::MIN_POSITIVE) / MAX_CONDITION;
    let mut parts = Vec::new();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let peak = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let names: Vec<String> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() >= 0.25 * peak && peak > 0.0)
            .map(|(idx, _)| coefficient_label(idx, num_covariates))
            .collect();
        parts.push(format!("{{{}}}", names.join(", ")));
    }
    if parts.is_empty() {
        "none identified".into()
    } else {
        parts.join("; ")
    }
}

/// `beta[r,j]` label (1-based) of a stacked coefficient index.
pub fn coefficient_label(index: usize, num_covariates: usize) -> String {
    format!("beta[{},{}]", index / num_covariates + 1, index % num_covariates + 1)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
