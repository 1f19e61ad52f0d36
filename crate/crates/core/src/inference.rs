//! Sandwich covariance, design effect and intra-cluster correlation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{add_kron_outer, inverse_spd, multinomial_cov, symmetrize};
use crate::model::{fill_link, Coefficients, ClusterRecord, Stratum, SurveyDataset};

/// `sum w m Δ(pi*) ⊗ x xᵀ` over all clusters, without the `1/n` factor.
pub(crate) fn information_sum(data: &SurveyDataset, beta: &Coefficients) -> DMatrix<f64> {
    let d = data.num_free();
    let mut probs = vec![0.0; d + 1];
    let mut acc = DMatrix::zeros(data.dim(), data.dim());
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let scale = rec.weight() * rec.size() as f64;
        add_kron_outer(&mut acc, scale, d, |r, q| multinomial_cov(&probs, r, q), rec.covariates());
    }
    symmetrize(&acc)
}

/// `H_n(beta) = (1/n) sum w m Δ(pi*) ⊗ x xᵀ`, with `n` the total cluster count.
pub fn information_matrix(data: &SurveyDataset, beta: &Coefficients) -> Result<DMatrix<f64>> {
    beta.check_against(data)?;
    Ok(information_sum(data, beta) / data.n_clusters() as f64)
}

/// `w (y* - n_obs pi*) ⊗ x` for one cluster, `n_obs` being its observed total.
fn kl_cluster_score(rec: &ClusterRecord, beta: &Coefficients, probs: &mut [f64]) -> DVector<f64> {
    fill_link(rec.covariates(), beta, probs);
    let d = probs.len() - 1;
    let k = rec.covariates().len();
    let total = rec.observed() as f64;
    let mut u = DVector::zeros(d * k);
    for r in 0..d {
        let res = rec.weight() * (rec.counts()[r] as f64 - total * probs[r]);
        for (j, x) in rec.covariates().iter().enumerate() {
            u[r * k + j] = res * x;
        }
    }
    u
}

/// Per-cluster `lambda = 0` score contributions, in cluster order.
pub fn cluster_scores(data: &SurveyDataset, beta: &Coefficients) -> Result<Vec<DVector<f64>>> {
    beta.check_against(data)?;
    let mut probs = vec![0.0; data.num_categories()];
    Ok(data
        .clusters()
        .map(|(_, rec)| kl_cluster_score(rec, beta, &mut probs))
        .collect())
}

/// `G_n = (1/n) sum (u_hi - u/n)(u_hi - u/n)ᵀ` built from the `lambda = 0`
/// cluster scores at `beta_hat`, whichever index produced it.
pub fn variability_matrix(data: &SurveyDataset, beta_hat: &Coefficients) -> Result<DMatrix<f64>> {
    let scores = cluster_scores(data, beta_hat)?;
    let n = scores.len() as f64;
    let mean = scores.iter().fold(DVector::zeros(data.dim()), |a, u| a + u) / n;
    let mut acc = DMatrix::zeros(data.dim(), data.dim());
    for u in &scores {
        let c = u - &mean;
        acc += &c * c.transpose();
    }
    Ok(symmetrize(&(acc / n)))
}

/// The pieces of the sandwich covariance of `beta_hat`.
#[derive(Debug, Clone)]
pub struct SandwichComponents {
    pub h_n: DMatrix<f64>,
    pub g_n_hat: DMatrix<f64>,
    /// `H_n⁻¹ G_n H_n⁻¹ / n`.
    pub covariance: DMatrix<f64>,
    /// `H_n⁻¹ G_n`.
    pub design_effect_matrix: DMatrix<f64>,
    pub n_clusters: usize,
}

impl SandwichComponents {
    /// `trace(H_n⁻¹ G_n) / dk`.
    pub fn design_effect(&self) -> f64 {
        self.design_effect_matrix.trace() / self.design_effect_matrix.nrows() as f64
    }

    /// Square roots of the covariance diagonal.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

pub fn sandwich_covariance(data: &SurveyDataset, beta_hat: &Coefficients) -> Result<SandwichComponents> {
    let h_n = information_matrix(data, beta_hat)?;
    let g_n_hat = variability_matrix(data, beta_hat)?;
    let h_inv = inverse_spd(&h_n, "information matrix H_n", data.num_covariates())?;
    let design_effect_matrix = &h_inv * &g_n_hat;
    let n = data.n_clusters();
    let covariance = symmetrize(&(&design_effect_matrix * &h_inv / n as f64));
    Ok(SandwichComponents {
        h_n,
        g_n_hat,
        covariance,
        design_effect_matrix,
        n_clusters: n,
    })
}

/// `nu_hat = trace(H_n⁻¹ G_n) / dk`.
pub fn design_effect(data: &SurveyDataset, beta_hat: &Coefficients) -> Result<f64> {
    Ok(sandwich_covariance(data, beta_hat)?.design_effect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverdispersionMethod {
    Binder,
    Moments,
}

impl OverdispersionMethod {
    pub fn name(self) -> &'static str {
        match self {
            OverdispersionMethod::Binder => "binder",
            OverdispersionMethod::Moments => "moments",
        }
    }
}

/// How the linearized residuals are centred in the Binder estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinderCentering {
    /// Subtract the stratum mean of `r* ⊗ x`.
    #[default]
    StratumMean,
    /// Use `r* ⊗ x` as is, which is the form implied when the total score
    /// vanishes.
    Uncentered,
}

/// Overdispersion estimate for one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct OverdispersionEstimate {
    pub stratum: usize,
    pub method: OverdispersionMethod,
    pub nu_hat: f64,
    pub rho2_hat: f64,
    pub m_h: u64,
    /// Set when `rho2_hat` falls outside `[0, 1]`; the value is not clipped.
    pub out_of_range: bool,
}

impl OverdispersionEstimate {
    fn new(stratum: usize, method: OverdispersionMethod, nu_hat: f64, m_h: u64) -> Self {
        let rho2_hat = (nu_hat - 1.0) / (m_h as f64 - 1.0);
        Self {
            stratum,
            method,
            nu_hat,
            rho2_hat,
            m_h,
            out_of_range: !(0.0..=1.0).contains(&rho2_hat),
        }
    }
}

/// Checks the equal-size precondition for stratum `h` and returns it with `m_h`.
pub fn eligible_stratum(data: &SurveyDataset, h: usize) -> Result<(&Stratum, u64)> {
    let stratum = data
        .strata()
        .get(h)
        .ok_or_else(|| Error::Dimension(format!("no stratum with index {h}")))?;
    let m = stratum.common_size().ok_or_else(|| {
        Error::Precondition(format!(
            "stratum `{}` does not have complete clusters of one common size",
            stratum.label()
        ))
    })?;
    if m < 2 {
        return Err(Error::Precondition(format!(
            "stratum `{}` has cluster size {m}; at least 2 is needed",
            stratum.label()
        )));
    }
    Ok((stratum, m))
}

/// Binder linearization estimate of `nu_{m_h}` and `rho^2_h` for stratum `h`.
///
/// `nu = trace(A⁻¹ B) / dk` with `A = sum m Δ(pi*) ⊗ x xᵀ` and `B` the
/// scatter of `v_i = r*_i ⊗ x_i`, `r = y - m pi`. Weights enter only
/// through `beta_hat`.
pub fn rho2_binder(
    data: &SurveyDataset,
    h: usize,
    beta_hat: &Coefficients,
    centering: BinderCentering,
) -> Result<OverdispersionEstimate> {
    beta_hat.check_against(data)?;
    let (stratum, m) = eligible_stratum(data, h)?;
    let (a, b) = binder_matrices(data, stratum, beta_hat, centering, |_| 1.0);
    let a_inv = inverse_spd(&a, &format!("information of stratum `{}`", stratum.label()), data.num_covariates())?;
    let nu = (a_inv * b).trace() / data.dim() as f64;
    Ok(OverdispersionEstimate::new(h, OverdispersionMethod::Binder, nu, m))
}

fn binder_matrices(
    data: &SurveyDataset,
    stratum: &Stratum,
    beta: &Coefficients,
    centering: BinderCentering,
    weight: impl Fn(&ClusterRecord) -> f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = data.num_free();
    let k = data.num_covariates();
    let mut probs = vec![0.0; d + 1];
    let mut a = DMatrix::zeros(d * k, d * k);
    let mut vs = Vec::with_capacity(stratum.clusters().len());
    for rec in stratum.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let m = rec.size() as f64;
        let w = weight(rec);
        add_kron_outer(&mut a, w * m, d, |r, q| multinomial_cov(&probs, r, q), rec.covariates());
        let mut v = DVector::zeros(d * k);
        for r in 0..d {
            let res = w * (rec.counts()[r] as f64 - m * probs[r]);
            for (j, x) in rec.covariates().iter().enumerate() {
                v[r * k + j] = res * x;
            }
        }
        vs.push(v);
    }
    let mean = match centering {
        BinderCentering::StratumMean => vs.iter().fold(DVector::zeros(d * k), |acc, v| acc + v) / vs.len() as f64,
        BinderCentering::Uncentered => DVector::zeros(d * k),
    };
    let mut b = DMatrix::zeros(d * k, d * k);
    for v in &vs {
        let c = v - &mean;
        b += &c * c.transpose();
    }
    (symmetrize(&a), symmetrize(&b))
}

/// Weighted per-stratum design effect `nu^(h)`: the Binder trace built with
/// `w m Δ ⊗ x xᵀ` and weighted residuals `w r* ⊗ x`.
pub fn stratum_design_effect(
    data: &SurveyDataset,
    h: usize,
    beta_hat: &Coefficients,
    centering: BinderCentering,
) -> Result<f64> {
    beta_hat.check_against(data)?;
    let (stratum, _) = eligible_stratum(data, h)?;
    if stratum.common_weight().is_none() {
        return Err(Error::Precondition(format!(
            "stratum `{}` does not have a common weight",
            stratum.label()
        )));
    }
    let (a, b) = binder_matrices(data, stratum, beta_hat, centering, |c| c.weight());
    let a_inv = inverse_spd(&a, &format!("information of stratum `{}`", stratum.label()), data.num_covariates())?;
    Ok((a_inv * b).trace() / data.dim() as f64)
}

/// Below this a fitted probability counts as zero in the moments estimator.
const MIN_PROBABILITY: f64 = 1e-300;

/// Method-of-moments estimate
/// `nu = (1/(n_h d)) sum_i sum_s (y - m pi)^2 / (m pi)` for stratum `h`.
pub fn rho2_moments(data: &SurveyDataset, h: usize, beta_hat: &Coefficients) -> Result<OverdispersionEstimate> {
    beta_hat.check_against(data)?;
    let (stratum, m) = eligible_stratum(data, h)?;
    let mf = m as f64;
    let mut probs = vec![0.0; data.num_categories()];
    let mut total = 0.0;
    for rec in stratum.clusters() {
        fill_link(rec.covariates(), beta_hat, &mut probs);
        for (s, (&y, &p)) in rec.counts().iter().zip(&probs).enumerate() {
            if p < MIN_PROBABILITY {
                return Err(Error::Singular {
                    context: format!("moments estimator in stratum `{}`", stratum.label()),
                    condition: f64::INFINITY,
                    directions: format!("probability of category {} in cluster `{}` is 0", s + 1, rec.label()),
                });
            }
            let e = mf * p;
            total += (y as f64 - e).powi(2) / e;
        }
    }
    let nu = total / (stratum.clusters().len() * data.num_free()) as f64;
    Ok(OverdispersionEstimate::new(h, OverdispersionMethod::Moments, nu, m))
}

/// Both estimators for one stratum, or the reason the stratum is ineligible.
#[derive(Debug, Clone)]
pub struct StratumOverdispersion {
    pub stratum: usize,
    pub label: String,
    pub outcome: std::result::Result<(OverdispersionEstimate, OverdispersionEstimate), String>,
}

/// Binder and moments estimates for every stratum; strata that break the
/// equal-size precondition or whose information is singular are reported
/// with the reason.
pub fn overdispersion_report(
    data: &SurveyDataset,
    beta_hat: &Coefficients,
    centering: BinderCentering,
) -> Result<Vec<StratumOverdispersion>> {
    beta_hat.check_against(data)?;
    Ok(data
        .strata()
        .iter()
        .enumerate()
        .map(|(h, s)| {
            let outcome = rho2_binder(data, h, beta_hat, centering)
                .and_then(|b| Ok((b, rho2_moments(data, h, beta_hat)?)))
                .map_err(|e| e.to_string());
            StratumOverdispersion {
                stratum: h,
                label: s.label().to_string(),
                outcome,
            }
        })
        .collect())
}
