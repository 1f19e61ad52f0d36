//! Survey design data model and the multinomial logit link.
//!
//! A dataset is a list of strata, each holding clusters. Every cluster carries
//! a sampling weight, a size `m`, a vector of category counts and one covariate
//! vector shared by all of its units. The last category is the reference
//! category whose coefficient block is fixed at zero.

use crate::error::{Error, Result};

/// One sampled cluster: weight, size, category counts and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    label: String,
    weight: f64,
    size: u64,
    counts: Vec<u64>,
    covariates: Vec<f64>,
}

impl ClusterRecord {
    /// Builds a cluster whose counts add up exactly to `size`.
    pub fn new(
        label: impl Into<String>,
        weight: f64,
        size: u64,
        counts: Vec<u64>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let rec = Self::build(label.into(), weight, size, counts, covariates)?;
        if rec.observed() != size {
            return Err(Error::InvalidData(format!(
                "cluster `{}`: counts sum to {} but size is {}",
                rec.label,
                rec.observed(),
                size
            )));
        }
        Ok(rec)
    }

    /// Builds a cluster with item nonresponse: the counts may add up to less
    /// than the planned size `size`, which is still used as `m` by the model.
    pub fn with_nonresponse(
        label: impl Into<String>,
        weight: f64,
        size: u64,
        counts: Vec<u64>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let rec = Self::build(label.into(), weight, size, counts, covariates)?;
        if rec.observed() > size {
            return Err(Error::InvalidData(format!(
                "cluster `{}`: counts sum to {} which exceeds size {}",
                rec.label,
                rec.observed(),
                size
            )));
        }
        if rec.observed() == 0 {
            return Err(Error::InvalidData(format!(
                "cluster `{}` has no observed units",
                rec.label
            )));
        }
        Ok(rec)
    }

    fn build(
        label: String,
        weight: f64,
        size: u64,
        counts: Vec<u64>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidData(format!(
                "cluster `{label}`: weight must be positive and finite, got {weight}"
            )));
        }
        if size == 0 {
            return Err(Error::InvalidData(format!("cluster `{label}`: size must be >= 1")));
        }
        if counts.len() < 2 {
            return Err(Error::InvalidData(format!(
                "cluster `{label}`: need at least 2 categories, got {}",
                counts.len()
            )));
        }
        if covariates.is_empty() {
            return Err(Error::InvalidData(format!("cluster `{label}`: no covariates")));
        }
        if let Some(x) = covariates.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!(
                "cluster `{label}`: non-finite covariate {x}"
            )));
        }
        Ok(Self {
            label,
            weight,
            size,
            counts,
            covariates,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Cluster size `m` used by the model.
    pub fn size(&self) -> u64 {
        self.size
    }

    /// Number of units with an observed response (sum of counts).
    pub fn observed(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// True when every planned unit responded.
    pub fn is_complete(&self) -> bool {
        self.observed() == self.size
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }

    pub(crate) fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }
}

/// A stratum: a label plus its clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    label: String,
    clusters: Vec<ClusterRecord>,
}

impl Stratum {
    pub fn new(label: impl Into<String>, clusters: Vec<ClusterRecord>) -> Self {
        Self {
            label: label.into(),
            clusters,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn clusters(&self) -> &[ClusterRecord] {
        &self.clusters
    }

    /// The common cluster size, if every cluster is complete and has the
    /// same size.
    pub fn common_size(&self) -> Option<u64> {
        let first = self.clusters.first()?.size();
        self.clusters
            .iter()
            .all(|c| c.size() == first && c.is_complete())
            .then_some(first)
    }

    /// The common weight, if all clusters share one.
    pub fn common_weight(&self) -> Option<f64> {
        let first = self.clusters.first()?.weight();
        self.clusters
            .iter()
            .all(|c| c.weight() == first)
            .then_some(first)
    }
}

/// Validated survey sample: strata of clusters sharing the number of
/// categories and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    strata: Vec<Stratum>,
    num_categories: usize,
    num_covariates: usize,
    tau: f64,
    n_clusters: usize,
}

impl SurveyDataset {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidData("dataset has no strata".into()));
        }
        let first = strata[0]
            .clusters
            .first()
            .ok_or_else(|| Error::InvalidData(format!("stratum `{}` has no clusters", strata[0].label)))?;
        let num_categories = first.num_categories();
        let num_covariates = first.covariates().len();
        let mut tau = 0.0;
        let mut n_clusters = 0;
        for s in &strata {
            if s.clusters.is_empty() {
                return Err(Error::InvalidData(format!("stratum `{}` has no clusters", s.label)));
            }
            for c in &s.clusters {
                if c.num_categories() != num_categories {
                    return Err(Error::Dimension(format!(
                        "cluster `{}` in stratum `{}` has {} categories, expected {}",
                        c.label,
                        s.label,
                        c.num_categories(),
                        num_categories
                    )));
                }
                if c.covariates().len() != num_covariates {
                    return Err(Error::Dimension(format!(
                        "cluster `{}` in stratum `{}` has {} covariates, expected {}",
                        c.label,
                        s.label,
                        c.covariates().len(),
                        num_covariates
                    )));
                }
                tau += c.weight() * c.size() as f64;
                n_clusters += 1;
            }
        }
        Ok(Self {
            strata,
            num_categories,
            num_covariates,
            tau,
            n_clusters,
        })
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    /// Clusters in stratum order, tagged with their dense stratum index.
    pub fn clusters(&self) -> impl Iterator<Item = (usize, &ClusterRecord)> {
        self.strata
            .iter()
            .enumerate()
            .flat_map(|(h, s)| s.clusters.iter().map(move |c| (h, c)))
    }

    /// Number of response categories, `d + 1`.
    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Number of non-reference categories, `d`.
    pub fn num_free(&self) -> usize {
        self.num_categories - 1
    }

    /// Number of covariates, `k`.
    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    /// Length of the stacked coefficient vector, `d * k`.
    pub fn dim(&self) -> usize {
        self.num_free() * self.num_covariates
    }

    /// `tau = sum of w_hi * m_hi` over all clusters.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Total number of clusters across all strata.
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Returns a copy where every weight in stratum `h` is multiplied by `factor`.
    pub fn with_scaled_stratum_weights(&self, h: usize, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Domain(format!("weight factor must be positive, got {factor}")));
        }
        let mut strata = self.strata.clone();
        let s = strata
            .get_mut(h)
            .ok_or_else(|| Error::Dimension(format!("no stratum with index {h}")))?;
        for c in &mut s.clusters {
            let w = c.weight() * factor;
            c.set_weight(w);
        }
        Self::new(strata)
    }

    /// Index of the first category with zero total count, if any.
    pub fn unobserved_category(&self) -> Option<usize> {
        (0..self.num_categories).find(|&s| self.clusters().all(|(_, c)| c.counts()[s] == 0))
    }

    /// True when some cell count is zero.
    pub fn has_zero_count(&self) -> bool {
        self.clusters().any(|(_, c)| c.counts().contains(&0))
    }
}

/// Stacked coefficient vector `(beta_1, ..., beta_d)`, one block of length
/// `k` per non-reference category.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    values: Vec<f64>,
    num_free: usize,
    num_covariates: usize,
}

impl Coefficients {
    pub fn zeros(num_free: usize, num_covariates: usize) -> Self {
        Self {
            values: vec![0.0; num_free * num_covariates],
            num_free,
            num_covariates,
        }
    }

    pub fn from_vec(num_free: usize, num_covariates: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_free * num_covariates {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {}, expected {}x{}",
                values.len(),
                num_free,
                num_covariates
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coefficient {v}")));
        }
        Ok(Self {
            values,
            num_free,
            num_covariates,
        })
    }

    pub fn zeros_for(data: &SurveyDataset) -> Self {
        Self::zeros(data.num_free(), data.num_covariates())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Coefficient block for non-reference category `r` (0-based).
    pub fn block(&self, r: usize) -> &[f64] {
        &self.values[r * self.num_covariates..(r + 1) * self.num_covariates]
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_against(&self, data: &SurveyDataset) -> Result<()> {
        if self.num_free != data.num_free() || self.num_covariates != data.num_covariates() {
            return Err(Error::Dimension(format!(
                "coefficients are {}x{} but dataset needs {}x{}",
                self.num_free,
                self.num_covariates,
                data.num_free(),
                data.num_covariates()
            )));
        }
        Ok(())
    }

    /// `self + step * direction`; the result may be non-finite.
    pub(crate) fn stepped(&self, direction: &[f64], step: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(direction)
                .map(|(b, p)| b + step * p)
                .collect(),
            num_free: self.num_free,
            num_covariates: self.num_covariates,
        }
    }
}

/// Category probabilities for one covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Multinomial logit probabilities for covariates `x` under `beta`.
pub fn link_probabilities(x: &[f64], beta: &Coefficients) -> Result<ProbabilityVector> {
    if x.len() != beta.num_covariates() {
        return Err(Error::Dimension(format!(
            "covariate vector has length {}, coefficients expect {}",
            x.len(),
            beta.num_covariates()
        )));
    }
    let mut out = vec![0.0; beta.num_free() + 1];
    fill_link(x, beta, &mut out);
    Ok(ProbabilityVector(out))
}

/// Writes the link probabilities into `out` (length `d + 1`) without
/// allocating. The reference category's linear predictor is zero.
pub(crate) fn fill_link(x: &[f64], beta: &Coefficients, out: &mut [f64]) {
    let d = beta.num_free();
    debug_assert_eq!(out.len(), d + 1);
    out[d] = 0.0;
    for (r, slot) in out.iter_mut().take(d).enumerate() {
        *slot = beta.block(r).iter().zip(x).map(|(b, xi)| b * xi).sum();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Stacked weighted model probabilities `(1/tau) * (w_hi m_hi pi_hi(beta))`.
pub fn theoretical_vector(data: &SurveyDataset, beta: &Coefficients) -> Result<Vec<f64>> {
    beta.check_against(data)?;
    let c = data.num_categories();
    let mut out = Vec::with_capacity(c * data.n_clusters());
    let mut probs = vec![0.0; c];
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let scale = rec.weight() * rec.size() as f64 / data.tau();
        out.extend(probs.iter().map(|p| scale * p));
    }
    Ok(out)
}

/// Stacked weighted empirical proportions `(1/tau) * (w_hi y_hi)`.
///
/// Sums to one when every cluster is complete; clusters with nonresponse
/// leave the shortfall unassigned.
pub fn empirical_vector(data: &SurveyDataset) -> Vec<f64> {
    data.clusters()
        .flat_map(|(_, rec)| {
            let scale = rec.weight() / data.tau();
            rec.counts().iter().map(move |&y| scale * y as f64)
        })
        .collect()
}
