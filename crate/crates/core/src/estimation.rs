//! Score equations and the pseudo minimum phi-divergence estimator.
//!
//! The score is `u(beta) = -(tau / phi''(1)) * grad d_phi(p_hat, pi(beta))`.
//! Two routes compute it: [`score_general_with`] works for any [`PhiFunction`]
//! through the per-cell factor `f(x) = x phi'(x) - phi(x)`, while
//! [`score_cressie_read`] uses the closed power form of the family.

use nalgebra::{DMatrix, DVector};

use crate::divergence::{divergence_with, CressieRead, PhiFunction};
use crate::error::{Error, Result};
use crate::inference::information_sum;
use crate::linalg::{add_kron_outer, inverse_spd, symmetrize, MAX_CONDITION};
use crate::model::{fill_link, Coefficients, SurveyDataset};

/// Stacked score vector of length `d * k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn add_outer(acc: &mut [f64], term: &[f64], x: &[f64]) {
    let k = x.len();
    for (r, t) in term.iter().enumerate() {
        for (j, xj) in x.iter().enumerate() {
            acc[r * k + j] += t * xj;
        }
    }
}

/// Score through the general route for a Cressie-Read index.
pub fn score_general(data: &SurveyDataset, beta: &Coefficients, lambda: f64) -> Result<ScoreVector> {
    let family = CressieRead::new(lambda)?;
    if family.is_reverse_kl() && data.has_zero_count() {
        return Err(Error::Domain(
            "the lambda = -1 score takes the log of every count; a zero count is present".into(),
        ));
    }
    score_general_with(data, beta, &family)
}

/// Score through the general phi-function route.
///
/// Per cluster the term is `(w m / phi''(1)) * [Δ(pi) f]_{1..d} ⊗ x`, where
/// `f_s = f(y_s / (m pi_s))`. Projecting the full `(d+1)`-vector keeps the
/// reference category's factor, so the identity with the divergence
/// gradient is exact.
pub fn score_general_with<P: PhiFunction>(data: &SurveyDataset, beta: &Coefficients, phi: &P) -> Result<ScoreVector> {
    beta.check_against(data)?;
    let d = data.num_free();
    let mut probs = vec![0.0; d + 1];
    let mut weighted = vec![0.0; d + 1];
    let mut term = vec![0.0; d];
    let mut acc = vec![0.0; data.dim()];
    let curvature = phi.curvature_at_one();
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let m = rec.size() as f64;
        for ((a, &p), &y) in weighted.iter_mut().zip(&probs).zip(rec.counts()) {
            let y = y as f64;
            *a = if p == 0.0 {
                if y == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                p * phi.score_factor(y / (m * p))
            };
        }
        let total: f64 = weighted.iter().sum();
        let scale = rec.weight() * m / curvature;
        for r in 0..d {
            term[r] = scale * (weighted[r] - probs[r] * total);
        }
        add_outer(&mut acc, &term, rec.covariates());
    }
    Ok(ScoreVector(acc))
}

/// Score through the Cressie-Read closed form.
///
/// For `lambda > -1` each cluster contributes
/// `w / ((lambda+1) m^lambda) * (t* - (1ᵀ t) pi*) ⊗ x` with
/// `t_s = y_s^(lambda+1) / pi_s^lambda`. At `lambda = -1` the limit
/// `w m [Δ(pi) ln(y / (m pi))]_{1..d} ⊗ x` is used, which needs every
/// count to be positive.
pub fn score_cressie_read(data: &SurveyDataset, beta: &Coefficients, lambda: f64) -> Result<ScoreVector> {
    let family = CressieRead::new(lambda)?;
    beta.check_against(data)?;
    if family.is_reverse_kl() && data.has_zero_count() {
        return Err(Error::Domain(
            "the lambda = -1 score takes the log of every count; a zero count is present".into(),
        ));
    }
    let d = data.num_free();
    let mut probs = vec![0.0; d + 1];
    let mut t = vec![0.0; d + 1];
    let mut term = vec![0.0; d];
    let mut acc = vec![0.0; data.dim()];
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let m = rec.size() as f64;
        let scale = if family.is_reverse_kl() {
            for ((ts, &p), &y) in t.iter_mut().zip(&probs).zip(rec.counts()) {
                *ts = p * (y as f64 / (m * p)).ln();
            }
            rec.weight() * m
        } else if lambda.abs() < crate::divergence::LAMBDA_BRANCH {
            for (ts, &y) in t.iter_mut().zip(rec.counts()) {
                *ts = y as f64;
            }
            rec.weight()
        } else {
            for ((ts, &p), &y) in t.iter_mut().zip(&probs).zip(rec.counts()) {
                *ts = if y == 0 {
                    0.0
                } else {
                    (y as f64).powf(lambda + 1.0) * p.powf(-lambda)
                };
            }
            rec.weight() / ((lambda + 1.0) * m.powf(lambda))
        };
        let total: f64 = t.iter().sum();
        for r in 0..d {
            term[r] = scale * (t[r] - probs[r] * total);
        }
        add_outer(&mut acc, &term, rec.covariates());
    }
    Ok(ScoreVector(acc))
}

/// `tau * Hessian` of the divergence (for `phi''(1) = 1`), exact in beta.
pub(crate) fn exact_hessian_sum<P: PhiFunction>(data: &SurveyDataset, beta: &Coefficients, phi: &P) -> DMatrix<f64> {
    let d = data.num_free();
    let mut probs = vec![0.0; d + 1];
    let mut f = vec![0.0; d + 1];
    let mut e = vec![0.0; d + 1];
    let mut acc = DMatrix::zeros(data.dim(), data.dim());
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let m = rec.size() as f64;
        for s in 0..=d {
            let p = probs[s];
            let u = if p == 0.0 { 0.0 } else { rec.counts()[s] as f64 / (m * p) };
            f[s] = phi.score_factor(u);
            e[s] = if u == 0.0 { f[s] } else { f[s] - u * u * phi.second_derivative(u) };
        }
        let s_f: f64 = probs.iter().zip(&f).map(|(p, v)| p * v).sum();
        let s_e: f64 = probs.iter().zip(&e).map(|(p, v)| p * v).sum();
        let block = |r: usize, q: usize| {
            let diag = if r == q { -(e[r] - s_f) * probs[r] } else { 0.0 };
            diag + probs[r] * probs[q] * (e[r] + e[q] - s_f - s_e)
        };
        add_kron_outer(&mut acc, rec.weight() * m, d, block, rec.covariates());
    }
    symmetrize(&acc)
}

/// Matrix used to turn the score into a search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// `n H_n(beta)`, the positive semi-definite information matrix. Its
    /// steps converge only linearly away from `lambda = 0`.
    Information,
    /// Exact Hessian of the divergence when positive definite, otherwise
    /// the information matrix.
    #[default]
    ExactWhenDefinite,
}

/// Solver settings for [`fit`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Convergence threshold on `max |u_phi(beta)|`.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Convergence also needs the last relative divergence decrease to be
    /// at most this.
    pub rel_decrease_tol: f64,
    pub metric: Metric,
    /// Starting point; `None` means zeros for `lambda = 0` and the
    /// `lambda = 0` solution otherwise.
    pub initial: Option<Coefficients>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-12,
            rel_decrease_tol: 1e-12,
            metric: Metric::default(),
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Newton,
    Exact,
    /// Steepest descent, used when the metric is singular or ill-conditioned.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

/// One accepted solver step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub divergence: f64,
    pub step_norm: f64,
    pub score_inf_norm: f64,
    pub kind: StepKind,
}

/// Outcome of a single fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: Coefficients,
    pub lambda: f64,
    pub divergence_value: f64,
    pub initial_divergence: f64,
    pub score_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub trace: Vec<IterationRecord>,
}

fn check_fittable(data: &SurveyDataset, family: &CressieRead, labels: Option<&[String]>) -> Result<()> {
    if let Some(s) = data.unobserved_category() {
        let label = labels
            .and_then(|l| l.get(s).cloned())
            .unwrap_or_else(|| format!("y{}", s + 1));
        return Err(Error::Separation {
            category: s + 1,
            label,
        });
    }
    if family.is_reverse_kl() && data.has_zero_count() {
        return Err(Error::UnsupportedLambda {
            lambda: family.lambda(),
            reason: "lambda = -1 needs every count to be positive".into(),
        });
    }
    Ok(())
}

/// Pseudo minimum Cressie-Read divergence estimate for one `lambda`.
pub fn fit(data: &SurveyDataset, lambda: f64, options: &SolverOptions) -> Result<FitResult> {
    fit_labelled(data, lambda, options, None)
}

/// As [`fit`], naming categories with `labels` in separation errors.
pub fn fit_labelled(
    data: &SurveyDataset,
    lambda: f64,
    options: &SolverOptions,
    labels: Option<&[String]>,
) -> Result<FitResult> {
    let family = CressieRead::new(lambda)?;
    check_fittable(data, &family, labels)?;
    let start = match &options.initial {
        Some(b) => {
            b.check_against(data)?;
            b.clone()
        }
        None if lambda.abs() < crate::divergence::LAMBDA_BRANCH => Coefficients::zeros_for(data),
        None => {
            let base = fit_labelled(data, 0.0, options, labels)?;
            base.beta_hat
        }
    };
    Ok(minimize(data, &family, start, options))
}

/// Fits every `lambda` in `lambdas`, warm-starting each non-zero index from
/// the `lambda = 0` solution, which is computed once.
pub fn fit_path(data: &SurveyDataset, lambdas: &[f64], options: &SolverOptions) -> Result<Vec<FitResult>> {
    fit_path_labelled(data, lambdas, options, None)
}

pub fn fit_path_labelled(
    data: &SurveyDataset,
    lambdas: &[f64],
    options: &SolverOptions,
    labels: Option<&[String]>,
) -> Result<Vec<FitResult>> {
    let kl = CressieRead::new(0.0)?;
    check_fittable(data, &kl, labels)?;
    let base_start = options
        .initial
        .clone()
        .unwrap_or_else(|| Coefficients::zeros_for(data));
    base_start.check_against(data)?;
    let base = minimize(data, &kl, base_start, options);
    lambdas
        .iter()
        .map(|&lambda| {
            let family = CressieRead::new(lambda)?;
            check_fittable(data, &family, labels)?;
            if lambda.abs() < crate::divergence::LAMBDA_BRANCH {
                let mut r = base.clone();
                r.lambda = lambda;
                Ok(r)
            } else {
                Ok(minimize(data, &family, base.beta_hat.clone(), options))
            }
        })
        .collect()
}

fn direction(
    data: &SurveyDataset,
    beta: &Coefficients,
    family: &CressieRead,
    score: &[f64],
    metric: Metric,
) -> (Vec<f64>, StepKind) {
    let u = DVector::from_column_slice(score);
    if metric == Metric::ExactWhenDefinite {
        let hess = exact_hessian_sum(data, beta, family);
        if let Some(chol) = hess.clone().cholesky() {
            let eig = hess.symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
            if lo > 0.0 && hi / lo < MAX_CONDITION {
                return (chol.solve(&u).as_slice().to_vec(), StepKind::Exact);
            }
        }
    }
    let info = information_sum(data, beta);
    match inverse_spd(&info, "information matrix", data.num_covariates()) {
        Ok(inv) => ((inv * &u).as_slice().to_vec(), StepKind::Newton),
        Err(_) => {
            let norm = u.norm();
            let p = if norm > 0.0 { u / norm } else { u };
            (p.as_slice().to_vec(), StepKind::Gradient)
        }
    }
}

fn minimize(data: &SurveyDataset, family: &CressieRead, start: Coefficients, options: &SolverOptions) -> FitResult {
    let eval = |b: &Coefficients| -> (f64, ScoreVector) {
        let dv = divergence_with(data, b, family).unwrap_or(f64::NAN);
        let u = score_general_with(data, b, family).unwrap_or_else(|_| ScoreVector(vec![f64::NAN; data.dim()]));
        (dv, u)
    };
    let tau = data.tau();
    let mut beta = start;
    let (mut dval, mut score) = eval(&beta);
    let initial_divergence = dval;
    let mut trace = Vec::new();
    let mut last_rel = 0.0;
    let mut stop = StopReason::MaxIterations;
    let finite = |d: f64, u: &ScoreVector| d.is_finite() && u.as_slice().iter().all(|v| v.is_finite());

    for _ in 0..options.max_iter {
        if !finite(dval, &score) {
            stop = StopReason::NonFinite;
            break;
        }
        if score.inf_norm() <= options.tol && last_rel <= options.rel_decrease_tol {
            stop = StopReason::Converged;
            break;
        }
        let (dir, kind) = direction(data, &beta, family, score.as_slice(), options.metric);
        let mut accepted = try_line_search(&beta, dval, &score, &dir, kind, tau, options, &eval);
        if accepted.is_none() && kind != StepKind::Gradient {
            let u = DVector::from_column_slice(score.as_slice());
            let g = (u.clone() / u.norm()).as_slice().to_vec();
            accepted = try_line_search(&beta, dval, &score, &g, StepKind::Gradient, tau, options, &eval);
        }
        let Some((next, next_d, next_u, rec)) = accepted else {
            stop = if score.inf_norm() <= options.tol {
                StopReason::Converged
            } else {
                StopReason::LineSearchFailed
            };
            break;
        };
        last_rel = (dval - next_d) / dval.abs().max(f64::MIN_POSITIVE);
        beta = next;
        dval = next_d;
        score = next_u;
        trace.push(rec);
    }
    if stop == StopReason::MaxIterations
        && finite(dval, &score)
        && score.inf_norm() <= options.tol
        && last_rel <= options.rel_decrease_tol
    {
        stop = StopReason::Converged;
    }
    let score_inf_norm = score.inf_norm();
    FitResult {
        beta_hat: beta,
        lambda: family.lambda(),
        divergence_value: dval,
        initial_divergence,
        score_inf_norm,
        iterations: trace.len(),
        converged: stop == StopReason::Converged && score_inf_norm <= options.tol,
        stop_reason: stop,
        trace,
    }
}

#[allow(clippy::too_many_arguments)]
fn try_line_search(
    beta: &Coefficients,
    dval: f64,
    score: &ScoreVector,
    dir: &[f64],
    kind: StepKind,
    tau: f64,
    options: &SolverOptions,
    eval: &impl Fn(&Coefficients) -> (f64, ScoreVector),
) -> Option<(Coefficients, f64, ScoreVector, IterationRecord)> {
    // directional derivative of the divergence along `dir` (phi''(1) = 1)
    let slope = -score.as_slice().iter().zip(dir).map(|(u, p)| u * p).sum::<f64>() / tau;
    if slope.is_nan() || slope >= 0.0 {
        return None;
    }
    let flat = 4.0 * f64::EPSILON * dval.abs();
    let mut t = 1.0;
    while t >= options.min_step {
        let cand = beta.stepped(dir, t);
        let (cd, cu) = eval(&cand);
        if cd.is_finite() && cu.as_slice().iter().all(|v| v.is_finite()) {
            let sufficient = cd <= dval + options.armijo * t * slope;
            // once the predicted decrease is below rounding resolution the
            // divergence is flat to within a few ulps, so the score decides
            let rounding =
                -options.armijo * t * slope <= flat && cd <= dval + flat && cu.inf_norm() < score.inf_norm();
            if sufficient || rounding {
                let step_norm = dir.iter().map(|p| (t * p).powi(2)).sum::<f64>().sqrt();
                let rec = IterationRecord {
                    divergence: cd,
                    step_norm,
                    score_inf_norm: cu.inf_norm(),
                    kind,
                };
                return Some((cand, cd, cu, rec));
            }
        }
        t *= options.backtrack;
    }
    None
}
