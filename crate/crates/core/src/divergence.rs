//! Cressie-Read phi functions and the weighted divergence objective.

use crate::error::{Error, Result};
use crate::model::{fill_link, Coefficients, SurveyDataset};

/// Below this distance from 0 (or -1) the analytic limit of the power form is used.
pub const LAMBDA_BRANCH: f64 = 1e-9;

/// A convex function with `phi(1) = 0`, with the derivatives needed by the
/// divergence and its score.
pub trait PhiFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn second_derivative(&self, x: f64) -> f64;

    /// `phi(0)`, used for empty cells.
    fn at_zero(&self) -> f64 {
        self.value(0.0)
    }

    /// `f(x) = x phi'(x) - phi(x)`, the per-cell factor of the score.
    fn score_factor(&self, x: f64) -> f64 {
        if x == 0.0 {
            -self.at_zero()
        } else {
            x * self.derivative(x) - self.value(x)
        }
    }

    /// `phi''(1)`, the normalising constant of the score.
    fn curvature_at_one(&self) -> f64 {
        self.second_derivative(1.0)
    }
}

/// Which closed form a Cressie-Read index maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Power,
    KullbackLeibler,
    Reverse,
}

/// Member of the Cressie-Read power-divergence family.
///
/// `lambda = 0` is Kullback-Leibler (`x ln x - x + 1`), `lambda = 1` is
/// Pearson-type (`(x - 1)^2 / 2`), and `lambda = -1` the reverse
/// Kullback-Leibler limit (`x - 1 - ln x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CressieRead {
    lambda: f64,
    branch: Branch,
}

impl CressieRead {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < -1.0 - LAMBDA_BRANCH {
            return Err(Error::UnsupportedLambda {
                lambda,
                reason: "the Cressie-Read index must be >= -1".into(),
            });
        }
        let branch = if lambda.abs() < LAMBDA_BRANCH {
            Branch::KullbackLeibler
        } else if (lambda + 1.0).abs() < LAMBDA_BRANCH {
            Branch::Reverse
        } else {
            Branch::Power
        };
        Ok(Self { lambda, branch })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True for the `lambda = -1` member, which is infinite at zero.
    pub fn is_reverse_kl(&self) -> bool {
        self.branch == Branch::Reverse
    }
}

impl PhiFunction for CressieRead {
    fn value(&self, x: f64) -> f64 {
        let l = self.lambda;
        match self.branch {
            Branch::KullbackLeibler => {
                if x == 0.0 {
                    1.0
                } else {
                    x * x.ln() - x + 1.0
                }
            }
            Branch::Reverse => x - 1.0 - x.ln(),
            Branch::Power => (x.powf(l + 1.0) - x - l * (x - 1.0)) / (l * (l + 1.0)),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self.branch {
            Branch::KullbackLeibler => x.ln(),
            Branch::Reverse => 1.0 - 1.0 / x,
            Branch::Power => (x.powf(self.lambda) - 1.0) / self.lambda,
        }
    }

    fn second_derivative(&self, x: f64) -> f64 {
        match self.branch {
            Branch::KullbackLeibler => 1.0 / x,
            Branch::Reverse => 1.0 / (x * x),
            Branch::Power => x.powf(self.lambda - 1.0),
        }
    }

    fn at_zero(&self) -> f64 {
        match self.branch {
            Branch::Reverse => f64::INFINITY,
            _ => 1.0 / (self.lambda + 1.0),
        }
    }

    fn score_factor(&self, x: f64) -> f64 {
        // x phi'(x) - phi(x) = (x^(lambda+1) - 1) / (lambda + 1)
        match self.branch {
            Branch::KullbackLeibler => x - 1.0,
            Branch::Reverse => x.ln(),
            Branch::Power => (x.powf(self.lambda + 1.0) - 1.0) / (self.lambda + 1.0),
        }
    }

    fn curvature_at_one(&self) -> f64 {
        1.0
    }
}

/// `phi_lambda(x)` for a Cressie-Read index.
pub fn phi(lambda: f64, x: f64) -> Result<f64> {
    let f = checked(lambda, x)?;
    Ok(if x == 0.0 { f.at_zero() } else { f.value(x) })
}

/// First derivative of `phi_lambda` at `x > 0`.
pub fn phi_prime(lambda: f64, x: f64) -> Result<f64> {
    Ok(checked(lambda, x)?.derivative(x))
}

/// Second derivative of `phi_lambda` at `x > 0`.
pub fn phi_double_prime(lambda: f64, x: f64) -> Result<f64> {
    Ok(checked(lambda, x)?.second_derivative(x))
}

fn checked(lambda: f64, x: f64) -> Result<CressieRead> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("phi is defined for x >= 0, got {x}")));
    }
    if lambda <= -1.0 {
        return Err(Error::UnsupportedLambda {
            lambda,
            reason: "phi evaluation requires lambda > -1".into(),
        });
    }
    CressieRead::new(lambda)
}

/// `sum_s pi_s phi(y_s / (m pi_s))` for one cluster, with the conventions
/// `0 phi(0/0) = 0` and `0 phi(y/0) = y * lim phi(u)/u`.
pub(crate) fn cluster_divergence<P: PhiFunction>(phi: &P, counts: &[u64], size: f64, probs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&y, &p) in counts.iter().zip(probs) {
        let y = y as f64;
        if p == 0.0 {
            if y > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        acc += if y == 0.0 {
            p * phi.at_zero()
        } else {
            p * phi.value(y / (size * p))
        };
    }
    acc
}

/// Weighted phi-divergence between the empirical and model probability
/// vectors, for an arbitrary phi function.
pub fn divergence_with<P: PhiFunction>(data: &SurveyDataset, beta: &Coefficients, phi: &P) -> Result<f64> {
    beta.check_against(data)?;
    let mut probs = vec![0.0; data.num_categories()];
    let mut total = 0.0;
    for (_, rec) in data.clusters() {
        fill_link(rec.covariates(), beta, &mut probs);
        let m = rec.size() as f64;
        total += rec.weight() * m * cluster_divergence(phi, rec.counts(), m, &probs);
    }
    Ok(total / data.tau())
}

/// Weighted Cressie-Read divergence `d_lambda(p_hat, pi(beta))`.
pub fn divergence(data: &SurveyDataset, beta: &Coefficients, lambda: f64) -> Result<f64> {
    let phi = CressieRead::new(lambda)?;
    divergence_with(data, beta, &phi)
}
