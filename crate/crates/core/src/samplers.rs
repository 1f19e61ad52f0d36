//! Overdispersed multinomial generators.
//!
//! Each family has mean `m pi` and covariance `(1 + rho2 (m - 1)) m Δ(pi)`.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    DirichletMultinomial,
    RandomClumped,
    MInflated,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::DirichletMultinomial => "DM",
            Family::RandomClumped => "RC",
            Family::MInflated => "m-I",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "dm" | "dirichlet_multinomial" | "dirichlet-multinomial" => Some(Family::DirichletMultinomial),
            "rc" | "random_clumped" | "random-clumped" => Some(Family::RandomClumped),
            "m-i" | "mi" | "m_inflated" | "m-inflated" => Some(Family::MInflated),
            _ => None,
        }
    }
}

/// Parameters of one overdispersed multinomial law.
#[derive(Debug, Clone)]
pub struct OverdispersionSpec {
    pi: Vec<f64>,
    rho2: f64,
    m: u64,
    family: Family,
    categorical: WeightedIndex<f64>,
}

impl OverdispersionSpec {
    /// `rho2` must lie in `[0, 1)`; `rho2 = 1` is accepted for the
    /// random-clumped and m-inflated families, where it is degenerate.
    pub fn new(pi: Vec<f64>, rho2: f64, m: u64, family: Family) -> Result<Self> {
        let upper_ok = rho2 < 1.0 || (rho2 == 1.0 && family != Family::DirichletMultinomial);
        if !(rho2 >= 0.0 && upper_ok) {
            return Err(Error::Domain(format!("rho2 must be in [0, 1), got {rho2}")));
        }
        if m == 0 {
            return Err(Error::Domain("cluster size m must be >= 1".into()));
        }
        if pi.len() < 2 || pi.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Domain("probabilities must be positive".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        let categorical = WeightedIndex::new(&pi).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self {
            pi,
            rho2,
            m,
            family,
            categorical,
        })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `nu_m = 1 + rho2 (m - 1)`.
    pub fn nu(&self) -> f64 {
        1.0 + self.rho2 * (self.m as f64 - 1.0)
    }

    /// One count vector.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u64> {
        let mut out = vec![0; self.pi.len()];
        if self.rho2 == 0.0 {
            multinomial_into(rng, self.m, &self.pi, &mut out);
            return out;
        }
        match self.family {
            Family::DirichletMultinomial => {
                let conc = (1.0 - self.rho2) / self.rho2;
                let p = loop {
                    let g: Vec<f64> = self
                        .pi
                        .iter()
                        .map(|&a| Gamma::new(a * conc, 1.0).expect("positive shape").sample(rng))
                        .collect();
                    let s: f64 = g.iter().sum();
                    if s > 0.0 {
                        break g.into_iter().map(|v| v / s).collect::<Vec<_>>();
                    }
                };
                multinomial_into(rng, self.m, &p, &mut out);
            }
            Family::RandomClumped => {
                let clump = Binomial::new(self.m, self.rho2.sqrt()).expect("valid binomial").sample(rng);
                let u = self.categorical.sample(rng);
                multinomial_into(rng, self.m - clump, &self.pi, &mut out);
                out[u] += clump;
            }
            Family::MInflated => {
                if rng.random::<f64>() < self.rho2 {
                    out[self.categorical.sample(rng)] = self.m;
                } else {
                    multinomial_into(rng, self.m, &self.pi, &mut out);
                }
            }
        }
        out
    }
}

/// Multinomial counts by sequential conditional binomials.
fn multinomial_into<R: Rng + ?Sized>(rng: &mut R, n: u64, p: &[f64], out: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0;
    let last = p.len() - 1;
    for (s, &ps) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if s == last || mass <= ps {
            out[s] += left;
            break;
        }
        let q = (ps / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[s] += k;
        left -= k;
        mass -= ps;
    }
}

/// A sampler that owns its generator.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: OverdispersionSpec,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(spec: OverdispersionSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_draw(&mut self) -> Vec<u64> {
        self.spec.draw(&mut self.rng)
    }
}

/// `n_draws` count vectors from a ChaCha8 generator seeded with `seed`.
pub fn sample(spec: &OverdispersionSpec, seed: u64, n_draws: usize) -> Vec<Vec<u64>> {
    let mut s = Sampler::new(spec.clone(), seed);
    (0..n_draws).map(|_| s.next_draw()).collect()
}
