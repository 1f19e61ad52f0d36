#![allow(dead_code)]

use phidiv::{ClusterRecord, Coefficients, Stratum, SurveyDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAMBDAS: [f64; 6] = [0.0, 2.0 / 3.0, 1.0, 1.5, 2.0, 2.5];

const STRATA: [(&str, f64); 4] = [
    ("Freshman", 3734.0 / 300.0),
    ("Sophomore", 3565.0 / 300.0),
    ("Junior", 3903.0 / 300.0),
    ("Senior", 4196.0 / 300.0),
];

const COUNTS: [[[u64; 5]; 3]; 4] = [
    [[10, 34, 25, 16, 15], [5, 10, 24, 30, 21], [11, 14, 20, 34, 21]],
    [[19, 12, 26, 18, 25], [10, 18, 32, 23, 17], [15, 22, 34, 9, 20]],
    [[8, 21, 23, 26, 22], [1, 14, 25, 23, 37], [16, 19, 30, 23, 12]],
    [[11, 14, 24, 33, 18], [8, 15, 35, 30, 12], [2, 34, 27, 18, 16]],
];

/// Web design survey: 4 strata x 3 designs, 5 rating categories, planned
/// cluster size 100 (two clusters have nonresponse).
pub fn unc() -> SurveyDataset {
    let strata = STRATA
        .iter()
        .zip(COUNTS.iter())
        .map(|(&(label, w), designs)| {
            let clusters = designs
                .iter()
                .enumerate()
                .map(|(i, counts)| {
                    let mut x = vec![0.0; 3];
                    x[i] = 1.0;
                    let name = ["A", "B", "C"][i];
                    ClusterRecord::with_nonresponse(name, w, 100, counts.to_vec(), x).unwrap()
                })
                .collect();
            Stratum::new(label, clusters)
        })
        .collect();
    SurveyDataset::new(strata).unwrap()
}

/// Reference coefficient estimates, stacked as (category 1: designs A,B,C), ...
pub const BETA_TABLE: [[f64; 12]; 6] = [
    [-0.5188, -1.2910, -0.4665, 0.0127, -0.4210, 0.2761, 0.2056, 0.2946, 0.4803, 0.1715, 0.2048, 0.2070],
    [-0.4933, -1.2475, -0.3889, 0.0564, -0.4676, 0.2974, 0.1947, 0.2438, 0.4770, 0.1870, 0.1512, 0.2488],
    [-0.4802, -1.2400, -0.3649, 0.0773, -0.4899, 0.3079, 0.1894, 0.2196, 0.4754, 0.1944, 0.1256, 0.2668],
    [-0.4604, -1.2381, -0.3397, 0.1069, -0.5213, 0.3233, 0.1816, 0.1857, 0.4733, 0.2048, 0.0896, 0.2906],
    [-0.4411, -1.2424, -0.3230, 0.1336, -0.5498, 0.3380, 0.1741, 0.1551, 0.4714, 0.2143, 0.0570, 0.3111],
    [-0.4228, -1.2494, -0.3116, 0.1573, -0.5750, 0.3517, 0.1670, 0.1280, 0.4697, 0.2228, 0.0280, 0.3288],
];

/// Reference fitted probabilities per index, design A/B/C, categories 1-5.
pub const PI_TABLE: [[[f64; 5]; 3]; 6] = [
    [
        [0.1185, 0.2016, 0.2445, 0.2363, 0.1991],
        [0.0611, 0.1458, 0.2983, 0.2727, 0.2222],
        [0.1083, 0.2276, 0.2791, 0.2124, 0.1727],
    ],
    [
        [0.1200, 0.2079, 0.2387, 0.2369, 0.1965],
        [0.0660, 0.1439, 0.2931, 0.2672, 0.2297],
        [0.1145, 0.2275, 0.2723, 0.2167, 0.1690],
    ],
    [
        [0.1208, 0.2109, 0.2359, 0.2371, 0.1952],
        [0.0676, 0.1431, 0.2909, 0.2648, 0.2336],
        [0.1163, 0.2279, 0.2695, 0.2188, 0.1675],
    ],
    [
        [0.1221, 0.2152, 0.2319, 0.2374, 0.1934],
        [0.0693, 0.1420, 0.2879, 0.2616, 0.2392],
        [0.1179, 0.2289, 0.2659, 0.2215, 0.1657],
    ],
    [
        [0.1234, 0.2191, 0.2282, 0.2376, 0.1917],
        [0.0705, 0.1410, 0.2854, 0.2587, 0.2444],
        [0.1188, 0.2301, 0.2630, 0.2240, 0.1641],
    ],
    [
        [0.1246, 0.2226, 0.2248, 0.2377, 0.1902],
        [0.0714, 0.1402, 0.2831, 0.2562, 0.2491],
        [0.1192, 0.2314, 0.2604, 0.2262, 0.1628],
    ],
];

/// Reference intra-cluster correlation values: the row
/// labelled Binder for strata 2 and 3, then the row labelled moments.
pub const RHO2_LABELLED_BINDER: [[f64; 6]; 2] = [
    [0.0119, 0.0123, 0.0127, 0.0135, 0.0142, 0.0150],
    [0.0088, 0.0072, 0.0066, 0.0059, 0.0054, 0.0051],
];
pub const RHO2_LABELLED_MOMENTS: [[f64; 6]; 2] = [
    [0.0119, 0.0048, 0.0051, 0.0056, 0.0061, 0.0067],
    [0.0088, 0.0014, 0.0010, 0.0006, 0.0003, 0.0000],
];

/// Random dataset with `n` clusters (1..=3 strata), `d + 1` categories and
/// `k` covariates (first is an intercept). `positive` forces all counts >= 1.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, positive: bool) -> SurveyDataset {
    let n_strata = rng.random_range(1..=n.min(3));
    let mut strata: Vec<Vec<ClusterRecord>> = vec![Vec::new(); n_strata];
    for i in 0..n {
        let m: u64 = rng.random_range(2..=30);
        let mut counts = vec![0u64; d + 1];
        if positive {
            counts.iter_mut().for_each(|c| *c = 1);
        }
        for _ in 0..m {
            counts[rng.random_range(0..=d)] += 1;
        }
        let size = counts.iter().sum();
        let mut x = vec![1.0];
        x.extend((1..k).map(|_| rng.random_range(-1.5..1.5)));
        let w = rng.random_range(0.2..5.0);
        strata[i % n_strata].push(ClusterRecord::new(format!("c{i}"), w, size, counts, x).unwrap());
    }
    // every category must appear somewhere for fits to have an interior solution
    let mut all = strata;
    let totals: Vec<u64> = (0..=d)
        .map(|s| all.iter().flatten().map(|c| c.counts()[s]).sum())
        .collect();
    if totals.contains(&0) {
        let c = &all[0][0];
        let mut counts = c.counts().to_vec();
        for (s, t) in totals.iter().enumerate() {
            if *t == 0 {
                counts[s] += 1;
            }
        }
        let size = counts.iter().sum();
        all[0][0] = ClusterRecord::new(c.label(), c.weight(), size, counts, c.covariates().to_vec()).unwrap();
    }
    SurveyDataset::new(
        all.into_iter()
            .enumerate()
            .map(|(h, cs)| Stratum::new(format!("s{h}"), cs))
            .collect(),
    )
    .unwrap()
}

pub fn random_beta(rng: &mut ChaCha8Rng, d: usize, k: usize, scale: f64) -> Coefficients {
    Coefficients::from_vec(d, k, (0..d * k).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of the divergence, scaled to score units.
pub fn fd_score(data: &SurveyDataset, beta: &Coefficients, lambda: f64) -> Vec<f64> {
    let base = beta.as_slice().to_vec();
    let (d, k) = (beta.num_free(), beta.num_covariates());
    (0..base.len())
        .map(|i| {
            let h = 1e-5 * base[i].abs().max(1.0);
            let at = |delta: f64| {
                let mut b = base.clone();
                b[i] += delta;
                phidiv::divergence(data, &Coefficients::from_vec(d, k, b).unwrap(), lambda).unwrap()
            };
            -data.tau() * (at(h) - at(-h)) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}

fn softmax(x: &[f64], beta: &[f64], d: usize) -> Vec<f64> {
    let k = x.len();
    let mut eta: Vec<f64> = (0..d).map(|r| (0..k).map(|j| beta[r * k + j] * x[j]).sum()).collect();
    eta.push(0.0);
    let top = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn loglik(data: &SurveyDataset, beta: &[f64], d: usize) -> f64 {
    data.clusters()
        .map(|(_, c)| {
            let p = softmax(c.covariates(), beta, d);
            c.weight()
                * c.counts()
                    .iter()
                    .zip(&p)
                    .filter(|(y, _)| **y > 0)
                    .map(|(y, p)| *y as f64 * p.ln())
                    .sum::<f64>()
        })
        .sum()
}

/// Maximiser of the weighted pseudo log-likelihood `sum w sum_s y_s ln pi_s`
/// by plain Newton with step halving.
pub fn direct_mle(data: &SurveyDataset) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let d = data.num_free();
    let k = data.num_covariates();
    let p = d * k;
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut g = DVector::<f64>::zeros(p);
        let mut h = DMatrix::<f64>::zeros(p, p);
        for (_, c) in data.clusters() {
            let pi = softmax(c.covariates(), &beta, d);
            let x = c.covariates();
            let n = c.counts().iter().sum::<u64>() as f64;
            for r in 0..d {
                for j in 0..k {
                    g[r * k + j] += c.weight() * (c.counts()[r] as f64 - n * pi[r]) * x[j];
                    for q in 0..d {
                        let cov = if r == q { pi[r] - pi[r] * pi[q] } else { -pi[r] * pi[q] };
                        for l in 0..k {
                            h[(r * k + j, q * k + l)] += c.weight() * n * cov * x[j] * x[l];
                        }
                    }
                }
            }
        }
        if g.amax() < 1e-11 {
            break;
        }
        let step = h.lu().solve(&g).expect("information is singular");
        let before = loglik(data, &beta, d);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            if loglik(data, &trial, d) >= before - 1e-12 * before.abs() || t < 1e-10 {
                beta = trial;
                break;
            }
            t *= 0.5;
        }
    }
    beta
}

pub const SAMPLER_PI: [f64; 4] = [0.2, 0.3, 0.25, 0.25];

/// Relative errors of the empirical mean (Euclidean norm) and covariance
/// (Frobenius norm) of `draws` seeded draws against the overdispersed
/// multinomial moments.
pub fn sampler_moment_errors(family: phidiv::Family, rho2: f64, m: u64, draws: usize, seed: u64) -> (f64, f64) {
    let spec = phidiv::OverdispersionSpec::new(SAMPLER_PI.to_vec(), rho2, m, family).unwrap();
    let c = SAMPLER_PI.len();
    let mut sum = vec![0.0; c];
    let mut sq = vec![vec![0.0; c]; c];
    for y in phidiv::sample(&spec, seed, draws) {
        for a in 0..c {
            sum[a] += y[a] as f64;
            for b in 0..c {
                sq[a][b] += (y[a] * y[b]) as f64;
            }
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mf = m as f64;
    let want_mean: Vec<f64> = SAMPLER_PI.iter().map(|p| mf * p).collect();
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let mean_err = norm(&mut mean.iter().zip(&want_mean).map(|(a, b)| a - b)) / norm(&mut want_mean.iter().copied());
    let nu = 1.0 + rho2 * (mf - 1.0);
    let mut diff = 0.0;
    let mut scale = 0.0;
    for a in 0..c {
        for b in 0..c {
            let cov = (sq[a][b] - n * mean[a] * mean[b]) / (n - 1.0);
            let delta = if a == b { SAMPLER_PI[a] } else { 0.0 } - SAMPLER_PI[a] * SAMPLER_PI[b];
            let want = nu * mf * delta;
            diff += (cov - want).powi(2);
            scale += want * want;
        }
    }
    (mean_err, (diff / scale).sqrt())
}

/// Mean design effect over `reps` simulated samples of 200 clusters of 21
/// with unit weights, evaluated at the `lambda = 0` fit.
pub fn simulated_design_effect(family: phidiv::Family, rho2: f64, reps: usize, seed: u64) -> f64 {
    let config = phidiv::ScenarioConfig::single(family, 200, 21, rho2, reps, seed);
    let cell = config.cells()[0];
    let total: f64 = (0..reps)
        .map(|rep| {
            let mut r = phidiv::sim::replicate_rng(seed, 0, rep);
            let data = phidiv::sim::simulate_dataset(&config, &cell, &mut r).unwrap();
            let f = phidiv::fit(&data, 0.0, &phidiv::SolverOptions::default()).unwrap();
            phidiv::design_effect(&data, &f.beta_hat).unwrap()
        })
        .sum();
    total / reps as f64
}
