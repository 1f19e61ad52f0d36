mod common;

use common::*;
use phidiv::*;

const FAMILIES: [Family; 3] = [Family::DirichletMultinomial, Family::RandomClumped, Family::MInflated];

#[test]
fn moments_match_overdispersed_multinomial() {
    for (f, family) in FAMILIES.iter().enumerate() {
        for (i, rho2) in [0.0, 0.25, 0.75].into_iter().enumerate() {
            for m in [5, 21] {
                let seed = 1000 + (f * 10 + i) as u64 * 100 + m;
                let (mean, cov) = sampler_moment_errors(*family, rho2, m, 100_000, seed);
                assert!(mean < 0.01, "{} rho2={rho2} m={m}: mean {mean}", family.name());
                assert!(cov < 0.03, "{} rho2={rho2} m={m}: cov {cov}", family.name());
            }
        }
    }
}

/// At `rho2 = 0` every family is the plain multinomial; a chi-square test
/// on the first category's count against Binomial(m, pi_1).
#[test]
fn zero_correlation_is_multinomial() {
    let m = 5u64;
    let p = SAMPLER_PI[0];
    let draws = 50_000;
    for family in FAMILIES {
        let spec = OverdispersionSpec::new(SAMPLER_PI.to_vec(), 0.0, m, family).unwrap();
        let mut observed = [0.0; 6];
        for y in sample(&spec, 31, draws) {
            observed[y[0] as usize] += 1.0;
        }
        let mut chi2 = 0.0;
        let mut choose = 1.0;
        for (j, o) in observed.iter().enumerate() {
            if j > 0 {
                choose *= (m as f64 - j as f64 + 1.0) / j as f64;
            }
            let e = draws as f64 * choose * p.powi(j as i32) * (1.0 - p).powi((m as usize - j) as i32);
            chi2 += (o - e).powi(2) / e;
        }
        // 99.9% point of chi-square with 5 degrees of freedom
        assert!(chi2 < 20.52, "{}: chi2 = {chi2}", family.name());
    }
}

#[test]
fn full_correlation_puts_everything_in_one_category() {
    for family in [Family::RandomClumped, Family::MInflated] {
        let spec = OverdispersionSpec::new(SAMPLER_PI.to_vec(), 1.0, 7, family).unwrap();
        for y in sample(&spec, 5, 200) {
            assert_eq!(y.iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(y.iter().sum::<u64>(), 7);
        }
    }
}

#[test]
fn streams_are_reproducible() {
    let spec = OverdispersionSpec::new(SAMPLER_PI.to_vec(), 0.3, 9, Family::DirichletMultinomial).unwrap();
    assert_eq!(sample(&spec, 42, 100), sample(&spec, 42, 100));
    assert_ne!(sample(&spec, 42, 100), sample(&spec, 43, 100));
}
