//! Goodness of fit of the prior samplers against their own densities.

use qbss_core::priors::{DeltaFamily, DeltaPrior, Interval, PriorConfig, PriorSampler, SourceIndex};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N: usize = 100_000;
const BINS: usize = 50;

/// Pearson statistic of `draws` against the bin masses from `cdf`.
fn chi_square(draws: &[f64], iv: Interval, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut counts = [0usize; BINS];
    for &u in draws {
        let k = (((u - iv.lo) / iv.width()) * BINS as f64) as usize;
        counts[k.min(BINS - 1)] += 1;
    }
    let edge = |k: usize| iv.lo + iv.width() * k as f64 / BINS as f64;
    (0..BINS)
        .map(|k| {
            let expected = N as f64 * (cdf(edge(k + 1)) - cdf(edge(k)));
            (counts[k] as f64 - expected).powi(2) / expected
        })
        .sum()
}

fn critical() -> f64 {
    ChiSquared::new((BINS - 1) as f64).unwrap().inverse_cdf(0.999)
}

fn draws(cfg: PriorConfig, seed: u64, i: SourceIndex) -> Vec<f64> {
    PriorSampler::new(cfg, seed).unwrap().take(N).map(|s| i.component(&s)).collect()
}

#[test]
fn amplitudes_are_uniform() {
    let cfg = PriorConfig::default();
    for (i, seed) in [(SourceIndex::R1, 11), (SourceIndex::R2, 12)] {
        let iv = cfg.support(i);
        let stat = chi_square(&draws(cfg, seed, i), iv, |u| (u - iv.lo) / iv.width());
        assert!(stat < critical(), "{i:?}: chi2 = {stat}");
    }
}

#[test]
fn raised_cosine_phase_fits() {
    let sub = PriorConfig {
        delta: DeltaPrior {
            family: DeltaFamily::RaisedCosine,
            support: Interval::new(-0.4, 1.1),
        },
        ..PriorConfig::default()
    };
    for (cfg, seed) in [(PriorConfig::default(), 21), (sub, 22)] {
        let iv = cfg.delta.support;
        let mass = iv.hi.sin() - iv.lo.sin();
        let stat = chi_square(&draws(cfg, seed, SourceIndex::Delta), iv, |u| (u.sin() - iv.lo.sin()) / mass);
        assert!(stat < critical(), "chi2 = {stat}");
    }
}

#[test]
fn uniform_phase_fits() {
    let cfg = PriorConfig::uniform_phase();
    let iv = cfg.delta.support;
    let stat = chi_square(&draws(cfg, 31, SourceIndex::Delta), iv, |u| (u - iv.lo) / iv.width());
    assert!(stat < critical(), "chi2 = {stat}");
}

#[test]
fn symmetric_phase_has_zero_mean() {
    // variance of the raised-cosine phase on (−π/2, π/2) is π²/4 − 2
    let sigma = (std::f64::consts::PI.powi(2) / 4.0 - 2.0).sqrt();
    let d = draws(PriorConfig::default(), 41, SourceIndex::Delta);
    let mean = d.iter().sum::<f64>() / N as f64;
    assert!(mean.abs() < 3.0 * sigma / (N as f64).sqrt(), "mean = {mean}");
}
