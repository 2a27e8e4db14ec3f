//! Synthetic experiments: sources drawn from the priors and mixed at a known
//! coupling. The optional additive noise has no counterpart in the model and
//! is only meant for robustness checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::likelihood::{LikelihoodError, SampleMeta, SampleSet};
use crate::mixing::{self, MixingParam, ModelError, ObservationVector};
use crate::priors::{self, PriorConfig, PriorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataGenError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("draw {index} left the model domain: {source}")]
    Domain { index: usize, source: ModelError },
    #[error(transparent)]
    Data(#[from] LikelihoodError),
    #[error("noise scale must be finite and non-negative, got {0}")]
    NoiseScale(f64),
    #[error("perturbation invalidated all {0} samples")]
    DegenerateData(usize),
}

/// `n` observations mixed at `v_true` from seeded prior draws.
pub fn generate(
    cfg: &PriorConfig,
    v_true: MixingParam,
    n: usize,
    seed: u64,
) -> Result<SampleSet, DataGenError> {
    let sources = priors::sample_sources(cfg, n, seed)?;
    let observations = sources
        .iter()
        .enumerate()
        .map(|(index, s)| {
            mixing::forward(s, v_true).map_err(|source| DataGenError::Domain { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let meta = SampleMeta {
        v_true: Some(v_true.get()),
        seed: Some(seed),
        prior_hash: Some(cfg.hash()),
    };
    Ok(SampleSet::new(observations, meta)?)
}

/// Result of [`perturb`].
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub data: SampleSet,
    pub dropped: usize,
}

/// Adds independent `N(0, noise_scale²)` noise to every `p_j`, clips `p3`
/// into `[0, 1]`, and drops samples that no longer satisfy the observation
/// invariants or cannot be inverted at any coupling.
pub fn perturb(data: &SampleSet, noise_scale: f64, seed: u64) -> Result<Perturbed, DataGenError> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(DataGenError::NoiseScale(noise_scale));
    }
    if noise_scale == 0.0 {
        return Ok(Perturbed {
            data: data.clone(),
            dropped: 0,
        });
    }
    let normal = Normal::new(0.0, noise_scale).map_err(|_| DataGenError::NoiseScale(noise_scale))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(data.len());
    for x in data.iter() {
        let mut y = ObservationVector {
            p1: x.p1 + normal.sample(&mut rng),
            p2: x.p2 + normal.sample(&mut rng),
            p3: x.p3 + normal.sample(&mut rng),
        };
        y.p3 = y.p3.clamp(0.0, 1.0);
        if y.validate().is_ok() && mixing::feasible_coupling_range(&y).is_ok() {
            kept.push(y);
        }
    }
    let dropped = data.len() - kept.len();
    if kept.is_empty() {
        return Err(DataGenError::DegenerateData(data.len()));
    }
    Ok(Perturbed {
        data: SampleSet::new(kept, data.meta().clone())?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> MixingParam {
        MixingParam::new(x).unwrap()
    }

    #[test]
    fn single_draw_is_forward_of_the_source() {
        let cfg = PriorConfig::default();
        let data = generate(&cfg, v(0.6), 1, 17).unwrap();
        let s = priors::sample_sources(&cfg, 1, 17).unwrap()[0];
        assert_eq!(data[0], mixing::forward(&s, v(0.6)).unwrap());
        assert_eq!(data.meta().v_true, Some(0.6));
        assert_eq!(data.meta().seed, Some(17));
        assert_eq!(data.meta().prior_hash.as_deref(), Some(cfg.hash().as_str()));
    }

    #[test]
    fn generation_is_pure_in_its_inputs() {
        let cfg = PriorConfig::default();
        assert_eq!(generate(&cfg, v(0.6), 100, 1).unwrap(), generate(&cfg, v(0.6), 100, 1).unwrap());
        assert_ne!(generate(&cfg, v(0.6), 100, 1).unwrap(), generate(&cfg, v(0.5), 100, 1).unwrap());
    }

    #[test]
    fn zero_noise_is_identity() {
        let data = generate(&PriorConfig::default(), v(0.6), 50, 4).unwrap();
        let p = perturb(&data, 0.0, 99).unwrap();
        assert_eq!(p.dropped, 0);
        assert_eq!(p.data, data);
    }

    #[test]
    fn dropped_count_is_reproducible() {
        let data = generate(&PriorConfig::default(), v(0.6), 500, 4).unwrap();
        let a = perturb(&data, 0.05, 7).unwrap();
        let b = perturb(&data, 0.05, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.dropped > 0);
        assert_eq!(a.dropped + a.data.len(), 500);
        assert!(a.data.iter().all(|x| x.validate().is_ok()));
    }

    #[test]
    fn rejects_bad_noise_and_total_loss() {
        let data = generate(&PriorConfig::default(), v(0.6), 5, 4).unwrap();
        assert!(matches!(perturb(&data, -1.0, 0), Err(DataGenError::NoiseScale(_))));
        assert!(matches!(perturb(&data, f64::NAN, 0), Err(DataGenError::NoiseScale(_))));
        assert!(matches!(perturb(&data, 10.0, 0), Err(DataGenError::DegenerateData(5))));
    }
}
