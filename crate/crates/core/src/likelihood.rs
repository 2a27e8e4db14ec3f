//! Normalized log-likelihood of the coupling and its derivative.
//!
//! For a fixed observation sequence the sources are dependent variables,
//! restored at every queried `v`. The log-likelihood is
//!
//! ```text
//! L(v) = Σ_i E_t[ln f_i(s_i(t))] − E_t[ln Jg(s(t), v)]
//! ```
//!
//! Its derivative must be the total one: the restored phase moves with `v`,
//! so the Jacobian term carries `∂Jg/∂Δ · dΔ/dv` on top of `∂Jg/∂v`.
//! [`dlogl_dv_partial_only`] keeps only `∂Jg/∂v` and exists to show the
//! resulting error.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixing::{self, MixingParam, ModelError, ObservationVector, SourceVector, Tolerances};
use crate::priors::{self, PriorConfig, PriorError, SourceIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleFailure {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("sample set is empty")]
    EmptyData,
    #[error("observation {index} is invalid: {source}")]
    InvalidSample { index: usize, source: ModelError },
    #[error("evaluation failed at sample {index}, v = {v}: {source}")]
    Evaluation {
        index: usize,
        v: f64,
        source: SampleFailure,
    },
    #[error("no coupling inverts every sample (feasible range ({lo}, {hi}) is empty)")]
    NoFeasibleCoupling { lo: f64, hi: f64 },
    #[error("every sample was excluded as irregular at v = {v}")]
    AllExcluded { v: f64 },
}

pub type Result<T> = std::result::Result<T, LikelihoodError>;

/// Provenance recorded alongside a sample set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_hash: Option<String>,
}

/// Non-empty, validated, immutable observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    observations: Vec<ObservationVector>,
    meta: SampleMeta,
}

impl SampleSet {
    pub fn new(observations: Vec<ObservationVector>, meta: SampleMeta) -> Result<Self> {
        if observations.is_empty() {
            return Err(LikelihoodError::EmptyData);
        }
        for (index, x) in observations.iter().enumerate() {
            x.validate()
                .map_err(|source| LikelihoodError::InvalidSample { index, source })?;
        }
        Ok(SampleSet { observations, meta })
    }

    pub fn observations(&self) -> &[ObservationVector] {
        &self.observations
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }
}

impl Deref for SampleSet {
    type Target = [ObservationVector];

    fn deref(&self) -> &[ObservationVector] {
        &self.observations
    }
}

/// Which derivative of `Jg` enters the gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientVariant {
    /// `dJg/dv`, including the indirect dependency through the phase.
    #[default]
    Total,
    /// `∂Jg/∂v` only. Incorrect; kept for comparison.
    PartialOnly,
}

impl GradientVariant {
    pub fn name(self) -> &'static str {
        match self {
            GradientVariant::Total => "total",
            GradientVariant::PartialOnly => "partial-only",
        }
    }
}

impl std::str::FromStr for GradientVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "total" => Ok(GradientVariant::Total),
            "partial-only" => Ok(GradientVariant::PartialOnly),
            other => Err(format!("unknown gradient variant '{other}' (expected total or partial-only)")),
        }
    }
}

fn nonempty(data: &[ObservationVector]) -> Result<()> {
    if data.is_empty() {
        Err(LikelihoodError::EmptyData)
    } else {
        Ok(())
    }
}

fn fail(index: usize, v: MixingParam, source: impl Into<SampleFailure>) -> LikelihoodError {
    LikelihoodError::Evaluation {
        index,
        v: v.get(),
        source: source.into(),
    }
}

/// Restores every source vector at `v`.
pub fn restore_sources(
    data: &[ObservationVector],
    v: MixingParam,
    tol: &Tolerances,
) -> Result<Vec<SourceVector>> {
    nonempty(data)?;
    data.iter()
        .enumerate()
        .map(|(i, x)| mixing::invert_with(x, v, tol).map_err(|e| fail(i, v, e)))
        .collect()
}

/// The separate averages making up `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihoodTerms {
    /// `E_t[ln f_i(s_i)]` for `r1`, `r2`, `Δ`.
    pub log_prior: [f64; 3],
    /// `E_t[ln |Jg|]`.
    pub log_jacobian: f64,
}

impl LogLikelihoodTerms {
    pub fn total(&self) -> f64 {
        self.log_prior.iter().sum::<f64>() - self.log_jacobian
    }
}

pub fn log_likelihood_terms(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
) -> Result<LogLikelihoodTerms> {
    let sources = restore_sources(data, v, tol)?;
    let n = sources.len() as f64;
    let mut log_prior = [0.0; 3];
    let mut log_jacobian = 0.0;
    for (t, s) in sources.iter().enumerate() {
        for (k, i) in SourceIndex::ALL.into_iter().enumerate() {
            log_prior[k] += priors::log_pdf(cfg, i, i.component(s)).map_err(|e| fail(t, v, e))?;
        }
        log_jacobian += mixing::jacobian(s, v).abs().ln();
    }
    for lp in &mut log_prior {
        *lp /= n;
    }
    Ok(LogLikelihoodTerms {
        log_prior,
        log_jacobian: log_jacobian / n,
    })
}

/// Normalized log-likelihood `L(v)`.
pub fn log_likelihood(data: &[ObservationVector], v: MixingParam, cfg: &PriorConfig) -> Result<f64> {
    log_likelihood_with(data, v, cfg, &Tolerances::default())
}

pub fn log_likelihood_with(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
) -> Result<f64> {
    log_likelihood_terms(data, v, cfg, tol).map(|t| t.total())
}

fn phase_score(cfg: &PriorConfig, s: &SourceVector, t: usize, v: MixingParam) -> Result<f64> {
    // r1 and r2 scores are multiplied by ds/dv = 0; their support is still checked.
    for i in [SourceIndex::R1, SourceIndex::R2] {
        priors::score(cfg, i, i.component(s)).map_err(|e| fail(t, v, e))?;
    }
    priors::score(cfg, SourceIndex::Delta, s.delta).map_err(|e| fail(t, v, e))
}

/// `dL/dv` from the explicit closed form in the restored sources.
pub fn dlogl_dv_total(data: &[ObservationVector], v: MixingParam, cfg: &PriorConfig) -> Result<f64> {
    dlogl_dv_total_with(data, v, cfg, &Tolerances::default())
}

pub fn dlogl_dv_total_with(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
) -> Result<f64> {
    let sources = restore_sources(data, v, tol)?;
    let vv = v.get();
    let c2 = 1.0 - vv * vv;
    let c = c2.sqrt();
    let coupling = (1.0 - 2.0 * vv * vv) / (c2 * vv);
    let (mut score_term, mut jacobian_term) = (0.0, 0.0);
    for (t, s) in sources.iter().enumerate() {
        let psi = phase_score(cfg, s, t, v)?;
        let (sin, cos) = s.delta.sin_cos();
        let spread = s.r2 * s.r2 - s.r1 * s.r1;
        let scale = s.r1 * s.r2 * (1.0 - s.r1 * s.r1).sqrt() * (1.0 - s.r2 * s.r2).sqrt() * c;
        score_term += psi * (spread / (scale * cos) - coupling * sin / cos);
        jacobian_term += coupling / (cos * cos) - spread * sin / (scale * cos * cos);
    }
    let n = sources.len() as f64;
    Ok(-score_term / n - jacobian_term / n)
}

/// `dL/dv` assembled from the per-sample building blocks:
/// `−Σ_i E_t[ψ_i ds_i/dv] − E_t[(1/Jg) dJg/dv]`.
pub fn dlogl_dv_total_assembled(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
) -> Result<f64> {
    assembled(data, v, cfg, tol, GradientVariant::Total)
}

/// Gradient with only the partial `∂Jg/∂v` in the Jacobian term.
pub fn dlogl_dv_partial_only(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
) -> Result<f64> {
    dlogl_dv_partial_only_with(data, v, cfg, &Tolerances::default())
}

pub fn dlogl_dv_partial_only_with(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
) -> Result<f64> {
    assembled(data, v, cfg, tol, GradientVariant::PartialOnly)
}

fn assembled(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
    variant: GradientVariant,
) -> Result<f64> {
    let sources = restore_sources(data, v, tol)?;
    let (mut score_term, mut jacobian_term) = (0.0, 0.0);
    for (t, s) in sources.iter().enumerate() {
        let psi = [
            priors::score(cfg, SourceIndex::R1, s.r1).map_err(|e| fail(t, v, e))?,
            priors::score(cfg, SourceIndex::R2, s.r2).map_err(|e| fail(t, v, e))?,
            priors::score(cfg, SourceIndex::Delta, s.delta).map_err(|e| fail(t, v, e))?,
        ];
        let ds3 = mixing::ds3_dv_with(s, v, tol).map_err(|e| fail(t, v, e))?;
        score_term += psi[0] * mixing::DS1_DV + psi[1] * mixing::DS2_DV + psi[2] * ds3;
        let djg = match variant {
            GradientVariant::Total => mixing::djg_dv_total_with(s, v, tol).map_err(|e| fail(t, v, e))?,
            GradientVariant::PartialOnly => mixing::djg_dv_partial(s, v),
        };
        jacobian_term += djg / mixing::jacobian(s, v);
    }
    let n = sources.len() as f64;
    Ok(-score_term / n - jacobian_term / n)
}

/// Gradient for the chosen variant. `Total` uses the closed form.
pub fn dlogl_dv(
    data: &[ObservationVector],
    v: MixingParam,
    cfg: &PriorConfig,
    tol: &Tolerances,
    variant: GradientVariant,
) -> Result<f64> {
    match variant {
        GradientVariant::Total => dlogl_dv_total_with(data, v, cfg, tol),
        GradientVariant::PartialOnly => dlogl_dv_partial_only_with(data, v, cfg, tol),
    }
}

/// `−E_t[(1/Jg) ∂Jg/∂Δ · dΔ/dv]`: what the partial-only variant leaves out.
pub fn indirect_jacobian_term(
    data: &[ObservationVector],
    v: MixingParam,
    tol: &Tolerances,
) -> Result<f64> {
    let sources = restore_sources(data, v, tol)?;
    let mut acc = 0.0;
    for (t, s) in sources.iter().enumerate() {
        let ds3 = mixing::ds3_dv_with(s, v, tol).map_err(|e| fail(t, v, e))?;
        acc += mixing::djg_ds3(s, v) * ds3 / mixing::jacobian(s, v);
    }
    Ok(-acc / sources.len() as f64)
}

/// Intersection of the per-sample feasible coupling ranges.
pub fn feasible_interval(data: &[ObservationVector], tol: &Tolerances) -> Result<(f64, f64)> {
    nonempty(data)?;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for (index, x) in data.iter().enumerate() {
        let (a, b) = mixing::feasible_coupling_range_with(x, tol).map_err(|e| {
            LikelihoodError::Evaluation {
                index,
                v: f64::NAN,
                source: e.into(),
            }
        })?;
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(LikelihoodError::NoFeasibleCoupling { lo, hi })
    }
}

/// Samples kept by [`retain_regular`] and the number dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Regular {
    pub observations: Vec<ObservationVector>,
    pub excluded: usize,
}

/// Keeps the samples that restore at every coupling in `at` with
/// `|cos Δ| ≥ min_cos` and inside every prior support.
pub fn retain_regular(
    data: &[ObservationVector],
    cfg: &PriorConfig,
    at: &[f64],
    min_cos: f64,
    tol: &Tolerances,
) -> Regular {
    let regular_at = |x: &ObservationVector, v: f64| -> bool {
        let Ok(v) = MixingParam::new(v) else {
            return false;
        };
        match mixing::invert_with(x, v, tol) {
            Ok(s) => {
                s.delta.cos().abs() >= min_cos
                    && SourceIndex::ALL
                        .iter()
                        .all(|&i| priors::log_pdf(cfg, i, i.component(&s)).is_ok())
            }
            Err(_) => false,
        }
    };
    let observations: Vec<_> = data
        .iter()
        .filter(|x| at.iter().all(|&v| regular_at(x, v)))
        .copied()
        .collect();
    Regular {
        excluded: data.len() - observations.len(),
        observations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn v(x: f64) -> MixingParam {
        MixingParam::new(x).unwrap()
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn sample_set_rejects_empty_and_invalid() {
        assert_eq!(
            SampleSet::new(vec![], SampleMeta::default()),
            Err(LikelihoodError::EmptyData)
        );
        let bad = ObservationVector {
            p1: 0.25,
            p2: 0.25,
            p3: 0.1,
        };
        assert!(matches!(
            SampleSet::new(vec![bad], SampleMeta::default()),
            Err(LikelihoodError::InvalidSample { index: 0, .. })
        ));
    }

    #[test]
    fn single_sample_with_uniform_priors() {
        let cfg = PriorConfig::uniform_phase();
        let s = SourceVector::new(0.3, 0.7, 0.25).unwrap();
        let x = mixing::forward(&s, v(0.5)).unwrap();
        let l = log_likelihood(&[x], v(0.5), &cfg).unwrap();
        let expected =
            -(0.3_f64.ln() + 0.3_f64.ln() + std::f64::consts::PI.ln()) - mixing::jacobian(&s, v(0.5)).ln();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn amplitude_terms_do_not_depend_on_v() {
        let data = datagen::generate(&PriorConfig::default(), v(0.6), 50, 3).unwrap();
        let (lo, hi) = feasible_interval(&data, &tol()).unwrap();
        let a = log_likelihood_terms(&data, v(lo + 0.25 * (hi - lo)), &PriorConfig::default(), &tol()).unwrap();
        let b = log_likelihood_terms(&data, v(lo + 0.75 * (hi - lo)), &PriorConfig::default(), &tol()).unwrap();
        assert_eq!(a.log_prior[0], b.log_prior[0]);
        assert_eq!(a.log_prior[1], b.log_prior[1]);
        assert_ne!(a.log_prior[2], b.log_prior[2]);
    }

    #[test]
    fn evaluation_error_carries_sample_index() {
        let data = datagen::generate(&PriorConfig::default(), v(0.6), 200, 9).unwrap();
        match log_likelihood(&data, v(0.3), &PriorConfig::default()) {
            Err(LikelihoodError::Evaluation { index, v, .. }) => {
                assert!(index < 200);
                assert_eq!(v, 0.3);
            }
            other => panic!("expected an evaluation error, got {other:?}"),
        }
        assert!(log_likelihood(&data, v(0.6), &PriorConfig::default()).unwrap().is_finite());
    }

    #[test]
    fn uniform_phase_prior_reduces_to_jacobian_term() {
        let cfg = PriorConfig::uniform_phase();
        let data = datagen::generate(&cfg, v(0.45), 40, 5).unwrap();
        let total = dlogl_dv_total(&data, v(0.45), &cfg).unwrap();
        let sources = restore_sources(&data, v(0.45), &tol()).unwrap();
        let expected = -sources
            .iter()
            .map(|s| mixing::djg_dv_total(s, v(0.45)).unwrap() / mixing::jacobian(s, v(0.45)))
            .sum::<f64>()
            / sources.len() as f64;
        assert!((total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn variants_coincide_at_zero_phase() {
        let cfg = PriorConfig::default();
        let data: Vec<_> = [(0.2, 0.6), (0.35, 0.8), (0.4, 0.58)]
            .iter()
            .map(|&(r1, r2)| mixing::forward(&SourceVector::new(r1, r2, 0.0).unwrap(), v(0.4)).unwrap())
            .collect();
        let total = dlogl_dv_total(&data, v(0.4), &cfg).unwrap();
        let partial = dlogl_dv_partial_only(&data, v(0.4), &cfg).unwrap();
        assert!((total - partial).abs() < 1e-12);
    }

    #[test]
    fn closed_form_at_balanced_coupling() {
        // With 1 − 2v² = 0 only the spread terms survive.
        let cfg = PriorConfig::default();
        let vv = FRAC_1_SQRT_2;
        let s = SourceVector::new(0.3, 0.7, 0.4).unwrap();
        let x = mixing::forward(&s, v(vv)).unwrap();
        let back = mixing::invert(&x, v(vv)).unwrap();
        let (sin, cos) = back.delta.sin_cos();
        let scale = back.r1 * back.r2 * (1.0 - back.r1.powi(2)).sqrt() * (1.0 - back.r2.powi(2)).sqrt()
            * (1.0 - vv * vv).sqrt();
        let spread = back.r2.powi(2) - back.r1.powi(2);
        let psi = back.delta.tan();
        let expected = -psi * spread / (scale * cos) + spread * sin / (scale * cos * cos);
        let got = dlogl_dv_total(&[x], v(vv), &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn retain_regular_counts_exclusions() {
        let data = datagen::generate(&PriorConfig::default(), v(0.6), 300, 11).unwrap();
        let all = retain_regular(&data, &PriorConfig::default(), &[0.6], 0.0, &tol());
        assert_eq!(all.excluded, 0);
        let some = retain_regular(&data, &PriorConfig::default(), &[0.3], 0.05, &tol());
        assert!(some.excluded > 0 && some.excluded < 300);
        assert_eq!(some.excluded + some.observations.len(), 300);
    }

    #[test]
    fn feasible_interval_brackets_truth() {
        let data = datagen::generate(&PriorConfig::default(), v(0.6), 1000, 2).unwrap();
        let (lo, hi) = feasible_interval(&data, &tol()).unwrap();
        assert!(lo < 0.6 && 0.6 < hi);
        assert!(hi - lo < 0.01);
        assert!(log_likelihood(&data, v(lo + 1e-7), &PriorConfig::default()).is_ok());
        assert!(log_likelihood(&data, v(lo - 1e-6), &PriorConfig::default()).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("total".parse::<GradientVariant>(), Ok(GradientVariant::Total));
        assert_eq!("partial-only".parse::<GradientVariant>(), Ok(GradientVariant::PartialOnly));
        assert!("partial".parse::<GradientVariant>().is_err());
    }
}
