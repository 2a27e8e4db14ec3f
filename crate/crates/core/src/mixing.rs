//! Closed-form two-qubit mixing model.
//!
//! Sources `s = (r1, r2, Δ)` are mapped to observations `x = (p1, p2, p3)`
//! through a single coupling parameter `v`:
//!
//! ```text
//! p1 = r1² r2²
//! p2 = (1 − r1²)(1 − r2²)
//! p3 = r1²(1 − r2²)(1 − v²) + (1 − r1²) r2² v² − 2 r1 r2 √(1−r1²) √(1−r2²) √(1−v²) v sin Δ
//! ```
//!
//! The module also provides the analytic inverse on the canonical branch
//! (`r1 < r2`, `|Δ| < π/2`) and every per-sample derivative the likelihood
//! gradient is assembled from.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the mixing model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} = {value} violates the domain: {reason}")]
    Domain {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("singular mixture: discriminant {discriminant:e} is within the degeneracy tolerance (r1 ≈ r2)")]
    SingularMixture { discriminant: f64 },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("inconsistent observation: |q| = {q_abs} exceeds 1 at v = {v}")]
    InconsistentObservation { q_abs: f64, v: f64 },
    #[error("near-singular phase: |cos Δ| = {cos_abs:e} is below the threshold")]
    NearSingularPhase { cos_abs: f64 },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Numerical thresholds separating modelling singularities from float noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute floor on the amplitude-quadratic discriminant.
    pub degeneracy: f64,
    /// Slack allowed on `|q| ≤ 1` before the arcsine argument is rejected.
    pub clamp: f64,
    /// Minimum `|cos Δ|` accepted for a restored phase.
    pub near_singular_cos: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            degeneracy: 1e-12,
            clamp: 1e-9,
            near_singular_cos: 1e-8,
        }
    }
}

/// Latent source triple `(r1, r2, Δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceVector {
    pub r1: f64,
    pub r2: f64,
    pub delta: f64,
}

impl SourceVector {
    pub fn new(r1: f64, r2: f64, delta: f64) -> Result<Self> {
        let s = SourceVector { r1, r2, delta };
        s.validate()?;
        Ok(s)
    }

    /// Checks the canonical-domain invariants. Boundary values are rejected.
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("r1", self.r1), ("r2", self.r2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ModelError::Domain {
                    field,
                    value,
                    reason: "amplitude must lie in (0, 1)",
                });
            }
        }
        if !(self.r1 < self.r2) {
            return Err(ModelError::Domain {
                field: "r1",
                value: self.r1,
                reason: "canonical ordering requires r1 < r2",
            });
        }
        if !(self.delta > -FRAC_PI_2 && self.delta < FRAC_PI_2) {
            return Err(ModelError::Domain {
                field: "delta",
                value: self.delta,
                reason: "phase must lie in (-pi/2, pi/2)",
            });
        }
        Ok(())
    }
}

/// Observed triple `(p1, p2, p3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl ObservationVector {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let x = ObservationVector { p1, p2, p3 };
        x.validate()?;
        Ok(x)
    }

    /// Checks positivity, `p3 ∈ [0, 1]`, and that the amplitude quadratic has
    /// two distinct roots inside `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(&Tolerances::default())
    }

    pub fn validate_with(&self, tol: &Tolerances) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p3) {
            return Err(ModelError::Domain {
                field: "p3",
                value: self.p3,
                reason: "p3 must lie in [0, 1]",
            });
        }
        amplitude_roots(self, tol).map(|_| ())
    }
}

/// Coupling parameter `v ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MixingParam(f64);

impl MixingParam {
    pub fn new(v: f64) -> Result<Self> {
        if v > 0.0 && v < 1.0 {
            Ok(MixingParam(v))
        } else {
            Err(ModelError::Domain {
                field: "v",
                value: v,
                reason: "coupling must lie in (0, 1)",
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MixingParam {
    type Error = ModelError;
    fn try_from(v: f64) -> Result<Self> {
        MixingParam::new(v)
    }
}

impl From<MixingParam> for f64 {
    fn from(v: MixingParam) -> f64 {
        v.0
    }
}

/// Factors shared by the closed-form expressions.
struct Factors {
    r1: f64,
    r2: f64,
    /// √(1 − r1²)
    a: f64,
    /// √(1 − r2²)
    b: f64,
    v: f64,
    /// √(1 − v²)
    c: f64,
    /// r2² − r1²
    spread: f64,
    sin: f64,
    cos: f64,
}

impl Factors {
    fn new(s: &SourceVector, v: MixingParam) -> Self {
        let v = v.get();
        let (sin, cos) = s.delta.sin_cos();
        Factors {
            r1: s.r1,
            r2: s.r2,
            a: (1.0 - s.r1 * s.r1).sqrt(),
            b: (1.0 - s.r2 * s.r2).sqrt(),
            v,
            c: (1.0 - v * v).sqrt(),
            spread: s.r2 * s.r2 - s.r1 * s.r1,
            sin,
            cos,
        }
    }

    /// 8 r1² r2² (r2² − r1²) √(1−r1²) √(1−r2²)
    fn jacobian_prefactor(&self) -> f64 {
        8.0 * self.r1 * self.r1 * self.r2 * self.r2 * self.spread * self.a * self.b
    }

    /// r1 r2 √(1−r1²) √(1−r2²) √(1−v²)
    fn phase_scale(&self) -> f64 {
        self.r1 * self.r2 * self.a * self.b * self.c
    }
}

fn p3_of(r1: f64, r2: f64, delta: f64, v: f64) -> f64 {
    let r1s = r1 * r1;
    let r2s = r2 * r2;
    let c = (1.0 - v * v).sqrt();
    r1s * (1.0 - r2s) * (1.0 - v * v) + (1.0 - r1s) * r2s * v * v
        - 2.0 * r1 * r2 * (1.0 - r1s).sqrt() * (1.0 - r2s).sqrt() * c * v * delta.sin()
}

/// Forward mixing `x = g(s, v)`.
pub fn forward(s: &SourceVector, v: MixingParam) -> Result<ObservationVector> {
    s.validate()?;
    Ok(forward_unchecked(s, v))
}

/// Forward mixing without the canonical-domain check on `s`. Used by the
/// finite-difference oracles, which step off the canonical branch.
pub fn forward_unchecked(s: &SourceVector, v: MixingParam) -> ObservationVector {
    let r1s = s.r1 * s.r1;
    let r2s = s.r2 * s.r2;
    ObservationVector {
        p1: r1s * r2s,
        p2: (1.0 - r1s) * (1.0 - r2s),
        p3: p3_of(s.r1, s.r2, s.delta, v.get()),
    }
}

/// Jacobian determinant `det ∂g/∂s`. Pure formula; strictly positive on the
/// canonical domain.
pub fn jacobian(s: &SourceVector, v: MixingParam) -> f64 {
    let f = Factors::new(s, v);
    f.jacobian_prefactor() * f.c * f.v * f.cos
}

/// Ordered roots `(r1², r2²)` of `t² − (1 + p1 − p2) t + p1 = 0`.
fn amplitude_roots(x: &ObservationVector, tol: &Tolerances) -> Result<(f64, f64)> {
    if !(x.p1 > 0.0) || !(x.p2 > 0.0) {
        return Err(ModelError::InvalidObservation(format!(
            "p1 = {} and p2 = {} must both be positive",
            x.p1, x.p2
        )));
    }
    let sum = 1.0 + x.p1 - x.p2;
    let disc = sum * sum - 4.0 * x.p1;
    if !(disc > tol.degeneracy) {
        return Err(ModelError::SingularMixture { discriminant: disc });
    }
    // sum > 0 whenever the roots are positive; the product of the roots is p1.
    let hi = 0.5 * (sum + disc.sqrt());
    let lo = x.p1 / hi;
    if !(lo > 0.0 && hi < 1.0) {
        return Err(ModelError::InvalidObservation(format!(
            "amplitude roots ({lo}, {hi}) are not inside (0, 1)"
        )));
    }
    Ok((lo, hi))
}

/// Restores `(r1, r2)` from `(p1, p2)`. Independent of `v`.
pub fn invert_amplitudes(x: &ObservationVector) -> Result<(f64, f64)> {
    invert_amplitudes_with(x, &Tolerances::default())
}

pub fn invert_amplitudes_with(x: &ObservationVector, tol: &Tolerances) -> Result<(f64, f64)> {
    let (lo, hi) = amplitude_roots(x, tol)?;
    Ok((lo.sqrt(), hi.sqrt()))
}

/// Outcome of the phase restoration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSolution {
    pub delta: f64,
    /// Arcsine argument after clamping.
    pub q: f64,
    /// `|cos Δ|` fell below `near_singular_cos`.
    pub near_singular: bool,
}

/// Solves the `p3` equation for `Δ` on the principal arcsine branch.
pub fn invert_phase(
    x: &ObservationVector,
    r1: f64,
    r2: f64,
    v: MixingParam,
) -> Result<PhaseSolution> {
    invert_phase_with(x, r1, r2, v, &Tolerances::default())
}

pub fn invert_phase_with(
    x: &ObservationVector,
    r1: f64,
    r2: f64,
    v: MixingParam,
    tol: &Tolerances,
) -> Result<PhaseSolution> {
    let vv = v.get();
    let r1s = r1 * r1;
    let r2s = r2 * r2;
    let c = (1.0 - vv * vv).sqrt();
    let numer = r1s * (1.0 - r2s) * (1.0 - vv * vv) + (1.0 - r1s) * r2s * vv * vv - x.p3;
    let denom = 2.0 * r1 * r2 * (1.0 - r1s).sqrt() * (1.0 - r2s).sqrt() * c * vv;
    let mut q = numer / denom;
    if !q.is_finite() {
        return Err(ModelError::InvalidObservation(format!(
            "phase argument is not finite (denominator {denom:e})"
        )));
    }
    if q.abs() > 1.0 {
        if q.abs() > 1.0 + tol.clamp {
            return Err(ModelError::InconsistentObservation { q_abs: q.abs(), v: vv });
        }
        q = q.signum();
    }
    let delta = q.asin();
    Ok(PhaseSolution {
        delta,
        q,
        near_singular: delta.cos().abs() < tol.near_singular_cos,
    })
}

/// Full source restoration `s = g⁻¹(x, v)` on the canonical branch.
pub fn invert(x: &ObservationVector, v: MixingParam) -> Result<SourceVector> {
    invert_with(x, v, &Tolerances::default())
}

pub fn invert_with(x: &ObservationVector, v: MixingParam, tol: &Tolerances) -> Result<SourceVector> {
    let (r1, r2) = invert_amplitudes_with(x, tol)?;
    let phase = invert_phase_with(x, r1, r2, v, tol)?;
    if phase.near_singular {
        return Err(ModelError::NearSingularPhase {
            cos_abs: phase.delta.cos().abs(),
        });
    }
    Ok(SourceVector {
        r1,
        r2,
        delta: phase.delta,
    })
}

/// Range of couplings `[v_lo, v_hi]` at which `x` can be inverted, i.e. where
/// the arcsine argument satisfies `|q| ≤ 1`.
///
/// With `w = v²`, `|q| ≤ 1` is the quadratic inequality
/// `(β² + B²) w² + (2βd − B²) w + d² ≤ 0`, where `β = r2² − r1²`,
/// `B = 2 r1 r2 √(1−r1²) √(1−r2²)` and `d = r1²(1 − r2²) − p3`.
pub fn feasible_coupling_range(x: &ObservationVector) -> Result<(f64, f64)> {
    feasible_coupling_range_with(x, &Tolerances::default())
}

pub fn feasible_coupling_range_with(x: &ObservationVector, tol: &Tolerances) -> Result<(f64, f64)> {
    let (r1, r2) = invert_amplitudes_with(x, tol)?;
    let r1s = r1 * r1;
    let r2s = r2 * r2;
    let beta = r2s - r1s;
    let big_b = 2.0 * r1 * r2 * (1.0 - r1s).sqrt() * (1.0 - r2s).sqrt();
    let d = r1s * (1.0 - r2s) - x.p3;
    let lead = beta * beta + big_b * big_b;
    // disc / 4 = B² (B² − 4 d (β + d)) / 4
    let inner = big_b * big_b - 4.0 * d * (beta + d);
    if inner < 0.0 {
        return Err(ModelError::InconsistentObservation {
            q_abs: f64::INFINITY,
            v: f64::NAN,
        });
    }
    let half_sum = big_b * big_b - 2.0 * beta * d;
    let w_hi = (half_sum + big_b * inner.sqrt()) / (2.0 * lead);
    let w_lo = if w_hi > 0.0 { d * d / (lead * w_hi) } else { 0.0 };
    Ok((w_lo.clamp(0.0, 1.0).sqrt(), w_hi.clamp(0.0, 1.0).sqrt()))
}

/// Observation-side context held fixed in the phase constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintContext {
    pub r1: f64,
    pub r2: f64,
    pub p3: f64,
}

/// `F(s3, v)`: left side of the `p3` mixing equation minus the observed `p3`.
/// Zero exactly on the inversion manifold.
pub fn constraint_residual(s3: f64, v: MixingParam, ctx: &ConstraintContext) -> f64 {
    p3_of(ctx.r1, ctx.r2, s3, v.get()) - ctx.p3
}

/// `∂F/∂s3 = −2 r1 r2 √(1−r1²) √(1−r2²) √(1−v²) v cos Δ`.
pub fn constraint_ds3(s: &SourceVector, v: MixingParam) -> f64 {
    let f = Factors::new(s, v);
    -2.0 * f.phase_scale() * f.v * f.cos
}

/// `∂F/∂v = 2v (r2² − r1²) − 2 r1 r2 √(1−r1²) √(1−r2²) (1 − 2v²)/√(1−v²) sin Δ`.
pub fn constraint_dv(s: &SourceVector, v: MixingParam) -> f64 {
    let f = Factors::new(s, v);
    2.0 * f.v * f.spread
        - 2.0 * f.r1 * f.r2 * f.a * f.b * (1.0 - 2.0 * f.v * f.v) / f.c * f.sin
}

fn check_phase(s: &SourceVector, tol: &Tolerances) -> Result<()> {
    let cos_abs = s.delta.cos().abs();
    if cos_abs < tol.near_singular_cos {
        Err(ModelError::NearSingularPhase { cos_abs })
    } else {
        Ok(())
    }
}

/// Implicit derivative `ds3/dv` of the restored phase at fixed observations.
pub fn ds3_dv(s: &SourceVector, v: MixingParam) -> Result<f64> {
    ds3_dv_with(s, v, &Tolerances::default())
}

pub fn ds3_dv_with(s: &SourceVector, v: MixingParam, tol: &Tolerances) -> Result<f64> {
    check_phase(s, tol)?;
    let f = Factors::new(s, v);
    Ok(f.spread / (f.phase_scale() * f.cos)
        - (1.0 - 2.0 * f.v * f.v) * f.sin / ((1.0 - f.v * f.v) * f.v * f.cos))
}

/// Partial derivative of the Jacobian in `v` with the sources held fixed.
pub fn djg_dv_partial(s: &SourceVector, v: MixingParam) -> f64 {
    let f = Factors::new(s, v);
    f.jacobian_prefactor() * (1.0 - 2.0 * f.v * f.v) / f.c * f.cos
}

/// Partial derivative of the Jacobian in the phase `Δ`.
pub fn djg_ds3(s: &SourceVector, v: MixingParam) -> f64 {
    let f = Factors::new(s, v);
    -f.jacobian_prefactor() * f.c * f.v * f.sin
}

/// Total derivative of the Jacobian along `v`, including the indirect
/// dependency of the restored phase on `v`. Closed form.
pub fn djg_dv_total(s: &SourceVector, v: MixingParam) -> Result<f64> {
    djg_dv_total_with(s, v, &Tolerances::default())
}

pub fn djg_dv_total_with(s: &SourceVector, v: MixingParam, tol: &Tolerances) -> Result<f64> {
    check_phase(s, tol)?;
    let f = Factors::new(s, v);
    let tan = f.sin / f.cos;
    Ok(f.jacobian_prefactor() * (1.0 - 2.0 * f.v * f.v) / f.c / f.cos
        - 8.0 * f.r1 * f.r2 * f.spread * f.spread * f.v * tan)
}

/// `ds1/dv` and `ds2/dv`: the amplitudes do not depend on the coupling.
pub const DS1_DV: f64 = 0.0;
pub const DS2_DV: f64 = 0.0;
