//! Finite-difference, determinant and quadrature oracles.
//!
//! None of these use the analytic derivative formulas; they only evaluate the
//! forward model, the inversion and the log-likelihood, so they can be used
//! to check every closed form independently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{self, GradientVariant};
use crate::mixing::{self, MixingParam, ObservationVector, SourceVector, Tolerances};
use crate::priors::PriorConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("step {h} leaves the source domain along {axis}; shrink the step")]
    DomainTooTight { axis: &'static str, h: f64 },
}

/// Central difference `(f(v + h) − f(v − h)) / 2h`.
pub fn central_diff<F, E>(mut f: F, v: f64, h: f64) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    Ok((f(v + h)? - f(v - h)?) / (2.0 * h))
}

/// One Richardson step on the central difference: `(4 D(h/2) − D(h)) / 3`.
pub fn central_diff_richardson<F, E>(mut f: F, v: f64, h: f64) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let coarse = central_diff(&mut f, v, h)?;
    let fine = central_diff(&mut f, v, 0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Central-difference matrix `∂g_i/∂s_j` of an arbitrary map `R³ → R³`.
pub fn fd_matrix<G>(g: G, s: [f64; 3], h: f64) -> [[f64; 3]; 3]
where
    G: Fn([f64; 3]) -> [f64; 3],
{
    let mut m = [[0.0; 3]; 3];
    for j in 0..3 {
        let (mut up, mut down) = (s, s);
        up[j] += h;
        down[j] -= h;
        let (gu, gd) = (g(up), g(down));
        for i in 0..3 {
            m[i][j] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    m
}

/// Determinant of the central-difference Jacobian matrix of the mixing map.
pub fn fd_jacobian_det(s: &SourceVector, v: MixingParam, h: f64) -> Result<f64, ValidationError> {
    let axes = [("r1", s.r1), ("r2", s.r2)];
    for (axis, value) in axes {
        if !(value - h > 0.0 && value + h < 1.0) {
            return Err(ValidationError::DomainTooTight { axis, h });
        }
    }
    if !(s.delta.abs() + h < std::f64::consts::FRAC_PI_2) {
        return Err(ValidationError::DomainTooTight { axis: "delta", h });
    }
    let g = |u: [f64; 3]| {
        let x = mixing::forward_unchecked(
            &SourceVector {
                r1: u[0],
                r2: u[1],
                delta: u[2],
            },
            v,
        );
        [x.p1, x.p2, x.p3]
    };
    Ok(det3(&fd_matrix(g, [s.r1, s.r2, s.delta], h)))
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Settings for [`gradient_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditOptions {
    pub fd_step: f64,
    pub richardson: bool,
    pub rel_floor: f64,
    /// Samples with `|cos Δ|` below this at `v` or `v ± h` are skipped.
    pub min_cos: f64,
    #[serde(skip)]
    pub tolerances: Tolerances,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            fd_step: 1e-5,
            richardson: false,
            rel_floor: 1e-12,
            min_cos: 0.05,
            tolerances: Tolerances::default(),
        }
    }
}

/// Analytic gradient against the finite difference of the log-likelihood at
/// one coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub v: f64,
    pub variant: GradientVariant,
    pub analytic: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub skipped: usize,
    /// Set when the point could not be evaluated; the numbers are then NaN.
    pub error: Option<String>,
}

impl GradientReport {
    fn failed(v: f64, variant: GradientVariant, skipped: usize, error: String) -> Self {
        GradientReport {
            v,
            variant,
            analytic: f64::NAN,
            fd: f64::NAN,
            abs_err: f64::NAN,
            rel_err: f64::NAN,
            skipped,
            error: Some(error),
        }
    }
}

const VARIANTS: [GradientVariant; 2] = [GradientVariant::Total, GradientVariant::PartialOnly];

/// For every grid point, one report per gradient variant against the same
/// finite-difference value. Failures are recorded, never raised.
pub fn gradient_audit(
    data: &[ObservationVector],
    cfg: &PriorConfig,
    grid: &[f64],
    opts: &AuditOptions,
) -> Vec<GradientReport> {
    let tol = &opts.tolerances;
    let h = opts.fd_step;
    let mut reports = Vec::with_capacity(2 * grid.len());
    for &v in grid {
        let regular = likelihood::retain_regular(data, cfg, &[v - h, v, v + h], opts.min_cos, tol);
        let skipped = regular.excluded;
        let subset = &regular.observations;
        let param = match MixingParam::new(v) {
            Ok(p) if v - h > 0.0 && v + h < 1.0 => p,
            _ => {
                let msg = format!("v = {v} with step {h} leaves (0, 1)");
                reports.extend(VARIANTS.map(|var| GradientReport::failed(v, var, skipped, msg.clone())));
                continue;
            }
        };
        if subset.is_empty() {
            let msg = "no regular samples".to_string();
            reports.extend(VARIANTS.map(|var| GradientReport::failed(v, var, skipped, msg.clone())));
            continue;
        }
        let logl = |u: f64| {
            MixingParam::new(u)
                .map_err(|e| e.to_string())
                .and_then(|u| likelihood::log_likelihood_with(subset, u, cfg, tol).map_err(|e| e.to_string()))
        };
        let fd = if opts.richardson {
            central_diff_richardson(logl, v, h)
        } else {
            central_diff(logl, v, h)
        };
        for variant in VARIANTS {
            let analytic = likelihood::dlogl_dv(subset, param, cfg, tol, variant).map_err(|e| e.to_string());
            reports.push(match (&fd, analytic) {
                (Ok(fd), Ok(analytic)) => {
                    let abs_err = (analytic - fd).abs();
                    GradientReport {
                        v,
                        variant,
                        analytic,
                        fd: *fd,
                        abs_err,
                        rel_err: abs_err / fd.abs().max(opts.rel_floor),
                        skipped,
                        error: None,
                    }
                }
                (Err(e), _) => GradientReport::failed(v, variant, skipped, e.clone()),
                (_, Err(e)) => GradientReport::failed(v, variant, skipped, e),
            });
        }
    }
    reports
}
