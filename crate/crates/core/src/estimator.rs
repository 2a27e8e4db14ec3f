//! One-dimensional maximum-likelihood search for the coupling.
//!
//! Every observation restricts the couplings at which it can be inverted to
//! an interval, so the likelihood is supported on the intersection of those
//! intervals. The search region is that support, clipped to the configured
//! search domain. A coarse scan locates `+ → −` sign changes of `dL/dv`,
//! which are refined by bisection. An endpoint where the gradient points
//! outwards is also a candidate. On the support edge it is a legitimate
//! maximum of the likelihood, reported as [`MaximumKind::SupportEdge`]. On a
//! search-domain edge it is reported as [`EstimateError::NoInteriorMaximum`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{self, GradientVariant, LikelihoodError};
use crate::mixing::{MixingParam, ObservationVector, Tolerances};
use crate::priors::PriorConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("invalid search options: {0}")]
    Options(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("every scan point failed; first failure: {0}")]
    Scan(LikelihoodError),
    #[error("no coupling in the search domain inverts every sample: {0}")]
    Infeasible(LikelihoodError),
    #[error(transparent)]
    Evaluation(#[from] LikelihoodError),
    #[error("no interior maximum: best value is on the search boundary at v = {v_boundary} (L = {logl})")]
    NoInteriorMaximum {
        v_boundary: f64,
        logl: f64,
        grad: f64,
        n_evals: usize,
        excluded_samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Lower end of the search domain.
    pub lo: f64,
    /// Upper end of the search domain.
    pub hi: f64,
    /// Points in the coarse scan, endpoints included.
    pub scan_points: usize,
    pub gtol: f64,
    pub vtol: f64,
    pub max_iter: usize,
    /// Initial distance kept from a support edge.
    pub edge_inset: f64,
    pub gradient: GradientVariant,
    /// Drop samples that are not regular at the queried coupling instead of
    /// failing. Changes the objective; the count is reported.
    pub allow_exclusion: bool,
    #[serde(skip)]
    pub tolerances: Tolerances,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            lo: 0.05,
            hi: 0.95,
            scan_points: 33,
            gtol: 1e-8,
            vtol: 1e-10,
            max_iter: 200,
            edge_inset: 1e-9,
            gradient: GradientVariant::Total,
            allow_exclusion: false,
            tolerances: Tolerances::default(),
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let bad = |m: &str| Err(EstimateError::Options(m.to_string()));
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return bad("search domain must satisfy 0 < lo < hi < 1");
        }
        if self.scan_points < 2 {
            return bad("scan_points must be at least 2");
        }
        if !(self.vtol > 0.0 && self.gtol >= 0.0 && self.edge_inset > 0.0) {
            return bad("vtol and edge_inset must be positive, gtol non-negative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

/// Value and slope of the objective at one coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub v: f64,
    pub logl: f64,
    pub grad: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub v: f64,
    pub result: Result<Evaluation, LikelihoodError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaximumKind {
    /// Interior zero of the gradient.
    Stationary,
    /// Edge of the data-feasible couplings; the gradient does not vanish.
    SupportEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub v_hat: f64,
    pub logl_at_vhat: f64,
    pub grad_at_vhat: f64,
    pub n_evals: usize,
    pub excluded_samples: usize,
    pub bracket: (f64, f64),
    pub maximum: MaximumKind,
    /// `|grad| ≤ gtol` at a stationary maximum.
    pub converged: bool,
    /// Every `+ → −` sign change found by the scan, refined.
    pub stationary_points: Vec<f64>,
    /// Couplings at which every sample inverts, when computed.
    pub feasible: Option<(f64, f64)>,
}

struct Objective<'a> {
    data: &'a [ObservationVector],
    cfg: &'a PriorConfig,
    opts: &'a SearchOptions,
    evals: std::cell::Cell<usize>,
}

impl<'a> Objective<'a> {
    fn new(data: &'a [ObservationVector], cfg: &'a PriorConfig, opts: &'a SearchOptions) -> Self {
        Objective {
            data,
            cfg,
            opts,
            evals: std::cell::Cell::new(0),
        }
    }

    fn evaluate(&self, v: f64) -> Result<Evaluation, LikelihoodError> {
        self.evals.set(self.evals.get() + 1);
        let param = MixingParam::new(v).map_err(|e| LikelihoodError::Evaluation {
            index: 0,
            v,
            source: e.into(),
        })?;
        let tol = &self.opts.tolerances;
        let kept;
        let (data, excluded) = if self.opts.allow_exclusion {
            kept = likelihood::retain_regular(self.data, self.cfg, &[v], tol.near_singular_cos, tol);
            if kept.observations.is_empty() {
                return Err(LikelihoodError::AllExcluded { v });
            }
            (kept.observations.as_slice(), kept.excluded)
        } else {
            (self.data, 0)
        };
        Ok(Evaluation {
            v,
            logl: likelihood::log_likelihood_with(data, param, self.cfg, tol)?,
            grad: likelihood::dlogl_dv(data, param, self.cfg, tol, self.opts.gradient)?,
            excluded,
        })
    }
}

/// Evaluates `L` and `dL/dv` on a sorted grid inside `(0, 1)`.
pub fn scan(
    data: &[ObservationVector],
    cfg: &PriorConfig,
    grid: &[f64],
    opts: &SearchOptions,
) -> Result<Vec<ScanPoint>, EstimateError> {
    if let Some(v) = grid.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(EstimateError::Grid(format!("point {v} is outside (0, 1)")));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EstimateError::Grid("points must be strictly increasing".into()));
    }
    let objective = Objective::new(data, cfg, opts);
    let points: Vec<ScanPoint> = grid
        .iter()
        .map(|&v| ScanPoint {
            v,
            result: objective.evaluate(v),
        })
        .collect();
    if let Some(first) = points.first() {
        if points.iter().all(|p| p.result.is_err()) {
            return Err(EstimateError::Scan(first.result.clone().unwrap_err()));
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Edge {
    Support,
    Domain,
}

struct Candidate {
    eval: Evaluation,
    edge: Option<Edge>,
    bracket: (f64, f64),
}

/// Pushes a support edge inwards until every sample is regular there.
fn settle_edge(
    objective: &Objective,
    edge: f64,
    inward: f64,
    limit: f64,
) -> Result<(f64, Evaluation), LikelihoodError> {
    let mut inset = objective.opts.edge_inset;
    loop {
        let v = edge + inward * inset;
        match objective.evaluate(v) {
            Ok(e) => return Ok((v, e)),
            Err(err) if inset * 10.0 >= limit => return Err(err),
            Err(_) => inset *= 10.0,
        }
    }
}

/// Maximizes the log-likelihood in the coupling.
pub fn estimate_v(
    data: &[ObservationVector],
    cfg: &PriorConfig,
    opts: &SearchOptions,
) -> Result<EstimateResult, EstimateError> {
    opts.validate()?;
    if data.is_empty() {
        return Err(LikelihoodError::EmptyData.into());
    }
    let objective = Objective::new(data, cfg, opts);

    let (feasible, (lo, lo_edge), (hi, hi_edge)) = if opts.allow_exclusion {
        (None, (opts.lo, Edge::Domain), (opts.hi, Edge::Domain))
    } else {
        let (flo, fhi) =
            likelihood::feasible_interval(data, &opts.tolerances).map_err(EstimateError::Infeasible)?;
        let lo = if flo > opts.lo { (flo, Edge::Support) } else { (opts.lo, Edge::Domain) };
        let hi = if fhi < opts.hi { (fhi, Edge::Support) } else { (opts.hi, Edge::Domain) };
        if !(lo.0 < hi.0) {
            return Err(EstimateError::Infeasible(LikelihoodError::NoFeasibleCoupling {
                lo: lo.0,
                hi: hi.0,
            }));
        }
        (Some((flo, fhi)), lo, hi)
    };

    let width = hi - lo;
    let (a, first) = match lo_edge {
        Edge::Support => {
            let (v, e) = settle_edge(&objective, lo, 1.0, 0.25 * width)?;
            (v, Some(e))
        }
        Edge::Domain => (lo, None),
    };
    let (b, last) = match hi_edge {
        Edge::Support => {
            let (v, e) = settle_edge(&objective, hi, -1.0, 0.25 * width)?;
            (v, Some(e))
        }
        Edge::Domain => (hi, None),
    };

    let n = opts.scan_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| match k {
            0 => a,
            k if k == n - 1 => b,
            k => a + (b - a) * k as f64 / (n - 1) as f64,
        })
        .collect();
    let points: Vec<(f64, Option<Evaluation>)> = grid
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let known = match k {
                0 => first,
                k if k == n - 1 => last,
                _ => None,
            };
            (v, known.or_else(|| objective.evaluate(v).ok()))
        })
        .collect();
    let ok: Vec<(usize, Evaluation)> = points
        .iter()
        .enumerate()
        .filter_map(|(k, (_, e))| e.map(|e| (k, e)))
        .collect();
    if ok.is_empty() {
        return Err(EstimateError::Scan(
            objective.evaluate(grid[n / 2]).err().unwrap_or(LikelihoodError::EmptyData),
        ));
    }

    let mut candidates = Vec::new();
    let mut stationary_points = Vec::new();
    for pair in ok.windows(2) {
        let ((_, left), (_, right)) = (pair[0], pair[1]);
        if left.grad > 0.0 && right.grad <= 0.0 {
            let c = refine(&objective, left, right)?;
            stationary_points.push(c.eval.v);
            candidates.push(c);
        }
    }
    let (k0, e0) = ok[0];
    if e0.grad < 0.0 {
        candidates.push(Candidate {
            eval: e0,
            edge: Some(if k0 == 0 { lo_edge } else { Edge::Domain }),
            bracket: (lo, hi),
        });
    }
    let (k1, e1) = ok[ok.len() - 1];
    if e1.grad > 0.0 {
        candidates.push(Candidate {
            eval: e1,
            edge: Some(if k1 == n - 1 { hi_edge } else { Edge::Domain }),
            bracket: (lo, hi),
        });
    }
    let best = match candidates
        .into_iter()
        .max_by(|x, y| x.eval.logl.total_cmp(&y.eval.logl))
    {
        Some(best) => best,
        // flat gradient everywhere: take the best scanned value
        None => {
            let (_, e) = ok.iter().max_by(|x, y| x.1.logl.total_cmp(&y.1.logl)).copied().unwrap();
            Candidate {
                eval: e,
                edge: Some(Edge::Domain),
                bracket: (lo, hi),
            }
        }
    };

    let n_evals = objective.evals.get();
    let maximum = match best.edge {
        None => MaximumKind::Stationary,
        Some(Edge::Support) => MaximumKind::SupportEdge,
        Some(Edge::Domain) => {
            return Err(EstimateError::NoInteriorMaximum {
                v_boundary: best.eval.v,
                logl: best.eval.logl,
                grad: best.eval.grad,
                n_evals,
                excluded_samples: best.eval.excluded,
            })
        }
    };
    Ok(EstimateResult {
        v_hat: best.eval.v,
        logl_at_vhat: best.eval.logl,
        grad_at_vhat: best.eval.grad,
        n_evals,
        excluded_samples: best.eval.excluded,
        bracket: best.bracket,
        maximum,
        converged: maximum == MaximumKind::Stationary && best.eval.grad.abs() <= opts.gtol,
        stationary_points,
        feasible,
    })
}

/// Bisection on the gradient over a `+ → −` bracket. Falls back to
/// golden-section on `L` if the gradient cannot be evaluated.
fn refine(objective: &Objective, left: Evaluation, right: Evaluation) -> Result<Candidate, LikelihoodError> {
    let opts = objective.opts;
    let bracket = (left.v, right.v);
    let (mut a, mut b) = (left.v, right.v);
    for _ in 0..opts.max_iter {
        if b - a <= opts.vtol {
            break;
        }
        let m = 0.5 * (a + b);
        match objective.evaluate(m) {
            Ok(e) if e.grad == 0.0 => {
                return Ok(Candidate {
                    eval: e,
                    edge: None,
                    bracket,
                })
            }
            Ok(e) if e.grad > 0.0 => a = m,
            Ok(_) => b = m,
            Err(_) => {
                let v = golden_section_max(|v| objective.evaluate(v).map(|e| e.logl), a, b, opts.vtol, opts.max_iter)?;
                return Ok(Candidate {
                    eval: objective.evaluate(v)?,
                    edge: None,
                    bracket,
                });
            }
        }
    }
    Ok(Candidate {
        eval: objective.evaluate(0.5 * (a + b))?,
        edge: None,
        bracket,
    })
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_section_max<F, E>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..max_iter {
        if b - a <= tol {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;

    fn v(x: f64) -> MixingParam {
        MixingParam::new(x).unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max::<_, ()>(|x| Ok(-(x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-10, 500).unwrap();
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn options_validation() {
        let mut o = SearchOptions::default();
        assert!(o.validate().is_ok());
        o.lo = 0.0;
        assert!(o.validate().is_err());
        let o = SearchOptions {
            scan_points: 1,
            ..SearchOptions::default()
        };
        assert!(o.validate().is_err());
    }

    #[test]
    fn scan_single_point_passthrough() {
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 100, 8).unwrap();
        let pts = scan(&data, &cfg, &[0.6], &SearchOptions::default()).unwrap();
        assert_eq!(pts.len(), 1);
        let e = pts[0].result.as_ref().unwrap();
        assert_eq!(e.logl, likelihood::log_likelihood(&data, v(0.6), &cfg).unwrap());
        assert_eq!(e.grad, likelihood::dlogl_dv_total(&data, v(0.6), &cfg).unwrap());
    }

    #[test]
    fn scan_reports_failed_points_and_rejects_bad_grids() {
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 100, 8).unwrap();
        let pts = scan(&data, &cfg, &[0.2, 0.6], &SearchOptions::default()).unwrap();
        assert!(pts[0].result.is_err());
        assert!(pts[1].result.is_ok());
        assert!(matches!(
            scan(&data, &cfg, &[0.2, 0.3], &SearchOptions::default()),
            Err(EstimateError::Scan(_))
        ));
        assert!(matches!(
            scan(&data, &cfg, &[0.5, 0.4], &SearchOptions::default()),
            Err(EstimateError::Grid(_))
        ));
        assert!(matches!(
            scan(&data, &cfg, &[0.5, 1.0], &SearchOptions::default()),
            Err(EstimateError::Grid(_))
        ));
    }

    #[test]
    fn support_edge_estimate_is_near_truth() {
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 2000, 21).unwrap();
        let r = estimate_v(&data, &cfg, &SearchOptions::default()).unwrap();
        assert_eq!(r.maximum, MaximumKind::SupportEdge);
        let (flo, fhi) = r.feasible.unwrap();
        assert!(r.bracket.0 < r.v_hat && r.v_hat < r.bracket.1);
        assert!(flo < r.v_hat && r.v_hat < fhi);
        assert!((r.v_hat - 0.6).abs() < 2e-3, "{}", r.v_hat);
        assert!(!r.converged);
    }

    #[test]
    fn estimate_is_deterministic() {
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 500, 5).unwrap();
        let a = estimate_v(&data, &cfg, &SearchOptions::default()).unwrap();
        let b = estimate_v(&data, &cfg, &SearchOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_sample_runs() {
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 1, 3).unwrap();
        match estimate_v(&data, &cfg, &SearchOptions::default()) {
            Ok(r) => assert!(r.v_hat > 0.05 && r.v_hat < 0.95),
            Err(EstimateError::NoInteriorMaximum { v_boundary, .. }) => {
                assert!(v_boundary == 0.05 || v_boundary == 0.95)
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn exclusion_mode_reports_boundary() {
        // With exclusion the objective is evaluated on the whole domain; under
        // the default priors dL/dv < 0 below 1/√2 and > 0 above it, so the
        // best value sits on a domain edge.
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, v(0.6), 300, 5).unwrap();
        let opts = SearchOptions {
            allow_exclusion: true,
            ..SearchOptions::default()
        };
        match estimate_v(&data, &cfg, &opts) {
            Err(EstimateError::NoInteriorMaximum { excluded_samples, .. }) => assert!(excluded_samples > 0),
            other => panic!("expected NoInteriorMaximum, got {other:?}"),
        }
    }
}
