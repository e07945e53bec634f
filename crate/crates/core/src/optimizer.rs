//! Riemannian gradient descent with Armijo backtracking on `ES_m^n`.
//!
//! Each iteration takes `ξ = −grad f(B)`, stops once `‖ξ‖_F < τ`, and otherwise
//! accepts the first `ᾱβ^k` (k = 0, 1, …) whose retracted point satisfies
//! `f(B) − f(R_B(ᾱβ^k ξ)) ≥ σ ᾱβ^k ⟨ξ, ξ⟩`.
//!
//! The smooth-max sharpness is raised along a ladder of rungs, each rung
//! warm-started from the previous one's final point.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::manifold::{try_retract, RelaxedMatrix, TangentVector, NEG_TOL};
use crate::objective::{
    evaluate, riemannian_from, tangent_norm, value_and_riemannian_gradient, Evaluation,
    ObjectiveParams,
};

/// Consecutive iterations with negative entries before a warning is logged.
const NEGATIVE_STREAK_WARN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Initial step scale `ᾱ`.
    pub alpha_bar: f64,
    /// Backtracking contraction `β ∈ (0, 1)`.
    pub beta: f64,
    /// Armijo slope fraction `σ ∈ (0, 1)`.
    pub sigma: f64,
    /// Gradient-norm tolerance `τ`.
    pub tau: f64,
    /// Iteration cap per rung.
    pub max_iters: usize,
    pub max_backtracks: usize,
    /// Sharpness rungs measured on the normalised coherence scale `rγ ∈ [0, 1]`.
    /// Rung `a` runs the objective with `α = a / r`, so that `α·r²γ = a·rγ`.
    pub alpha_ladder: Vec<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha_bar: 1.0,
            beta: 0.5,
            sigma: 1e-4,
            tau: 1e-6,
            max_iters: 5000,
            max_backtracks: 60,
            alpha_ladder: vec![50.0, 200.0, 800.0],
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha_bar > 0.0 && self.alpha_bar.is_finite()) {
            return bad(format!("alpha_bar must be positive, got {}", self.alpha_bar));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.alpha_ladder.is_empty() {
            return bad("alpha_ladder must not be empty".into());
        }
        if self.alpha_ladder.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alpha_ladder entries must be finite and >= 0".into());
        }
        if self.alpha_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad("alpha_ladder must be strictly increasing".into());
        }
        Ok(())
    }

    /// Objective parameters of rung `rung` for column weight `r`.
    pub fn rung_params(&self, rung: usize, r: usize) -> ObjectiveParams {
        ObjectiveParams { alpha: self.alpha_ladder[rung] / r as f64, r }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeStatus {
    /// `‖grad f‖_F < τ`.
    Converged,
    IterationCap,
    /// Line search stalled with `‖grad f‖_F < 10τ`; accepted as soft convergence.
    NearStationaryStall,
    RetractionFailure,
    LineSearchStall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Global iteration counter across rungs.
    pub iter: usize,
    pub rung: usize,
    /// Objective at the current point.
    pub objective: f64,
    /// `‖grad f‖_F` at the current point.
    pub grad_norm: f64,
    /// Accepted step length `ᾱβ^k`; zero on the terminal record of a rung.
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    pub rung: usize,
    pub alpha: f64,
    pub steps: usize,
    pub status: OptimizeStatus,
    pub final_objective: f64,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub rungs: Vec<RungSummary>,
    pub status: Option<OptimizeStatus>,
}

impl IterationTrace {
    pub const CSV_HEADER: &'static str = "iter,alpha_rung,objective,grad_norm,step,backtracks";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{}",
                r.iter, r.rung, r.objective, r.grad_norm, r.step, r.backtracks
            )?;
        }
        Ok(())
    }

    /// Records belonging to one rung.
    pub fn rung_records(&self, rung: usize) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(move |r| r.rung == rung)
    }

    pub fn final_status(&self) -> Option<OptimizeStatus> {
        self.status
    }
}

/// Optimisation error with the trace recorded up to the failure.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct OptimizeFailure {
    pub error: Error,
    pub trace: IterationTrace,
    pub point: Option<RelaxedMatrix>,
}

impl From<Error> for OptimizeFailure {
    fn from(error: Error) -> Self {
        Self { error, trace: IterationTrace::default(), point: None }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub point: RelaxedMatrix,
    pub value: f64,
    pub step: f64,
    pub backtracks: usize,
}

/// Finds the smallest backtrack count `k` satisfying the Armijo inequality.
///
/// Trial steps whose retraction collapses onto the simplex centroid count as
/// rejected trials.
pub fn armijo_search(
    b: &RelaxedMatrix,
    xi: &[TangentVector],
    f0: f64,
    cfg: &OptimizerConfig,
    params: ObjectiveParams,
) -> Result<LineSearchOutcome> {
    search(b, xi, f0, cfg, params).map(|(out, _, _)| out)
}

/// Line search that also hands back the accepted point's evaluation and
/// column-major data, so the driver can reuse them for the next gradient.
fn search(
    b: &RelaxedMatrix,
    xi: &[TangentVector],
    f0: f64,
    cfg: &OptimizerConfig,
    params: ObjectiveParams,
) -> Result<(LineSearchOutcome, Evaluation, Vec<f64>)> {
    if xi.len() != b.n() {
        return Err(Error::Shape(format!("{} directions for {} columns", xi.len(), b.n())));
    }
    let xi_sq: f64 = xi.iter().map(TangentVector::norm_sq).sum();
    let mut any_retracted = false;
    for k in 0..=cfg.max_backtracks {
        let step = cfg.alpha_bar * cfg.beta.powi(k as i32);
        let trial: Option<Vec<_>> = b
            .columns()
            .iter()
            .zip(xi)
            .map(|(col, t)| {
                let s: Vec<f64> = t.values().iter().map(|v| v * step).collect();
                try_retract(col, &s)
            })
            .collect();
        let Some(cols) = trial else { continue };
        any_retracted = true;
        let point = RelaxedMatrix::new(cols)?;
        let data = point.to_column_major();
        let ev = evaluate(&data, point.m(), point.n(), params)?;
        let value = ev.value;
        if f0 - value >= cfg.sigma * step * xi_sq {
            return Ok((LineSearchOutcome { point, value, step, backtracks: k }, ev, data));
        }
    }
    if any_retracted {
        Err(Error::LineSearchStall { max_backtracks: cfg.max_backtracks, grad_norm: xi_sq.sqrt() })
    } else {
        Err(Error::RetractionFailure(cfg.max_backtracks))
    }
}

/// Runs the full sharpness ladder from `b0`.
pub fn optimize(
    b0: &RelaxedMatrix,
    cfg: &OptimizerConfig,
) -> std::result::Result<(RelaxedMatrix, IterationTrace), OptimizeFailure> {
    optimize_observed(b0, cfg, |_| {})
}

/// [`optimize`] that also hands `b0` and every accepted iterate to `observe`.
pub fn optimize_observed(
    b0: &RelaxedMatrix,
    cfg: &OptimizerConfig,
    mut observe: impl FnMut(&RelaxedMatrix),
) -> std::result::Result<(RelaxedMatrix, IterationTrace), OptimizeFailure> {
    cfg.validate()?;
    observe(b0);
    let r = b0.r();
    let mut b = b0.clone();
    let mut trace = IterationTrace::default();
    let mut iter = 0usize;

    for rung in 0..cfg.alpha_ladder.len() {
        let params = cfg.rung_params(rung, r);
        let (mut f, mut grad) = match value_and_riemannian_gradient(&b, params) {
            Ok(v) => v,
            Err(error) => return Err(OptimizeFailure { error, trace, point: Some(b) }),
        };
        let mut steps = 0usize;
        let mut negative_streak = 0usize;
        let mut record = |trace: &mut IterationTrace, f, g, step, backtracks| {
            trace.records.push(IterationRecord {
                iter,
                rung,
                objective: f,
                grad_norm: g,
                step,
                backtracks,
            });
            iter += 1;
        };

        let status = loop {
            let gnorm = tangent_norm(&grad);
            if gnorm < cfg.tau {
                record(&mut trace, f, gnorm, 0.0, 0);
                break OptimizeStatus::Converged;
            }
            if steps >= cfg.max_iters {
                record(&mut trace, f, gnorm, 0.0, 0);
                break OptimizeStatus::IterationCap;
            }
            let xi: Vec<TangentVector> = grad.iter().map(|t| t.scaled(-1.0)).collect();
            match search(&b, &xi, f, cfg, params) {
                Ok((out, ev, data)) => {
                    record(&mut trace, f, gnorm, out.step, out.backtracks);
                    b = out.point;
                    observe(&b);
                    steps += 1;
                    match riemannian_from(&b, &data, params, &ev) {
                        Ok(g) => {
                            f = ev.value;
                            grad = g;
                        }
                        Err(error) => {
                            trace.status = Some(OptimizeStatus::RetractionFailure);
                            return Err(OptimizeFailure { error, trace, point: Some(b) });
                        }
                    }
                    if b.min_entry() < NEG_TOL {
                        negative_streak += 1;
                        if negative_streak == NEGATIVE_STREAK_WARN {
                            log::warn!(
                                "rung {rung}: entries below {NEG_TOL:e} for {NEGATIVE_STREAK_WARN} consecutive iterations (min {:e})",
                                b.min_entry()
                            );
                        }
                    } else {
                        negative_streak = 0;
                    }
                    if steps.is_multiple_of(500) {
                        log::debug!("rung {rung} step {steps}: f={f:.6} |grad|={gnorm:.3e}");
                    }
                }
                Err(Error::LineSearchStall { .. }) if gnorm < 10.0 * cfg.tau => {
                    record(&mut trace, f, gnorm, 0.0, cfg.max_backtracks + 1);
                    break OptimizeStatus::NearStationaryStall;
                }
                Err(error) => {
                    record(&mut trace, f, gnorm, 0.0, cfg.max_backtracks + 1);
                    let status = match error {
                        Error::RetractionFailure(_) => OptimizeStatus::RetractionFailure,
                        _ => OptimizeStatus::LineSearchStall,
                    };
                    trace.status = Some(status);
                    trace.rungs.push(RungSummary {
                        rung,
                        alpha: params.alpha,
                        steps,
                        status,
                        final_objective: f,
                        final_grad_norm: gnorm,
                    });
                    return Err(OptimizeFailure { error, trace, point: Some(b) });
                }
            }
        };
        let gnorm = tangent_norm(&grad);
        log::info!(
            "rung {rung} (alpha={:.4}): {steps} steps, {status:?}, f={f:.6}, |grad|={gnorm:.3e}",
            params.alpha
        );
        trace.rungs.push(RungSummary {
            rung,
            alpha: params.alpha,
            steps,
            status,
            final_objective: f,
            final_grad_norm: gnorm,
        });
        trace.status = Some(status);
    }
    Ok((b, trace))
}
