use serde::{Deserialize, Serialize};

use super::objective::{evaluate, Problem};
use super::{OptimizerConfig, TransformParams};
use crate::error::{Error, Result};

/// Objective components at one iteration, before that iteration's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub dice_ce: f64,
    pub nmi: f64,
    pub reg: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct LocalResult {
    /// Parameters with the lowest total loss seen.
    pub params: TransformParams,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub best_iter: usize,
}

/// Adam on every entry of the flat parameter vector with a constant learning
/// rate. Stops once the NMI term changes by less than `cfg.rtol` (relative)
/// on `cfg.patience` consecutive iterations, or after `cfg.max_iters`
/// updates. `|s_z|` is projected back into `cfg.scale_bounds` after each
/// step.
pub fn optimize_local(problem: &Problem, init: &TransformParams, cfg: &OptimizerConfig) -> Result<LocalResult> {
    cfg.validate()?;
    init.validate(cfg.scale_bounds)?;
    let mut params = init.clone();
    let mut x = params.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut prev_nmi: Option<f64> = None;
    let mut calm = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..=cfg.max_iters {
        let eval =
            evaluate(problem, &params, cfg.alpha, cfg.extent_penalty, it < cfg.max_iters).map_err(|e| match e {
                Error::NonFiniteLoss { component, .. } => Error::NonFiniteLoss { component, iteration: it },
                other => other,
            })?;
        let l = eval.loss;
        trace.push(TraceRow {
            iter: it,
            total: l.total,
            dice_ce: l.dice_ce,
            nmi: l.nmi,
            reg: l.reg,
            penalty: l.penalty,
        });
        if l.total < best.0 {
            best = (l.total, params.clone(), it);
        }
        if let Some(prev) = prev_nmi {
            let rel = (l.nmi - prev).abs() / prev.abs().max(1e-12);
            calm = if rel < cfg.rtol { calm + 1 } else { 0 };
        }
        prev_nmi = Some(l.nmi);
        if calm >= cfg.patience {
            converged = true;
            break;
        }
        let Some(g) = eval.gradient else { break };

        iterations = it + 1;
        let t = iterations as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..x.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps) + cfg.weight_decay * x[i];
            x[i] -= cfg.learning_rate * step;
        }
        let sign = if x[0] < 0.0 { -1.0 } else { 1.0 };
        x[0] = sign * x[0].abs().clamp(cfg.scale_bounds[0], cfg.scale_bounds[1]);
        params.set_from_slice(&x)?;
    }
    log::debug!(
        "local optimization: {} iterations, converged={converged}, best total {:.6} at {}",
        iterations,
        best.0,
        best.2
    );
    Ok(LocalResult { params: best.1, trace, iterations, converged, best_iter: best.2 })
}
