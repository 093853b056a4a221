//! Relaxed group-wise splitting update.
//!
//! Each epoch the auxiliary variables u_g are recomputed as the proximal
//! projection of the current weights; every step then follows
//!
//!   w <- w - alpha * grad_f(w) - alpha * beta * (w - u)
//!
//! where grad_f adds the group-Lasso subgradient lambda_l * w_g / ||w_g||
//! (zero at zero) on regularized groups. Non-regularized parameters take a
//! plain gradient step. With beta = 0 and lambda_l = 0 the update reduces
//! bit-exactly to plain gradient descent.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::GradMap;

use super::partition::GroupPartition;
use super::prox::{prox_gl, prox_gl0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Gl0,
    Gl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RgsmConfig {
    /// Gradient-descent learning rate (alpha > 0).
    pub alpha: f32,
    /// Relaxation coefficient pulling weights toward the split variables.
    pub beta_split: f32,
    /// Proximal threshold parameter.
    pub lambda: f32,
    /// Weight of the group-Lasso term inside the objective.
    pub lambda_l: f32,
    /// Which proximal operator computes the split variables.
    pub penalty: PenaltyKind,
    /// Recompute u every step instead of once per epoch.
    pub u_every_step: bool,
}

impl Default for RgsmConfig {
    fn default() -> Self {
        RgsmConfig {
            alpha: 0.05,
            beta_split: 0.1,
            lambda: 4e-2,
            lambda_l: 1e-6,
            penalty: PenaltyKind::Gl0,
            u_every_step: false,
        }
    }
}

impl RgsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Config("rgsm alpha must be positive".into()));
        }
        for (name, v) in
            [("beta_split", self.beta_split), ("lambda", self.lambda), ("lambda_l", self.lambda_l)]
        {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("rgsm {name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Auxiliary split variables, one buffer per regularized weight matrix.
/// Each buffer equals the proximal projection of that matrix at the moment
/// it was last recomputed.
#[derive(Debug, Clone, Default)]
pub struct SplitState {
    u: IndexMap<String, Vec<f32>>,
}

impl SplitState {
    pub fn get(&self, layer: &str) -> Option<&[f32]> {
        self.u.get(layer).map(Vec::as_slice)
    }
}

/// Exact penalty value of a weight matrix under its partition.
pub fn penalty_value(w: &[f32], partition: &GroupPartition, kind: PenaltyKind) -> f64 {
    let mut total = 0.0;
    for g in 0..partition.num_groups() {
        let norm = partition.group_norm(w, g);
        match kind {
            PenaltyKind::Gl0 => {
                if norm > 0.0 {
                    total += 1.0;
                }
            }
            PenaltyKind::Gl => total += norm,
        }
    }
    total
}

pub struct RgsmOptimizer {
    cfg: RgsmConfig,
    partitions: Vec<GroupPartition>,
    state: SplitState,
}

impl RgsmOptimizer {
    /// Builds the optimizer and computes the initial split variables from
    /// the starting weights.
    pub fn new(
        cfg: RgsmConfig,
        partitions: Vec<GroupPartition>,
        params: &ModelParams<f32>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut opt = RgsmOptimizer { cfg, partitions, state: SplitState::default() };
        opt.recompute_split(params)?;
        Ok(opt)
    }

    pub fn config(&self) -> &RgsmConfig {
        &self.cfg
    }

    pub fn partitions(&self) -> &[GroupPartition] {
        &self.partitions
    }

    pub fn state(&self) -> &SplitState {
        &self.state
    }

    /// u = Prox_{penalty, lambda}(w), column-group-wise, on every
    /// regularized matrix. Called once per epoch boundary (or every step
    /// when `u_every_step` is set).
    pub fn recompute_split(&mut self, params: &ModelParams<f32>) -> Result<()> {
        let lambda = self.cfg.lambda as f64;
        for p in self.partitions.iter().filter(|p| p.regularized) {
            let w = params.get(&p.layer)?;
            let wd = w.data();
            let mut u = vec![0.0f32; wd.len()];
            let mut col = vec![0.0f32; p.rows];
            for g in 0..p.num_groups() {
                for (r, slot) in col.iter_mut().enumerate() {
                    *slot = wd[r * p.cols + g];
                }
                let pg = match self.cfg.penalty {
                    PenaltyKind::Gl0 => prox_gl0(&col, lambda),
                    PenaltyKind::Gl => prox_gl(&col, lambda),
                };
                for (r, v) in pg.into_iter().enumerate() {
                    u[r * p.cols + g] = v;
                }
            }
            self.state.u.insert(p.layer.clone(), u);
        }
        Ok(())
    }

    /// One parameter update from data-loss gradients, at the configured
    /// learning rate.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &GradMap<f32>) -> Result<()> {
        self.step_with_alpha(params, grads, self.cfg.alpha)
    }

    /// One parameter update with an explicit learning rate (used by the
    /// step-decay schedule).
    pub fn step_with_alpha(
        &mut self,
        params: &mut ModelParams<f32>,
        grads: &GradMap<f32>,
        alpha: f32,
    ) -> Result<()> {
        if self.cfg.u_every_step {
            self.recompute_split(params)?;
        }
        let beta = self.cfg.beta_split;
        let lambda_l = self.cfg.lambda_l;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in &names {
            let Some(g) = grads.get(name) else { continue };
            let w = params.get_mut(name)?;
            if g.len() != w.numel() {
                return Err(Error::Contract(format!(
                    "gradient shape mismatch for {name:?}: {} vs {}",
                    g.len(),
                    w.numel()
                )));
            }
            let part = self
                .partitions
                .iter()
                .find(|p| p.regularized && p.layer == *name);
            match part {
                Some(p) if beta != 0.0 || lambda_l != 0.0 => {
                    let u = self.state.u.get(name).expect("split state covers regularized");
                    let wd = w.data_mut();
                    // column norms for the GL subgradient
                    let mut norms = vec![0.0f64; p.cols];
                    if lambda_l != 0.0 {
                        for r in 0..p.rows {
                            for (c, n) in norms.iter_mut().enumerate() {
                                let v = wd[r * p.cols + c] as f64;
                                *n += v * v;
                            }
                        }
                        for n in &mut norms {
                            *n = n.sqrt();
                        }
                    }
                    for r in 0..p.rows {
                        for c in 0..p.cols {
                            let i = r * p.cols + c;
                            let mut grad = g[i];
                            if lambda_l != 0.0 && norms[c] > 0.0 {
                                grad += lambda_l * (wd[i] as f64 / norms[c]) as f32;
                            }
                            wd[i] = wd[i] - alpha * grad - alpha * beta * (wd[i] - u[i]);
                        }
                    }
                }
                _ => {
                    let wd = w.data_mut();
                    for (wv, &gv) in wd.iter_mut().zip(g) {
                        *wv = *wv - alpha * gv;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Plain gradient descent (the no-RGSM baseline).
pub fn sgd_step(params: &mut ModelParams<f32>, grads: &GradMap<f32>, alpha: f32) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let Some(g) = grads.get(name) else { continue };
        let w = params.get_mut(name)?;
        if g.len() != w.numel() {
            return Err(Error::Contract(format!(
                "gradient shape mismatch for {name:?}: {} vs {}",
                g.len(),
                w.numel()
            )));
        }
        let wd = w.data_mut();
        for (wv, &gv) in wd.iter_mut().zip(g) {
            *wv = *wv - alpha * gv;
        }
    }
    Ok(())
}

/// Zero out every regularized group whose norm fails the group-l0
/// threshold, so pruned groups are exactly zero in the saved checkpoint.
/// Idempotent.
pub fn hard_prune(
    params: &mut ModelParams<f32>,
    partitions: &[GroupPartition],
    lambda: f32,
) -> Result<()> {
    for p in partitions.iter().filter(|p| p.regularized) {
        let w = params.get_mut(&p.layer)?;
        super::prox::prox_gl0_columns(w.data_mut(), p.rows, p.cols, lambda as f64);
    }
    Ok(())
}

/// Per-layer sparsity row; a zero group has exactly zero norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsityRow {
    pub layer: String,
    pub groups: usize,
    pub zero: usize,
    pub fraction: f64,
}

pub fn sparsity_report(
    params: &ModelParams<f32>,
    partitions: &[GroupPartition],
) -> Result<Vec<SparsityRow>> {
    let mut rows = Vec::with_capacity(partitions.len());
    for p in partitions {
        let w = params.get(&p.layer)?;
        let wd = w.data();
        let mut zero = 0;
        for g in 0..p.num_groups() {
            if p.group_indices(g).all(|i| wd[i] == 0.0) {
                zero += 1;
            }
        }
        rows.push(SparsityRow {
            layer: p.layer.clone(),
            groups: p.num_groups(),
            zero,
            fraction: zero as f64 / p.num_groups() as f64,
        });
    }
    Ok(rows)
}

/// Fraction of exactly-zero groups across regularized layers only.
pub fn zero_group_fraction(
    params: &ModelParams<f32>,
    partitions: &[GroupPartition],
) -> Result<f64> {
    let mut total = 0usize;
    let mut zero = 0usize;
    for p in partitions.iter().filter(|p| p.regularized) {
        let w = params.get(&p.layer)?;
        let wd = w.data();
        total += p.num_groups();
        for g in 0..p.num_groups() {
            if p.group_indices(g).all(|i| wd[i] == 0.0) {
                zero += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(zero as f64 / total as f64)
}
