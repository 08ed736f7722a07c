//! Sample-based mutual information estimators.
//!
//! Six variational lower bounds (DV, MINE, NWJ, NWJ-JS, CPC, INTERP) share
//! one critic network and one [`TrainState::step`] loop; the two
//! entropy-difference estimators (DoE with Gaussian or logistic density
//! models) plug into the same loop with two density models instead of a
//! critic. Every step reports the estimate of the incoming batch *before*
//! updating parameters, so recorded curves are honest out-of-sample values.
//!
//! The lower bounds differ only in how marginal (non-matching) pairs are
//! penalised:
//!
//! * DV subtracts `ln mean(e^f)` over marginal pairs; MINE reports the same
//!   estimate but replaces the gradient denominator with an exponential
//!   moving average to de-bias small batches.
//! * NWJ subtracts `mean(e^(g-1))`; NWJ-JS trains the critic on the
//!   logistic (GAN) loss and only reads the NWJ value out at `g = f + 1`.
//! * CPC scores each joint pair against the other `n - 1` in-batch
//!   pairings, which caps the estimate at `ln n`.
//! * INTERP blends the CPC and NWJ penalties with weight `alpha`; its
//!   reduction collapses bitwise onto CPC at `alpha = 1` and NWJ at
//!   `alpha = 0`.

use crate::distributions::{DensityFamily, DensityModel, GaussianPairSpec};
use crate::numerics::{
    logsumexp, mean, stable_sum, Activation, AdamState, Critic, Matrix,
};
use crate::rng::RunRng;
use crate::{Error, Result};

/// The estimator catalogue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dv,
    Mine,
    Nwj,
    NwjJs,
    Cpc,
    Interp,
    DoeGaussian,
    DoeLogistic,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Dv,
        EstimatorKind::Mine,
        EstimatorKind::Nwj,
        EstimatorKind::NwjJs,
        EstimatorKind::Cpc,
        EstimatorKind::Interp,
        EstimatorKind::DoeGaussian,
        EstimatorKind::DoeLogistic,
    ];

    /// True for the variational lower bounds (everything but DoE).
    pub fn is_lower_bound(self) -> bool {
        !matches!(self, EstimatorKind::DoeGaussian | EstimatorKind::DoeLogistic)
    }

    /// True for estimators scoring all `n^2` in-batch pairings.
    pub fn uses_pair_grid(self) -> bool {
        matches!(self, EstimatorKind::Cpc | EstimatorKind::Interp)
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dv => "dv",
            EstimatorKind::Mine => "mine",
            EstimatorKind::Nwj => "nwj",
            EstimatorKind::NwjJs => "nwj_js",
            EstimatorKind::Cpc => "cpc",
            EstimatorKind::Interp => "interp",
            EstimatorKind::DoeGaussian => "doe_gaussian",
            EstimatorKind::DoeLogistic => "doe_logistic",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "estimator",
                    format!(
                        "unknown estimator {s:?} (expected one of {})",
                        EstimatorKind::ALL.map(|k| k.name()).join(", ")
                    ),
                )
            })
    }
}

/// One training batch: `n` joint pairs drawn from `p(x, y)` and `n`
/// marginal pairs drawn from `p(x) p(y)`.
#[derive(Clone, Debug)]
pub struct Batch {
    joint_x: Matrix,
    joint_y: Matrix,
    marginal_x: Matrix,
    marginal_y: Matrix,
}

impl Batch {
    /// Draw a batch: one joint sample, then a second independent joint
    /// sample whose `y` rows are permuted to break the pairing.
    pub fn sample(spec: &GaussianPairSpec, n: usize, rng: &mut RunRng) -> Result<Batch> {
        if n < 2 {
            return Err(Error::invalid("batch_size", "need at least 2 pairs"));
        }
        let (joint_x, joint_y) = spec.sample(n, rng);
        let (marginal_x, fresh_y) = spec.sample(n, rng);
        let perm = rng.permutation(n);
        let mut marginal_y = Matrix::zeros((n, spec.d));
        for (i, &src) in perm.iter().enumerate() {
            marginal_y.row_mut(i).assign(&fresh_y.row(src));
        }
        Ok(Batch {
            joint_x,
            joint_y,
            marginal_x,
            marginal_y,
        })
    }

    /// Assemble a batch from explicit matrices (mainly for tests).
    pub fn from_parts(
        joint_x: Matrix,
        joint_y: Matrix,
        marginal_x: Matrix,
        marginal_y: Matrix,
    ) -> Result<Batch> {
        let n = joint_x.nrows();
        let d = joint_x.ncols();
        if n < 2 {
            return Err(Error::invalid("batch_size", "need at least 2 pairs"));
        }
        for (m, what) in [
            (&joint_y, "joint_y"),
            (&marginal_x, "marginal_x"),
            (&marginal_y, "marginal_y"),
        ] {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch {
                    context: "Batch rows",
                    expected: n,
                    got: m.nrows(),
                });
            }
            if m.ncols() != d {
                return Err(Error::invalid(
                    "batch",
                    format!("{what} has {} columns, joint_x has {d}", m.ncols()),
                ));
            }
        }
        Ok(Batch {
            joint_x,
            joint_y,
            marginal_x,
            marginal_y,
        })
    }

    pub fn n(&self) -> usize {
        self.joint_x.nrows()
    }

    pub fn d(&self) -> usize {
        self.joint_x.ncols()
    }

    pub fn joint(&self) -> (&Matrix, &Matrix) {
        (&self.joint_x, &self.joint_y)
    }

    pub fn marginal(&self) -> (&Matrix, &Matrix) {
        (&self.marginal_x, &self.marginal_y)
    }

    fn joint_rows(&self) -> Matrix {
        concat_columns(&self.joint_x, &self.joint_y)
    }

    fn marginal_rows(&self) -> Matrix {
        concat_columns(&self.marginal_x, &self.marginal_y)
    }
}

fn concat_columns(x: &Matrix, y: &Matrix) -> Matrix {
    let (n, dx, dy) = (x.nrows(), x.ncols(), y.ncols());
    let mut out = Matrix::zeros((n, dx + dy));
    out.slice_mut(ndarray::s![.., ..dx]).assign(x);
    out.slice_mut(ndarray::s![.., dx..]).assign(y);
    out
}

/// Empirical DV bound from raw scores:
/// `mean(joint) - (ln sum(e^marginal) - ln n)`.
pub fn dv_from_scores(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    let m = mean(joint)?;
    let lse = logsumexp(marginal)?;
    Ok(m - (lse - (marginal.len() as f64).ln()))
}

/// Empirical NWJ bound from raw scores:
/// `mean(joint) - mean(e^(marginal - 1))`.
pub fn nwj_from_scores(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if marginal.is_empty() {
        return Err(Error::EmptyInput("nwj_from_scores"));
    }
    let m = mean(joint)?;
    let penalty = stable_sum(marginal.iter().map(|&g| (g - 1.0).exp()))
        / marginal.len() as f64;
    Ok(m - penalty)
}

/// Logistic discrimination loss from raw scores:
/// `mean(softplus(-joint)) + mean(softplus(marginal))`.
pub fn js_loss_from_scores(joint: &[f64], marginal: &[f64]) -> Result<f64> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(Error::EmptyInput("js_loss_from_scores"));
    }
    let a = stable_sum(joint.iter().map(|&f| softplus(-f))) / joint.len() as f64;
    let b = stable_sum(marginal.iter().map(|&f| softplus(f))) / marginal.len() as f64;
    Ok(a + b)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Diagonal mean of a pair-score grid (the joint term shared by the
/// contrastive bounds).
fn diag_mean(scores: &Matrix) -> Result<f64> {
    let diag: Vec<f64> = (0..scores.nrows()).map(|i| scores[(i, i)]).collect();
    mean(&diag)
}

/// Per-row contrastive penalty `mean_i(ln mean_j e^{s_ij})`.
fn cpc_penalty(scores: &Matrix) -> Result<f64> {
    let n = scores.nrows();
    let ln_n = (n as f64).ln();
    let per_row: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = scores.row(i).to_vec();
            logsumexp(&row).map(|l| l - ln_n)
        })
        .collect::<Result<_>>()?;
    mean(&per_row)
}

/// Empirical CPC bound of a square score grid `s[i][j] = f(x_i, y_j)`:
/// `mean_i(s_ii) - mean_i(ln mean_j e^{s_ij})`. Never exceeds `ln n`.
pub fn cpc_from_score_matrix(scores: &Matrix) -> Result<f64> {
    if scores.nrows() != scores.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cpc_from_score_matrix",
            expected: scores.nrows(),
            got: scores.ncols(),
        });
    }
    if scores.nrows() == 0 {
        return Err(Error::EmptyInput("cpc_from_score_matrix"));
    }
    Ok(diag_mean(scores)? - cpc_penalty(scores)?)
}

/// Interpolated bound: the shared joint term minus an `alpha`-weighted mix
/// of the CPC and NWJ penalties. At the endpoints the computation routes
/// through the exact CPC / NWJ reductions, so the collapse is bitwise.
pub fn interp_from_scores(
    pair_scores: &Matrix,
    marginal: &[f64],
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("need 0 <= alpha <= 1, got {alpha}")));
    }
    if alpha == 1.0 {
        return cpc_from_score_matrix(pair_scores);
    }
    let diag: Vec<f64> = (0..pair_scores.nrows()).map(|i| pair_scores[(i, i)]).collect();
    if alpha == 0.0 {
        return nwj_from_scores(&diag, marginal);
    }
    let t1 = mean(&diag)?;
    let cpc_pen = cpc_penalty(pair_scores)?;
    if marginal.is_empty() {
        return Err(Error::EmptyInput("interp_from_scores marginal"));
    }
    let nwj_pen = stable_sum(marginal.iter().map(|&g| (g - 1.0).exp()))
        / marginal.len() as f64;
    Ok(t1 - alpha * cpc_pen - (1.0 - alpha) * nwj_pen)
}

fn check_critic_dim(critic: &Critic, batch_d: usize, context: &'static str) -> Result<()> {
    if critic.input_dim() != 2 * batch_d {
        return Err(Error::DimensionMismatch {
            context,
            expected: critic.input_dim(),
            got: 2 * batch_d,
        });
    }
    Ok(())
}

/// DV estimate of a batch under a fixed critic.
pub fn dv_estimate(critic: &Critic, batch: &Batch) -> Result<f64> {
    check_critic_dim(critic, batch.d(), "dv_estimate")?;
    let joint = critic.forward(&batch.joint_rows())?;
    let marginal = critic.forward(&batch.marginal_rows())?;
    dv_from_scores(&joint, &marginal)
}

/// NWJ estimate of a batch under a fixed critic.
pub fn nwj_estimate(critic: &Critic, batch: &Batch) -> Result<f64> {
    check_critic_dim(critic, batch.d(), "nwj_estimate")?;
    let joint = critic.forward(&batch.joint_rows())?;
    let marginal = critic.forward(&batch.marginal_rows())?;
    nwj_from_scores(&joint, &marginal)
}

/// CPC estimate from the in-batch pair grid of the joint sample.
pub fn cpc_estimate(critic: &Critic, x: &Matrix, y: &Matrix) -> Result<f64> {
    if critic.input_dim() != x.ncols() + y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cpc_estimate",
            expected: critic.input_dim(),
            got: x.ncols() + y.ncols(),
        });
    }
    let (scores, _) = critic.forward_pairs(x, y)?;
    cpc_from_score_matrix(&scores)
}

/// Interpolated estimate of a batch under a fixed critic.
pub fn interp_estimate(critic: &Critic, alpha: f64, batch: &Batch) -> Result<f64> {
    check_critic_dim(critic, batch.d(), "interp_estimate")?;
    let (x, y) = batch.joint();
    let (scores, _) = critic.forward_pairs(x, y)?;
    if alpha == 1.0 {
        return interp_from_scores(&scores, &[], alpha).or_else(|_| unreachable!());
    }
    let marginal = critic.forward(&batch.marginal_rows())?;
    interp_from_scores(&scores, &marginal, alpha)
}

/// Static configuration of a training run.
#[derive(Clone, Debug)]
pub struct TrainInit {
    pub kind: EstimatorKind,
    /// Dimension of each of `x` and `y` (critics see `2 * dim` inputs).
    pub dim: usize,
    pub hidden: usize,
    /// Number of hidden layers; 0 means a linear critic.
    pub depth: usize,
    pub activation: Activation,
    pub output_clip: Option<f64>,
    pub learning_rate: f64,
    /// Decay of MINE's moving-average denominator.
    pub mine_ema_decay: f64,
    /// CPC/NWJ mixing weight for INTERP.
    pub interp_alpha: f64,
    pub doe_tied_scales: bool,
}

impl TrainInit {
    pub fn new(kind: EstimatorKind, dim: usize) -> Self {
        TrainInit {
            kind,
            dim,
            hidden: 256,
            depth: 2,
            activation: Activation::Relu,
            output_clip: None,
            learning_rate: 5e-4,
            mine_ema_decay: 0.9,
            interp_alpha: 0.5,
            doe_tied_scales: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.mine_ema_decay) {
            return Err(Error::invalid("mine_ema_decay", "need 0 <= decay < 1"));
        }
        if !(0.0..=1.0).contains(&self.interp_alpha) {
            return Err(Error::invalid("interp_alpha", "need 0 <= alpha <= 1"));
        }
        if self.depth > 0 && self.hidden == 0 {
            return Err(Error::invalid("hidden", "hidden width must be positive"));
        }
        if self.kind.uses_pair_grid() && self.depth == 0 {
            return Err(Error::invalid(
                "depth",
                "pair-grid estimators need at least one hidden layer",
            ));
        }
        if let Some(c) = self.output_clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("output_clip", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Model {
    Critic {
        critic: Critic,
        adam: AdamState,
        ema: Option<f64>,
    },
    Doe {
        marginal: DensityModel,
        conditional: DensityModel,
        adam_marginal: AdamState,
        adam_conditional: AdamState,
    },
}

/// A live training run: model parameters plus optimiser state.
#[derive(Clone, Debug)]
pub struct TrainState {
    cfg: TrainInit,
    model: Model,
    steps_taken: u64,
}

impl TrainState {
    /// Initialise parameters from `rng` (critic weights Glorot-uniform,
    /// density models all zero so the initial DoE estimate is exactly 0).
    pub fn new(cfg: &TrainInit, rng: &mut RunRng) -> Result<TrainState> {
        cfg.validate()?;
        let model = match cfg.kind {
            EstimatorKind::DoeGaussian | EstimatorKind::DoeLogistic => {
                let family = if cfg.kind == EstimatorKind::DoeGaussian {
                    DensityFamily::Gaussian
                } else {
                    DensityFamily::Logistic
                };
                let marginal =
                    DensityModel::unconditional(family, cfg.dim, cfg.doe_tied_scales)?;
                let conditional =
                    DensityModel::conditional(family, cfg.dim, cfg.doe_tied_scales)?;
                let adam_marginal = AdamState::new(marginal.param_count(), cfg.learning_rate);
                let adam_conditional =
                    AdamState::new(conditional.param_count(), cfg.learning_rate);
                Model::Doe {
                    marginal,
                    conditional,
                    adam_marginal,
                    adam_conditional,
                }
            }
            _ => {
                let critic = Critic::mlp(
                    2 * cfg.dim,
                    cfg.hidden,
                    cfg.depth,
                    cfg.activation,
                    cfg.output_clip,
                    rng,
                )?;
                let adam = AdamState::new(critic.param_count(), cfg.learning_rate);
                Model::Critic {
                    critic,
                    adam,
                    ema: None,
                }
            }
        };
        Ok(TrainState {
            cfg: cfg.clone(),
            model,
            steps_taken: 0,
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &TrainInit {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// MINE's moving-average denominator, once initialised.
    pub fn ema_denominator(&self) -> Option<f64> {
        match &self.model {
            Model::Critic { ema, .. } => *ema,
            Model::Doe { .. } => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.model {
            Model::Critic { critic, .. } => critic.param_count(),
            Model::Doe {
                marginal,
                conditional,
                ..
            } => marginal.param_count() + conditional.param_count(),
        }
    }

    /// Flat parameter vector (DoE: marginal model then conditional model).
    pub fn params_flat(&self) -> Vec<f64> {
        match &self.model {
            Model::Critic { critic, .. } => critic.params_flat(),
            Model::Doe {
                marginal,
                conditional,
                ..
            } => {
                let mut p = marginal.params_flat();
                p.extend(conditional.params_flat());
                p
            }
        }
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "TrainState::set_params_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        match &mut self.model {
            Model::Critic { critic, .. } => critic.set_params_flat(flat),
            Model::Doe {
                marginal,
                conditional,
                ..
            } => {
                let split = marginal.param_count();
                marginal.set_params_flat(&flat[..split])?;
                conditional.set_params_flat(&flat[split..])
            }
        }
    }

    /// All parameters and optimiser statistics finite?
    pub fn is_finite(&self) -> bool {
        let params_ok = self.params_flat().iter().all(|v| v.is_finite());
        let ema_ok = match &self.model {
            Model::Critic { ema, .. } => ema.map_or(true, |e| e.is_finite() && e > 0.0),
            Model::Doe { .. } => true,
        };
        params_ok && ema_ok
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.d() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                context: "TrainState batch",
                expected: self.cfg.dim,
                got: batch.d(),
            });
        }
        Ok(())
    }

    /// Estimate the batch under the current parameters (no update).
    pub fn estimate(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        match &self.model {
            Model::Critic { critic, .. } => match self.cfg.kind {
                EstimatorKind::Dv | EstimatorKind::Mine => dv_estimate(critic, batch),
                EstimatorKind::Nwj => nwj_estimate(critic, batch),
                EstimatorKind::NwjJs => {
                    let joint = critic.forward(&batch.joint_rows())?;
                    let marginal = critic.forward(&batch.marginal_rows())?;
                    let gj: Vec<f64> = joint.iter().map(|f| f + 1.0).collect();
                    let gm: Vec<f64> = marginal.iter().map(|f| f + 1.0).collect();
                    nwj_from_scores(&gj, &gm)
                }
                EstimatorKind::Cpc => {
                    let (x, y) = batch.joint();
                    cpc_estimate(critic, x, y)
                }
                EstimatorKind::Interp => {
                    interp_estimate(critic, self.cfg.interp_alpha, batch)
                }
                _ => unreachable!("critic model implies critic kind"),
            },
            Model::Doe {
                marginal,
                conditional,
                ..
            } => {
                let (x, y) = batch.joint();
                let (nll_m, _) = marginal.nll_grad(x, None)?;
                let (nll_c, _) = conditional.nll_grad(x, Some(y))?;
                Ok(nll_m - nll_c)
            }
        }
    }

    /// The scalar objective minimised by [`TrainState::step`] at the
    /// current parameters. For MINE this is the surrogate whose gradient
    /// is the bias-corrected update: `-mean(f_joint) + mean(e^f_marg) / ema`
    /// with the moving average frozen (a fresh state uses the batch mean).
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        match &self.model {
            Model::Critic { critic, ema, .. } => {
                match self.cfg.kind {
                    EstimatorKind::Dv => Ok(-dv_estimate(critic, batch)?),
                    EstimatorKind::Nwj => Ok(-nwj_estimate(critic, batch)?),
                    EstimatorKind::Mine => {
                        let joint = critic.forward(&batch.joint_rows())?;
                        let marginal = critic.forward(&batch.marginal_rows())?;
                        let m = stable_sum(marginal.iter().map(|&f| f.exp()))
                            / marginal.len() as f64;
                        let denom = ema.unwrap_or(m);
                        Ok(-mean(&joint)? + m / denom)
                    }
                    EstimatorKind::NwjJs => {
                        let joint = critic.forward(&batch.joint_rows())?;
                        let marginal = critic.forward(&batch.marginal_rows())?;
                        js_loss_from_scores(&joint, &marginal)
                    }
                    EstimatorKind::Cpc | EstimatorKind::Interp => {
                        Ok(-self.estimate(batch)?)
                    }
                    _ => unreachable!("critic model implies critic kind"),
                }
            }
            Model::Doe {
                marginal,
                conditional,
                ..
            } => {
                let (x, y) = batch.joint();
                let (nll_m, _) = marginal.nll_grad(x, None)?;
                let (nll_c, _) = conditional.nll_grad(x, Some(y))?;
                Ok(nll_m + nll_c)
            }
        }
    }

    /// Analytic gradient of [`TrainState::loss`] in flat parameter order,
    /// together with the loss value.
    pub fn loss_gradient(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        match &self.model {
            Model::Critic { critic, ema, .. } => {
                self.critic_loss_gradient(critic, *ema, batch)
            }
            Model::Doe {
                marginal,
                conditional,
                ..
            } => {
                let (x, y) = batch.joint();
                let (nll_m, gm) = marginal.nll_grad(x, None)?;
                let (nll_c, gc) = conditional.nll_grad(x, Some(y))?;
                let mut grad = gm;
                grad.extend(gc);
                Ok((nll_m + nll_c, grad))
            }
        }
    }

    fn critic_loss_gradient(
        &self,
        critic: &Critic,
        ema: Option<f64>,
        batch: &Batch,
    ) -> Result<(f64, Vec<f64>)> {
        let n = batch.n() as f64;
        match self.cfg.kind {
            EstimatorKind::Dv | EstimatorKind::Mine | EstimatorKind::Nwj
            | EstimatorKind::NwjJs => {
                let jrows = batch.joint_rows();
                let mrows = batch.marginal_rows();
                let (joint, jcache) = critic.forward_cached(&jrows)?;
                let (marginal, mcache) = critic.forward_cached(&mrows)?;
                let (loss, djoint, dmarginal) = match self.cfg.kind {
                    EstimatorKind::Dv => {
                        let lse = logsumexp(&marginal)?;
                        let loss = -mean(&joint)? + lse - n.ln();
                        let dj = vec![-1.0 / n; joint.len()];
                        let dm: Vec<f64> =
                            marginal.iter().map(|&f| (f - lse).exp()).collect();
                        (loss, dj, dm)
                    }
                    EstimatorKind::Mine => {
                        let m = stable_sum(marginal.iter().map(|&f| f.exp())) / n;
                        let denom = ema.unwrap_or(m);
                        let loss = -mean(&joint)? + m / denom;
                        let dj = vec![-1.0 / n; joint.len()];
                        let ln_scale = (n * denom).ln();
                        let dm: Vec<f64> =
                            marginal.iter().map(|&f| (f - ln_scale).exp()).collect();
                        (loss, dj, dm)
                    }
                    EstimatorKind::Nwj => {
                        let penalty: Vec<f64> =
                            marginal.iter().map(|&g| (g - 1.0).exp()).collect();
                        let loss = -mean(&joint)? + stable_sum(penalty.iter().copied()) / n;
                        let dj = vec![-1.0 / n; joint.len()];
                        let dm: Vec<f64> = penalty.iter().map(|&e| e / n).collect();
                        (loss, dj, dm)
                    }
                    EstimatorKind::NwjJs => {
                        let loss = js_loss_from_scores(&joint, &marginal)?;
                        let dj: Vec<f64> =
                            joint.iter().map(|&f| -(1.0 - sigmoid(f)) / n).collect();
                        let dm: Vec<f64> =
                            marginal.iter().map(|&f| sigmoid(f) / n).collect();
                        (loss, dj, dm)
                    }
                    _ => unreachable!(),
                };
                let mut grad = critic.backward(&jcache, &djoint)?;
                let gm = critic.backward(&mcache, &dmarginal)?;
                for (a, b) in grad.iter_mut().zip(&gm) {
                    *a += b;
                }
                Ok((loss, grad))
            }
            EstimatorKind::Cpc | EstimatorKind::Interp => {
                let alpha = if self.cfg.kind == EstimatorKind::Cpc {
                    1.0
                } else {
                    self.cfg.interp_alpha
                };
                let (x, y) = batch.joint();
                let (scores, cache) = critic.forward_pairs(x, y)?;
                let nn = scores.nrows();
                // d loss / d s_ij = (alpha * softmax_row_i(j) - delta_ij) / n
                let mut dscore = Matrix::zeros((nn, nn));
                for i in 0..nn {
                    let row: Vec<f64> = scores.row(i).to_vec();
                    let lse = logsumexp(&row)?;
                    for j in 0..nn {
                        let soft = (scores[(i, j)] - lse).exp();
                        dscore[(i, j)] = alpha * soft / n;
                    }
                    dscore[(i, i)] -= 1.0 / n;
                }
                let mut grad = critic.backward_pairs(x, y, &cache, &dscore)?;
                let loss = if alpha == 1.0 {
                    -cpc_from_score_matrix(&scores)?
                } else {
                    let marginal = critic.forward(&batch.marginal_rows())?;
                    let (_, mcache) = critic.forward_cached(&batch.marginal_rows())?;
                    let dm: Vec<f64> = marginal
                        .iter()
                        .map(|&g| (1.0 - alpha) * (g - 1.0).exp() / n)
                        .collect();
                    let gm = critic.backward(&mcache, &dm)?;
                    for (a, b) in grad.iter_mut().zip(&gm) {
                        *a += b;
                    }
                    -interp_from_scores(&scores, &marginal, alpha)?
                };
                Ok((loss, grad))
            }
            _ => unreachable!("critic gradient for critic kinds only"),
        }
    }

    /// One training step: estimate the incoming batch, update MINE's
    /// moving average, take an Adam step, and return the (pre-update)
    /// estimate.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let estimate = self.estimate(batch)?;
        if let (EstimatorKind::Mine, Model::Critic { critic, ema, .. }) =
            (self.cfg.kind, &mut self.model)
        {
            let marginal = critic.forward(&batch.marginal_rows())?;
            let m = stable_sum(marginal.iter().map(|&f| f.exp())) / marginal.len() as f64;
            *ema = Some(match *ema {
                None => m,
                Some(e) => self.cfg.mine_ema_decay * e + (1.0 - self.cfg.mine_ema_decay) * m,
            });
        }
        let (_, grad) = self.loss_gradient(batch)?;
        match &mut self.model {
            Model::Critic { critic, adam, .. } => {
                let mut params = critic.params_flat();
                adam.update(&mut params, &grad)?;
                critic.set_params_flat(&params)?;
            }
            Model::Doe {
                marginal,
                conditional,
                adam_marginal,
                adam_conditional,
            } => {
                let split = marginal.param_count();
                let mut pm = marginal.params_flat();
                adam_marginal.update(&mut pm, &grad[..split])?;
                marginal.set_params_flat(&pm)?;
                let mut pc = conditional.params_flat();
                adam_conditional.update(&mut pc, &grad[split..])?;
                conditional.set_params_flat(&pc)?;
            }
        }
        self.steps_taken += 1;
        Ok(estimate)
    }
}
