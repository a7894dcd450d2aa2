//! Training and unlearning pipelines.
//!
//! [`run_unlearn`] drives the alternating two-phase loop: each outer
//! iteration takes `t_forget` steps on a forget objective followed by
//! `t_retain` steps on a retain objective, each phase drawing minibatches
//! from its own seeded stream and stepping its own side of a
//! [`DualOptimizer`]. Batch order and loss evaluation points depend only on
//! the task seed — never on the optimizer configuration — so shared vs.
//! decoupled state can be compared on identical trajectories of data.
//!
//! Forget objectives:
//! - `Ft`: none (fine-tuning on the retain set only);
//! - `Ga` / `GaCe`: gradient ascent on cross-entropy (negated CE);
//! - `Rl` / `SalUnRl`: cross-entropy toward a random wrong label, freshly
//!   resampled per visit; the saliency variant masks updates to the
//!   highest-magnitude gradient coordinates measured at the initial model;
//! - `ScrubKl`: gradient ascent on `KL(initial model || student)` over the
//!   forget batch (a simplified, divergence-maximizing scrub phase).
//!
//! Retain objectives are cross-entropy for every method; `ScrubKl` adds a
//! weighted `KL(initial model || student)` distillation term.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, RowTag};
use crate::error::{Error, Result};
use crate::metrics::cosine_similarity;
use crate::nn::{GradientSet, MlpModel};
use crate::optim::{DualOptimizer, OptimizerConfig, Phase};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Unlearning method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fine-tune on the retain set only.
    Ft,
    /// Gradient ascent on the forget set only.
    Ga,
    /// Random-label relabeling on the forget set, plus retain fine-tuning.
    Rl,
    /// Relabeling restricted to salient parameters, plus retain fine-tuning.
    SalUnRl,
    /// KL-divergence ascent against the frozen initial model on the forget
    /// set; retain phase distills back toward it (simplified scrub).
    ScrubKl,
    /// Generic alternating gradient-ascent/cross-entropy baseline.
    GaCe,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::SalUnRl => "salun_rl",
            Method::ScrubKl => "scrub_kl",
            Method::GaCe => "ga_ce",
        }
    }

    /// Human-facing label used in report tables. The scrub and generic
    /// alternating methods are marked as the simplified/stand-in variants
    /// they are.
    pub fn display_label(&self) -> &'static str {
        match self {
            Method::Ft => "FT",
            Method::Ga => "GA",
            Method::Rl => "RL",
            Method::SalUnRl => "SalUn-RL",
            Method::ScrubKl => "ScrubKL (simplified)",
            Method::GaCe => "GA_CE (alternating)",
        }
    }

    fn needs_forget_phase(&self) -> bool {
        !matches!(self, Method::Ft)
    }

    fn needs_retain_phase(&self) -> bool {
        !matches!(self, Method::Ga)
    }
}

/// The two optimizer configs of the alternating loop plus state-sharing
/// flags. `share_m`/`share_v` alias the respective buffers between the
/// phases; both true reproduces a single shared optimizer exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualOptimSpec {
    pub forget: OptimizerConfig,
    pub retain: OptimizerConfig,
    #[serde(default)]
    pub share_m: bool,
    #[serde(default)]
    pub share_v: bool,
}

impl DualOptimSpec {
    /// Fully decoupled pair.
    pub fn decoupled(forget: OptimizerConfig, retain: OptimizerConfig) -> DualOptimSpec {
        DualOptimSpec { forget, retain, share_m: false, share_v: false }
    }

    /// Single-optimizer emulation: same config on both phases, all state
    /// aliased.
    pub fn shared(cfg: OptimizerConfig) -> DualOptimSpec {
        DualOptimSpec { forget: cfg.clone(), retain: cfg, share_m: true, share_v: true }
    }

    pub fn build(&self, param_count: usize) -> Result<DualOptimizer> {
        DualOptimizer::new(
            self.forget.clone(),
            self.retain.clone(),
            param_count,
            self.share_m,
            self.share_v,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnConfig {
    pub method: Method,
    /// Outer alternation count.
    pub t_outer: usize,
    /// Forget steps per outer iteration.
    pub t_forget: usize,
    /// Retain steps per outer iteration.
    pub t_retain: usize,
    #[serde(default = "default_batch")]
    pub batch_forget: usize,
    #[serde(default = "default_batch")]
    pub batch_retain: usize,
    pub optim: DualOptimSpec,
    /// Fraction of parameters the saliency mask keeps (SalUnRl only).
    #[serde(default = "default_saliency_fraction")]
    pub saliency_fraction: f64,
    /// Weight of the distillation term in the retain loss (ScrubKl only).
    #[serde(default = "default_kl_weight")]
    pub kl_retain_weight: f64,
}

fn default_batch() -> usize {
    32
}
fn default_saliency_fraction() -> f64 {
    0.5
}
fn default_kl_weight() -> f64 {
    1.0
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_outer == 0 {
            return Err(Error::Config("t_outer must be >= 1".into()));
        }
        match self.method {
            Method::Ft => {
                if self.t_forget != 0 {
                    return Err(Error::Config(
                        "fine-tuning takes no forget steps; set t_forget = 0".into(),
                    ));
                }
            }
            Method::Ga => {
                if self.t_retain != 0 {
                    return Err(Error::Config(
                        "gradient ascent takes no retain steps; set t_retain = 0".into(),
                    ));
                }
            }
            _ => {}
        }
        if self.method.needs_forget_phase() && self.t_forget == 0 {
            return Err(Error::Config(format!(
                "method {} needs t_forget >= 1",
                self.method.name()
            )));
        }
        if self.method.needs_retain_phase() && self.t_retain == 0 {
            return Err(Error::Config(format!(
                "method {} needs t_retain >= 1",
                self.method.name()
            )));
        }
        if self.t_forget > 0 && self.batch_forget == 0 {
            return Err(Error::Config("batch_forget must be >= 1".into()));
        }
        if self.t_retain > 0 && self.batch_retain == 0 {
            return Err(Error::Config("batch_retain must be >= 1".into()));
        }
        if !(self.saliency_fraction > 0.0 && self.saliency_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "saliency_fraction must lie in (0, 1], got {}",
                self.saliency_fraction
            )));
        }
        if !(self.kl_retain_weight.is_finite() && self.kl_retain_weight >= 0.0) {
            return Err(Error::Config(format!(
                "kl_retain_weight must be non-negative, got {}",
                self.kl_retain_weight
            )));
        }
        self.optim.forget.validate()?;
        self.optim.retain.validate()?;
        Ok(())
    }
}

/// What produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pretrained,
    Retrained,
    Unlearned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Hash of the experiment configuration that produced the checkpoint,
    /// filled in by the CLI layer.
    pub config_hash: Option<String>,
}

/// A model together with how it came to be.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub role: Role,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn new(model: MlpModel, role: Role, seed: u64) -> Checkpoint {
        Checkpoint { model, role, provenance: Provenance { seed, config_hash: None } }
    }

    pub fn with_config_hash(mut self, hash: &str) -> Checkpoint {
        self.provenance.config_hash = Some(hash.to_string());
        self
    }
}

/// An unlearning problem instance: the model to unlearn, the partitioned
/// data, and the seed driving every random choice of the run.
#[derive(Debug, Clone)]
pub struct UnlearnTask {
    pub pretrained: MlpModel,
    pub data: DatasetSplit,
    pub seed: u64,
}

/// One optimizer step's diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global 0-based step index across both phases.
    pub step: usize,
    /// 1-based outer-loop index.
    pub outer: usize,
    pub phase: Phase,
    pub loss: f64,
    /// L2 norm of the flat parameter gradient fed to the optimizer.
    pub grad_norm: f64,
    /// Cosine between this retain-phase gradient and the most recent
    /// forget-phase gradient of the same outer loop; present only on
    /// retain steps of loops that ran both phases and where both vectors
    /// are nonzero.
    pub cosine_fr: Option<f64>,
}

/// Per-step records of one unlearning run, `t_outer * (t_forget + t_retain)`
/// rows long.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticTrace {
    pub steps: Vec<StepRecord>,
}

impl DiagnosticTrace {
    pub fn losses(&self, phase: Phase) -> Vec<f64> {
        self.steps.iter().filter(|s| s.phase == phase).map(|s| s.loss).collect()
    }

    pub fn cosines(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.cosine_fr).collect()
    }
}

/// Summary statistics of a pretrain/retrain run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Binary mask over flat parameter coordinates.
#[derive(Debug, Clone)]
pub struct SaliencyMask {
    mask: Vec<bool>,
    kept: usize,
}

impl SaliencyMask {
    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.mask[i]
    }

    /// Zero gradient entries outside the mask.
    pub fn apply(&self, grad: &mut [f64]) {
        for (g, &keep) in grad.iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
    }
}

/// Shuffled, epoch-reshuffling minibatch index stream. The final batch of
/// an epoch may be short; every epoch reshuffles with the stream's own
/// generator, so batch order is a pure function of the seed.
struct BatchStream {
    idxs: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: SplitMix64,
}

impl BatchStream {
    fn new(mut idxs: Vec<usize>, batch: usize, seed: u64) -> BatchStream {
        let mut rng = SplitMix64::new(seed);
        rng.shuffle(&mut idxs);
        BatchStream { idxs, pos: 0, batch, rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.idxs.len() {
            self.rng.shuffle(&mut self.idxs);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.idxs.len());
        let out = self.idxs[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Mean cross-entropy gradient over a full row set, accumulated in batches.
fn full_set_ce_gradient(model: &MlpModel, data: &DatasetSplit, rows: &[usize]) -> Result<Vec<f64>> {
    const CHUNK: usize = 256;
    let mut total: Option<GradientSet> = None;
    for chunk in rows.chunks(CHUNK) {
        let (x, y) = data.gather(chunk);
        let trace = model.forward(&x)?;
        let (_, grads) = model.backward_ce(&trace, &y)?;
        // backward_ce returns the batch-mean gradient; re-weight by batch
        // size so the final result is the mean over all rows.
        let w = chunk.len() as f64;
        match &mut total {
            None => {
                let mut g = grads;
                g.scale(w);
                total = Some(g);
            }
            Some(t) => t.add_scaled(&grads, w),
        }
    }
    let mut flat = total
        .ok_or_else(|| Error::Input("saliency over an empty forget set".into()))?
        .flatten();
    let inv = 1.0 / rows.len() as f64;
    for g in &mut flat {
        *g *= inv;
    }
    Ok(flat)
}

/// Select the `ceil(fraction * param_count)` coordinates with the largest
/// absolute mean forget-set gradient at `model`; ties break toward the
/// lower flat index.
pub fn compute_saliency_mask(
    model: &MlpModel,
    data: &DatasetSplit,
    fraction: f64,
) -> Result<SaliencyMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "saliency fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let forget = data.indices(RowTag::Forget);
    if forget.is_empty() {
        return Err(Error::Input("saliency over an empty forget set".into()));
    }
    let flat = full_set_ce_gradient(model, data, &forget)?;
    let p = flat.len();
    let kept = (fraction * p as f64).ceil() as usize;
    let kept = kept.clamp(1, p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        flat[b]
            .abs()
            .partial_cmp(&flat[a].abs())
            .expect("finite gradients")
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; p];
    for &i in &order[..kept] {
        mask[i] = true;
    }
    Ok(SaliencyMask { mask, kept })
}

/// Resample a label uniformly from the wrong classes.
fn random_wrong_label(y: usize, num_classes: usize, rng: &mut SplitMix64) -> usize {
    let offset = rng.next_below(num_classes as u64 - 1) as usize;
    (y + 1 + offset) % num_classes
}

/// Forget-phase loss and flat gradient for one minibatch.
///
/// `teacher` is the frozen initial model, required by `ScrubKl`; `rl_rng`
/// drives label resampling, required by `Rl`/`SalUnRl`.
pub fn forget_objective(
    method: Method,
    model: &MlpModel,
    x: &Tensor,
    y: &[usize],
    num_classes: usize,
    teacher: Option<&MlpModel>,
    rl_rng: &mut SplitMix64,
) -> Result<(f64, Vec<f64>)> {
    match method {
        Method::Ft => Err(Error::Config("fine-tuning has no forget objective".into())),
        Method::Ga | Method::GaCe => {
            let trace = model.forward(x)?;
            let (loss, mut grads) = model.backward_ce(&trace, y)?;
            grads.scale(-1.0);
            Ok((-loss, grads.flatten()))
        }
        Method::Rl | Method::SalUnRl => {
            if num_classes < 2 {
                return Err(Error::Config(
                    "random relabeling needs at least 2 classes".into(),
                ));
            }
            let wrong: Vec<usize> =
                y.iter().map(|&yi| random_wrong_label(yi, num_classes, rl_rng)).collect();
            let trace = model.forward(x)?;
            let (loss, grads) = model.backward_ce(&trace, &wrong)?;
            Ok((loss, grads.flatten()))
        }
        Method::ScrubKl => {
            let teacher = teacher.ok_or_else(|| {
                Error::Config("scrub objective needs the frozen initial model".into())
            })?;
            let teacher_probs = teacher.predict_proba(x)?;
            let trace = model.forward(x)?;
            let (kl, mut grads) = model.backward_kl(&trace, &teacher_probs)?;
            grads.scale(-1.0);
            Ok((-kl, grads.flatten()))
        }
    }
}

/// Retain-phase loss and flat gradient for one minibatch: cross-entropy,
/// plus a weighted distillation term toward the initial model for `ScrubKl`.
pub fn retain_objective(
    method: Method,
    model: &MlpModel,
    x: &Tensor,
    y: &[usize],
    teacher: Option<&MlpModel>,
    kl_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let trace = model.forward(x)?;
    let (ce, mut grads) = model.backward_ce(&trace, y)?;
    if method == Method::ScrubKl && kl_weight > 0.0 {
        let teacher = teacher.ok_or_else(|| {
            Error::Config("scrub objective needs the frozen initial model".into())
        })?;
        let teacher_probs = teacher.predict_proba(x)?;
        let (kl, kl_grads) = model.backward_kl(&trace, &teacher_probs)?;
        grads.add_scaled(&kl_grads, kl_weight);
        return Ok((ce + kl_weight * kl, grads.flatten()));
    }
    Ok((ce, grads.flatten()))
}

/// Shared cross-entropy training loop used by pretrain and retrain.
fn train_ce_loop(
    model: &mut MlpModel,
    data: &DatasetSplit,
    rows: &[usize],
    epochs: usize,
    batch_size: usize,
    cfg: &OptimizerConfig,
    order_seed: u64,
    what: &str,
) -> Result<(f64, usize)> {
    if rows.is_empty() {
        return Err(Error::Input(format!("{what} has no training rows")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    cfg.validate()?;
    let state = crate::optim::OptimState::new(cfg.kind, model.param_count());
    let mut stream = BatchStream::new(rows.to_vec(), batch_size, order_seed);
    let steps_per_epoch = rows.len().div_ceil(batch_size);
    let total_steps = epochs * steps_per_epoch;
    let mut params = model.flatten_params();
    let mut last_loss = f64::NAN;
    for step_idx in 0..total_steps {
        let batch = stream.next();
        let (x, y) = data.gather(&batch);
        let trace = model.forward(&x)?;
        let (loss, grads) = model.backward_ce(&trace, &y)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {loss} at {what} step {step_idx}"
            )));
        }
        let lr = cfg.effective_lr(state.step_count())?;
        crate::optim::step_with_lr(&mut params, &grads.flatten(), &state, cfg, lr)?;
        model.set_from_flat(&params)?;
        last_loss = loss;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence(format!(
            "parameters non-finite after {total_steps} {what} steps"
        )));
    }
    Ok((last_loss, total_steps))
}

/// Train a fresh model on all training rows (forget and retain alike).
pub fn pretrain(
    data: &DatasetSplit,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainSummary)> {
    if epochs == 0 {
        return Err(Error::Config("pretrain needs epochs >= 1".into()));
    }
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(hidden);
    dims.push(data.num_classes);
    let mut model = MlpModel::new(&dims, derive_seed(seed, "init"))?;
    let rows = data.train_indices();
    let (final_loss, steps) = train_ce_loop(
        &mut model,
        data,
        &rows,
        epochs,
        batch_size,
        cfg,
        derive_seed(seed, "pretrain-order"),
        "pretrain",
    )?;
    let (tx, ty) = data.subset(RowTag::Test);
    let (xx, xy) = data.gather(&rows);
    let summary = TrainSummary {
        train_accuracy: model.accuracy(&xx, &xy)?,
        test_accuracy: model.accuracy(&tx, &ty)?,
        final_loss,
        steps,
    };
    Ok((Checkpoint::new(model, Role::Pretrained, seed), summary))
}

/// Train a fresh model on the retain rows only — the exact-unlearning
/// reference. The dataset must carry a forget split.
pub fn retrain(
    data: &DatasetSplit,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainSummary)> {
    if data.count(RowTag::Forget) == 0 {
        return Err(Error::Input(
            "retrain reference needs a forget split (nothing is being forgotten)".into(),
        ));
    }
    if epochs == 0 {
        return Err(Error::Config("retrain needs epochs >= 1".into()));
    }
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(hidden);
    dims.push(data.num_classes);
    let mut model = MlpModel::new(&dims, derive_seed(seed, "retrain-init"))?;
    let rows = data.indices(RowTag::Retain);
    let (final_loss, steps) = train_ce_loop(
        &mut model,
        data,
        &rows,
        epochs,
        batch_size,
        cfg,
        derive_seed(seed, "retrain-order"),
        "retrain",
    )?;
    let (tx, ty) = data.subset(RowTag::Test);
    let (rx, ry) = data.subset(RowTag::Retain);
    let summary = TrainSummary {
        train_accuracy: model.accuracy(&rx, &ry)?,
        test_accuracy: model.accuracy(&tx, &ty)?,
        final_loss,
        steps,
    };
    Ok((Checkpoint::new(model, Role::Retrained, seed), summary))
}

/// Run the alternating unlearning loop from the task's pretrained model.
pub fn run_unlearn(task: &UnlearnTask, cfg: &UnlearnConfig) -> Result<(Checkpoint, DiagnosticTrace)> {
    cfg.validate()?;
    let data = &task.data;
    let forget_rows = data.indices(RowTag::Forget);
    let retain_rows = data.indices(RowTag::Retain);
    if cfg.t_forget > 0 && forget_rows.is_empty() {
        return Err(Error::Input("forget phase requested but the forget set is empty".into()));
    }
    if cfg.t_retain > 0 && retain_rows.is_empty() {
        return Err(Error::Input("retain phase requested but the retain set is empty".into()));
    }

    let mut model = task.pretrained.clone();
    let teacher = if cfg.method == Method::ScrubKl { Some(task.pretrained.clone()) } else { None };
    let mask = if cfg.method == Method::SalUnRl {
        Some(compute_saliency_mask(&model, data, cfg.saliency_fraction)?)
    } else {
        None
    };
    let mut duo = cfg.optim.build(model.param_count())?;
    let mut forget_stream = (cfg.t_forget > 0).then(|| {
        BatchStream::new(forget_rows, cfg.batch_forget, derive_seed(task.seed, "forget-order"))
    });
    let mut retain_stream = (cfg.t_retain > 0).then(|| {
        BatchStream::new(retain_rows, cfg.batch_retain, derive_seed(task.seed, "retain-order"))
    });
    let mut rl_rng = SplitMix64::new(derive_seed(task.seed, "relabel"));

    let mut params = model.flatten_params();
    let mut trace = DiagnosticTrace::default();
    let mut global_step = 0usize;
    for outer in 1..=cfg.t_outer {
        let mut last_forget_grad: Option<Vec<f64>> = None;
        for _ in 0..cfg.t_forget {
            let batch = forget_stream.as_mut().expect("forget stream exists").next();
            let (x, y) = data.gather(&batch);
            let (loss, mut grad) = forget_objective(
                cfg.method,
                &model,
                &x,
                &y,
                data.num_classes,
                teacher.as_ref(),
                &mut rl_rng,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite forget loss {loss} at step {global_step} (outer loop {outer})"
                )));
            }
            if let Some(mask) = &mask {
                mask.apply(&mut grad);
            }
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            duo.step(&mut params, &grad, Phase::Forget)?;
            model.set_from_flat(&params)?;
            trace.steps.push(StepRecord {
                step: global_step,
                outer,
                phase: Phase::Forget,
                loss,
                grad_norm,
                cosine_fr: None,
            });
            last_forget_grad = Some(grad);
            global_step += 1;
        }
        for _ in 0..cfg.t_retain {
            let batch = retain_stream.as_mut().expect("retain stream exists").next();
            let (x, y) = data.gather(&batch);
            let (loss, grad) = retain_objective(
                cfg.method,
                &model,
                &x,
                &y,
                teacher.as_ref(),
                cfg.kl_retain_weight,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite retain loss {loss} at step {global_step} (outer loop {outer})"
                )));
            }
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let cosine_fr = last_forget_grad
                .as_ref()
                .and_then(|fg| cosine_similarity(fg, &grad).ok());
            duo.step(&mut params, &grad, Phase::Retain)?;
            model.set_from_flat(&params)?;
            trace.steps.push(StepRecord {
                step: global_step,
                outer,
                phase: Phase::Retain,
                loss,
                grad_norm,
                cosine_fr,
            });
            global_step += 1;
        }
    }
    // Losses are checked before each step, so a blow-up on the very last
    // update would otherwise escape unreported.
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence(format!(
            "parameters non-finite after {global_step} unlearning steps"
        )));
    }
    Ok((Checkpoint::new(model, Role::Unlearned, task.seed), trace))
}
