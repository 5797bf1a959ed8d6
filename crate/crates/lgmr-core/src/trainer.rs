//! Training loop: adaptive-moment optimizer, paragraph-shuffle curriculum,
//! per-layer deep supervision (built into the model loss), line-delimited
//! metrics log, checkpoint/resume, and finite-difference gradient checks.
//!
//! Determinism contract: training is single-threaded; the sample order and
//! augmentation randomness for epoch E derive from (seed, E) alone, so a run
//! resumed from an epoch-boundary checkpoint replays exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    load_params_from, params_to_tensors_f32, params_to_tensors_f64, Archive, NamedTensor,
    TensorData,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::LgmrModel;
use crate::nn::Tensor;
use crate::objective::LossBreakdown;
use crate::sample::SynopsisSample;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    /// Write a checkpoint every this many epochs (and at the end).
    pub eval_every: usize,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64, checkpoint_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            model,
            seed,
            checkpoint_dir: checkpoint_dir.into(),
            eval_every: 10,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip must be > 0"));
            }
        }
        Ok(())
    }
}

/// p = max(0, 1 - T_i / T_max): shuffle everything at epoch 0, nothing from
/// epoch T_max on.
pub fn shuffle_probability(epoch_index: usize, t_max: usize) -> f64 {
    assert!(t_max > 0, "t_max must be positive");
    (1.0 - epoch_index as f64 / t_max as f64).max(0.0)
}

/// With probability p, applies one uniform random permutation jointly to the
/// paragraphs and their ground-truth intervals. Feature values are never
/// altered, only order.
pub fn augment_sample(sample: &SynopsisSample, p: f64, rng: &mut impl Rng) -> SynopsisSample {
    assert!((0.0..=1.0).contains(&p), "p must lie in [0,1]");
    let n = sample.num_paragraphs();
    if p == 0.0 || n <= 1 {
        return sample.clone();
    }
    if rng.random::<f64>() >= p {
        return sample.clone();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = sample.clone();
    out.paragraphs = order.iter().map(|&i| sample.paragraphs[i].clone()).collect();
    out.ground_truth = order.iter().map(|&i| sample.ground_truth[i]).collect();
    out
}

/// Adaptive-moment optimizer state (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &crate::nn::ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over all parameters; `grads` aligns with the set. Applies
    /// global-norm clipping first when configured.
    pub fn step(
        &mut self,
        params: &mut crate::nn::ParamSet,
        grads: &[Tensor],
        lr: f64,
        grad_clip: Option<f64>,
    ) {
        let mut scale = 1.0;
        if let Some(clip) = grad_clip {
            let norm: f64 = grads
                .iter()
                .flat_map(|g| g.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let g = &grads[idx];
            for k in 0..p.data.len() {
                let gk = g.data[k] * scale;
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One metrics-log line, serialized as line-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l1: f64,
    pub giou: f64,
    pub att: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub params_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    train_config: TrainConfig,
    video_dim: usize,
    text_dim: usize,
    epochs_completed: usize,
    step: u64,
    adam_t: u64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn checkpoint_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_epoch{epoch:04}.lgmrckpt"))
}

/// Writes a resumable f64 checkpoint (parameters + optimizer state).
pub fn save_checkpoint(
    path: &Path,
    model: &LgmrModel,
    tc: &TrainConfig,
    adam: &Adam,
    epochs_completed: usize,
    step: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        train_config: tc.clone(),
        video_dim: model.video_dim,
        text_dim: model.text_dim,
        epochs_completed,
        step,
        adam_t: adam.t,
    };
    let mut tensors = params_to_tensors_f64(&model.params);
    for (idx, (name, _)) in model.params.iter().enumerate() {
        tensors.push(NamedTensor {
            name: format!("adam.m.{name}"),
            dims: vec![adam.m[idx].rows, adam.m[idx].cols],
            data: TensorData::F64(adam.m[idx].data.clone()),
        });
        tensors.push(NamedTensor {
            name: format!("adam.v.{name}"),
            dims: vec![adam.v[idx].rows, adam.v[idx].cols],
            data: TensorData::F64(adam.v[idx].data.clone()),
        });
    }
    Archive {
        meta: serde_json::to_value(&meta)?,
        tensors,
    }
    .save(path)
}

/// Rebuilds the model (and optimizer state when present) from a checkpoint or
/// a parameter-only export.
pub fn load_model(path: &Path) -> Result<(LgmrModel, TrainConfig, Option<Adam>, usize, u64)> {
    let archive = Archive::load(path)?;
    let meta: CheckpointMeta = archive.meta_as()?;
    let mut model = LgmrModel::new(
        meta.train_config.model.clone(),
        meta.video_dim,
        meta.text_dim,
        meta.train_config.seed,
    )?;
    load_params_from(&mut model.params, &archive)?;

    let mut adam = Adam::new(&model.params);
    let mut has_state = true;
    for (idx, (name, _)) in model.params.iter().enumerate() {
        match (
            archive.find(&format!("adam.m.{name}")),
            archive.find(&format!("adam.v.{name}")),
        ) {
            (Some(m), Some(v)) => {
                adam.m[idx].data = m.data.to_f64();
                adam.v[idx].data = v.data.to_f64();
            }
            _ => {
                has_state = false;
                break;
            }
        }
    }
    adam.t = meta.adam_t;
    Ok((
        model,
        meta.train_config,
        has_state.then_some(adam),
        meta.epochs_completed,
        meta.step,
    ))
}

/// Writes the portable f32 parameter export.
pub fn export_params(path: &Path, model: &LgmrModel, tc: &TrainConfig) -> Result<()> {
    let meta = CheckpointMeta {
        train_config: tc.clone(),
        video_dim: model.video_dim,
        text_dim: model.text_dim,
        epochs_completed: 0,
        step: 0,
        adam_t: 0,
    };
    Archive {
        meta: serde_json::to_value(&meta)?,
        tensors: params_to_tensors_f32(&model.params),
    }
    .save(path)
}

/// Trains from scratch. See [`train_from`] for the resumable core.
pub fn train(
    model: &mut LgmrModel,
    dataset: &[SynopsisSample],
    tc: &TrainConfig,
) -> Result<TrainReport> {
    let mut adam = Adam::new(&model.params);
    train_from(model, dataset, tc, &mut adam, 0, 0)
}

/// Runs epochs `start_epoch..model.epochs`, appending to the metrics log and
/// writing checkpoints every `eval_every` epochs.
pub fn train_from(
    model: &mut LgmrModel,
    dataset: &[SynopsisSample],
    tc: &TrainConfig,
    adam: &mut Adam,
    start_epoch: usize,
    start_step: u64,
) -> Result<TrainReport> {
    tc.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    fs::create_dir_all(&tc.checkpoint_dir)?;
    let metrics_path = tc.checkpoint_dir.join("metrics.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;

    let cfg = &tc.model;
    let mut steps = Vec::new();
    let mut step = start_step;
    let mut final_loss = f64::NAN;
    let mut checkpoint_path = checkpoint_file(&tc.checkpoint_dir, start_epoch);

    for epoch in start_epoch..cfg.epochs {
        let p = shuffle_probability(epoch, cfg.t_max);
        let mut rng = epoch_rng(tc.seed, epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let mut acc: Vec<Tensor> = model
                .params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect();
            let mut sums = StepRecord {
                step: step + 1,
                epoch,
                l1: 0.0,
                giou: 0.0,
                att: 0.0,
                total: 0.0,
            };
            for &idx in batch {
                let sample = augment_sample(&dataset[idx], p, &mut rng);
                let (breakdown, grads) = model.loss_and_grads(&sample).map_err(|e| {
                    Error::numeric(format!(
                        "epoch {epoch} step {} sample {idx} ({}): {e}",
                        step + 1,
                        sample.video_id
                    ))
                })?;
                accumulate_breakdown(&mut sums, &breakdown, inv);
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.data.iter_mut().zip(&g.data) {
                        *av += gv * inv;
                    }
                }
            }
            if !sums.total.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite batch loss at epoch {epoch} step {}",
                    step + 1
                )));
            }
            adam.step(&mut model.params, &acc, cfg.learning_rate, tc.grad_clip);
            step += 1;
            final_loss = sums.total;
            writeln!(log, "{}", serde_json::to_string(&sums)?)?;
            steps.push(sums);
        }

        let completed = epoch + 1;
        if completed % tc.eval_every == 0 || completed == cfg.epochs {
            checkpoint_path = checkpoint_file(&tc.checkpoint_dir, completed);
            save_checkpoint(&checkpoint_path, model, tc, adam, completed, step)?;
        }
    }

    let params_path = tc.checkpoint_dir.join("model_final.lgmrparams");
    export_params(&params_path, model, tc)?;

    Ok(TrainReport {
        steps,
        final_loss,
        epochs_run: cfg.epochs - start_epoch,
        metrics_path,
        checkpoint_path,
        params_path,
    })
}

fn accumulate_breakdown(acc: &mut StepRecord, b: &LossBreakdown, weight: f64) {
    acc.l1 += b.l1 * weight;
    acc.giou += b.giou * weight;
    acc.att += b.att * weight;
    acc.total += b.total * weight;
}

// ---- gradient verification --------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Worst relative error per top-level parameter group.
    pub groups: Vec<(String, f64)>,
    pub worst: f64,
    pub params_checked: usize,
}

/// Central-difference verification of the analytic gradients of
/// `loc_weight * loc + att_weight * att` over every parameter scalar.
/// Step 1e-5, double precision throughout.
pub fn gradient_check(
    model: &mut LgmrModel,
    sample: &SynopsisSample,
    loc_weight: f64,
    att_weight: f64,
) -> Result<GradCheckReport> {
    let h = 1e-5;
    let (g, bp, total) = model.loss_graph_weighted(sample, loc_weight, att_weight)?;
    let node_grads = g.backward(total);
    let analytic = bp.gradients(&model.params, &node_grads);
    drop(g);

    let mut groups: Vec<(String, f64)> = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for idx in 0..model.params.len() {
        let id = crate::nn::PId(idx);
        let name = model.params.name(id).to_string();
        let group = name.split('.').next().unwrap_or("params").to_string();
        let len = model.params.tensor(id).data.len();
        let mut group_worst = 0.0f64;
        for k in 0..len {
            let orig = model.params.tensor(id).data[k];
            model.params.tensor_mut(id).data[k] = orig + h;
            let plus = eval_weighted(model, sample, loc_weight, att_weight)?;
            model.params.tensor_mut(id).data[k] = orig - h;
            let minus = eval_weighted(model, sample, loc_weight, att_weight)?;
            model.params.tensor_mut(id).data[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[idx].data[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            group_worst = group_worst.max(rel);
            checked += 1;
        }
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, w)) => *w = w.max(group_worst),
            None => groups.push((group, group_worst)),
        }
        worst = worst.max(group_worst);
    }
    Ok(GradCheckReport {
        groups,
        worst,
        params_checked: checked,
    })
}

fn eval_weighted(
    model: &LgmrModel,
    sample: &SynopsisSample,
    loc_weight: f64,
    att_weight: f64,
) -> Result<f64> {
    let (g, _, total) = model.loss_graph_weighted(sample, loc_weight, att_weight)?;
    Ok(g.value(total).item())
}
