use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{normalize_inception, Dataset, ImageSource};
use super::metrics::{EpochRecord, MetricsLog, StepRecord};
use super::optim::{adamw_step, clip_grad_norm, lr_schedule, AdamState};
use super::{RunConfig, SelectionConfig, TrainConfig};
use crate::error::{param_err, Result, SmtError};
use crate::model::{
    forward, init_params, loss_grad_logits, Checkpoint, Logits, Mode, ModelConfig, ModelParams, PatchSequence,
};
use crate::patching::{extract_patches, patch_scores, select_top_m, PatchSelection};
use crate::saliency::{SaliencyMap, SaliencyOperator, SaliencyParams};
use crate::signal::{resize_rgb, to_luminance, LuminanceImage, RgbImage};

/// Saliency maps stored as raw little-endian `f64` files named by the
/// SHA-256 of the luminance pixels, their shape and the parameters.
#[derive(Debug, Clone)]
pub struct SaliencyCache {
    dir: PathBuf,
}

impl SaliencyCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| SmtError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(lum: &LuminanceImage, params: &SaliencyParams) -> String {
        let mut h = Sha256::new();
        h.update(b"smt-saliency-v1");
        h.update((lum.height() as u64).to_le_bytes());
        h.update((lum.width() as u64).to_le_bytes());
        for v in lum.pixels() {
            h.update(v.to_le_bytes());
        }
        h.update(serde_json::to_vec(params).expect("params serialize"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.f64"))
    }

    pub fn get_or_compute(&self, op: &SaliencyOperator, lum: &LuminanceImage) -> Result<SaliencyMap> {
        let key = Self::key(lum, op.params());
        let path = self.path_for(&key);
        let n = lum.height() * lum.width();
        if let Ok(bytes) = fs::read(&path) {
            if bytes.len() == n * 8 {
                let values = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let img = LuminanceImage::new(lum.height(), lum.width(), values)?;
                if let Ok(map) = SaliencyMap::from_values(img, *op.params()) {
                    return Ok(map);
                }
            }
        }
        let map = op.compute(lum)?;
        let bytes: Vec<u8> = map.values().pixels().iter().flat_map(|v| v.to_le_bytes()).collect();
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| SmtError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| SmtError::io(&path, e))?;
        Ok(map)
    }
}

/// Saliency and selection settings stored with a checkpoint so evaluation
/// can preprocess exactly as training did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub saliency: SaliencyParams,
    pub selection: SelectionConfig,
}

/// Turns images into model inputs: resize, saliency, top-m, normalize, cut.
pub struct Preprocessor {
    cfg: ModelConfig,
    m: usize,
    selection: SelectionConfig,
    operator: SaliencyOperator,
    cache: Option<SaliencyCache>,
}

impl Preprocessor {
    pub fn new(
        cfg: &ModelConfig,
        saliency: SaliencyParams,
        selection: SelectionConfig,
        cache: Option<SaliencyCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        let m = selection.resolve_m(cfg.num_patches())?;
        let operator = SaliencyOperator::new(saliency, cfg.input_size, cfg.input_size)?;
        Ok(Self {
            cfg: *cfg,
            m,
            selection,
            operator,
            cache,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn load(&self, source: &ImageSource) -> Result<RgbImage> {
        let img = source.load()?;
        let side = self.cfg.input_size;
        if img.shape() == (side, side) {
            Ok(img)
        } else {
            resize_rgb(&img, side, side)
        }
    }

    pub fn saliency(&self, img: &RgbImage) -> Result<SaliencyMap> {
        let lum = to_luminance(img);
        match &self.cache {
            Some(cache) => cache.get_or_compute(&self.operator, &lum),
            None => self.operator.compute(&lum),
        }
    }

    /// Top-m patches in the configured feed order.
    pub fn select(&self, img: &RgbImage) -> Result<PatchSelection> {
        let scores = patch_scores(&self.saliency(img)?, self.cfg.patch_size)?;
        Ok(select_top_m(&scores, self.m)?.in_order(self.selection.order))
    }

    pub fn sequence(&self, img: &RgbImage) -> Result<PatchSequence> {
        let sel = self.select(img)?;
        let patches = extract_patches(&normalize_inception(img), &sel, self.cfg.patch_size)?;
        Ok(PatchSequence::from_patches(&patches))
    }

    pub fn prepare(&self, dataset: &Dataset) -> Result<Prepared> {
        let inputs = dataset
            .items
            .par_iter()
            .map(|item| self.sequence(&self.load(&item.source)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            inputs,
            labels: dataset.labels(),
            num_classes: dataset.num_classes(),
        })
    }
}

/// Model-ready inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub inputs: Vec<PatchSequence>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Prepared {
        Prepared {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

const PREDICT_CHUNK: usize = 64;

/// Eval-mode logits for every input.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, inputs: &[PatchSequence]) -> Result<Logits> {
    let mut data = Vec::with_capacity(inputs.len() * cfg.num_classes);
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        data.extend(forward(chunk, params, cfg, Mode::Eval)?.data);
    }
    Ok(Logits {
        num_classes: cfg.num_classes,
        data,
    })
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Logits, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() || labels.is_empty() {
        return param_err(format!("{} logit rows for {} labels", logits.rows(), labels.len()));
    }
    let hits = logits.argmax().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub best: Checkpoint,
    pub metrics: MetricsLog,
    pub total_steps: usize,
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn dropout_seed(seed: u64, step: usize, micro: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((step as u64) << 16)
        .wrapping_add(micro as u64)
}

/// Optimizes a freshly initialized model on prepared inputs.
///
/// Each optimizer step averages the gradients of up to `grad_accum_steps`
/// micro-batches, weighted by micro-batch size so the result equals the
/// gradient of one batch of the combined size. Step `t` (1-based) uses
/// `lr_schedule(t, total_steps)`. After every epoch the model is scored on
/// the training inputs and, when given, the eval inputs; the checkpoint
/// with the best eval accuracy (train accuracy without an eval set) is
/// kept, the earliest winning ties. With `out_dir`, `last.ckpt`,
/// `best.ckpt`, `metrics.csv` and `epochs.csv` are written there.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &Prepared,
    eval_data: Option<&Prepared>,
    extra: serde_json::Value,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let mut cfg = *model_cfg;
    cfg.dropout_rate = train_cfg.dropout;
    cfg.validate()?;
    if train_data.is_empty() {
        return param_err("training set is empty");
    }
    for d in std::iter::once(train_data).chain(eval_data) {
        if d.num_classes != cfg.num_classes {
            return param_err(format!(
                "dataset has {} classes, model has {}",
                d.num_classes, cfg.num_classes
            ));
        }
    }
    let n = train_data.len();
    let group = train_cfg.effective_batch();
    let steps_per_epoch = n.div_ceil(group);
    let total_steps = steps_per_epoch * train_cfg.epochs;
    let mode_for = |step: usize, micro: usize| {
        if cfg.dropout_rate > 0.0 {
            Mode::Train {
                seed: dropout_seed(train_cfg.seed, step, micro),
            }
        } else {
            Mode::Eval
        }
    };

    let mut params = init_params(&cfg, train_cfg.seed)?;
    let mut state = AdamState::new(&params);
    let mut metrics = MetricsLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut step = 0;
    for epoch in 0..train_cfg.epochs {
        let order = shuffled(n, train_cfg.seed, epoch);
        let mut correct = 0usize;
        for chunk in order.chunks(group) {
            step += 1;
            let mut grad = params.zeros_like();
            let mut loss = 0.0;
            for (micro, idx) in chunk.chunks(train_cfg.batch_size).enumerate() {
                let batch: Vec<PatchSequence> = idx.iter().map(|&i| train_data.inputs[i].clone()).collect();
                let labels: Vec<usize> = idx.iter().map(|&i| train_data.labels[i]).collect();
                let (l, g, logits) = loss_grad_logits(&batch, &labels, &params, &cfg, mode_for(step, micro))?;
                correct += logits.argmax().iter().zip(&labels).filter(|(p, y)| p == y).count();
                let w = idx.len() as f64 / chunk.len() as f64;
                loss += w * l;
                grad.add_scaled(&g, w);
            }
            if !loss.is_finite() || !grad.all_finite() {
                return Err(SmtError::Divergence { step, loss });
            }
            clip_grad_norm(&mut grad, train_cfg.clip_norm);
            let lr = lr_schedule(step, total_steps, train_cfg);
            adamw_step(&mut params, &grad, &mut state, lr, train_cfg.weight_decay);
            metrics.push_step(StepRecord { step, lr, loss })?;
        }
        if !params.all_finite() {
            return Err(SmtError::Divergence {
                step,
                loss: f64::NAN,
            });
        }

        let train_acc = correct as f64 / n as f64;
        let eval_acc = match eval_data {
            Some(d) => Some(accuracy(&predict(&params, &cfg, &d.inputs)?, &d.labels)?),
            None => None,
        };
        metrics.push_epoch(EpochRecord {
            epoch: epoch + 1,
            train_acc,
            eval_acc,
        });
        let mut meta = extra.clone();
        if let serde_json::Value::Object(map) = &mut meta {
            map.insert("epoch".into(), (epoch + 1).into());
            map.insert("train_acc".into(), train_acc.into());
            map.insert("eval_acc".into(), eval_acc.into());
        }
        let ckpt = Checkpoint::new(cfg, train_cfg.seed, step as u64, meta, params.clone());
        let score = eval_acc.unwrap_or(train_acc);
        let improved = best.as_ref().is_none_or(|(s, _)| score > *s);
        if let Some(dir) = out_dir {
            ckpt.save(&dir.join("last.ckpt"))?;
            if improved {
                ckpt.save(&dir.join("best.ckpt"))?;
            }
            metrics.write(dir)?;
        }
        if improved {
            best = Some((score, ckpt));
        }
    }
    Ok(TrainOutcome {
        params,
        best: best.expect("at least one epoch").1,
        metrics,
        total_steps,
    })
}

/// Preprocesses the datasets per `run` and trains.
pub fn train(run: &RunConfig, train_set: &Dataset, eval_set: Option<&Dataset>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    run.validate()?;
    let cache = run.cache_dir().map(SaliencyCache::new).transpose()?;
    let pre = Preprocessor::new(&run.model, run.saliency, run.selection, cache)?;
    let train_data = pre.prepare(train_set)?;
    let eval_data = eval_set.map(|d| pre.prepare(d)).transpose()?;
    let settings = RunSettings {
        saliency: run.saliency,
        selection: run.selection,
    };
    let extra = serde_json::to_value(settings).map_err(|e| SmtError::Format(e.to_string()))?;
    fit(&run.model, &run.train, &train_data, eval_data.as_ref(), extra, out_dir)
}

/// Top-1 accuracy of a checkpoint on a dataset, preprocessed with the
/// saliency and selection settings recorded in the checkpoint.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, cache: Option<SaliencyCache>) -> Result<f64> {
    let cfg = ckpt.header.model;
    if dataset.num_classes() != cfg.num_classes {
        return param_err(format!(
            "dataset has {} classes, checkpoint has {}",
            dataset.num_classes(),
            cfg.num_classes
        ));
    }
    let settings: RunSettings = serde_json::from_value(strip_progress(&ckpt.header.extra))
        .map_err(|e| SmtError::Config(format!("checkpoint lacks preprocessing settings: {e}")))?;
    let pre = Preprocessor::new(&cfg, settings.saliency, settings.selection, cache)?;
    let data = pre.prepare(dataset)?;
    accuracy(&predict(&ckpt.params, &cfg, &data.inputs)?, &data.labels)
}

fn strip_progress(extra: &serde_json::Value) -> serde_json::Value {
    let mut v = extra.clone();
    if let serde_json::Value::Object(map) = &mut v {
        for k in ["epoch", "train_acc", "eval_acc"] {
            map.remove(k);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::make_synthetic_dataset;

    fn tiny_run() -> RunConfig {
        let mut run = RunConfig::default();
        run.model = ModelConfig {
            input_size: 32,
            patch_size: 4,
            embed_dim: 16,
            num_heads: 2,
            depth: 1,
            mlp_dim: 32,
            num_classes: 3,
            dropout_rate: 0.0,
        };
        run.train.epochs = 2;
        run.train.batch_size = 4;
        run.train.warmup_steps = 2;
        run.selection = SelectionConfig::with_m(16);
        run
    }

    #[test]
    fn cache_hit_returns_same_map() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SaliencyCache::new(dir.path()).unwrap();
        let op = SaliencyOperator::new(SaliencyParams::default(), 32, 32).unwrap();
        let lum = LuminanceImage::from_fn(32, 32, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap();
        let a = cache.get_or_compute(&op, &lum).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = cache.get_or_compute(&op, &lum).unwrap();
        assert_eq!(a.values(), b.values());
        let other = lum.scaled(0.5).unwrap();
        assert_ne!(SaliencyCache::key(&lum, &SaliencyParams::default()), SaliencyCache::key(&other, &SaliencyParams::default()));
        let mut p = SaliencyParams::default();
        p.rog.tau = 0.02;
        assert_ne!(SaliencyCache::key(&lum, &SaliencyParams::default()), SaliencyCache::key(&lum, &p));
    }

    #[test]
    fn prepared_inputs_have_m_patches() {
        let run = tiny_run();
        let pre = Preprocessor::new(&run.model, run.saliency, run.selection, None).unwrap();
        let data = pre.prepare(&make_synthetic_dataset(2, 32, 0).unwrap()).unwrap();
        assert_eq!(data.len(), 6);
        assert!(data.inputs.iter().all(|s| s.len() == 16 && s.patches.len() == 16 * 48));
        assert!(data.inputs[0].patches.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_logits_give_chance_accuracy() {
        let logits = Logits {
            num_classes: 3,
            data: [1.0, 0.0, 0.0].repeat(6),
        };
        assert!((accuracy(&logits, &[0, 1, 2, 0, 1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let perfect = Logits {
            num_classes: 3,
            data: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert_eq!(accuracy(&perfect, &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_ignores_positive_rescaling() {
        let logits = Logits {
            num_classes: 3,
            data: vec![0.3, -1.0, 0.2, 0.0, 0.1, 0.5, 2.0, 2.5, -3.0],
        };
        let scaled = Logits {
            num_classes: 3,
            data: logits.data.iter().map(|v| v * 7.5).collect(),
        };
        let labels = [0, 2, 0];
        assert_eq!(accuracy(&logits, &labels).unwrap(), accuracy(&scaled, &labels).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_writes_outputs() {
        let run = tiny_run();
        let data = make_synthetic_dataset(4, 32, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = train(&run, &data, Some(&data), Some(dir.path())).unwrap();
        let b = train(&run, &data, Some(&data), None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        assert_eq!(a.total_steps, 2 * 3);
        assert_eq!(a.metrics.steps.len(), 6);
        for f in ["last.ckpt", "best.ckpt", "metrics.csv", "epochs.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let acc = evaluate(&Checkpoint::load(&dir.path().join("best.ckpt")).unwrap(), &data, None).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn first_logged_loss_is_log_three() {
        let run = tiny_run();
        let data = make_synthetic_dataset(4, 32, 2).unwrap();
        let out = train(&run, &data, None, None).unwrap();
        assert!((out.metrics.steps[0].loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn accumulation_matches_large_batch() {
        let run = tiny_run();
        let pre = Preprocessor::new(&run.model, run.saliency, run.selection, None).unwrap();
        let data = pre.prepare(&make_synthetic_dataset(4, 32, 3).unwrap()).unwrap();
        let mut big = run.train;
        big.epochs = 1;
        big.batch_size = 12;
        let mut small = big;
        small.batch_size = 4;
        small.grad_accum_steps = 3;
        let a = fit(&run.model, &big, &data, None, serde_json::json!({}), None).unwrap();
        let b = fit(&run.model, &small, &data, None, serde_json::json!({}), None).unwrap();
        assert!((a.metrics.steps[0].loss - b.metrics.steps[0].loss).abs() < 1e-12);
        let mut diff = a.params.clone();
        diff.add_scaled(&b.params, -1.0);
        assert!(diff.global_norm() < 1e-10);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let mut run = tiny_run();
        run.model.num_classes = 4;
        let data = make_synthetic_dataset(2, 32, 4).unwrap();
        assert!(train(&run, &data, None, None).is_err());
        let good = tiny_run();
        let out = train(&good, &data, None, None).unwrap();
        let mut ckpt = out.best;
        ckpt.header.model.num_classes = 5;
        assert!(evaluate(&ckpt, &data, None).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let run = tiny_run();
        let pre = Preprocessor::new(&run.model, run.saliency, run.selection, None).unwrap();
        let mut data = pre.prepare(&make_synthetic_dataset(1, 32, 5).unwrap()).unwrap();
        data.inputs[0].patches[0] = f64::NAN;
        let err = fit(&run.model, &run.train, &data, None, serde_json::json!({}), None).err().unwrap();
        assert!(matches!(err, SmtError::Divergence { step: 1, .. }));
        assert!(!err.is_user_error());
    }
}
