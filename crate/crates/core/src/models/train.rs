//! Seeded, single-threaded training loops for the three model families.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{encode_targets, loss_weights, DetectorSpec};
use super::gan::GanSpec;
use super::model::{image_batch, mask_batch, shadow_free_batch, Model, ModelSpec, EVAL_BATCH};
use super::network::{Network, ParamSet};
use super::{ModelError, Result};
use crate::datakit::Sample;
use crate::evalkit::{map50, GroundTruth};
use crate::tensorcore::{OptimizerKind, OptimizerState, Tape, Tensor, TensorError, Var};

/// Default ceiling on the estimated bytes of one training step.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;
/// Confidence floor used when decoding detections for validation.
pub const VAL_CONF_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub memory_budget: u64,
}

impl TrainConfig {
    pub fn segmentation(seed: u64) -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.05,
            batch_size: 4,
            seed,
            optimizer: OptimizerKind::SgdMomentum { momentum: 0.9 },
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn detector(seed: u64) -> Self {
        Self::segmentation(seed)
    }

    pub fn gan(seed: u64) -> Self {
        TrainConfig {
            lr: 2e-3,
            optimizer: OptimizerKind::Adam {
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
            ..Self::segmentation(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Spec(format!(
                "batch size must be positive and lr positive and finite (batch {}, lr {})",
                self.batch_size, self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// Per-epoch records plus the untrained baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub metric: String,
    pub baseline: EpochRecord,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().unwrap_or(&self.baseline)
    }

    pub fn record(&self, epoch: usize) -> Option<&EpochRecord> {
        if epoch == 0 {
            Some(&self.baseline)
        } else {
            self.epochs.get(epoch - 1)
        }
    }

    /// CSV with one row per completed epoch.
    pub fn to_csv(&self) -> String {
        let keys: Vec<&String> = self.epochs.first().map(|r| r.extra.keys().collect()).unwrap_or_default();
        let mut s = format!("epoch,train_loss,{}", self.metric);
        for k in &keys {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}", r.epoch, r.train_loss, r.val_metric));
            for k in &keys {
                s.push_str(&format!(",{}", r.extra.get(*k).copied().unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Model,
    pub best: Model,
    /// Epoch of the best validation metric (0 = untrained).
    pub best_epoch: usize,
    pub history: TrainHistory,
}

fn check_budget(spec: &ModelSpec, cfg: &TrainConfig) -> Result<()> {
    let required = spec.memory_estimate(cfg.batch_size)?;
    if required > cfg.memory_budget {
        return Err(TensorError::BudgetExceeded {
            op: "training step",
            required,
            budget: cfg.memory_budget,
        }
        .into());
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));
    idx
}

/// One optimisation step: records `loss_fn` on a fresh tape, back-propagates
/// and updates `params`. Returns the loss value.
fn sgd_step(
    net: &Network,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    budget: u64,
    loss_fn: impl FnOnce(&mut Tape, &Network, &[Var]) -> crate::tensorcore::Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::with_budget(budget);
    let vars = params.bind(&mut tape, true)?;
    let loss = loss_fn(&mut tape, net, &vars)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    params.pull_grads(&tape, &vars);
    opt.step(&mut params.tensors)?;
    Ok(value)
}

/// Mean loss over `samples` with frozen parameters.
fn eval_loss(
    net: &Network,
    params: &ParamSet,
    samples: &[&Sample],
    loss_fn: &impl Fn(&mut Tape, &Network, &[Var], &[&Sample]) -> Result<Var>,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false)?;
        let loss = loss_fn(&mut tape, net, &vars, chunk)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

struct Tracker {
    best: Option<(f64, usize, Model)>,
}

impl Tracker {
    fn offer(&mut self, metric: f64, epoch: usize, model: &Model) {
        if self.best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            self.best = Some((metric, epoch, model.clone()));
        }
    }
}

// ----------------------------------------------------------------------
// segmentation

fn seg_loss(tape: &mut Tape, net: &Network, vars: &[Var], batch: &[&Sample]) -> Result<Var> {
    let x = tape.constant(image_batch(batch)?)?;
    let target = mask_batch(batch)?;
    let pred = net.forward(tape, vars, x)?;
    Ok(tape.bce_loss(pred, &target)?)
}

/// Per-pixel BCE training of the encoder-decoder; validation metric is mean mask IoU.
pub fn train_segmentation(train: &[Sample], val: &[Sample], spec: &super::EncDecSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    for s in train.iter().chain(val) {
        if s.mask.is_none() {
            return Err(ModelError::MissingMask(s.id.clone()));
        }
    }
    let mspec = ModelSpec::Segmentation(spec.clone());
    check_budget(&mspec, cfg)?;
    let net = spec.network()?;
    let mut model = Model::init(mspec, cfg.seed)?;
    let train_refs: Vec<&Sample> = train.iter().collect();
    let val_refs: Vec<&Sample> = val.iter().collect();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, &model.params.tensors);

    let baseline = EpochRecord {
        epoch: 0,
        train_loss: eval_loss(&net, &model.params, &train_refs, &seg_loss)?,
        val_metric: model.mean_mask_iou(&val_refs)?,
        extra: BTreeMap::new(),
    };
    let mut tracker = Tracker { best: None };
    tracker.offer(baseline.val_metric, 0, &model);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let x = image_batch(&batch)?;
            let target = mask_batch(&batch)?;
            let loss = sgd_step(&net, &mut model.params, &mut opt, cfg.memory_budget, |tape, net, vars| {
                let x = tape.constant(x)?;
                let pred = net.forward(tape, vars, x)?;
                tape.bce_loss(pred, &target)
            })?;
            total += loss * batch.len() as f64;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len().max(1) as f64,
            val_metric: model.mean_mask_iou(&val_refs)?,
            extra: BTreeMap::new(),
        };
        tracker.offer(rec.val_metric, epoch, &model);
        epochs.push(rec);
    }
    finish(model, tracker, "val_mask_iou", baseline, epochs)
}

fn finish(model: Model, tracker: Tracker, metric: &str, baseline: EpochRecord, epochs: Vec<EpochRecord>) -> Result<TrainOutcome> {
    let (_, best_epoch, best) = tracker.best.expect("baseline offered");
    Ok(TrainOutcome {
        last: model,
        best,
        best_epoch,
        history: TrainHistory {
            metric: metric.to_string(),
            baseline,
            epochs,
        },
    })
}

// ----------------------------------------------------------------------
// detector

/// Targets and loss weights for a batch, shaped like the raw output.
pub fn detector_targets(spec: &DetectorSpec, batch: &[&Sample]) -> Result<(Tensor, Tensor, Tensor)> {
    let s = spec.grid();
    let k = spec.outputs_per_cell();
    let mut target = Vec::with_capacity(batch.len() * k * s * s);
    let mut wb = Vec::with_capacity(target.capacity());
    let mut wm = Vec::with_capacity(target.capacity());
    for sample in batch {
        let t = encode_targets(spec, &sample.boxes, sample.width() as f64, sample.height() as f64)
            .map_err(|e| match e {
                ModelError::BoxOutOfBounds(msg) => ModelError::BoxOutOfBounds(format!("{}: {msg}", sample.id)),
                other => other,
            })?;
        let (b, m) = loss_weights(spec, &t.responsible);
        target.extend(t.target);
        wb.extend(b);
        wm.extend(m);
    }
    let shape = vec![batch.len(), k, s, s];
    Ok((
        Tensor::new(shape.clone(), target)?,
        Tensor::new(shape.clone(), wb)?,
        Tensor::new(shape, wm)?,
    ))
}

/// Composite loss on raw outputs, averaged over grid cells.
pub fn detector_loss(tape: &mut Tape, raw: Var, target: &Tensor, bce_w: &Tensor, mse_w: &Tensor) -> crate::tensorcore::Result<Var> {
    let shape = tape.shape(raw);
    let n = (shape[0] * shape[2] * shape[3]) as f64;
    let p = tape.sigmoid(raw)?;
    let bce = tape.weighted_bce(p, target, bce_w, n)?;
    let mse = tape.weighted_mse(p, target, mse_w, n)?;
    tape.add(bce, mse)
}

fn det_eval_loss(spec: &DetectorSpec) -> impl Fn(&mut Tape, &Network, &[Var], &[&Sample]) -> Result<Var> + '_ {
    move |tape, net, vars, batch| {
        let (t, wb, wm) = detector_targets(spec, batch)?;
        let x = tape.constant(image_batch(batch)?)?;
        let raw = net.forward(tape, vars, x)?;
        Ok(detector_loss(tape, raw, &t, &wb, &wm)?)
    }
}

/// mAP50 of `model` on `samples` after decoding and NMS.
pub fn detector_map50(model: &Model, samples: &[&Sample]) -> Result<f64> {
    let dets = model.detect(samples, VAL_CONF_THRESHOLD)?;
    let gts: Vec<GroundTruth> = samples.iter().flat_map(|s| s.ground_truths()).collect();
    Ok(map50(&dets, &gts))
}

/// Composite-loss training of the grid detector; validation metric is mAP50.
pub fn train_detector(train: &[Sample], val: &[Sample], spec: &DetectorSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mspec = ModelSpec::Detector(spec.clone());
    check_budget(&mspec, cfg)?;
    let net = spec.network()?;
    let train_refs: Vec<&Sample> = train.iter().collect();
    let val_refs: Vec<&Sample> = val.iter().collect();
    // surface out-of-bounds boxes before any work
    for chunk in train_refs.chunks(EVAL_BATCH).chain(val_refs.chunks(EVAL_BATCH)) {
        detector_targets(spec, chunk)?;
    }
    let mut model = Model::init(mspec, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, &model.params.tensors);
    let loss_fn = det_eval_loss(spec);
    let baseline = EpochRecord {
        epoch: 0,
        train_loss: eval_loss(&net, &model.params, &train_refs, &loss_fn)?,
        val_metric: detector_map50(&model, &val_refs)?,
        extra: BTreeMap::new(),
    };
    let mut tracker = Tracker { best: None };
    tracker.offer(baseline.val_metric, 0, &model);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (t, wb, wm) = detector_targets(spec, &batch)?;
            let x = image_batch(&batch)?;
            let loss = sgd_step(&net, &mut model.params, &mut opt, cfg.memory_budget, |tape, net, vars| {
                let x = tape.constant(x)?;
                let raw = net.forward(tape, vars, x)?;
                detector_loss(tape, raw, &t, &wb, &wm)
            })?;
            total += loss * batch.len() as f64;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len().max(1) as f64,
            val_metric: detector_map50(&model, &val_refs)?,
            extra: BTreeMap::new(),
        };
        tracker.offer(rec.val_metric, epoch, &model);
        epochs.push(rec);
    }
    finish(model, tracker, "val_map50", baseline, epochs)
}

// ----------------------------------------------------------------------
// GAN

/// Mean luminance lift inside the ground-truth shadow minus the lift
/// outside it, averaged over samples that have both regions.
pub fn attenuation_score(model: &Model, samples: &[&Sample]) -> Result<f64> {
    let ModelSpec::Gan(spec) = &model.spec else {
        return Err(ModelError::Family {
            expected: "gan",
            actual: model.spec.family(),
        });
    };
    let masks = model.predict_masks(samples)?;
    let (mut total, mut count) = (0.0, 0usize);
    for (s, m) in samples.iter().zip(&masks) {
        let gt = s.mask.as_ref().ok_or_else(|| ModelError::MissingMask(s.id.clone()))?;
        let (mut lin, mut nin, mut lout, mut nout) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..s.height() {
            for x in 0..s.width() {
                let p = y * s.width() + x;
                let px = s.image.pixel(x, y);
                let lift: f64 = [0.299, 0.587, 0.114]
                    .iter()
                    .zip(px)
                    .map(|(w, v)| w * spec.gain * m[p] * (1.0 - v))
                    .sum();
                if gt.get(x, y) == 1 {
                    lin += lift;
                    nin += 1;
                } else {
                    lout += lift;
                    nout += 1;
                }
            }
        }
        if nin > 0 && nout > 0 {
            total += lin / nin as f64 - lout / nout as f64;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

struct GanStats {
    d_loss: f64,
    g_loss: f64,
    mean_mask: f64,
    d_real: f64,
    d_fake: f64,
}

fn gan_extra(stats: &GanStats, val_mean_mask: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("d_loss".to_string(), stats.d_loss),
        ("g_loss".to_string(), stats.g_loss),
        ("train_mean_mask".to_string(), stats.mean_mask),
        ("d_real".to_string(), stats.d_real),
        ("d_fake".to_string(), stats.d_fake),
        ("val_mean_mask".to_string(), val_mean_mask),
    ])
}

fn mean_mask(model: &Model, samples: &[&Sample]) -> Result<f64> {
    let masks = model.predict_masks(samples)?;
    let n: usize = masks.iter().map(Vec::len).sum();
    Ok(masks.iter().flatten().sum::<f64>() / n.max(1) as f64)
}

/// Losses of one batch without updating anything.
fn gan_batch_stats(spec: &GanSpec, g: &Network, d: &Network, model: &Model, batch: &[&Sample]) -> Result<GanStats> {
    let real = shadow_free_batch(batch)?;
    let mut tape = Tape::new();
    let gv = model.params.bind(&mut tape, false)?;
    let dv = model.discriminator.as_ref().expect("gan model").bind(&mut tape, false)?;
    let x = tape.constant(image_batch(batch)?)?;
    let m = g.forward(&mut tape, &gv, x)?;
    let fake = tape.attenuate(x, m, spec.gain)?;
    let r = tape.constant(real)?;
    let dr = d.forward(&mut tape, &dv, r)?;
    let df = d.forward(&mut tape, &dv, fake)?;
    let n = batch.len();
    let ones = Tensor::full(&[n, 1], 1.0);
    let zeros = Tensor::zeros(&[n, 1]);
    let lr = tape.bce_loss(dr, &ones)?;
    let lf = tape.bce_loss(df, &zeros)?;
    let lg = tape.bce_loss(df, &ones)?;
    let mm = tape.mean(m)?;
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
    Ok(GanStats {
        d_loss: tape.value(lr).item() + tape.value(lf).item(),
        g_loss: tape.value(lg).item() + spec.lambda * tape.value(mm).item(),
        mean_mask: tape.value(mm).item(),
        d_real: mean(tape.value(dr)),
        d_fake: mean(tape.value(df)),
    })
}

fn accumulate(acc: &mut GanStats, s: &GanStats, w: f64) {
    acc.d_loss += w * s.d_loss;
    acc.g_loss += w * s.g_loss;
    acc.mean_mask += w * s.mean_mask;
    acc.d_real += w * s.d_real;
    acc.d_fake += w * s.d_fake;
}

fn zero_stats() -> GanStats {
    GanStats {
        d_loss: 0.0,
        g_loss: 0.0,
        mean_mask: 0.0,
        d_real: 0.0,
        d_fake: 0.0,
    }
}

/// Alternating discriminator / generator updates. The discriminator sees
/// paired shadow-free renders as real and attenuated inputs as fake; the
/// generator minimises `-log D(fake) + λ·mean(M)`. Validation metric is the
/// attenuation score.
pub fn train_gan(train: &[Sample], val: &[Sample], spec: &GanSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    for s in train.iter().chain(val) {
        if s.shadow_free.is_none() {
            return Err(ModelError::MissingPair(s.id.clone()));
        }
        if s.mask.is_none() {
            return Err(ModelError::MissingMask(s.id.clone()));
        }
    }
    let mspec = ModelSpec::Gan(spec.clone());
    check_budget(&mspec, cfg)?;
    let g = spec.generator_network()?;
    let d = spec.discriminator_network()?;
    let mut model = Model::init(mspec, cfg.seed)?;
    let mut g_opt = OptimizerState::new(cfg.optimizer, cfg.lr, &model.params.tensors);
    let mut d_opt = OptimizerState::new(cfg.optimizer, cfg.lr, &model.discriminator.as_ref().expect("gan model").tensors);
    let train_refs: Vec<&Sample> = train.iter().collect();
    let val_refs: Vec<&Sample> = val.iter().collect();

    let mut base = zero_stats();
    for chunk in train_refs.chunks(EVAL_BATCH) {
        let s = gan_batch_stats(spec, &g, &d, &model, chunk)?;
        accumulate(&mut base, &s, chunk.len() as f64 / train.len().max(1) as f64);
    }
    let baseline = EpochRecord {
        epoch: 0,
        train_loss: base.g_loss,
        val_metric: attenuation_score(&model, &val_refs)?,
        extra: gan_extra(&base, mean_mask(&model, &val_refs)?),
    };
    let mut tracker = Tracker { best: None };
    tracker.offer(baseline.val_metric, 0, &model);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut acc = zero_stats();
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let n = batch.len();
            let w = n as f64 / train.len() as f64;
            let ones = Tensor::full(&[n, 1], 1.0);
            let zeros = Tensor::zeros(&[n, 1]);

            // generator forward, kept for the generator update below
            let mut gt = Tape::with_budget(cfg.memory_budget);
            let gv = model.params.bind(&mut gt, true)?;
            let x = gt.constant(image_batch(&batch)?)?;
            let m = g.forward(&mut gt, &gv, x)?;
            let fake = gt.attenuate(x, m, spec.gain)?;

            // discriminator update on real vs detached fake
            let disc = model.discriminator.as_mut().expect("gan model");
            let mut dt = Tape::with_budget(cfg.memory_budget);
            let dv = disc.bind(&mut dt, true)?;
            let r = dt.constant(shadow_free_batch(&batch)?)?;
            let f = dt.constant(gt.value(fake).clone())?;
            let dr = d.forward(&mut dt, &dv, r)?;
            let df = d.forward(&mut dt, &dv, f)?;
            let lr_ = dt.bce_loss(dr, &ones)?;
            let lf = dt.bce_loss(df, &zeros)?;
            let ld = dt.add(lr_, lf)?;
            let d_loss = dt.value(ld).item();
            let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
            let (d_real, d_fake) = (mean(dt.value(dr)), mean(dt.value(df)));
            dt.backward(ld)?;
            disc.pull_grads(&dt, &dv);
            d_opt.step(&mut disc.tensors)?;

            // generator update through the refreshed discriminator
            let dv = disc.bind(&mut gt, false)?;
            let score = d.forward(&mut gt, &dv, fake)?;
            let adv = gt.bce_loss(score, &ones)?;
            let mm = gt.mean(m)?;
            let sparse = gt.scale(mm, spec.lambda)?;
            let lg = gt.add(adv, sparse)?;
            let g_loss = gt.value(lg).item();
            let mean_m = gt.value(mm).item();
            gt.backward(lg)?;
            model.params.pull_grads(&gt, &gv);
            g_opt.step(&mut model.params.tensors)?;

            let stats = GanStats {
                d_loss,
                g_loss,
                mean_mask: mean_m,
                d_real,
                d_fake,
            };
            accumulate(&mut acc, &stats, w);
        }
        let rec = EpochRecord {
            epoch,
            train_loss: acc.g_loss,
            val_metric: attenuation_score(&model, &val_refs)?,
            extra: gan_extra(&acc, mean_mask(&model, &val_refs)?),
        };
        tracker.offer(rec.val_metric, epoch, &model);
        epochs.push(rec);
    }
    finish(model, tracker, "val_attenuation_score", baseline, epochs)
}

/// Training loss of one batch for whichever family `model` belongs to,
/// used by property tests.
pub fn batch_loss(model: &Model, batch: &[&Sample]) -> Result<f64> {
    let (net, disc) = model.spec.networks()?;
    match &model.spec {
        ModelSpec::Segmentation(_) => eval_loss(&net, &model.params, batch, &seg_loss),
        ModelSpec::Detector(spec) => eval_loss(&net, &model.params, batch, &det_eval_loss(spec)),
        ModelSpec::Gan(spec) => Ok(gan_batch_stats(spec, &net, &disc.expect("gan model"), model, batch)?.g_loss),
    }
}
