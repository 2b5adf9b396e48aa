//! Teacher-forced training and evaluation.
//!
//! The training loss runs the same progressive loop as the encoder with the
//! truth inserted after every group, so the loss of an image is the code
//! length the encoder would pay for it, minus coder overhead.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::codec::{Codec, EncodeOptions};
use crate::dmol::DmolParams;
use crate::error::{Error, Result};
use crate::grouping::{GroupSchedule, Mask, ScalePlan, SubsetPhase};
use crate::image::Image8;
use crate::net::{ModelWeights, NetConfig, Profile};
use crate::progressive::{self, pixel_params, GroupInfo, GroupSink};
use crate::tensor::{AdamConfig, Eval, Ops, ParamStore, Scalar, Tape, TapeGraph, Tensor, Var};

/// Learning-rate divisor applied on a plateau.
pub const PLATEAU_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement above `threshold` before the
    /// learning rate is divided by [`PLATEAU_FACTOR`].
    pub patience: usize,
    pub threshold: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub seed: u64,
    #[serde(skip)]
    pub profile: Profile,
    /// Group count for random and dynamic grouping.
    pub groups: usize,
    pub dataset: Option<PathBuf>,
    /// Training aborts once a batch loss exceeds this many bits per pixel.
    pub divergence_bpp: f64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop after this much wall time; the running epoch is still validated.
    pub time_budget: Option<Duration>,
}

impl TrainConfig {
    pub fn new(profile: Profile) -> Self {
        TrainConfig {
            lr: 2e-4,
            batch: 8,
            crop: 64,
            epochs: 40,
            patience: 3,
            threshold: 1e-3,
            clip: 5.0,
            seed: 0,
            profile,
            groups: 3,
            dataset: None,
            divergence_bpp: 64.0,
            max_steps: None,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("threshold", self.threshold),
            ("clip", self.clip),
            ("divergence_bpp", self.divergence_bpp),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch == 0 || self.epochs == 0 || self.patience == 0 || self.groups == 0 {
            return Err(Error::InvalidArgument("batch, epochs, patience and groups must be positive".into()));
        }
        let m = 1 << self.profile.scales;
        if self.crop == 0 || self.crop % m != 0 {
            return Err(Error::InvalidArgument(format!("crop {} is not a positive multiple of {m}", self.crop)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> GroupSchedule {
        GroupSchedule::uniform(self.profile.grouping, self.profile.scales, self.groups, self.seed)
    }
}

/// Named images; training draws random crops from them.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    items: Vec<(String, Image8)>,
}

impl Dataset {
    pub fn from_images(items: Vec<(String, Image8)>) -> Self {
        Dataset { items }
    }

    /// Every PNG and PPM file in `dir`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                    Some("png" | "ppm")
                )
            })
            .collect();
        paths.sort();
        let items = paths
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("file path").to_string_lossy().into_owned();
                Image8::load(&p).map(|img| (name, img))
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(String, Image8)] {
        &self.items
    }

    /// Splits off the held-out images: those whose seeded name hash falls in
    /// the lowest `fraction`. At least one image is held out, and at least
    /// one is kept for training when there are two or more.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut keyed: Vec<(f64, usize)> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name_hash(name, seed), i))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut held = keyed.iter().filter(|k| k.0 < fraction).count().max(1);
        if self.items.len() >= 2 {
            held = held.min(self.items.len() - 1);
        }
        let mut val: Vec<usize> = keyed[..held.min(keyed.len())].iter().map(|k| k.1).collect();
        val.sort_unstable();
        let mut train = Vec::new();
        let mut hold = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            if val.binary_search(&i).is_ok() {
                hold.push(item.clone());
            } else {
                train.push(item.clone());
            }
        }
        if train.is_empty() {
            train = hold.clone();
        }
        (Dataset { items: train }, Dataset { items: hold })
    }

    /// Visiting order for one epoch: a permutation of `0..len`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64)));
        order
    }

    /// A `size×size` sub-grid of image `index` at a random offset.
    pub fn random_crop(&self, index: usize, size: usize, rng: &mut impl Rng) -> Result<Image8> {
        let (name, img) = &self.items[index];
        if img.width() < size || img.height() < size {
            return Err(Error::InvalidArgument(format!(
                "{name} is {}x{}, smaller than the {size}px crop",
                img.width(),
                img.height()
            )));
        }
        let row = rng.gen_range(0..=img.height() - size);
        let col = rng.gen_range(0..=img.width() - size);
        img.crop(row, col, size, size)
    }

    /// The centered `size×size` crop of image `index`.
    pub fn center_crop(&self, index: usize, size: usize) -> Result<Image8> {
        let (name, img) = &self.items[index];
        if img.width() < size || img.height() < size {
            return Err(Error::InvalidArgument(format!(
                "{name} is {}x{}, smaller than the {size}px crop",
                img.width(),
                img.height()
            )));
        }
        img.crop((img.height() - size) / 2, (img.width() - size) / 2, size, size)
    }
}

fn name_hash(name: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bits per pixel of the raw coarsest scale.
pub fn last_scale_bpp(scales: usize) -> f64 {
    24.0 / (1u64 << (2 * scales)) as f64
}

/// Truth of scale `level − 1` for every sample, in planar `N×3×H×W` layout.
fn planar_targets(scales: &[Vec<Image8>], level: usize) -> Vec<u8> {
    let first = &scales[0][level - 1];
    let hw = first.width() * first.height();
    let mut out = vec![0u8; scales.len() * 3 * hw];
    for (n, s) in scales.iter().enumerate() {
        for (i, px) in s[level - 1].data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[(n * 3 + c) * hw + i] = px[c];
            }
        }
    }
    out
}

struct TapeSink<'s> {
    scales: &'s [Vec<Image8>],
    mixtures: usize,
    targets: Vec<u8>,
    terms: Vec<Var>,
}

impl<'s, 'a, T: Scalar> GroupSink<T, TapeGraph<'a, T>> for TapeSink<'s> {
    fn begin_level(&mut self, level: usize) -> Result<()> {
        self.targets = planar_targets(self.scales, level);
        Ok(())
    }

    fn group(
        &mut self,
        ops: &mut TapeGraph<'a, T>,
        p: &Var,
        info: GroupInfo,
        groups: &[Mask],
        values: &mut [Image8],
    ) -> Result<()> {
        let select: Vec<bool> = groups.iter().flat_map(|g| g.bits().iter().copied()).collect();
        let term = ops.tape.dmol_nll(*p, self.mixtures, &self.targets, &select)?;
        let bits = ops.tape.value(term).data()[0].to_f64();
        if !bits.is_finite() {
            return Err(Error::NonFinite(format!("loss at level {} group {}", info.level, info.step)));
        }
        self.terms.push(term);
        insert_truth(self.scales, info, groups, values);
        Ok(())
    }
}

fn insert_truth(scales: &[Vec<Image8>], info: GroupInfo, groups: &[Mask], values: &mut [Image8]) {
    for (n, g) in groups.iter().enumerate() {
        let truth = &scales[n][info.level - 1];
        for (r, c) in g.positions() {
            values[n].set(r, c, truth.get(r, c));
        }
    }
}

/// Differentiable batch loss.
pub struct BatchLoss {
    /// Bits per pixel over scales `0..M−1`, the quantity being minimized.
    pub loss: Var,
    pub bpp: f64,
    /// Bits per pixel of the raw coarsest scale, outside the gradient.
    pub constant_bpp: f64,
}

impl BatchLoss {
    pub fn total_bpp(&self) -> f64 {
        self.bpp + self.constant_bpp
    }
}

fn decompose_batch(config: &NetConfig, batch: &[Image8]) -> Result<(ScalePlan, Vec<Vec<Image8>>)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    if batch.iter().any(|b| b.height() != h || b.width() != w) {
        return Err(Error::InvalidArgument("batch images differ in size".into()));
    }
    let plan = ScalePlan::new(h, w, config.scales, SubsetPhase::OddOdd)?;
    let scales = batch.iter().map(|b| plan.decompose(b)).collect::<Result<_>>()?;
    Ok((plan, scales))
}

/// Teacher-forced cross-entropy of `batch` recorded on `graph`.
pub fn batch_loss<T: Scalar>(
    graph: &mut TapeGraph<'_, T>,
    config: &NetConfig,
    schedule: &GroupSchedule,
    batch: &[Image8],
) -> Result<BatchLoss> {
    let (plan, scales) = decompose_batch(config, batch)?;
    let coarsest = scales.iter().map(|s| s[plan.scales].clone()).collect();
    let mut sink = TapeSink {
        scales: &scales,
        mixtures: config.mixtures,
        targets: Vec::new(),
        terms: Vec::new(),
    };
    progressive::run(graph, config, &plan, schedule, coarsest, &mut sink)?;
    let pixels = (batch.len() * plan.height * plan.width) as f64;
    let tape: &mut Tape<T> = &mut graph.tape;
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for t in sink.terms {
        total = tape.add(total, t)?;
    }
    let loss = tape.scale(total, T::from_f64(1.0 / pixels))?;
    let bpp = tape.value(loss).data()[0].to_f64();
    if !bpp.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    Ok(BatchLoss {
        loss,
        bpp,
        constant_bpp: last_scale_bpp(config.scales),
    })
}

struct EvalSink<'s> {
    scales: &'s [Vec<Image8>],
    mixtures: usize,
    bits: f64,
}

impl<'s, 'a, T: Scalar> GroupSink<T, Eval<'a, T>> for EvalSink<'s> {
    fn group(
        &mut self,
        ops: &mut Eval<'a, T>,
        p: &<Eval<'a, T> as Ops<T>>::V,
        info: GroupInfo,
        groups: &[Mask],
        values: &mut [Image8],
    ) -> Result<()> {
        let p: &Tensor<T> = ops.value(p);
        let mut raw = vec![0.0; p.shape().c];
        for (n, g) in groups.iter().enumerate() {
            let truth = &self.scales[n][info.level - 1];
            for (r, c) in g.positions() {
                pixel_params(p, n, r * info.width + c, &mut raw);
                self.bits += DmolParams::from_raw(&raw, self.mixtures)?.neg_log_likelihood(truth.get(r, c)).total();
            }
        }
        if !self.bits.is_finite() {
            return Err(Error::NonFinite(format!("loss at level {} group {}", info.level, info.step)));
        }
        insert_truth(self.scales, info, groups, values);
        Ok(())
    }
}

/// The loss of [`batch_loss`] without recording a tape, in bits per pixel
/// excluding the last-scale constant.
pub fn batch_bpp(model: &ModelWeights, schedule: &GroupSchedule, batch: &[Image8]) -> Result<f64> {
    let config = &model.config;
    let (plan, scales) = decompose_batch(config, batch)?;
    let coarsest = scales.iter().map(|s| s[plan.scales].clone()).collect();
    let mut sink = EvalSink {
        scales: &scales,
        mixtures: config.mixtures,
        bits: 0.0,
    };
    let mut ops = Eval::new(&model.params);
    progressive::run(&mut ops, config, &plan, schedule, coarsest, &mut sink)?;
    Ok(sink.bits / (batch.len() * plan.height * plan.width) as f64)
}

/// Scales `grads` to global norm `max_norm` if larger; returns the norm
/// before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut std::collections::BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| v.to_f64() * v.to_f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = T::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v = *v * k;
            }
        }
    }
    norm
}

/// Divides the learning rate after `patience` epochs without improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    stale: usize,
}

impl Plateau {
    pub fn new(patience: usize, threshold: f64) -> Self {
        Plateau {
            patience,
            threshold,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one validation value; true when the rate should drop now.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best - self.threshold {
            self.best = value;
            self.stale = 0;
            return false;
        }
        self.best = self.best.min(value);
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss, excluding the last-scale constant.
    pub train_bpp: f64,
    /// Held-out loss, excluding the last-scale constant.
    pub val_bpp: f64,
    /// Rate used during the epoch.
    pub lr: f64,
    pub steps: usize,
    /// Steps whose gradient was clipped.
    pub clipped: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step.
    pub step_bpp: Vec<f64>,
    pub best_val_bpp: f64,
    pub constant_bpp: f64,
    pub steps: usize,
    pub seconds: f64,
}

/// Where training writes its outputs.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Best-validation checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// CSV log: `epoch,train_bpp,val_bpp,lr`.
    pub log: Option<PathBuf>,
}

fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,train_bpp,val_bpp,lr\n");
    for r in records {
        s.push_str(&format!("{},{:.6},{:.6},{:e}\n", r.epoch, r.train_bpp, r.val_bpp, r.lr));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Held-out loss over center crops, excluding the last-scale constant.
pub fn validation_bpp(model: &ModelWeights, schedule: &GroupSchedule, val: &Dataset, crop: usize) -> Result<f64> {
    let crops: Vec<Image8> = (0..val.len()).map(|i| val.center_crop(i, crop)).collect::<Result<_>>()?;
    let bpps: Vec<f64> = crops
        .par_chunks(8)
        .map(|c| batch_bpp(model, schedule, c).map(|b| b * c.len() as f64))
        .collect::<Result<_>>()?;
    Ok(bpps.iter().sum::<f64>() / crops.len() as f64)
}

/// Trains `model` in place with Adam and returns the per-epoch history.
///
/// On return `model` holds the best-validation weights. `progress` sees
/// every finished epoch.
pub fn train(
    model: &mut ModelWeights,
    config: &TrainConfig,
    data: &Dataset,
    outputs: &TrainOutputs,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    config.profile.check(&model.config)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let (train_set, val_set) = data.split(0.05, config.seed);
    let schedule = config.schedule();
    let start = Instant::now();
    let mut lr = config.lr;
    let mut plateau = Plateau::new(config.patience, config.threshold);
    let mut best: Option<ModelWeights> = None;
    let mut report = TrainReport {
        epochs: Vec::new(),
        step_bpp: Vec::new(),
        best_val_bpp: f64::INFINITY,
        constant_bpp: last_scale_bpp(model.config.scales),
        steps: 0,
        seconds: 0.0,
    };
    let out_of_time = |steps: usize| {
        config.max_steps.is_some_and(|m| steps >= m) || config.time_budget.is_some_and(|b| start.elapsed() >= b)
    };
    'epochs: for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x5EED, epoch as u64));
        let order = train_set.epoch_order(config.seed, epoch);
        let (mut sum, mut steps, mut clipped) = (0.0, 0, 0);
        for chunk in order.chunks(config.batch) {
            if out_of_time(report.steps) {
                break;
            }
            let batch: Vec<Image8> = chunk
                .iter()
                .map(|&i| train_set.random_crop(i, config.crop, &mut rng))
                .collect::<Result<_>>()?;
            let mut grads = {
                let mut graph = TapeGraph::new(&model.params);
                let out = batch_loss(&mut graph, &model.config, &schedule, &batch)?;
                if out.bpp > config.divergence_bpp {
                    return Err(diverged(out.bpp, report.steps, outputs));
                }
                sum += out.bpp;
                report.step_bpp.push(out.bpp);
                graph.param_grads(out.loss)?
            };
            if clip_global_norm(&mut grads, config.clip) > config.clip {
                clipped += 1;
            }
            model.params.adam_step(&grads, lr, AdamConfig::default())?;
            if !model.params.iter().all(|(_, t)| t.is_finite()) {
                return Err(diverged(f64::NAN, report.steps, outputs));
            }
            steps += 1;
            report.steps += 1;
        }
        if steps == 0 {
            break 'epochs;
        }
        let val_bpp = if val_set.is_empty() {
            sum / steps as f64
        } else {
            validation_bpp(model, &schedule, &val_set, config.crop)?
        };
        let record = EpochRecord {
            epoch,
            train_bpp: sum / steps as f64,
            val_bpp,
            lr,
            steps,
            clipped,
        };
        if val_bpp < report.best_val_bpp {
            report.best_val_bpp = val_bpp;
            best = Some(model.clone());
            if let Some(path) = &outputs.checkpoint {
                checkpoint::save(model, path)?;
            }
        }
        if plateau.observe(val_bpp) {
            lr /= PLATEAU_FACTOR;
        }
        progress(&record);
        report.epochs.push(record);
        if let Some(path) = &outputs.log {
            write_log(path, &report.epochs)?;
        }
        if out_of_time(report.steps) {
            break;
        }
    }
    if let Some(b) = best {
        model.params = b.params;
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn diverged(bpp: f64, step: usize, outputs: &TrainOutputs) -> Error {
    let kept = match &outputs.checkpoint {
        Some(p) if p.exists() => format!("; last good checkpoint {}", p.display()),
        _ => String::new(),
    };
    Error::Diverged(format!("loss {bpp:.3} bpp at step {step}{kept}"))
}

/// Per-image evaluation through the real encoder.
#[derive(Clone, Debug, Serialize)]
pub struct ImageEval {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// File size in bits per pixel.
    pub bpp: f64,
    /// Model cross-entropy including the raw coarsest scale.
    pub cross_entropy_bpp: f64,
    /// Upper bound on `bpp − cross_entropy_bpp`.
    pub overhead_bound_bpp: f64,
    /// Bits per pixel spent by each level, finest first.
    pub level_bpp: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    /// Pixel-weighted file bpp.
    pub bpp: f64,
    pub bits_per_subpixel: f64,
    pub cross_entropy_bpp: f64,
    pub level_bpp: Vec<(usize, f64)>,
}

/// Encodes every image and reports realized and model code lengths.
pub fn evaluate(data: &Dataset, codec: &Codec, opts: &EncodeOptions) -> Result<EvalReport> {
    let images: Vec<ImageEval> = data
        .items()
        .par_iter()
        .map(|(name, img)| {
            let r = codec.encode(img, opts)?.report;
            let px = r.pixels() as f64;
            Ok(ImageEval {
                name: name.clone(),
                width: r.width,
                height: r.height,
                bpp: r.bpp(),
                cross_entropy_bpp: r.cross_entropy_bpp(),
                overhead_bound_bpp: r.accounting_bound_bits() / px,
                level_bpp: r.level_bits().into_iter().map(|(l, b)| (l, b / px)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let pixels: f64 = images.iter().map(|i| (i.width * i.height) as f64).sum();
    let weighted = |f: &dyn Fn(&ImageEval) -> f64| {
        images.iter().map(|i| f(i) * (i.width * i.height) as f64).sum::<f64>() / pixels
    };
    let bpp = weighted(&|i| i.bpp);
    let cross_entropy_bpp = weighted(&|i| i.cross_entropy_bpp);
    let mut level_bpp: Vec<(usize, f64)> = Vec::new();
    for i in &images {
        let w = (i.width * i.height) as f64 / pixels;
        for &(l, b) in &i.level_bpp {
            match level_bpp.iter_mut().find(|e| e.0 == l) {
                Some(e) => e.1 += b * w,
                None => level_bpp.push((l, b * w)),
            }
        }
    }
    level_bpp.sort_by_key(|e| e.0);
    Ok(EvalReport {
        images,
        bpp,
        bits_per_subpixel: bpp / 3.0,
        cross_entropy_bpp,
        level_bpp,
    })
}

/// Casts stored weights for gradient checks in double precision.
pub fn params_f64(model: &ModelWeights) -> ParamStore<f64> {
    model.params.cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::GroupingMethod;

    fn tiny() -> (ModelWeights, Profile) {
        let cfg = NetConfig::new(8, 2, 2, 2, GroupingMethod::FixedA);
        let profile = Profile::for_config(&cfg, 64);
        (ModelWeights::init(cfg, 1).unwrap(), profile)
    }

    fn constant_set(n: usize, size: usize) -> Dataset {
        Dataset::from_images(
            (0..n)
                .map(|i| (format!("c{i}.png"), Image8::filled(size, size, [200, 30, 90])))
                .collect(),
        )
    }

    #[test]
    fn flat_output_costs_24_bpp() {
        let cfg = NetConfig::new(4, 256, 1, 2, GroupingMethod::FixedA);
        let mut model = ModelWeights::zeros(cfg).unwrap();
        let flat = crate::dmol::flat_raw_params();
        for level in 1..=2 {
            let b = model.params.get_mut(&format!("s{level}.head_p.b")).unwrap();
            for (v, r) in b.data_mut().iter_mut().zip(&flat) {
                *v = *r as f32;
            }
        }
        let schedule = GroupSchedule::uniform(GroupingMethod::FixedA, 2, 3, 0);
        let img = Image8::from_raw(8, 8, (0..192).map(|i| (i * 53 % 256) as u8).collect()).unwrap();
        let mut graph = TapeGraph::new(&model.params);
        let out = batch_loss(&mut graph, &model.config, &schedule, &[img]).unwrap();
        assert!((out.total_bpp() - 24.0).abs() < 1e-3, "{}", out.total_bpp());
    }

    #[test]
    fn tape_and_eval_losses_agree() {
        let (model, _) = tiny();
        let schedule = GroupSchedule::uniform(GroupingMethod::Dynamic, 2, 3, 0);
        let batch: Vec<Image8> = (0..2)
            .map(|s| Image8::from_raw(8, 8, (0..192).map(|i| ((i * 31 + s * 7) % 256) as u8).collect()).unwrap())
            .collect();
        let mut graph = TapeGraph::new(&model.params);
        let out = batch_loss(&mut graph, &model.config, &schedule, &batch).unwrap();
        let eval = batch_bpp(&model, &schedule, &batch).unwrap();
        assert!((out.bpp - eval).abs() < 1e-6 * eval, "{} vs {eval}", out.bpp);
    }

    #[test]
    fn plateau_drops_once_on_a_flat_curve() {
        let mut p = Plateau::new(3, 1e-3);
        let drops: Vec<bool> = (0..6).map(|_| p.observe(5.0)).collect();
        assert_eq!(drops, vec![false, false, false, true, false, false]);
    }

    #[test]
    fn plateau_ignores_tiny_improvements() {
        let mut p = Plateau::new(2, 1e-3);
        assert!(!p.observe(5.0));
        assert!(!p.observe(4.9995));
        assert!(p.observe(4.9991));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = constant_set(40, 8);
        let (a, b) = d.split(0.05, 3);
        let (a2, b2) = d.split(0.05, 3);
        assert_eq!(a.len() + b.len(), 40);
        assert!(!b.is_empty());
        let names = |d: &Dataset| d.items().iter().map(|i| i.0.clone()).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&a2));
        assert_eq!(names(&b), names(&b2));
        assert!(names(&b).iter().all(|n| !names(&a).contains(n)));
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let d = constant_set(17, 8);
        let mut o = d.epoch_order(9, 2);
        assert_ne!(o, d.epoch_order(9, 3));
        o.sort_unstable();
        assert_eq!(o, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn crops_are_sub_grids() {
        let img = Image8::from_raw(10, 9, (0..270).map(|i| i as u8).collect()).unwrap();
        let d = Dataset::from_images(vec![("a".into(), img.clone())]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = d.random_crop(0, 4, &mut rng).unwrap();
            let found = (0..=5).any(|r| (0..=6).any(|col| img.crop(r, col, 4, 4).unwrap() == c));
            assert!(found);
        }
        assert!(d.random_crop(0, 11, &mut rng).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_curves() {
        let (model, profile) = tiny();
        let mut cfg = TrainConfig::new(profile);
        cfg.batch = 2;
        cfg.crop = 8;
        cfg.epochs = 3;
        cfg.max_steps = Some(3);
        cfg.lr = 1e-2;
        let data = constant_set(6, 12);
        let mut a = model.clone();
        let mut b = model;
        let ra = train(&mut a, &cfg, &data, &TrainOutputs::default(), |_| {}).unwrap();
        let rb = train(&mut b, &cfg, &data, &TrainOutputs::default(), |_| {}).unwrap();
        assert_eq!(ra.step_bpp.len(), 3);
        for (x, y) in ra.step_bpp.iter().zip(&rb.step_bpp) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}
