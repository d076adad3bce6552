//! Training loop, checkpoint state, evaluation and inference drivers.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::Variant;
use crate::codec::{decode, encode, flip_average, Keypoint, COCO_FLIP_PAIRS};
use crate::error::{Error, Result};
use crate::eval::{average_precision, coco_thresholds, keypoint_box_area, ApSummary, Detection, GroundTruth, OksConstants};
use crate::network::{LossReport, ModelConfig, PoseNet};
use crate::params::ParamStore;
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::{Config, OksPreset};
use crate::pipeline::data::{augment, Sample};
use crate::pipeline::optim::{lr_schedule, Adam};
use crate::pipeline::records::Record;
use crate::tensor::{Graph, Tensor};

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub loss: LossReport,
    pub lr: f64,
}

impl fmt::Display for LogLine {
    /// `step g2 g3 g4 g5 refine total lr`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.loss.global;
        write!(
            f,
            "{} {} {} {} {} {} {} {}",
            self.step, g[0], g[1], g[2], g[3], self.loss.refine, self.loss.total, self.lr
        )
    }
}

/// Stacks samples into images, Gaussian targets and visibility flags.
pub fn batch_tensors(samples: &[&Sample], cfg: &ModelConfig) -> Result<(Tensor, Tensor, Vec<bool>)> {
    let mut images = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    let mut visible = Vec::with_capacity(samples.len() * cfg.num_keypoints);
    for s in samples {
        if s.keypoints.len() != cfg.num_keypoints {
            return Err(Error::Data(format!(
                "sample {} has {} keypoints, model expects {}",
                s.id,
                s.keypoints.len(),
                cfg.num_keypoints
            )));
        }
        images.push(s.image.clone());
        targets.push(encode(&s.keypoints, cfg.heatmap_h(), cfg.heatmap_w(), cfg.sigma)?.heatmaps);
        visible.extend(s.visibility());
    }
    Ok((Tensor::stack(&images)?, Tensor::stack(&targets)?, visible))
}

fn check_finite(what: &str, step: u64, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    if vals.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what} at step {step}")))
    }
}

/// Model, parameters, optimizer and RNG of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: Config,
    pub net: PoseNet,
    pub store: ParamStore,
    pub adam: Adam,
    /// Drives augmentation.
    pub rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let (net, store) = PoseNet::new(cfg.model.clone(), cfg.train.seed)?;
        let adam = Adam::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(1);
        Ok(Trainer {
            cfg,
            net,
            store,
            adam,
            rng,
            step: 0,
        })
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.cfg.train.batch_size) as u64
    }

    /// Planned optimizer steps for a dataset of `dataset_len` samples.
    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        let full = self.steps_per_epoch(dataset_len) * self.cfg.train.total_epochs as u64;
        self.cfg.train.max_steps.map_or(full, |m| full.min(m as u64))
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn train_step(&mut self, batch: &[&Sample], lr: f64) -> Result<LossReport> {
        let (images, targets, visible) = batch_tensors(batch, &self.cfg.model)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.leaf(images);
        let (_, total, report) = self.net.forward_loss(&mut g, &p, x, &targets, &visible)?;
        check_finite("loss", self.step, [report.total])?;
        g.backward(total)?;
        let grads = self.store.collect_grads(&g, &p);
        check_finite("gradient", self.step, grads.iter().flatten().copied())?;
        self.adam.step(&mut self.store, &grads, lr)?;
        self.step += 1;
        Ok(report)
    }

    /// Sample order of `epoch`; depends only on the seed and the epoch so a
    /// resumed run visits the same batches.
    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        rng.set_stream(2 + epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Trains from the current step to the planned total, reporting each
    /// step to `on_step`.
    pub fn fit(&mut self, data: &[Sample], mut on_step: impl FnMut(&LogLine, &Trainer) -> Result<()>) -> Result<Vec<LogLine>> {
        if data.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let per_epoch = self.steps_per_epoch(data.len());
        let total = self.total_steps(data.len());
        let bs = self.cfg.train.batch_size;
        let mut log = Vec::new();
        while self.step < total {
            let epoch = self.step / per_epoch;
            let order = self.epoch_order(epoch, data.len());
            let within = (self.step % per_epoch) as usize;
            let chunk = &order[within * bs..((within + 1) * bs).min(order.len())];
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if self.cfg.train.augment {
                let train = self.cfg.train.clone();
                augmented = chunk.iter().map(|&i| augment(&data[i], &mut self.rng, &train)).collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &data[i]).collect()
            };
            let lr = lr_schedule(epoch as usize, &self.cfg.train);
            let step = self.step;
            let loss = self.train_step(&batch, lr)?;
            let line = LogLine { step, loss, lr };
            on_step(&line, self)?;
            log.push(line);
        }
        Ok(log)
    }

    /// Loss on `samples` without updating anything.
    pub fn loss(&self, samples: &[&Sample]) -> Result<LossReport> {
        let (images, targets, visible) = batch_tensors(samples, &self.cfg.model)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.leaf(images);
        Ok(self.net.forward_loss(&mut g, &p, x, &targets, &visible)?.2)
    }

    /// Parameters, Adam moments, step counter and RNG state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, t) in self.store.iter() {
            ck.push(name, t.dims().as_array().to_vec(), t.data().to_vec());
        }
        for (i, (name, t)) in self.store.iter().enumerate() {
            let ext = t.dims().as_array().to_vec();
            ck.push(format!("adam.m/{name}"), ext.clone(), self.adam.m[i].clone());
            ck.push(format!("adam.v/{name}"), ext, self.adam.v[i].clone());
        }
        ck.push("meta.step", vec![1], vec![self.step as f64]);
        ck.push("meta.adam_t", vec![1], vec![self.adam.t as f64]);
        ck.push("meta.rng", vec![RNG_WORDS], rng_words(&self.rng));
        ck
    }

    /// Rebuilds a trainer for `cfg` from a checkpoint written by
    /// [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(cfg: Config, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        load_params(&mut t.store, ck)?;
        let names: Vec<String> = t.store.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            for (key, dst) in [("adam.m", &mut t.adam.m[i]), ("adam.v", &mut t.adam.v[i])] {
                let field = format!("{key}/{name}");
                let e = ck.require(&field)?;
                if e.data.len() != dst.len() {
                    return Err(Error::checkpoint(field, "moment size does not match the parameter"));
                }
                dst.copy_from_slice(&e.data);
            }
        }
        t.step = counter(ck, "meta.step")?;
        t.adam.t = counter(ck, "meta.adam_t")?;
        t.rng = rng_from_words(&ck.require("meta.rng")?.data)?;
        Ok(t)
    }
}

const RNG_WORDS: usize = 14;

/// ChaCha state as exact small integers: 8 seed words, 2 stream words,
/// 4 position words (32 bits each).
fn rng_words(rng: &ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(RNG_WORDS);
    for c in rng.get_seed().chunks_exact(4) {
        out.push(u32::from_le_bytes(c.try_into().unwrap()) as f64);
    }
    let s = rng.get_stream();
    out.extend([(s & 0xffff_ffff) as f64, (s >> 32) as f64]);
    let p = rng.get_word_pos();
    out.extend((0..4).map(|i| ((p >> (32 * i)) & 0xffff_ffff) as f64));
    out
}

fn rng_from_words(w: &[f64]) -> Result<ChaCha8Rng> {
    let bad = || Error::checkpoint("meta.rng", "malformed generator state");
    if w.len() != RNG_WORDS || w.iter().any(|v| v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(v)) {
        return Err(bad());
    }
    let u = |i: usize| w[i] as u32;
    let mut seed = [0u8; 32];
    for i in 0..8 {
        seed[4 * i..4 * i + 4].copy_from_slice(&u(i).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u(8) as u64 | (u(9) as u64) << 32);
    let pos = (0..4).fold(0u128, |acc, i| acc | (u(10 + i) as u128) << (32 * i));
    rng.set_word_pos(pos);
    Ok(rng)
}

fn counter(ck: &Checkpoint, name: &str) -> Result<u64> {
    let e = ck.require(name)?;
    match e.data.as_slice() {
        [v] if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as u64),
        _ => Err(Error::checkpoint(name, "expected one non-negative integer")),
    }
}

/// Copies every parameter of `store` from `ck`, checking extents.
pub fn load_params(store: &mut ParamStore, ck: &Checkpoint) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let e = ck.require(&name)?;
        let t = store.get_mut(id);
        if e.extents != t.dims().as_array() {
            return Err(Error::checkpoint(
                name,
                format!("extents {:?} do not match the model's {}", e.extents, t.dims()),
            ));
        }
        t.data_mut().copy_from_slice(&e.data);
    }
    Ok(())
}

/// Model and parameters restored from a checkpoint for inference.
pub fn load_model(model: &ModelConfig, ck: &Checkpoint) -> Result<(PoseNet, ParamStore)> {
    let (net, mut store) = PoseNet::new(model.clone(), 0)?;
    load_params(&mut store, ck)?;
    Ok((net, store))
}

/// Heatmaps for one sample, flip-averaged when requested.
pub fn sample_heatmaps(net: &PoseNet, store: &ParamStore, sample: &Sample, flip: bool) -> Result<Tensor> {
    let model = |x: &Tensor| net.predict(store, x);
    let hm = if flip {
        let pairs: &[(usize, usize)] = if net.cfg.num_keypoints == 17 { &COCO_FLIP_PAIRS } else { &[] };
        flip_average(model, &sample.image, pairs)?
    } else {
        model(&sample.image)?
    };
    if !hm.is_finite() {
        return Err(Error::Numeric(format!("non-finite heatmap for sample {}", sample.id)));
    }
    Ok(hm)
}

/// Decoded pose record: keypoints in image pixels, score the mean peak.
pub fn predict_record(net: &PoseNet, store: &ParamStore, sample: &Sample, cfg: &Config) -> Result<(Tensor, Record)> {
    let hm = sample_heatmaps(net, store, sample, cfg.train.flip_test)?;
    let dec = decode(&hm, 0, cfg.train.second_peak)?;
    let score = dec.iter().map(|d| d.score).sum::<f64>() / dec.len().max(1) as f64;
    let keypoints = dec.iter().map(|d| Keypoint::new(d.x, d.y, 2)).collect();
    Ok((
        hm,
        Record {
            image_id: sample.id,
            bbox: sample.bbox,
            score,
            keypoints,
        },
    ))
}

pub fn oks_constants(cfg: &Config) -> Result<OksConstants> {
    match cfg.train.oks {
        OksPreset::Uniform(k) => OksConstants::uniform(cfg.model.num_keypoints, k),
        OksPreset::Coco if cfg.model.num_keypoints == 17 => Ok(OksConstants::coco()),
        OksPreset::Coco => Err(Error::config("oks_k", "the COCO preset needs 17 keypoints")),
    }
}

/// OKS AP of prediction records against annotated samples.
pub fn score_records(preds: &[Record], gts: &[Sample], cfg: &Config) -> Result<ApSummary> {
    let consts = oks_constants(cfg)?;
    let dets: Vec<Detection> = preds
        .iter()
        .map(|r| Detection {
            image_id: r.image_id,
            score: r.score,
            keypoints: r.keypoints.clone(),
        })
        .collect();
    let truths: Vec<GroundTruth> = gts
        .iter()
        .filter_map(|s| {
            keypoint_box_area(&s.keypoints, cfg.train.oks_area_scale).map(|area| GroundTruth {
                image_id: s.id,
                area,
                keypoints: s.keypoints.clone(),
            })
        })
        .collect();
    average_precision(&dets, &truths, &coco_thresholds(), &consts)
}

/// Runs the model over `samples` and scores the decoded poses.
pub fn evaluate(net: &PoseNet, store: &ParamStore, samples: &[Sample], cfg: &Config) -> Result<(ApSummary, Vec<Record>)> {
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(predict_record(net, store, s, cfg)?.1);
    }
    Ok((score_records(&preds, samples, cfg)?, preds))
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub use_csm: bool,
    pub variant: Variant,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub summary: ApSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// The four configurations compared in the ablation.
pub const ABLATION: [(&str, bool, Variant); 4] = [
    ("plain", false, Variant::Plain),
    ("+CSM", true, Variant::Plain),
    ("+SCARB", false, Variant::Scarb),
    ("+CSM+SCARB", true, Variant::Scarb),
];

/// Trains each ablation configuration from the same seed on `train` and
/// evaluates on `test`.
pub fn ablation(base: &Config, train: &[Sample], test: &[Sample]) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (name, use_csm, variant) in ABLATION {
        let mut cfg = base.clone();
        cfg.model.use_csm = use_csm;
        cfg.model.variant = variant;
        let mut t = Trainer::new(cfg.clone())?;
        let log = t.fit(train, |_, _| Ok(()))?;
        let (summary, _) = evaluate(&t.net, &t.store, test, &cfg)?;
        rows.push(AblationRow {
            name,
            use_csm,
            variant,
            initial_loss: log.first().map_or(f64::NAN, |l| l.loss.total),
            final_loss: log.last().map_or(f64::NAN, |l| l.loss.total),
            summary,
        });
    }
    Ok(AblationReport { rows })
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        writeln!(
            f,
            "{:<12} {:>4} {:>7} {:>11} {:>11} {:>6} {:>6} {:>6} {:>6}",
            "model", "CSM", "block", "loss@0", "loss@end", "AP", "AP .5", "AP .75", "AR"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>4} {:>7} {:>11.6} {:>11.6} {:>6} {:>6} {:>6} {:>6}",
                r.name,
                if r.use_csm { "yes" } else { "no" },
                r.variant.to_string(),
                r.initial_loss,
                r.final_loss,
                opt(r.summary.ap),
                opt(r.summary.ap50),
                opt(r.summary.ap75),
                opt(r.summary.ar)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::make_dataset;

    fn small() -> Config {
        let mut c = Config::default();
        c.model.base_channels = 4;
        c.train.batch_size = 2;
        c.train.augment = false;
        c.train.total_epochs = 14;
        c
    }

    #[test]
    fn loss_decreases_on_a_fixed_sample() {
        let mut cfg = small();
        cfg.train.base_lr = 1e-3;
        let data = make_dataset(1, 3, 128, 96);
        let mut t = Trainer::new(cfg).unwrap();
        let first = t.loss(&[&data[0]]).unwrap().total;
        for _ in 0..50 {
            t.train_step(&[&data[0]], 1e-3).unwrap();
        }
        let last = t.loss(&[&data[0]]).unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn zero_model_and_zero_targets_give_zero_loss() {
        let cfg = small();
        let mut t = Trainer::new(cfg).unwrap();
        t.store.zero_all();
        let mut s = make_dataset(1, 1, 128, 96).remove(0);
        for k in &mut s.keypoints {
            k.v = 0;
        }
        assert_eq!(t.loss(&[&s]).unwrap().total, 0.0);
        for k in &mut s.keypoints {
            k.v = 2;
        }
        let r = t.loss(&[&s]).unwrap();
        assert!(r.total > 0.0 && r.total == r.recompute_total());
    }

    #[test]
    fn fit_is_deterministic_and_resumable() {
        let mut cfg = small();
        cfg.train.augment = true;
        cfg.train.max_steps = Some(6);
        let data = make_dataset(3, 2, 128, 96);
        let mut a = Trainer::new(cfg.clone()).unwrap();
        let log_a = a.fit(&data, |_, _| Ok(())).unwrap();
        assert_eq!(log_a.len(), 6);
        let mut b = Trainer::new(cfg.clone()).unwrap();
        let log_b = b.fit(&data, |_, _| Ok(())).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.to_checkpoint().to_bytes().unwrap(), b.to_checkpoint().to_bytes().unwrap());

        // stop after 3 steps, restore, and finish
        let mut half_cfg = cfg.clone();
        half_cfg.train.max_steps = Some(3);
        let mut c = Trainer::new(half_cfg).unwrap();
        c.fit(&data, |_, _| Ok(())).unwrap();
        let ck = Checkpoint::from_bytes(&c.to_checkpoint().to_bytes().unwrap()).unwrap();
        let mut d = Trainer::from_checkpoint(cfg, &ck).unwrap();
        let rest = d.fit(&data, |_, _| Ok(())).unwrap();
        assert_eq!(rest, log_a[3..]);
        assert_eq!(d.to_checkpoint(), a.to_checkpoint());
    }

    #[test]
    fn checkpoint_restores_identical_forward() {
        let cfg = small();
        let data = make_dataset(1, 4, 128, 96);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.train_step(&[&data[0]], 1e-3).unwrap();
        let bytes = t.to_checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let (net, store) = load_model(&cfg.model, &ck).unwrap();
        let a = t.net.predict(&t.store, &data[0].image).unwrap();
        let b = net.predict(&store, &data[0].image).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            Trainer::from_checkpoint(cfg, &ck)
                .unwrap()
                .to_checkpoint()
                .to_bytes()
                .unwrap(),
            bytes
        );
    }

    #[test]
    fn mismatched_model_names_the_field() {
        let t = Trainer::new(small()).unwrap();
        let ck = t.to_checkpoint();
        let mut other = small().model;
        other.base_channels = 8;
        match load_model(&other, &ck) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "backbone.stem1.weight"),
            r => panic!("{r:?}"),
        }
        let mut csm_off = small().model;
        csm_off.use_csm = false;
        assert!(load_model(&csm_off, &ck).is_ok());
        let mut missing = ck.clone();
        missing.entries.retain(|e| e.name != "meta.rng");
        match Trainer::from_checkpoint(small(), &missing) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "meta.rng"),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn nan_loss_is_a_numeric_error() {
        let mut t = Trainer::new(small()).unwrap();
        let mut s = make_dataset(1, 1, 128, 96).remove(0);
        s.image.data_mut()[0] = f64::NAN;
        assert_eq!(t.train_step(&[&s], 1e-3).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn perfect_records_score_unit_ap() {
        let cfg = small();
        let data = make_dataset(4, 5, 128, 96);
        let recs: Vec<Record> = data.iter().map(Sample::record).collect();
        let s = score_records(&recs, &data, &cfg).unwrap();
        assert_eq!(s.ap, Some(1.0));
    }

    #[test]
    fn evaluate_and_log_format() {
        let cfg = small();
        let data = make_dataset(2, 5, 128, 96);
        let t = Trainer::new(cfg.clone()).unwrap();
        let (summary, preds) = evaluate(&t.net, &t.store, &data, &cfg).unwrap();
        assert_eq!(preds.len(), 2);
        assert!(summary.ap.unwrap() >= 0.0);
        let line = LogLine {
            step: 3,
            loss: LossReport {
                global: [1.0, 2.0, 3.0, 4.0],
                refine: 0.5,
                total: 3.0,
                invisible_samples: 0,
            },
            lr: 5e-4,
        };
        assert_eq!(line.to_string(), "3 1 2 3 4 0.5 3 0.0005");
    }

    #[test]
    fn rng_state_roundtrips() {
        use rand::RngCore;
        let mut r = ChaCha8Rng::seed_from_u64(77);
        r.set_stream(123_456_789_012);
        for _ in 0..37 {
            r.next_u32();
        }
        let mut back = rng_from_words(&rng_words(&r)).unwrap();
        assert_eq!(back.next_u64(), r.next_u64());
        assert!(rng_from_words(&[0.5; RNG_WORDS]).is_err());
    }
}
