//! Command implementations behind the `cspose` binary.

use std::io::Write;
use std::path::PathBuf;

use crate::attention::Variant;
use crate::csm::ShuffleSpec;
use crate::error::{Error, Result};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::Config;
use crate::pipeline::data::{load_dataset, make_dataset, save_dataset, Sample};
use crate::pipeline::records::write_records;
use crate::pipeline::suite::gradient_suite;
use crate::pipeline::train::{evaluate, load_model, predict_record, Trainer};

/// Options shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub groups: Option<usize>,
    pub variant: Option<Variant>,
}

pub const DEFAULT_OUT: &str = "cspose-out";
pub const CHECKPOINT_FILE: &str = "checkpoint.ppck";
pub const LOSS_LOG: &str = "loss.log";
pub const PREDICTIONS: &str = "predictions.txt";
pub const EVAL_REPORT: &str = "eval.txt";
pub const HEATMAPS: &str = "heatmaps.ppck";

impl Options {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(g) = self.groups {
            cfg.model.groups = g;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn require_checkpoint(&self) -> Result<Checkpoint> {
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("checkpoint", "this command needs --checkpoint"))?;
        Checkpoint::load(path)
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn training_set(cfg: &Config) -> Result<Vec<Sample>> {
    match &cfg.train.data_dir {
        Some(d) => load_dataset(d, cfg.model.input_h, cfg.model.input_w),
        None => Ok(make_dataset(
            cfg.train.dataset_size,
            cfg.train.seed,
            cfg.model.input_h,
            cfg.model.input_w,
        )),
    }
}

fn evaluation_set(cfg: &Config) -> Result<Vec<Sample>> {
    match &cfg.train.eval_dir {
        Some(d) => load_dataset(d, cfg.model.input_h, cfg.model.input_w),
        None => Ok(make_dataset(
            cfg.train.eval_size,
            cfg.train.eval_seed,
            cfg.model.input_h,
            cfg.model.input_w,
        )),
    }
}

/// Trains (resuming from `--checkpoint` when given), writing the loss log
/// and checkpoints into the output directory.
pub fn train(opts: &Options, stdout: &mut dyn Write) -> Result<()> {
    let cfg = opts.resolve()?;
    let out = opts.out_dir()?;
    let data = training_set(&cfg)?;
    let mut trainer = match &opts.checkpoint {
        Some(p) => Trainer::from_checkpoint(cfg.clone(), &Checkpoint::load(p)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    let log_path = out.join(LOSS_LOG);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(trainer.step > 0)
        .write(true)
        .truncate(trainer.step == 0)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let every = cfg.train.checkpoint_every as u64;
    let ck_path = out.join(CHECKPOINT_FILE);
    let lines = trainer.fit(&data, |line, t| {
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if every > 0 && t.step % every == 0 {
            t.to_checkpoint().save(&ck_path)?;
        }
        Ok(())
    })?;
    trainer.to_checkpoint().save(&ck_path)?;
    if let (Some(first), Some(last)) = (lines.first(), lines.last()) {
        writeln!(
            stdout,
            "trained {} steps: loss {:.6} -> {:.6}; checkpoint {}",
            lines.len(),
            first.loss.total,
            last.loss.total,
            ck_path.display()
        )
        .map_err(out_err)?;
    } else {
        writeln!(stdout, "nothing to do: already at step {}", trainer.step).map_err(out_err)?;
    }
    Ok(())
}

/// Scores a checkpoint on the evaluation set.
pub fn eval(opts: &Options, stdout: &mut dyn Write) -> Result<()> {
    let cfg = opts.resolve()?;
    let ck = opts.require_checkpoint()?;
    let (net, store) = load_model(&cfg.model, &ck)?;
    let data = evaluation_set(&cfg)?;
    let (summary, preds) = evaluate(&net, &store, &data, &cfg)?;
    let out = opts.out_dir()?;
    write_records(&out.join(PREDICTIONS), &preds)?;
    let report = out.join(EVAL_REPORT);
    std::fs::write(&report, summary.key_values()).map_err(|e| Error::io(&report, e))?;
    write!(stdout, "{summary}").map_err(out_err)?;
    Ok(())
}

/// Writes heatmaps and decoded keypoints for every evaluation-set image.
pub fn infer(opts: &Options, stdout: &mut dyn Write) -> Result<()> {
    let cfg = opts.resolve()?;
    let ck = opts.require_checkpoint()?;
    let (net, store) = load_model(&cfg.model, &ck)?;
    let data = evaluation_set(&cfg)?;
    let mut maps = Checkpoint::default();
    let mut records = Vec::with_capacity(data.len());
    for s in &data {
        let (hm, rec) = predict_record(&net, &store, s, &cfg)?;
        let d = hm.dims();
        maps.push(format!("heatmap/{}", s.id), vec![d.c, d.h, d.w], hm.into_data());
        records.push(rec);
    }
    let out = opts.out_dir()?;
    maps.save(&out.join(HEATMAPS))?;
    write_records(&out.join(PREDICTIONS), &records)?;
    writeln!(
        stdout,
        "wrote {} heatmap stacks of {}x{}x{} to {}",
        data.len(),
        cfg.model.num_keypoints,
        cfg.model.heatmap_h(),
        cfg.model.heatmap_w(),
        out.display()
    )
    .map_err(out_err)?;
    Ok(())
}

/// Writes a synthetic dataset (PNG images plus annotations).
pub fn make_data(opts: &Options, stdout: &mut dyn Write) -> Result<()> {
    let cfg = opts.resolve()?;
    let out = opts.out_dir()?;
    let data = make_dataset(cfg.train.dataset_size, cfg.train.seed, cfg.model.input_h, cfg.model.input_w);
    save_dataset(&out, &data)?;
    writeln!(stdout, "wrote {} samples to {}", data.len(), out.display()).map_err(out_err)?;
    Ok(())
}

/// Runs the finite-difference suite; any mismatch is a numeric failure.
pub fn gradcheck(opts: &Options, stdout: &mut dyn Write) -> Result<()> {
    let cfg = opts.resolve()?;
    let suite = gradient_suite(&cfg.model, cfg.train.seed)?;
    for (name, r) in &suite.entries {
        writeln!(
            stdout,
            "{} {name}: {} checked, {} kinks skipped, max abs err {:.2e}, max rel err above floor {:.2e}",
            if r.passed() { "ok  " } else { "FAIL" },
            r.checked,
            r.skipped_kinks,
            r.max_abs_err,
            r.max_rel_err
        )
        .map_err(out_err)?;
    }
    if suite.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = suite
            .entries
            .iter()
            .filter(|(_, r)| !r.passed())
            .map(|(n, _)| n.as_str())
            .collect();
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Prints the channel shuffle permutation for `channels` and the groups
/// given by `--groups` (or the config).
pub fn shuffle_demo(opts: &Options, channels: usize, stdout: &mut dyn Write) -> Result<()> {
    let groups = match opts.groups {
        Some(g) => g,
        None => opts.resolve()?.model.groups,
    };
    let spec = ShuffleSpec::new(groups, channels)?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    writeln!(
        stdout,
        "channels {channels}, groups {groups}, group size {}",
        spec.group_size()
    )
    .map_err(out_err)?;
    writeln!(stdout, "permutation: {}", join(&spec.permutation())).map_err(out_err)?;
    writeln!(stdout, "inverse:     {}", join(&spec.inverse_permutation())).map_err(out_err)?;
    Ok(())
}
