//! Memorizes four synthetic people with the full model (CSM-4, SCARB,
//! hard keypoint mining) and prints the loss curve.
//!
//! cargo run --release --example train_overfit -- [steps] [base_lr]

use cspose::pipeline::data::make_dataset;
use cspose::pipeline::{Config, Trainer};

fn main() -> cspose::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("base_lr"));

    let mut cfg = Config::default();
    cfg.train.batch_size = 4;
    cfg.train.augment = false;
    cfg.train.base_lr = lr;
    cfg.train.total_epochs = steps;
    let data = make_dataset(4, cfg.train.seed, cfg.model.input_h, cfg.model.input_w);

    let mut trainer = Trainer::new(cfg)?;
    let start = std::time::Instant::now();
    let log = trainer.fit(&data, |line, _| {
        if line.step % 100 == 0 {
            println!(
                "step {:>5}  total {:.6}  global {:.5?}  refine {:.6}  lr {:e}",
                line.step, line.loss.total, line.loss.global, line.loss.refine, line.lr
            );
        }
        Ok(())
    })?;
    let first = log[0].loss.total;
    let last = trainer.loss(&data.iter().collect::<Vec<_>>())?.total;
    println!(
        "{} steps in {:.1?}: {:.6} -> {:.6} ({:.2}% of initial)",
        log.len(),
        start.elapsed(),
        first,
        last,
        100.0 * last / first
    );
    Ok(())
}
