//! Trains the four ablation configurations (plain, +CSM, +SCARB, both) on
//! a synthetic benchmark and prints the comparison table.
//!
//! cargo run --release --example ablation -- [train_samples] [epochs]

use cspose::pipeline::data::make_dataset;
use cspose::pipeline::train::ablation;
use cspose::pipeline::Config;

fn main() -> cspose::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().map_or(64, |s| s.parse().expect("train_samples"));
    let epochs = args.next().map_or(20, |s| s.parse().expect("epochs"));

    let mut cfg = Config::default();
    cfg.model.base_channels = 8;
    cfg.train.batch_size = 8;
    cfg.train.augment = false;
    cfg.train.base_lr = 1e-3;
    cfg.train.total_epochs = epochs;
    let (h, w) = (cfg.model.input_h, cfg.model.input_w);
    let train = make_dataset(n, cfg.train.seed, h, w);
    let test = make_dataset(cfg.train.eval_size, cfg.train.eval_seed, h, w);
    print!("{}", ablation(&cfg, &train, &test)?);
    Ok(())
}
