//! Trains a few steps, saves a checkpoint, resumes from it and shows that
//! the resumed run continues exactly where an uninterrupted run would be.

use cspose::pipeline::data::make_dataset;
use cspose::pipeline::{Checkpoint, Config, Trainer};

fn main() -> cspose::Result<()> {
    let mut cfg = Config::default();
    cfg.model.base_channels = 4;
    cfg.train.batch_size = 2;
    cfg.train.total_epochs = 4;
    let data = make_dataset(4, 2, cfg.model.input_h, cfg.model.input_w);

    let mut straight = Trainer::new(cfg.clone())?;
    let full = straight.fit(&data, |_, _| Ok(()))?;

    let dir = std::env::temp_dir().join("cspose-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| cspose::Error::Data(e.to_string()))?;
    let path = dir.join("half.ppck");
    let mut half = cfg.clone();
    half.train.max_steps = Some(full.len() / 2);
    let mut first = Trainer::new(half)?;
    first.fit(&data, |_, _| Ok(()))?;
    first.to_checkpoint().save(&path)?;

    let ck = Checkpoint::load(&path)?;
    println!(
        "{} entries, {} bytes",
        ck.entries.len(),
        std::fs::metadata(&path).map_or(0, |m| m.len())
    );
    let mut resumed = Trainer::from_checkpoint(cfg, &ck)?;
    let rest = resumed.fit(&data, |_, _| Ok(()))?;
    for (a, b) in full[full.len() / 2..].iter().zip(&rest) {
        println!(
            "step {:>2}: uninterrupted {:.12}  resumed {:.12}",
            a.step, a.loss.total, b.loss.total
        );
        assert_eq!(a, b);
    }
    assert_eq!(straight.store.tensors(), resumed.store.tensors());
    println!("final parameters identical");
    Ok(())
}
