//! Fit a small continuous RNN model, checkpoint it, and sample from it.

use schedgen::ingest::split_train_val;
use schedgen::oracle::{draw_sample, GrammarSpec};
use schedgen::pipeline::{generate, train, TrainOptions};
use schedgen::vae::{ModelConfig, VaeModel};

fn main() -> schedgen::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let data = draw_sample(&GrammarSpec::default(), 2000, 3);
    let (tr, val) = split_train_val(&data, 0.9, 3)?;

    let mut config = ModelConfig::preset("ContRNN-Tiny")?;
    config.batch_size = 128;
    let opts = TrainOptions { max_epochs: 5, ..TrainOptions::default() };
    let (model, report) = train(&config, &tr.schedules, &val.schedules, 3, &opts)?;
    for e in &report.epochs {
        println!("epoch {:>2}  train {:.4}  val {:.4}", e.epoch, e.train.total, e.val.total);
    }

    let path = std::env::temp_dir().join("schedgen-example.ckpt");
    model.save(&path)?;
    let model = VaeModel::load(&path)?;
    let sample = generate(&model, 8, 42)?;
    for (i, s) in sample.iter().enumerate() {
        println!("{}: {s}", sample.id(i));
    }
    println!("{} degenerate", sample.degenerate);
    Ok(())
}
