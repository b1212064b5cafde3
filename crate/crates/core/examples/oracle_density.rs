//! Train ContRNN-Small on grammar data and compare against the resampling
//! noise floor and an uninformed reference sample.
//!
//! `cargo run --release --example oracle_density -- [n] [max_epochs]`

use schedgen::eval::{evaluate, Domain};
use schedgen::ingest::split_train_val;
use schedgen::oracle::{draw_sample, null_sample, resample_baseline, GrammarSpec};
use schedgen::pipeline::{generate, train, TrainOptions};
use schedgen::vae::ModelConfig;

fn main() -> schedgen::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(15_000, |a| a.parse().expect("n"));
    let max_epochs: usize = args.next().map_or(75, |a| a.parse().expect("max_epochs"));
    let seed = 11;

    let spec = GrammarSpec::default();
    let real = draw_sample(&spec, n, seed);
    let (tr, val) = split_train_val(&real, 0.9, seed)?;
    let config = ModelConfig::preset("ContRNN-Small")?;
    let opts = TrainOptions { max_epochs, ..TrainOptions::default() };
    let (model, report) = train(&config, &tr.schedules, &val.schedules, seed, &opts)?;
    println!("best epoch {} of {}", report.best_epoch, report.epochs.len());

    let synthetic = generate(&model, n, seed)?;
    let eval = evaluate(&real, &synthetic, &tr.schedules);
    let floor = resample_baseline(&real, seed)?;
    let null = evaluate(&real, &null_sample(&spec, n, seed), &tr.schedules);

    println!("{:<16}{:>10}{:>10}{:>10}", "domain", "model", "floor", "null");
    for d in Domain::ALL {
        println!("{:<16}{:>10.4}{:>10.4}{:>10.4}", d.name(), eval.domain(d), floor.domain(d), null.domain(d));
    }
    let v = &eval.validity;
    let c = &eval.creativity;
    println!("invalid {:.4}  homogeneity {:.4}  conservatism {:.4}  degenerate {}", v.invalid, c.homogeneity, c.conservatism, synthetic.degenerate);
    Ok(())
}
