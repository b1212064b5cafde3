//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use schedgen::encoding::{decode_continuous, decode_discrete, decode_discrete_ids, encode_continuous, encode_discrete};
use schedgen::eval::marginals::{ngram_counts, pair_counts};
use schedgen::eval::{combine_creativity, domain_summaries, emd, evaluate, welch_t_test, Distribution, Domain, EvalReport};
use schedgen::ingest::split_train_val;
use schedgen::oracle::{brute_force_emd, draw_sample, null_sample, resample_baseline, GrammarSpec};
use schedgen::pipeline::{generate, train, TrainOptions, Trainer};
use schedgen::rng;
use schedgen::tensor::gradcheck::layer_cases;
use schedgen::vae::{EncodedSet, ModelConfig, VaeModel};
use schedgen::{Activity, ActivityType, Schedule};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const MODELS: [&str; 6] = ["DiscFF", "DiscCNN", "DiscRNN", "ContFF", "ContCNN", "ContRNN"];

/// Distribution-level distances per model, in the column order of `MODELS`.
const DISTRIBUTION_TABLE: [(Distribution, [f64; 6]); 10] = [
    (Distribution::Lengths, [0.363, 0.399, 2.100, 0.140, 0.100, 0.154]),
    (Distribution::Participation, [0.079, 0.078, 0.301, 0.040, 0.033, 0.033]),
    (Distribution::PairParticipation, [0.014, 0.011, 0.052, 0.005, 0.005, 0.004]),
    (Distribution::Bigram, [0.020, 0.015, 0.145, 0.009, 0.010, 0.008]),
    (Distribution::Trigram, [0.004, 0.003, 0.136, 0.002, 0.003, 0.002]),
    (Distribution::Quadgram, [0.002, 0.002, 0.213, 0.001, 0.002, 0.001]),
    (Distribution::StartTimes, [0.022, 0.018, 0.028, 0.032, 0.033, 0.016]),
    (Distribution::Durations, [0.039, 0.034, 0.215, 0.041, 0.039, 0.016]),
    (Distribution::StartDurations, [0.073, 0.067, 0.401, 0.071, 0.072, 0.031]),
    (Distribution::ConsecutiveDurations, [0.070, 0.057, 0.196, 0.078, 0.075, 0.038]),
];

const DOMAIN_TABLE: [(Domain, [f64; 6]); 3] = [
    (Domain::Participations, [0.152, 0.162, 0.817, 0.062, 0.046, 0.064]),
    (Domain::Transitions, [0.008, 0.006, 0.165, 0.004, 0.005, 0.004]),
    (Domain::Timing, [0.051, 0.044, 0.210, 0.056, 0.055, 0.025]),
];

const HOMOGENEITY: [f64; 6] = [0.468, 0.507, 0.931, 0.153, 0.348, 0.022];
const CONSERVATISM: [f64; 6] = [0.100, 0.118, 0.351, 0.011, 0.010, 0.012];
const CREATIVITY: [f64; 6] = [0.284, 0.313, 0.641, 0.082, 0.179, 0.017];

fn table_arithmetic() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, model) in MODELS.iter().enumerate() {
        let dists: Vec<(Distribution, f64)> = DISTRIBUTION_TABLE.iter().map(|(d, v)| (*d, v[m])).collect();
        let domains = domain_summaries(&dists);
        for (d, expected) in DOMAIN_TABLE {
            let got = domains.iter().find(|x| x.0 == d).map(|x| x.1).ok_or(format!("{model}: no {d}"))?;
            worst = worst.max((got - expected[m]).abs());
            ensure!((got - expected[m]).abs() <= 0.001, "{model} {d}: {got:.4} vs {}", expected[m]);
        }
        let c = combine_creativity(HOMOGENEITY[m], CONSERVATISM[m]);
        worst = worst.max((c - CREATIVITY[m]).abs());
        ensure!((c - CREATIVITY[m]).abs() <= 0.001, "{model} creativity: {c:.4}");
    }
    Ok(format!("max deviation {worst:.5}"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng::stream(2, "acceptance", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=300);
        let mut hist = || {
            let v: Vec<f64> = (0..n).map(|_| if r.random_bool(0.3) { 0.0 } else { r.random::<f64>() }).collect();
            let s: f64 = v.iter().sum::<f64>().max(1e-300);
            v.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (p, q) = (hist(), hist());
        if p.iter().sum::<f64>() == 0.0 || q.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let spacing = if r.random_bool(0.5) { 1.0 } else { 5.0 / 1440.0 };
        let diff = (emd(&p, &q, spacing) - brute_force_emd(&p, &q, spacing)).abs();
        worst = worst.max(diff);
        ensure!(diff < 1e-9, "emd differs from brute force by {diff:e}");
    }

    let fixtures: [(&[f64], &[f64], f64, f64); 3] = [
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0], -1.8973665961010275, 0.10753119493062718),
        (
            &[0.152, 0.170, 0.131, 0.160, 0.147],
            &[0.817, 0.95, 0.70, 0.80, 0.82],
            -16.499132225353932,
            5.4572573024558486e-05,
        ),
        (&[2.1, 2.4, 1.9, 2.6, 2.2, 2.0], &[3.1, 2.9, 3.6, 3.3], -5.58975430227942, 0.0014665601671848569),
    ];
    for (a, b, t, p) in fixtures {
        let w = welch_t_test(a, b).map_err(|e| e.to_string())?;
        ensure!((w.t - t).abs() < 1e-6 && (w.p - p).abs() < 1e-6, "welch {:?} vs t={t} p={p}", w);
    }

    use ActivityType::{Home, Work};
    let hwh = Schedule::from_pairs(&[(Home, 480), (Work, 540), (Home, 420)]).unwrap();
    let pairs = pair_counts(&hwh);
    ensure!(
        pairs.len() == 2 && pairs[&(Home, Work)] == 2 && pairs[&(Home, Home)] == 1,
        "pair counts {pairs:?}"
    );
    let bigrams = ngram_counts(&hwh, 2);
    ensure!(
        bigrams.len() == 2 && bigrams[&vec![Home, Work]] == 1 && bigrams[&vec![Work, Home]] == 1,
        "2-grams {bigrams:?}"
    );
    let trigrams = ngram_counts(&hwh, 3);
    ensure!(trigrams.len() == 1 && trigrams[&vec![Home, Work, Home]] == 1, "3-grams {trigrams:?}");
    Ok(format!("emd max error {worst:.1e}, 3 Welch fixtures, worked counts"))
}

fn gradients() -> Outcome {
    let mut worst = (0.0, "");
    let mut layers = 0;
    for case in layer_cases() {
        for trial in 0..50 {
            let err = (case.trial)(trial).map_err(|e| format!("{}: {e}", case.name))?;
            ensure!(err < 1e-3, "{} trial {trial}: relative error {err:e}", case.name);
            if err > worst.0 {
                worst = (err, case.name);
            }
        }
        layers += 1;
    }
    Ok(format!("{layers} layers x 50 trials, worst {:.1e} ({})", worst.0, worst.1))
}

fn random_schedule(r: &mut impl Rng, max: usize) -> Schedule {
    let k = r.random_range(1..=max);
    let mut cuts: Vec<u32> = Vec::with_capacity(k + 1);
    while cuts.len() < k - 1 {
        let c = r.random_range(1..1440);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(1440);
    let entries = cuts
        .windows(2)
        .map(|w| Activity::new(ActivityType::from_id(r.random_range(0..ActivityType::COUNT)).unwrap(), w[1] - w[0]))
        .collect();
    Schedule::new(entries).unwrap()
}

fn round_trips() -> Outcome {
    let mut r = rng::stream(4, "acceptance", 0);
    for i in 0..10_000 {
        let s = random_schedule(&mut r, 15);
        let enc = encode_continuous(&s, 16).map_err(|e| e.to_string())?;
        let raw: Vec<(usize, f64)> = enc.symbol_ids().zip(enc.durations()).collect();
        let back = decode_continuous(&raw).map_err(|e| e.to_string())?;
        ensure!(back == s, "continuous #{i}: {s} -> {back}");
    }
    for i in 0..2_000 {
        let step = [5, 10, 15, 20, 30, 60, 120][i % 7];
        let bins = 1440 / step;
        let s = random_schedule(&mut r, 12);
        // snap to the grid; decoding merges equal neighbours
        let mut ids: Vec<usize> = Vec::with_capacity(bins as usize);
        for (start, a) in s.timed() {
            let end = ((start + a.duration) / step).max(1).min(bins);
            while (ids.len() as u32) < end {
                ids.push(a.kind.id());
            }
        }
        ids.resize(bins as usize, *ids.last().unwrap());
        let aligned = decode_discrete_ids(&ids, step).map_err(|e| e.to_string())?;
        let enc = encode_discrete(&aligned, step).map_err(|e| e.to_string())?;
        let back = decode_discrete(&enc).map_err(|e| e.to_string())?;
        ensure!(back == aligned, "discrete #{i} step {step}: {aligned} -> {back}");
    }
    for i in 0..2_000 {
        let ids: Vec<usize> = (0..144).map(|_| r.random_range(0..ActivityType::COUNT)).collect();
        let s = decode_discrete_ids(&ids, 10).map_err(|e| e.to_string())?;
        ensure!(s.entries().windows(2).all(|w| w[0].kind != w[1].kind), "decode #{i} repeats a type: {s}");
    }
    Ok("10000 continuous, 2000 discrete, 2000 random decodes".into())
}

/// Presets shrunk to keep 500 full-batch steps within budget on one core.
fn overfit_config(name: &str) -> ModelConfig {
    let mut c = ModelConfig::preset(name).unwrap();
    c.blocks = c.blocks.min(2);
    c.block_size = c.block_size.min(64);
    c.batch_size = 64;
    c.dropout = 0.0;
    c
}

/// Training loss, averaged over the last 10 steps, must fall below a tenth
/// of the first step's loss.
fn overfit() -> Outcome {
    const WINDOW: usize = 10;
    let data = draw_sample(&GrammarSpec::default(), 64, 21).schedules;
    let mut lines = Vec::new();
    for name in MODELS {
        let cfg = overfit_config(name);
        let set = EncodedSet::new(&data, &cfg).map_err(|e| e.to_string())?;
        let batch = set.batch(&(0..set.rows()).collect::<Vec<_>>());
        let mut trainer = Trainer::new(VaeModel::new(cfg, 21).map_err(|e| e.to_string())?, 21);
        let mut losses = Vec::with_capacity(500);
        let mut reached = None;
        for step in 1..=500 {
            losses.push(trainer.step(&batch).map_err(|e| format!("{name}: {e}"))?.total);
            if losses.len() >= WINDOW {
                let recent = losses[losses.len() - WINDOW..].iter().sum::<f64>() / WINDOW as f64;
                if recent < 0.1 * losses[0] {
                    reached = Some(step);
                    break;
                }
            }
        }
        let recent = losses[losses.len() - WINDOW..].iter().sum::<f64>() / WINDOW as f64;
        let step = reached.ok_or(format!("{name}: loss {recent:.4} after 500 steps, initial {:.4}", losses[0]))?;
        let eval = trainer.evaluate(&set).map_err(|e| e.to_string())?.total;
        lines.push(format!("{name} {step} (eval {eval:.3})"));
    }
    Ok(format!("steps to 10%: {}", lines.join(", ")))
}

const ORACLE_N: usize = 15_000;
const ORACLE_SEED: u64 = 2024;
const DENSITY_EPOCHS: usize = 75;

struct DensityRun {
    model: VaeModel,
    eval: EvalReport,
    floor: EvalReport,
    null: EvalReport,
    epochs: usize,
    minutes: f64,
}

fn density_run() -> Result<DensityRun, String> {
    let start = Instant::now();
    let spec = GrammarSpec::default();
    let real = draw_sample(&spec, ORACLE_N, ORACLE_SEED);
    let (tr, val) = split_train_val(&real, 0.9, ORACLE_SEED).map_err(|e| e.to_string())?;
    let config = ModelConfig::preset("ContRNN-Small").map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        max_epochs: DENSITY_EPOCHS,
        ..TrainOptions::default()
    };
    let (model, report) = train(&config, &tr.schedules, &val.schedules, ORACLE_SEED, &opts).map_err(|e| e.to_string())?;
    let synthetic = generate(&model, ORACLE_N, ORACLE_SEED).map_err(|e| e.to_string())?;
    let eval = evaluate(&real, &synthetic, &tr.schedules);
    let floor = resample_baseline(&real, ORACLE_SEED).map_err(|e| e.to_string())?;
    let null = evaluate(&real, &null_sample(&spec, ORACLE_N, ORACLE_SEED), &tr.schedules);
    Ok(DensityRun {
        model,
        eval,
        floor,
        null,
        epochs: report.epochs.len(),
        minutes: start.elapsed().as_secs_f64() / 60.0,
    })
}

fn density(run: &DensityRun) -> Outcome {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for d in Domain::ALL {
        let (m, f, n) = (run.eval.domain(d), run.floor.domain(d), run.null.domain(d));
        parts.push(format!("{d} {m:.4} (floor {f:.4}, null {n:.4})"));
        if m > 3.0 * f {
            failures.push(format!("{d}: {:.1}x floor", m / f));
        }
        if 5.0 * m > n {
            failures.push(format!("{d}: only {:.1}x better than null", n / m));
        }
    }
    if run.minutes > 30.0 {
        failures.push(format!("took {:.1} min", run.minutes));
    }
    let summary = format!("{}; {} epochs in {:.1} min", parts.join("; "), run.epochs, run.minutes);
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", failures.join(", ")))
    }
}

fn quality(run: &DensityRun) -> Outcome {
    let v = &run.eval.validity;
    let c = &run.eval.creativity;
    let degenerate = run.eval.degenerate;
    let decodable = (v.invalid * v.novel as f64 - degenerate as f64) / (v.novel - degenerate).max(1) as f64;
    let summary = format!(
        "invalid {:.4}, homogeneity {:.4}, conservatism {:.4} over {} novel ({degenerate} degenerate; invalid {decodable:.4} over decodable outputs)",
        v.invalid, c.homogeneity, c.conservatism, v.novel
    );
    ensure!(v.invalid <= 0.10 && c.homogeneity < 0.5 && c.conservatism < 0.2, "{summary}");
    Ok(summary)
}

fn throughput(model: &VaeModel) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("small.ckpt");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = VaeModel::load(&path).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let sample = pool.install(|| generate(&loaded, 60_000, 9)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(sample.len() + sample.degenerate == 60_000, "generated {}", sample.len());
    ensure!(took <= Duration::from_secs(300), "60000 schedules took {:.1} s", took.as_secs_f64());
    Ok(format!("60000 schedules in {:.1} s on one thread", took.as_secs_f64()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let data = draw_sample(&GrammarSpec::default(), 400, 8);
    schedgen::sample_io::save_sample(&d.join("real.sample"), &data).map_err(|e| e.to_string())?;
    fs::write(
        d.join("exp.toml"),
        "[experiment]\nmodel = \"ContRNN-Tiny\"\ndata = \"real.sample\"\nseed = 99\nruns = 2\n\n\
         [train]\nmax_epochs = 3\n\n[model]\nbatch_size = 64\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let cfg = d.join("exp.toml");
        let target = d.join(out);
        let args = ["schedgen", "experiment", "--config", cfg.to_str().unwrap(), "--out", target.to_str().unwrap()];
        let code = schedgen::cli::main_with(args);
        ensure!(code == 0, "experiment exited with {code}");
        outputs.push(fs::read(target.join("summary.csv")).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "summary.csv differs between identical runs");
    Ok(format!("summary.csv identical ({} bytes)", outputs[0].len()))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(msg) => println!("criterion {n} {name}: PASS ({secs:.1} s) {msg}"),
        Err(msg) => println!("criterion {n} {name}: FAIL ({secs:.1} s) {msg}"),
    }
    outcome.is_ok()
}

/// Failing criteria are reported, not fatal, unless this variable is set.
const STRICT_ENV: &str = "SCHEDGEN_STRICT_ACCEPTANCE";

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut passed = vec![
        report(1, "table arithmetic", table_arithmetic),
        report(2, "metric oracles", metric_oracles),
        report(3, "gradient checks", gradients),
        report(4, "encoding round trips", round_trips),
        report(5, "overfit capacity", overfit),
    ];

    let run = panic::catch_unwind(density_run).unwrap_or_else(|_| Err("panicked".into()));
    match &run {
        Ok(run) => {
            passed.push(report(6, "oracle density estimation", || density(run)));
            passed.push(report(7, "validity and creativity", || quality(run)));
            passed.push(report(8, "generation throughput", || throughput(&run.model)));
        }
        Err(e) => {
            for (n, name) in [(6, "oracle density estimation"), (7, "validity and creativity"), (8, "generation throughput")] {
                println!("criterion {n} {name}: FAIL training failed: {e}");
                passed.push(false);
            }
        }
    }
    passed.push(report(9, "experiment determinism", determinism));
    let n = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n} of {} criteria passed", passed.len());
    if n < passed.len() && std::env::var_os(STRICT_ENV).is_some() {
        std::process::exit(1);
    }
}
