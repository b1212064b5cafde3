use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::rng;
use crate::schedule::{ActivityType::*, Schedule};
use crate::tensor::{Graph, Mode, Tensor};

fn small(name: &str) -> ModelConfig {
    let mut c = ModelConfig::preset(name).unwrap();
    c.blocks = 2;
    c.block_size = 8;
    c.batch_size = 4;
    c
}

fn schedules() -> Vec<Schedule> {
    vec![
        Schedule::from_pairs(&[(Home, 480), (Work, 540), (Home, 420)]).unwrap(),
        Schedule::single(Home),
        Schedule::from_pairs(&[(Home, 600), (Shop, 60), (Home, 780)]).unwrap(),
        Schedule::from_pairs(&[(Home, 420), (Education, 480), (Home, 540)]).unwrap(),
    ]
}

fn noise(b: usize, latent: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "eps", 0);
    Tensor::from_fn(&[b, latent], |_| StandardNormal.sample(&mut r))
}

const ALL: [&str; 6] = ["DiscFF", "DiscCNN", "DiscRNN", "ContFF", "ContCNN", "ContRNN"];

#[test]
fn conv_lengths_halve_down_to_one() {
    assert_eq!(conv_lengths(144, 6).0, vec![144, 72, 36, 18, 9, 4, 2]);
    assert_eq!(conv_lengths(16, 5).0, vec![16, 8, 4, 2, 1, 1]);
    assert_eq!(conv_lengths(16, 5).1, vec![1, 1, 1, 1, 2]);
}

#[test]
fn every_variant_trains_one_step() {
    for name in ALL {
        let cfg = small(name);
        let model = VaeModel::new(cfg.clone(), 1).unwrap();
        let set = EncodedSet::new(&schedules(), &cfg).unwrap();
        let batch = set.batch(&[0, 1, 2, 3]);
        let mut g = Graph::new(Mode::Train, rng::stream(1, "dropout", 0));
        let mut tf = rng::stream(1, "tf", 0);
        let fwd = model.forward(&mut g, &batch, noise(4, cfg.latent, 2), &mut tf).unwrap();
        assert_eq!(g.shape(fwd.logits), &[4, cfg.seq_len(), cfg.classes()], "{name}");
        assert_eq!(fwd.durations.is_some(), cfg.encoding == EncodingKind::Continuous);
        let (loss, parts) = model.loss(&mut g, &fwd, &batch).unwrap();
        assert!(parts.total.is_finite() && parts.ce > 0.0 && parts.kl >= 0.0, "{name}: {parts:?}");
        let expected = parts.ce + cfg.alpha() * parts.mse + cfg.beta * parts.kl;
        assert!((parts.total - expected).abs() < 1e-3 * expected.abs().max(1.0));
        let grads = g.backward(loss).unwrap();
        for (id, p) in model.store().iter() {
            if p.trainable {
                assert!(grads.get(id).is_some(), "{name}: no gradient for {}", p.name);
            }
        }
    }
}

#[test]
fn kl_is_zero_at_the_prior() {
    let mut g = Graph::new(Mode::Eval, rng::stream(0, "x", 0));
    let mu = g.constant(Tensor::zeros(&[3, 6]));
    let lv = g.constant(Tensor::zeros(&[3, 6]));
    let kl = kl_divergence(&mut g, mu, lv).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);
    let mu = g.constant(Tensor::full(&[2, 6], 1.0));
    let lv = g.constant(Tensor::zeros(&[2, 6]));
    let kl = kl_divergence(&mut g, mu, lv).unwrap();
    assert!((g.value(kl).item() - 3.0).abs() < 1e-6);
}

#[test]
fn decoding_is_deterministic_and_survives_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    for name in ALL {
        let cfg = small(name);
        let model = VaeModel::new(cfg.clone(), 7).unwrap();
        let z = noise(5, cfg.latent, 3);
        let a = model.decode_latent(&z).unwrap();
        assert_eq!(a, model.decode_latent(&z).unwrap());
        assert_eq!(a.ids.len(), 5 * cfg.seq_len());
        let path = dir.path().join(format!("{name}.ckpt"));
        model.save(&path).unwrap();
        let back = VaeModel::load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.decode_latent(&z).unwrap(), a);
        assert_eq!(model.decode(&z).unwrap().len(), 5);
    }
}

#[test]
fn seeds_control_initialisation() {
    let cfg = small("ContRNN");
    let a = VaeModel::new(cfg.clone(), 1).unwrap();
    let b = VaeModel::new(cfg.clone(), 1).unwrap();
    let c = VaeModel::new(cfg, 2).unwrap();
    assert_eq!(a.store(), b.store());
    assert_ne!(a.store(), c.store());
}

#[test]
fn discrete_decode_yields_valid_schedules() {
    let cfg = small("DiscFF");
    let model = VaeModel::new(cfg.clone(), 3).unwrap();
    for s in model.decode(&noise(8, cfg.latent, 4)).unwrap() {
        let s = s.unwrap();
        assert_eq!(s.entries().iter().map(|a| a.duration).sum::<u32>(), 1440);
    }
}
