use proptest::prelude::*;

use schedgen::encoding::{decode_continuous, decode_discrete, decode_discrete_ids, encode_continuous, encode_discrete};
use schedgen::eval::emd;
use schedgen::ingest::split_train_val;
use schedgen::oracle::brute_force_emd;
use schedgen::sample_io::{read_sample, write_sample};
use schedgen::schedule::{SampleKind, RESTRICTED};
use schedgen::{Activity, ActivityType, Schedule, ScheduleSample};

/// Splits the day at `cuts` (sorted, distinct, inside (0, 1440)).
fn tile(kinds: Vec<ActivityType>, mut cuts: Vec<u32>) -> Schedule {
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(1440);
    let entries = bounds
        .windows(2)
        .zip(kinds.iter().cycle())
        .map(|(w, &k)| Activity::new(k, w[1] - w[0]))
        .collect();
    Schedule::new(entries).unwrap()
}

fn kind() -> impl Strategy<Value = ActivityType> {
    (0..ActivityType::COUNT).prop_map(|i| ActivityType::from_id(i).unwrap())
}

fn schedule(max: usize) -> impl Strategy<Value = Schedule> {
    (1..=max).prop_flat_map(|k| {
        (
            prop::collection::vec(kind(), k),
            prop::collection::btree_set(1u32..1440, k - 1),
        )
            .prop_map(|(kinds, cuts)| tile(kinds, cuts.into_iter().collect()))
    })
}

/// Schedules on a `step` grid with no two equal neighbours.
fn aligned(step: u32) -> impl Strategy<Value = Schedule> {
    let bins = 1440 / step;
    (1..=bins.min(12) as usize).prop_flat_map(move |k| {
        (
            prop::collection::vec(kind(), k),
            prop::collection::btree_set(1..bins, k - 1),
        )
            .prop_map(move |(mut kinds, cuts)| {
                for i in 1..kinds.len() {
                    if kinds[i] == kinds[i - 1] {
                        kinds[i] = ActivityType::from_id((kinds[i].id() + 1) % ActivityType::COUNT).unwrap();
                    }
                }
                tile(kinds, cuts.into_iter().map(|c| c * step).collect())
            })
    })
}

fn histogram(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("empty", |v| {
        let s: f64 = v.iter().sum();
        (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn continuous_round_trip(s in schedule(15)) {
        let enc = encode_continuous(&s, 16).unwrap();
        let raw: Vec<(usize, f64)> = enc.symbol_ids().zip(enc.durations()).collect();
        prop_assert_eq!(decode_continuous(&raw).unwrap(), s);
    }

    #[test]
    fn discrete_round_trip((step, s) in prop::sample::select(vec![5u32, 10, 15, 20, 30, 60, 120])
        .prop_flat_map(|step| aligned(step).prop_map(move |s| (step, s))))
    {
        let enc = encode_discrete(&s, step).unwrap();
        prop_assert_eq!(enc.tokens.len() as u32, 1440 / step);
        prop_assert_eq!(decode_discrete(&enc).unwrap(), s);
    }

    #[test]
    fn discrete_decode_has_no_equal_neighbours(ids in prop::collection::vec(0usize..ActivityType::COUNT, 144)) {
        let s = decode_discrete_ids(&ids, 10).unwrap();
        prop_assert!(s.entries().windows(2).all(|w| w[0].kind != w[1].kind));
        prop_assert_eq!(s.entries().iter().map(|a| a.duration).sum::<u32>(), 1440);
    }

    #[test]
    fn merge_is_idempotent(s in schedule(20)) {
        let once = s.merge_consecutive(&RESTRICTED);
        prop_assert_eq!(once.merge_consecutive(&RESTRICTED), once.clone());
        prop_assert!(!once.has_forbidden_consecutive());
        prop_assert_eq!(once.entries().iter().map(|a| a.duration).sum::<u32>(), 1440);
    }

    #[test]
    fn emd_is_a_metric((p, q, r) in (2usize..40).prop_flat_map(|n| (histogram(n), histogram(n), histogram(n)))) {
        let d = |a: &[f64], b: &[f64]| emd(a, b, 1.0);
        prop_assert!(d(&p, &p).abs() < 1e-12);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-12);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
        prop_assert!((d(&p, &q) - brute_force_emd(&p, &q, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn sample_file_round_trip(schedules in prop::collection::vec(schedule(10), 1..20), seed in any::<u64>()) {
        let sample = ScheduleSample::new(SampleKind::Synthetic, "prop test", schedules).with_seed(seed);
        let mut buf = Vec::new();
        write_sample(&mut buf, &sample).unwrap();
        let back = read_sample(buf.as_slice()).unwrap();
        prop_assert_eq!(back.schedules, sample.schedules);
        prop_assert_eq!(back.seed, Some(seed));
    }

    #[test]
    fn split_partitions(n in 10usize..300, seed in any::<u64>()) {
        let mut sample = ScheduleSample::new(SampleKind::Real, "p", vec![Schedule::single(ActivityType::Home); n]);
        sample.ids = (0..n).map(|i| i.to_string()).collect();
        let (a, b) = split_train_val(&sample, 0.9, seed).unwrap();
        prop_assert_eq!(a.len(), (0.9 * n as f64).floor() as usize);
        prop_assert_eq!(a.len() + b.len(), n);
        let mut ids: Vec<String> = a.ids.iter().chain(&b.ids).cloned().collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}
