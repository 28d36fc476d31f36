use firecast_core::dataset::{sample_pair, DataConfig, Dataset, PairRef};
use firecast_core::losses::LossWeights;
use firecast_core::model::{sample_noise, ModelConfig};
use firecast_core::training::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data() -> Dataset {
    Dataset::synthesize(&DataConfig::new(6, 24, 32, 32)).unwrap().0
}

fn config(steps: usize) -> TrainConfig {
    let mut c = TrainConfig::new(8, ModelConfig::compact(32, 32));
    c.batch = 2;
    c.steps = steps;
    c.n_critic = 2;
    c
}

fn fixed_batch(ds: &Dataset, b: usize, seed: u64) -> (Batch<f32>, ChaCha8Rng) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<PairRef> = (0..b).map(|_| sample_pair(&ds.train, &mut r)).collect();
    (step_batch(ds, &pairs), r)
}

#[test]
fn training_is_reproducible() {
    let ds = data();
    let mut a = Trainer::<f32>::new(config(3)).unwrap();
    let mut b = Trainer::<f32>::new(config(3)).unwrap();
    a.run(&ds, None).unwrap();
    b.run(&ds, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.g.params, b.g.params);
    assert_eq!(a.d.params, b.d.params);
    assert_eq!(a.log.len(), 3 * 3);
    assert!(a.log.iter().all(|r| r.values().all(f64::is_finite)));
}

#[test]
fn updates_touch_only_their_network() {
    let ds = data();
    let mut tr = Trainer::<f32>::new(config(1)).unwrap();
    let (g0, d0) = (tr.g.params.clone(), tr.d.params.clone());
    tr.critic_update(&ds).unwrap();
    assert_eq!(tr.g.params, g0);
    assert_ne!(tr.d.params, d0);
    let d1 = tr.d.params.clone();
    tr.generator_update(&ds).unwrap();
    assert_eq!(tr.d.params, d1);
    assert_ne!(tr.g.params, g0);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_unbroken_run() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    let mut whole = Trainer::<f32>::new(config(4)).unwrap();
    whole.run(&ds, None).unwrap();

    let mut first = Trainer::<f32>::new(config(2)).unwrap();
    let saved = first.run(&ds, Some(dir.path())).unwrap();
    let last = saved.last().unwrap();
    assert_eq!(last, &checkpoint_dir(dir.path(), 2));
    for f in ["optimizer.bin", "rng.json", "train_config.json", "train_log.csv"] {
        assert!(last.join(f).is_file(), "{f} missing");
    }
    let mut resumed = Trainer::<f32>::load(last).unwrap();
    assert_eq!(resumed.g.params, first.g.params);
    assert_eq!(resumed.updates, first.updates);
    resumed.config.steps = 4;
    resumed.run(&ds, None).unwrap();
    assert_eq!(resumed.g.params, whole.g.params);
    assert_eq!(resumed.d.params, whole.d.params);
    assert_eq!(resumed.log, whole.log);
}

#[test]
fn log_round_trips_through_csv() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    let mut tr = Trainer::<f32>::new(config(2)).unwrap();
    tr.run(&ds, None).unwrap();
    let path = dir.path().join("train_log.csv");
    write_log(&path, &tr.log).unwrap();
    assert_eq!(read_log(&path).unwrap(), tr.log);
}

#[test]
fn reconstruction_terms_fit_a_fixed_batch() {
    let ds = data();
    let mut c = config(1);
    c.batch = 4;
    c.weights = LossWeights { w_adv: 0.0, w_l1: 20.0, w_dice: 15.0, w_gp: 10.0 };
    let mut tr = Trainer::<f32>::new(c).unwrap();
    let (batch, mut r) = fixed_batch(&ds, 4, 1);
    let z = sample_noise(&mut r, 4, tr.g.d_z());
    let start = tr.generator_step_on(&batch, &z).unwrap();
    let mut end = start;
    for _ in 0..120 {
        end = tr.generator_step_on(&batch, &z).unwrap();
    }
    assert!(end.l_l1 < 0.5 * start.l_l1, "L1 {} -> {}", start.l_l1, end.l_l1);
    assert!(end.l_dice < 0.8 * start.l_dice, "Dice {} -> {}", start.l_dice, end.l_dice);
}

#[test]
fn critic_learns_to_separate_real_from_generated() {
    let ds = data();
    let mut c = config(1);
    c.batch = 4;
    c.adam.lr = 5e-4;
    let mut tr = Trainer::<f32>::new(c).unwrap();
    let (batch, mut r) = fixed_batch(&ds, 4, 2);
    let z = sample_noise(&mut r, 4, tr.g.d_z());
    let u = vec![0.5; 4];
    let first = tr.critic_step_on(&batch, &z, &u).unwrap();
    let mut last = first;
    for _ in 0..60 {
        last = tr.critic_step_on(&batch, &z, &u).unwrap();
    }
    // mean(fake) - mean(real) falls as the critic separates the pairs.
    assert!(last.l_wgan < first.l_wgan - 0.1, "{} -> {}", first.l_wgan, last.l_wgan);
    assert!(last.l_wgan < 0.0);
}

#[test]
fn baseline_trains_and_reloads() {
    let ds = data();
    let dir = tempfile::tempdir().unwrap();
    let mut ae = BaselineTrainer::<f32>::new(config(3)).unwrap();
    ae.run(&ds).unwrap();
    assert_eq!(ae.losses.len(), 3);
    assert!(ae.losses.iter().all(|l| l.is_finite()));
    ae.save(dir.path()).unwrap();
    let back = BaselineTrainer::<f32>::load(dir.path()).unwrap();
    assert_eq!(back.g.params, ae.g.params);
}

#[test]
fn invalid_settings_are_rejected() {
    let mut c = config(1);
    c.batch = 0;
    assert!(Trainer::<f32>::new(c).is_err());
    let mut c = config(1);
    c.weights.w_gp = -1.0;
    assert!(Trainer::<f32>::new(c).is_err());
}
