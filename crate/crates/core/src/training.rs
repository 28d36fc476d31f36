//! Adversarial training of the one-step model and the direct baseline.
//!
//! Every update draws its batch, noise and interpolation weights from its
//! own named stream, so a run is a pure function of the seed and a resumed
//! run continues exactly where the saved one stopped.

use std::fs;
use std::path::{Path, PathBuf};

use firecast_tensor::{AdamConfig, AdamState, NodeId, ParamStore, Real, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{sample_pair, Dataset, MetStats, MetTensor, PairRef, Scenario, STEPS, STEP_HOURS};
use crate::error::{CoreError, Result};
use crate::losses::{self, LossWeights, DICE_EPS};
use crate::model::{sample_noise, Critic, GenInputs, Generator, Mode, ModelConfig};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    /// Generator updates.
    pub steps: usize,
    pub n_critic: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Dice weight at step 0, falling linearly to `weights.w_dice`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_warmup: Option<DiceWarmup>,
    /// Save a checkpoint every this many generator updates; 0 saves only
    /// the initial and final states.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceWarmup {
    pub start: f64,
    pub steps: usize,
}

impl TrainConfig {
    pub fn new(seed: u64, model: ModelConfig) -> Self {
        Self {
            seed,
            batch: 16,
            steps: 2000,
            n_critic: 5,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            dice_warmup: None,
            checkpoint_every: 0,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.n_critic == 0 {
            return Err(CoreError::Config("batch and n_critic must be at least 1".into()));
        }
        self.weights.validate()?;
        if let Some(d) = self.dice_warmup {
            if !(d.start.is_finite() && d.start >= 0.0) {
                return Err(CoreError::Config(format!("dice warm-up start {} must be finite and non-negative", d.start)));
            }
        }
        self.model.validate()
    }

    /// Loss weights in force for generator update `step`.
    pub fn weights_at(&self, step: u64) -> LossWeights {
        let mut w = self.weights;
        if let Some(d) = self.dice_warmup {
            let left = 1.0 - (step as f64 / d.steps.max(1) as f64).min(1.0);
            w.w_dice += (d.start - w.w_dice) * left;
        }
        w
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Condition vector for one transition: the step's met features and Δt in
/// units of four hours.
pub fn step_condition(stats: &MetStats, met: &MetTensor, step: usize) -> Vec<f32> {
    let mut c = stats.features(met, step);
    c.push((STEP_HOURS / 4.0) as f32);
    c
}

/// Condition vector for the baseline predicting horizon `k` (0-based).
pub fn baseline_condition(stats: &MetStats, met: &MetTensor, k: usize) -> Vec<f32> {
    let mut c = Vec::new();
    for step in 0..STEPS {
        c.extend(stats.features(met, step));
    }
    c.extend((0..STEPS).map(|i| if i == k { 1.0 } else { 0.0 }));
    c
}

/// Stacked network inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub state: Tensor<T>,
    pub target: Tensor<T>,
    pub terrain: Tensor<T>,
    pub cond: Tensor<T>,
}

fn stack<T: Real>(shape: Vec<usize>, rows: impl Iterator<Item = Vec<f32>>) -> Tensor<T> {
    let data: Vec<T> = rows.flatten().map(|v| T::lit(v as f64)).collect();
    Tensor::new(shape, data).expect("stacked rows fill the shape")
}

fn assemble<T: Real>(ds: &Dataset, items: &[(usize, Vec<f32>, Vec<f32>, Vec<f32>)]) -> Batch<T> {
    let (h, w) = (ds.rows(), ds.cols());
    let b = items.len();
    let cond_dim = items[0].3.len();
    Batch {
        state: stack(vec![b, 1, h, w], items.iter().map(|i| i.1.clone())),
        target: stack(vec![b, 1, h, w], items.iter().map(|i| i.2.clone())),
        terrain: stack(vec![b, 3, h, w], items.iter().map(|i| ds.scenarios[i.0].terrain.clone())),
        cond: stack(vec![b, cond_dim], items.iter().map(|i| i.3.clone())),
    }
}

/// Teacher-forced `(S_t, S_t+1)` pairs.
pub fn step_batch<T: Real>(ds: &Dataset, pairs: &[PairRef]) -> Batch<T> {
    let items: Vec<_> = pairs
        .iter()
        .map(|p| {
            let s = &ds.scenarios[p.scenario];
            (p.scenario, s.state(p.step).data, s.state(p.step + 1).data, step_condition(&ds.stats, &s.met, p.step))
        })
        .collect();
    assemble(ds, &items)
}

/// Ignition frame to horizon `k + 1` for the baseline.
pub fn baseline_batch<T: Real>(ds: &Dataset, pairs: &[PairRef]) -> Batch<T> {
    let items: Vec<_> = pairs
        .iter()
        .map(|p| {
            let s: &Scenario = &ds.scenarios[p.scenario];
            (p.scenario, s.state(0).data, s.state(p.step + 1).data, baseline_condition(&ds.stats, &s.met, p.step))
        })
        .collect();
    assemble(ds, &items)
}

fn repeat2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut shape = x.shape().to_vec();
    shape[0] *= 2;
    let mut data = x.data().to_vec();
    data.extend_from_slice(x.data());
    Tensor::new(shape, data).expect("doubled batch")
}

fn cat0<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(shape, data).expect("concatenated batch")
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::Numeric(format!("{what} is {v}")))
    }
}

fn scalar<T: Real>(t: &Tape<T>, n: NodeId) -> f64 {
    t.value(n).item().to_f64().unwrap_or(f64::NAN)
}

/// Gradients of `loss` for the trainable parameters of `ps`, followed by
/// one Adam step.
fn apply_adam<T: Real>(t: &mut Tape<T>, loss: NodeId, bound: &[NodeId], ps: &mut ParamStore<T>, adam: &mut AdamState<T>) -> Result<()> {
    let wrt: Vec<NodeId> = ps.trainable_ids().iter().map(|id| bound[id.0]).collect();
    let grads = t.backward(loss, &wrt)?;
    adam.step(&mut ps.trainable_mut(), &grads)?;
    Ok(())
}

fn adam_for<T: Real>(ps: &ParamStore<T>, cfg: AdamConfig) -> AdamState<T> {
    let ids = ps.trainable_ids();
    AdamState::new(cfg, ids.iter().map(|&id| ps.value(id).shape()))
}

/// Losses of a critic update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLosses {
    pub l_d: f64,
    pub l_wgan: f64,
    pub l_gp: f64,
}

/// Losses of a generator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLosses {
    pub l_g: f64,
    pub l_adv: f64,
    pub l_l1: f64,
    pub l_dice: f64,
}

/// One row of the training log; fields of the network not updated are
/// empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub net: String,
    #[serde(rename = "L_D")]
    pub l_d: Option<f64>,
    #[serde(rename = "L_WGAN")]
    pub l_wgan: Option<f64>,
    #[serde(rename = "L_GP")]
    pub l_gp: Option<f64>,
    #[serde(rename = "L_G")]
    pub l_g: Option<f64>,
    #[serde(rename = "L_adv")]
    pub l_adv: Option<f64>,
    #[serde(rename = "L_L1")]
    pub l_l1: Option<f64>,
    #[serde(rename = "L_Dice")]
    pub l_dice: Option<f64>,
}

impl LogRow {
    fn critic(step: u64, l: CriticLosses) -> Self {
        Self {
            step,
            net: "D".into(),
            l_d: Some(l.l_d),
            l_wgan: Some(l.l_wgan),
            l_gp: Some(l.l_gp),
            l_g: None,
            l_adv: None,
            l_l1: None,
            l_dice: None,
        }
    }

    fn generator(step: u64, l: GeneratorLosses) -> Self {
        Self {
            step,
            net: "G".into(),
            l_d: None,
            l_wgan: None,
            l_gp: None,
            l_g: Some(l.l_g),
            l_adv: Some(l.l_adv),
            l_l1: Some(l.l_l1),
            l_dice: Some(l.l_dice),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.l_d, self.l_wgan, self.l_gp, self.l_g, self.l_adv, self.l_l1, self.l_dice]
            .into_iter()
            .flatten()
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Progress position stored beside the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Updates of either network so far; the next update draws from
    /// stream `("update", updates)`.
    pub updates: u64,
    pub generator_steps: u64,
    pub config_hash: String,
}

fn write_moments<T: Real>(out: &mut Vec<u8>, st: &AdamState<T>) {
    out.extend(st.t.to_le_bytes());
    for t in st.m.iter().chain(&st.v) {
        for v in t.data() {
            out.extend(v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        }
    }
}

fn read_moments<T: Real>(bytes: &[u8], pos: &mut usize, st: &mut AdamState<T>) -> Result<()> {
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| CoreError::Data("optimizer state is truncated".into()))?;
        *pos += n;
        Ok(s)
    };
    st.t = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    for t in st.m.iter_mut().chain(st.v.iter_mut()) {
        for v in t.data_mut() {
            *v = T::lit(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
    }
    Ok(())
}

pub fn checkpoint_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("ckpt_{step}"))
}

/// The adversarial trainer: generator, critic, both optimizers and the
/// update counter.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub g: Generator<T>,
    pub d: Critic<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub updates: u64,
    pub generator_steps: u64,
    pub log: Vec<LogRow>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let g = Generator::new(&config.model, rng::derive_u64(config.seed, "init", 0))?;
        let d = Critic::new(&config.model, rng::derive_u64(config.seed, "init", 1))?;
        let adam_g = adam_for(&g.params, config.adam);
        let adam_d = adam_for(&d.params, config.adam);
        Ok(Self {
            config,
            g,
            d,
            adam_g,
            adam_d,
            updates: 0,
            generator_steps: 0,
            log: Vec::new(),
        })
    }

    fn next_stream(&mut self) -> ChaCha8Rng {
        let r = rng::stream(self.config.seed, "update", self.updates);
        self.updates += 1;
        r
    }

    fn draw(&self, ds: &Dataset, r: &mut ChaCha8Rng) -> (Batch<T>, Tensor<T>) {
        let pairs: Vec<PairRef> = (0..self.config.batch).map(|_| sample_pair(&ds.train, r)).collect();
        let batch = step_batch(ds, &pairs);
        let z = sample_noise(r, self.config.batch, self.g.d_z());
        (batch, z)
    }

    fn generate(&self, batch: &Batch<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut t = Tape::new();
        let p = self.g.params.bind(&mut t);
        let inputs = GenInputs {
            state: t.leaf(batch.state.clone()),
            terrain: t.leaf(batch.terrain.clone()),
            cond: t.leaf(batch.cond.clone()),
            noise: (self.g.d_z() > 0).then(|| t.leaf(z.clone())),
        };
        let (y, _) = self.g.forward(&mut t, &p, &inputs, Mode::Train)?;
        Ok(t.value(y).clone())
    }

    /// One critic update on a given batch.
    pub fn critic_step_on(&mut self, batch: &Batch<T>, z: &Tensor<T>, u: &[f64]) -> Result<CriticLosses> {
        let fake = self.generate(batch, z)?;
        let b = batch.state.shape()[0];
        let w = self.config.weights;

        let mut t = Tape::new();
        let p = self.d.params.bind(&mut t);
        let cand = t.leaf(cat0(&batch.target, &fake));
        let state2 = t.leaf(repeat2(&batch.state));
        let terr2 = t.leaf(repeat2(&batch.terrain));
        let cond2 = t.leaf(repeat2(&batch.cond));
        let out = self.d.forward(&mut t, &p, cand, state2, terr2, cond2)?;
        let real = t.slice(out.scores, 0, 0, b)?;
        let fk = t.slice(out.scores, 0, b, b)?;
        let wgan = losses::wasserstein_loss(&mut t, fk, real)?;

        let x_int = t.leaf(losses::interpolate(&batch.target, &fake, u)?);
        let state = t.leaf(batch.state.clone());
        let terr = t.leaf(batch.terrain.clone());
        let cond = t.leaf(batch.cond.clone());
        let d = &self.d;
        let gp = losses::gradient_penalty(&mut t, x_int, |t, x| Ok(d.forward(t, &p, x, state, terr, cond)?.scores))?;
        let l_d = losses::discriminator_loss(&mut t, wgan, gp, w.w_gp)?;
        let out = CriticLosses {
            l_d: finite(scalar(&t, l_d), "L_D")?,
            l_wgan: finite(scalar(&t, wgan), "L_WGAN")?,
            l_gp: finite(scalar(&t, gp), "L_GP")?,
        };
        apply_adam(&mut t, l_d, &p, &mut self.d.params, &mut self.adam_d)?;
        Ok(out)
    }

    /// One generator update on a given batch.
    pub fn generator_step_on(&mut self, batch: &Batch<T>, z: &Tensor<T>) -> Result<GeneratorLosses> {
        let w = self.config.weights_at(self.generator_steps);
        let mut t = Tape::new();
        let p = self.g.params.bind(&mut t);
        let inputs = GenInputs {
            state: t.leaf(batch.state.clone()),
            terrain: t.leaf(batch.terrain.clone()),
            cond: t.leaf(batch.cond.clone()),
            noise: (self.g.d_z() > 0).then(|| t.leaf(z.clone())),
        };
        let (fake, obs) = self.g.forward(&mut t, &p, &inputs, Mode::Train)?;
        let target = t.leaf(batch.target.clone());
        let adv = if w.w_adv > 0.0 {
            let dp = self.d.params.bind(&mut t);
            let scores = self.d.forward(&mut t, &dp, fake, inputs.state, inputs.terrain, inputs.cond)?.scores;
            losses::adversarial_loss(&mut t, scores)?
        } else {
            t.leaf(Tensor::scalar(T::zero()))
        };
        let l1 = losses::l1_loss(&mut t, target, fake)?;
        let dice = losses::dice_loss(&mut t, target, fake, DICE_EPS)?;
        let l_g = losses::generator_loss(&mut t, adv, l1, dice, &w)?;
        let out = GeneratorLosses {
            l_g: finite(scalar(&t, l_g), "L_G")?,
            l_adv: finite(scalar(&t, adv), "L_adv")?,
            l_l1: finite(scalar(&t, l1), "L_L1")?,
            l_dice: finite(scalar(&t, dice), "L_Dice")?,
        };
        apply_adam(&mut t, l_g, &p, &mut self.g.params, &mut self.adam_g)?;
        obs.apply(&mut self.g.params);
        Ok(out)
    }

    pub fn critic_update(&mut self, ds: &Dataset) -> Result<CriticLosses> {
        let mut r = self.next_stream();
        let (batch, z) = self.draw(ds, &mut r);
        let u = losses::interpolation_weights(&mut r, self.config.batch);
        let l = self.critic_step_on(&batch, &z, &u)?;
        self.log.push(LogRow::critic(self.updates - 1, l));
        Ok(l)
    }

    pub fn generator_update(&mut self, ds: &Dataset) -> Result<GeneratorLosses> {
        let mut r = self.next_stream();
        let (batch, z) = self.draw(ds, &mut r);
        let l = self.generator_step_on(&batch, &z)?;
        self.generator_steps += 1;
        self.log.push(LogRow::generator(self.updates - 1, l));
        Ok(l)
    }

    /// Runs until `config.steps` generator updates, saving checkpoints
    /// under `ckpt_root` when given. Returns the saved directories.
    pub fn run(&mut self, ds: &Dataset, ckpt_root: Option<&Path>) -> Result<Vec<PathBuf>> {
        if ds.train.is_empty() {
            return Err(CoreError::Data("training split is empty".into()));
        }
        let mut saved = Vec::new();
        let mut save = |tr: &Self| -> Result<()> {
            if let Some(root) = ckpt_root {
                let dir = checkpoint_dir(root, tr.generator_steps);
                tr.save(&dir)?;
                saved.push(dir);
            }
            Ok(())
        };
        if self.generator_steps == 0 {
            save(self)?;
        }
        let every = self.config.checkpoint_every;
        while (self.generator_steps as usize) < self.config.steps {
            for _ in 0..self.config.n_critic {
                self.critic_update(ds)?;
            }
            self.generator_update(ds)?;
            let done = self.generator_steps as usize == self.config.steps;
            if done || (every > 0 && self.generator_steps as usize % every == 0) {
                save(self)?;
            }
        }
        Ok(saved)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.g.params.save(dir, "G")?;
        self.d.params.save(dir, "D")?;
        let mut blob = Vec::new();
        write_moments(&mut blob, &self.adam_g);
        write_moments(&mut blob, &self.adam_d);
        fs::write(dir.join("optimizer.bin"), blob)?;
        let state = RngState {
            seed: self.config.seed,
            updates: self.updates,
            generator_steps: self.generator_steps,
            config_hash: self.config.hash(),
        };
        fs::write(dir.join("rng.json"), serde_json::to_string_pretty(&state)?)?;
        fs::write(dir.join("train_config.json"), serde_json::to_string_pretty(&self.config)?)?;
        write_log(&dir.join("train_log.csv"), &self.log)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: TrainConfig = serde_json::from_slice(&fs::read(dir.join("train_config.json"))?)?;
        let state: RngState = serde_json::from_slice(&fs::read(dir.join("rng.json"))?)?;
        if state.config_hash != config.hash() {
            return Err(CoreError::Data(format!("{}: config hash mismatch", dir.display())));
        }
        let mut tr = Self::new(config)?;
        tr.g.params.load(dir, "G")?;
        tr.d.params.load(dir, "D")?;
        let blob = fs::read(dir.join("optimizer.bin"))?;
        let mut pos = 0;
        read_moments(&blob, &mut pos, &mut tr.adam_g)?;
        read_moments(&blob, &mut pos, &mut tr.adam_d)?;
        if pos != blob.len() {
            return Err(CoreError::Data("optimizer state has trailing bytes".into()));
        }
        tr.updates = state.updates;
        tr.generator_steps = state.generator_steps;
        tr.log = read_log(&dir.join("train_log.csv"))?;
        Ok(tr)
    }
}

/// Trainer for the direct encoder-decoder baseline, fitted with pixel MSE.
#[derive(Clone, Debug)]
pub struct BaselineTrainer<T> {
    pub config: TrainConfig,
    pub g: Generator<T>,
    pub adam: AdamState<T>,
    pub steps: u64,
    pub losses: Vec<f64>,
}

impl<T: Real> BaselineTrainer<T> {
    /// `config.model` is the one-step plan; the baseline variant of it is
    /// derived here.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let g = Generator::new(&config.model.baseline(), rng::derive_u64(config.seed, "init", 2))?;
        let adam = adam_for(&g.params, config.adam);
        Ok(Self {
            config,
            g,
            adam,
            steps: 0,
            losses: Vec::new(),
        })
    }

    pub fn step_on(&mut self, batch: &Batch<T>) -> Result<f64> {
        let mut t = Tape::new();
        let p = self.g.params.bind(&mut t);
        let inputs = GenInputs {
            state: t.leaf(batch.state.clone()),
            terrain: t.leaf(batch.terrain.clone()),
            cond: t.leaf(batch.cond.clone()),
            noise: None,
        };
        let (y, obs) = self.g.forward(&mut t, &p, &inputs, Mode::Train)?;
        let target = t.leaf(batch.target.clone());
        let d = t.sub(y, target)?;
        let sq = t.square(d)?;
        let mse = t.mean(sq)?;
        let v = finite(scalar(&t, mse), "baseline MSE")?;
        apply_adam(&mut t, mse, &p, &mut self.g.params, &mut self.adam)?;
        obs.apply(&mut self.g.params);
        Ok(v)
    }

    pub fn run(&mut self, ds: &Dataset) -> Result<()> {
        if ds.train.is_empty() {
            return Err(CoreError::Data("training split is empty".into()));
        }
        while (self.steps as usize) < self.config.steps {
            let mut r = rng::stream(self.config.seed, "baseline-update", self.steps);
            let pairs: Vec<PairRef> = (0..self.config.batch)
                .map(|_| PairRef {
                    scenario: ds.train[r.random_range(0..ds.train.len())],
                    step: r.random_range(0..STEPS),
                })
                .collect();
            let batch = baseline_batch(ds, &pairs);
            let l = self.step_on(&batch)?;
            self.losses.push(l);
            self.steps += 1;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.g.params.save(dir, "AE")?;
        fs::write(dir.join("train_config.json"), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: TrainConfig = serde_json::from_slice(&fs::read(dir.join("train_config.json"))?)?;
        let mut tr = Self::new(config)?;
        tr.g.params.load(dir, "AE")?;
        Ok(tr)
    }
}
