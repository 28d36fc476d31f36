//! Generator and PatchGAN critic.
//!
//! The generator extracts fire and terrain features, modulates the fire
//! features with FiLM from a condition vector, and runs a residual U-Net
//! with noise concatenated at the bottleneck. The critic fuses a candidate
//! frame with the current state and the same conditions, then scores
//! overlapping patches with a fully convolutional head.

use firecast_tensor::{NodeId, ParamId, ParamStore, Real, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{MET_FEATURES, STEPS};
use crate::error::{CoreError, Result};
use crate::rng;

pub const LEAK: f64 = 0.2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Initial output logit; burned cells are a few percent of the grid.
const HEAD_BIAS: f64 = -4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Channels of each feature extractor.
    pub extractor: usize,
    /// Output channels of each stride-2 encoder stage.
    pub encoder: Vec<usize>,
    pub film_hidden: usize,
    /// Noise length; 0 builds a deterministic network.
    pub d_z: usize,
    pub noise_channels: usize,
    pub cond_dim: usize,
    /// Modulate the fire-state features with FiLM.
    pub fire_film: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub extractor: usize,
    /// Output channels of each kernel-4 stride-2 stage.
    pub stages: Vec<usize>,
    /// Kernel-3 unpadded convolutions closing the head; the last maps to
    /// one channel.
    pub valid_convs: usize,
    pub film_hidden: usize,
    pub cond_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rows: usize,
    pub cols: usize,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

/// Condition vector length for the one-step model: one met slice plus Δt.
pub const STEP_COND_DIM: usize = MET_FEATURES + 1;
/// Condition vector length for the baseline: every met slice plus a
/// horizon one-hot.
pub const BASELINE_COND_DIM: usize = STEPS * MET_FEATURES + STEPS;

impl ModelConfig {
    /// Smallest plan that keeps every mechanism; used for the end-to-end
    /// acceptance run on one CPU core.
    pub fn compact(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            generator: GeneratorConfig {
                extractor: 8,
                encoder: vec![16, 32, 64],
                film_hidden: 32,
                d_z: 16,
                noise_channels: 8,
                cond_dim: STEP_COND_DIM,
                fire_film: true,
            },
            critic: CriticConfig {
                extractor: 8,
                stages: vec![16, 32],
                valid_convs: 2,
                film_hidden: 32,
                cond_dim: STEP_COND_DIM,
            },
        }
    }

    pub fn desk(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            generator: GeneratorConfig {
                extractor: 32,
                encoder: vec![32, 64, 128],
                film_hidden: 64,
                d_z: 64,
                noise_channels: 8,
                cond_dim: STEP_COND_DIM,
                fire_film: true,
            },
            critic: CriticConfig {
                extractor: 32,
                stages: vec![64, 128],
                valid_convs: 2,
                film_hidden: 64,
                cond_dim: STEP_COND_DIM,
            },
        }
    }

    /// 128×128 inputs, four encoder stages, and a critic head that ends in
    /// a 12×12 patch grid.
    pub fn paper() -> Self {
        Self {
            rows: 128,
            cols: 128,
            generator: GeneratorConfig {
                extractor: 32,
                encoder: vec![32, 64, 128, 256],
                film_hidden: 64,
                d_z: 64,
                noise_channels: 8,
                cond_dim: STEP_COND_DIM,
                fire_film: true,
            },
            critic: CriticConfig {
                extractor: 32,
                stages: vec![64, 128, 256],
                valid_convs: 2,
                film_hidden: 64,
                cond_dim: STEP_COND_DIM,
            },
        }
    }

    pub fn by_name(name: &str, rows: usize, cols: usize) -> Result<Self> {
        match name {
            "compact" => Ok(Self::compact(rows, cols)),
            "desk" => Ok(Self::desk(rows, cols)),
            "paper" => Ok(Self::paper()),
            other => Err(CoreError::Config(format!("unknown scale preset `{other}`"))),
        }
    }

    /// The direct multi-horizon encoder-decoder: same backbone, no noise,
    /// no fire-state FiLM, conditioned on all met slices and a horizon
    /// one-hot.
    pub fn baseline(&self) -> Self {
        let mut c = self.clone();
        c.generator.d_z = 0;
        c.generator.fire_film = false;
        c.generator.cond_dim = BASELINE_COND_DIM;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let div = 1usize << g.encoder.len();
        if self.rows == 0 || self.cols == 0 || self.rows % div != 0 || self.cols % div != 0 {
            return Err(CoreError::Config(format!(
                "grid {}x{} must be a positive multiple of {div} for {} encoder stages",
                self.rows,
                self.cols,
                g.encoder.len()
            )));
        }
        if g.extractor == 0 || g.encoder.is_empty() || g.encoder.contains(&0) || g.cond_dim == 0 {
            return Err(CoreError::Config("generator channel plan has empty stages".into()));
        }
        if g.d_z > 0 && g.noise_channels == 0 {
            return Err(CoreError::Config("noise needs at least one channel".into()));
        }
        let (n, m) = self.patch_grid();
        if n == 0 || m == 0 || self.critic.valid_convs == 0 || self.critic.stages.is_empty() {
            return Err(CoreError::Config(format!(
                "critic head leaves no patches on a {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Side lengths of the critic's score grid.
    pub fn patch_grid(&self) -> (usize, usize) {
        let side = |mut s: usize| {
            for _ in &self.critic.stages {
                s /= 2;
            }
            s.saturating_sub(2 * self.critic.valid_convs)
        };
        (side(self.rows), side(self.cols))
    }
}

fn he_normal<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), he_normal(rng, vec![cout, cin, k, k], cin * k * k, 1.0), true);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![1, cout, 1, 1]), true);
        Self { w, b, stride, pad }
    }

    fn same<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(ps, rng, name, cin, cout, 3, 1, 1)
    }

    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let y = t.conv2d(x, p[self.w.0], self.stride, self.pad)?;
        Ok(t.add(y, p[self.b.0])?)
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, gain: f64) -> Self {
        let w = ps.add(format!("{name}.w"), he_normal(rng, vec![cin, cout], cin, gain), true);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![cout]), true);
        Self { w, b }
    }

    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(t.dense(x, p[self.w.0], Some(p[self.b.0]))?)
    }
}

/// `out[n, c, i, j] = γ[n, c] · x[n, c, i, j] + β[n, c]`.
pub fn film_modulate<T: Real>(t: &mut Tape<T>, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
    let xs = t.shape(x).to_vec();
    let (gs, bs) = (t.shape(gamma).to_vec(), t.shape(beta).to_vec());
    if xs.len() != 4 || gs != [xs[0], xs[1]] || bs != gs {
        return Err(CoreError::Config(format!(
            "FiLM expects gamma and beta of shape [{}, {}], got {gs:?} and {bs:?}",
            xs.first().copied().unwrap_or(0),
            xs.get(1).copied().unwrap_or(0)
        )));
    }
    let g = t.reshape(gamma, &[xs[0], xs[1], 1, 1])?;
    let b = t.reshape(beta, &[xs[0], xs[1], 1, 1])?;
    let y = t.mul(x, g)?;
    Ok(t.add(y, b)?)
}

/// Two-layer MLP producing per-channel `γ = 1 + Δγ` and `β` from the
/// condition vector.
#[derive(Clone, Debug)]
struct Film {
    hidden: Dense,
    out: Dense,
    channels: usize,
}

impl Film {
    fn new<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cond: usize, hidden: usize, channels: usize) -> Self {
        Self {
            hidden: Dense::new(ps, rng, &format!("{name}.hidden"), cond, hidden, 1.0),
            out: Dense::new(ps, rng, &format!("{name}.out"), hidden, 2 * channels, 0.1),
            channels,
        }
    }

    fn params<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], cond: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.hidden.forward(t, p, cond)?;
        let h = t.leaky_relu(h, LEAK)?;
        let o = self.out.forward(t, p, h)?;
        let dg = t.slice(o, 1, 0, self.channels)?;
        let gamma = t.add_scalar(dg, 1.0)?;
        let beta = t.slice(o, 1, self.channels, self.channels)?;
        Ok((gamma, beta))
    }

    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], x: NodeId, cond: NodeId) -> Result<NodeId> {
        let (g, b) = self.params(t, p, cond)?;
        film_modulate(t, x, g, b)
    }
}

/// Batch normalisation with learned affine terms and running statistics.
#[derive(Clone, Debug)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
    channels: usize,
}

impl BatchNorm {
    fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let shape = vec![1, channels, 1, 1];
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::ones(shape.clone()), true),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(shape.clone()), true),
            mean: ps.add(format!("{name}.running_mean"), Tensor::zeros(shape.clone()), false),
            var: ps.add(format!("{name}.running_var"), Tensor::ones(shape), false),
            channels,
        }
    }
}

/// How batch normalisation behaves during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are reported for update.
    Train,
    /// Stored running statistics.
    Eval,
}

/// Batch statistics observed by a training-mode pass, per BN layer.
#[derive(Clone, Debug, Default)]
pub struct BnObservation<T> {
    layers: Vec<(ParamId, ParamId, Vec<T>, Vec<T>)>,
}

impl BatchNorm {
    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], x: NodeId, mode: Mode, obs: &mut BnObservation<T>) -> Result<NodeId> {
        let xhat = match mode {
            Mode::Train => {
                let (y, stats) = t.batch_norm(x, BN_EPS)?;
                obs.layers.push((self.mean, self.var, stats.mean, stats.var));
                y
            }
            Mode::Eval => {
                let m = t.value(p[self.mean.0]).clone();
                let v = t.value(p[self.var.0]).clone();
                let inv: Vec<T> = v.data().iter().map(|&v| (v + T::lit(BN_EPS)).sqrt().recip()).collect();
                let shift: Vec<T> = m.data().iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
                let inv = t.leaf(Tensor::new(vec![1, self.channels, 1, 1], inv)?);
                let shift = t.leaf(Tensor::new(vec![1, self.channels, 1, 1], shift)?);
                let y = t.mul(x, inv)?;
                t.add(y, shift)?
            }
        };
        let y = t.mul(xhat, p[self.gamma.0])?;
        Ok(t.add(y, p[self.beta.0])?)
    }
}

impl<T: Real> BnObservation<T> {
    /// Folds observed batch statistics into the running averages.
    pub fn apply(&self, ps: &mut ParamStore<T>) {
        let mom = T::lit(BN_MOMENTUM);
        let keep = T::one() - mom;
        for (mean_id, var_id, mean, var) in &self.layers {
            for (r, &m) in ps.value_mut(*mean_id).data_mut().iter_mut().zip(mean) {
                *r = keep * *r + mom * m;
            }
            for (r, &v) in ps.value_mut(*var_id).data_mut().iter_mut().zip(var) {
                *r = keep * *r + mom * v;
            }
        }
    }
}

/// `leaky(conv(leaky(conv_s(x)))) + 1×1 stride-s projection`, then leaky.
#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv,
    c2: Conv,
    skip: Conv,
}

impl ResBlock {
    fn new<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            c1: Conv::new(ps, rng, &format!("{name}.conv1"), cin, cout, 3, 2, 1),
            c2: Conv::same(ps, rng, &format!("{name}.conv2"), cout, cout),
            skip: Conv::new(ps, rng, &format!("{name}.skip"), cin, cout, 1, 2, 0),
        }
    }

    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.c1.forward(t, p, x)?;
        let h = t.leaky_relu(h, LEAK)?;
        let h = self.c2.forward(t, p, h)?;
        let s = self.skip.forward(t, p, x)?;
        let y = t.add(h, s)?;
        Ok(t.leaky_relu(y, LEAK)?)
    }
}

/// Tape nodes holding one generator batch.
#[derive(Clone, Copy, Debug)]
pub struct GenInputs {
    /// `[B, 1, H, W]`
    pub state: NodeId,
    /// `[B, 3, H, W]`
    pub terrain: NodeId,
    /// `[B, cond_dim]`
    pub cond: NodeId,
    /// `[B, d_z]`, absent for a deterministic network.
    pub noise: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    fire: [Conv; 2],
    terrain_in: Conv,
    terrain_bn: BatchNorm,
    terrain_out: Conv,
    film: Option<Film>,
    encoder: Vec<ResBlock>,
    noise: Option<Dense>,
    film_bottleneck: Film,
    decoder: Vec<Conv>,
    head: Conv,
}

impl<T: Real> Generator<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let g = &config.generator;
        let mut rng = rng::stream(seed, "init-generator", 0);
        let rng = &mut rng;
        let mut ps = ParamStore::new();
        let e = g.extractor;
        let fire = [Conv::same(&mut ps, rng, "g.fire.0", 1, e), Conv::same(&mut ps, rng, "g.fire.1", e, e)];
        let terrain_in = Conv::same(&mut ps, rng, "g.terrain.0", 3, e);
        let terrain_bn = BatchNorm::new(&mut ps, "g.terrain.bn", e);
        let terrain_out = Conv::same(&mut ps, rng, "g.terrain.1", e, e);
        let cond = g.cond_dim + e;
        let film = g.fire_film.then(|| Film::new(&mut ps, rng, "g.film.fire", cond, g.film_hidden, e));

        let mut encoder = Vec::new();
        let mut cin = 2 * e;
        let mut skips = vec![cin];
        for (i, &c) in g.encoder.iter().enumerate() {
            encoder.push(ResBlock::new(&mut ps, rng, &format!("g.enc.{i}"), cin, c));
            cin = c;
            skips.push(c);
        }
        let bottleneck = cin;
        let film_bottleneck = Film::new(&mut ps, rng, "g.film.bottleneck", cond, g.film_hidden, bottleneck);
        let noise = (g.d_z > 0).then(|| Dense::new(&mut ps, rng, "g.noise", g.d_z, g.noise_channels, 1.0));
        let mut x = bottleneck + if g.d_z > 0 { g.noise_channels } else { 0 };

        // Decoder stage i upsamples and joins the skip one level above.
        let mut decoder = Vec::new();
        skips.pop();
        for (i, &skip) in skips.iter().enumerate().rev() {
            let out = if i == 0 { e } else { g.encoder[i - 1] };
            decoder.push(Conv::same(&mut ps, rng, &format!("g.dec.{i}"), x + skip, out));
            x = out;
        }
        let head = Conv::new(&mut ps, rng, "g.head", x, 1, 1, 1, 0);
        ps.value_mut(head.b).data_mut().fill(T::lit(HEAD_BIAS));
        Ok(Self {
            config: config.clone(),
            params: ps,
            fire,
            terrain_in,
            terrain_bn,
            terrain_out,
            film,
            encoder,
            noise,
            film_bottleneck,
            decoder,
            head,
        })
    }

    pub fn d_z(&self) -> usize {
        self.config.generator.d_z
    }

    /// Output `[B, 1, H, W]` in `[0, 1]`, plus batch statistics in train
    /// mode. `p` is `self.params` bound on `t`.
    pub fn forward(&self, t: &mut Tape<T>, p: &[NodeId], x: &GenInputs, mode: Mode) -> Result<(NodeId, BnObservation<T>)> {
        let cfg = &self.config;
        let shape = t.shape(x.state).to_vec();
        let b = shape[0];
        if shape != [b, 1, cfg.rows, cfg.cols] || t.shape(x.terrain) != [b, 3, cfg.rows, cfg.cols] {
            return Err(CoreError::Config(format!(
                "generator expects [B,1,{r},{c}] and [B,3,{r},{c}], got {shape:?} and {:?}",
                t.shape(x.terrain),
                r = cfg.rows,
                c = cfg.cols
            )));
        }
        if t.shape(x.cond) != [b, cfg.generator.cond_dim] {
            return Err(CoreError::Config(format!("condition shape {:?}", t.shape(x.cond))));
        }
        let mut obs = BnObservation { layers: Vec::new() };

        let mut f = x.state;
        for conv in &self.fire {
            let y = conv.forward(t, p, f)?;
            f = t.leaky_relu(y, LEAK)?;
        }
        let h = self.terrain_in.forward(t, p, x.terrain)?;
        let h = self.terrain_bn.forward(t, p, h, mode, &mut obs)?;
        let h = t.leaky_relu(h, LEAK)?;
        let h = self.terrain_out.forward(t, p, h)?;
        let terr = t.leaky_relu(h, LEAK)?;

        let e = cfg.generator.extractor;
        let pooled = t.mean_axes(terr, &[2, 3])?;
        let pooled = t.reshape(pooled, &[b, e])?;
        let cond = t.concat(&[x.cond, pooled], 1)?;
        if let Some(film) = &self.film {
            f = film.forward(t, p, f, cond)?;
        }

        let mut h = t.concat(&[f, terr], 1)?;
        let mut skips = vec![h];
        for block in &self.encoder {
            h = block.forward(t, p, h)?;
            skips.push(h);
        }
        skips.pop();
        h = self.film_bottleneck.forward(t, p, h, cond)?;
        if let Some(dense) = &self.noise {
            let z = x.noise.ok_or_else(|| CoreError::Config("generator needs a noise input".into()))?;
            let zm = dense.forward(t, p, z)?;
            let zm = t.leaky_relu(zm, LEAK)?;
            let nc = cfg.generator.noise_channels;
            let zm = t.reshape(zm, &[b, nc, 1, 1])?;
            let hs = t.shape(h).to_vec();
            let tiled = t.broadcast_to(zm, &[b, nc, hs[2], hs[3]])?;
            h = t.concat(&[h, tiled], 1)?;
        }
        for conv in &self.decoder {
            let up = t.upsample_nearest(h, 2)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            let joined = t.concat(&[up, skip], 1)?;
            let y = conv.forward(t, p, joined)?;
            h = t.leaky_relu(y, LEAK)?;
        }
        let logits = self.head.forward(t, p, h)?;
        Ok((t.sigmoid(logits)?, obs))
    }
}

#[derive(Clone, Debug)]
pub struct Critic<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    fire: Conv,
    terrain: Conv,
    film: Film,
    stages: Vec<Conv>,
    valid: Vec<Conv>,
}

/// Critic output: per-patch scores `[B, 1, N, M]` and their per-sample
/// means `[B]`.
#[derive(Clone, Copy, Debug)]
pub struct CriticOutput {
    pub grid: NodeId,
    pub scores: NodeId,
}

impl<T: Real> Critic<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config.critic;
        let mut rng = rng::stream(seed, "init-critic", 0);
        let rng = &mut rng;
        let mut ps = ParamStore::new();
        let e = c.extractor;
        let fire = Conv::same(&mut ps, rng, "d.fire", 2, e);
        let terrain = Conv::same(&mut ps, rng, "d.terrain", 3, e);
        let film = Film::new(&mut ps, rng, "d.film", c.cond_dim + e, c.film_hidden, e);
        let mut cin = 2 * e;
        let mut stages = Vec::new();
        for (i, &ch) in c.stages.iter().enumerate() {
            stages.push(Conv::new(&mut ps, rng, &format!("d.stage.{i}"), cin, ch, 4, 2, 1));
            cin = ch;
        }
        let mut valid = Vec::new();
        for i in 0..c.valid_convs {
            let out = if i + 1 == c.valid_convs { 1 } else { cin };
            valid.push(Conv::new(&mut ps, rng, &format!("d.valid.{i}"), cin, out, 3, 1, 0));
            cin = out;
        }
        Ok(Self {
            config: config.clone(),
            params: ps,
            fire,
            terrain,
            film,
            stages,
            valid,
        })
    }

    /// Scores `candidate` as the next state after `state` under the given
    /// terrain and conditions. Contains no normalisation, so every op on
    /// the candidate's path supports second-order gradients.
    pub fn forward(&self, t: &mut Tape<T>, p: &[NodeId], candidate: NodeId, state: NodeId, terrain: NodeId, cond: NodeId) -> Result<CriticOutput> {
        let b = t.shape(candidate)[0];
        let pair = t.concat(&[candidate, state], 1)?;
        let f = self.fire.forward(t, p, pair)?;
        let f = t.leaky_relu(f, LEAK)?;
        let h = self.terrain.forward(t, p, terrain)?;
        let terr = t.leaky_relu(h, LEAK)?;
        let e = self.config.critic.extractor;
        let pooled = t.mean_axes(terr, &[2, 3])?;
        let pooled = t.reshape(pooled, &[b, e])?;
        let c = t.concat(&[cond, pooled], 1)?;
        let f = self.film.forward(t, p, f, c)?;
        let mut h = t.concat(&[f, terr], 1)?;
        for conv in &self.stages {
            let y = conv.forward(t, p, h)?;
            h = t.leaky_relu(y, LEAK)?;
        }
        let last = self.valid.len() - 1;
        for (i, conv) in self.valid.iter().enumerate() {
            h = conv.forward(t, p, h)?;
            if i < last {
                h = t.leaky_relu(h, LEAK)?;
            }
        }
        let m = t.mean_axes(h, &[1, 2, 3])?;
        let scores = t.reshape(m, &[b])?;
        Ok(CriticOutput { grid: h, scores })
    }
}

/// Standard normal noise of shape `[batch, d_z]`.
pub fn sample_noise<T: Real>(rng: &mut ChaCha8Rng, batch: usize, d_z: usize) -> Tensor<T> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_fn(vec![batch, d_z], |_| T::lit(n.sample(rng)))
}

/// Noise for a stream identified by a seed, e.g. one ensemble member.
pub fn noise_from_seed<T: Real>(seed: [u8; 32], d_z: usize) -> Tensor<T> {
    sample_noise(&mut ChaCha8Rng::from_seed(seed), 1, d_z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs<T: Real>(t: &mut Tape<T>, cfg: &ModelConfig, b: usize, seed: u64) -> GenInputs {
        let mut r = rng::stream(seed, "test-inputs", 0);
        let n = Normal::<f64>::new(0.0, 1.0).unwrap();
        let (h, w) = (cfg.rows, cfg.cols);
        let state = t.leaf(Tensor::from_fn(vec![b, 1, h, w], |_| T::lit(n.sample(&mut r).abs().min(1.0))));
        let terrain = t.leaf(Tensor::from_fn(vec![b, 3, h, w], |_| T::lit(n.sample(&mut r).abs().min(1.0))));
        let cond = t.leaf(Tensor::from_fn(vec![b, cfg.generator.cond_dim], |_| T::lit(n.sample(&mut r))));
        let noise = (cfg.generator.d_z > 0).then(|| t.leaf(sample_noise(&mut r, b, cfg.generator.d_z)));
        GenInputs {
            state,
            terrain,
            cond,
            noise,
        }
    }

    #[test]
    fn film_cases() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_fn(vec![1, 2, 2, 2], |i| i as f64 - 3.0));
        let one = t.leaf(Tensor::ones(vec![1, 2]));
        let zero = t.leaf(Tensor::zeros(vec![1, 2]));
        let y = film_modulate(&mut t, x, one, zero).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let g0 = t.leaf(Tensor::zeros(vec![1, 2]));
        let five = t.leaf(Tensor::full(vec![1, 2], 5.0));
        let y = film_modulate(&mut t, x, g0, five).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 5.0));

        let g = t.leaf(Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap());
        let bt = t.leaf(Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap());
        let y = film_modulate(&mut t, x, g, bt).unwrap();
        let v = t.value(y).data().to_vec();
        let xv = t.value(x).data().to_vec();
        assert_eq!(&v[..4], &xv[..4].iter().map(|a| 2.0 * a).collect::<Vec<_>>()[..]);
        assert_eq!(&v[4..], &[1.0; 4]);

        let bad = t.leaf(Tensor::ones(vec![1, 3]));
        assert!(film_modulate(&mut t, x, bad, bad).is_err());
    }

    #[test]
    fn generator_shapes_and_range() {
        let cfg = ModelConfig::compact(32, 32);
        let g = Generator::<f32>::new(&cfg, 1).unwrap();
        let mut t = Tape::new();
        let p = g.params.bind(&mut t);
        let x = inputs(&mut t, &cfg, 2, 0);
        let (y, obs) = g.forward(&mut t, &p, &x, Mode::Train).unwrap();
        assert_eq!(t.shape(y), &[2, 1, 32, 32]);
        assert!(t.value(y).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(obs.layers.len(), 1);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::compact(32, 32);
        let a = Generator::<f32>::new(&cfg, 3).unwrap();
        let b = Generator::<f32>::new(&cfg, 3).unwrap();
        let c = Generator::<f32>::new(&cfg, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert_eq!(a.params.num_trainable(), c.params.num_trainable());
    }

    #[test]
    fn critic_grid_and_mean() {
        let cfg = ModelConfig::compact(32, 32);
        assert_eq!(cfg.patch_grid(), (4, 4));
        let d = Critic::<f64>::new(&cfg, 2).unwrap();
        let mut t = Tape::new();
        let p = d.params.bind(&mut t);
        let x = inputs(&mut t, &cfg, 3, 1);
        let out = d.forward(&mut t, &p, x.state, x.state, x.terrain, x.cond).unwrap();
        assert_eq!(t.shape(out.grid), &[3, 1, 4, 4]);
        let grid = t.value(out.grid).data().to_vec();
        for (i, s) in t.value(out.scores).data().iter().enumerate() {
            assert!(s.is_finite());
            let m: f64 = grid[16 * i..16 * (i + 1)].iter().sum::<f64>() / 16.0;
            assert!((m - s).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_patch_grid_is_twelve() {
        assert_eq!(ModelConfig::paper().patch_grid(), (12, 12));
        assert!(ModelConfig::compact(30, 32).validate().is_err());
    }
}
