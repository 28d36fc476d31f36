//! Ensemble prediction and autoregressive rollout.
//!
//! Each step draws `N_E` members with independent noise, averages them,
//! and feeds the mean back as the next input. Members are evaluated in
//! parallel; the result does not depend on how many workers run them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use firecast_tensor::{Real, Tape, Tensor};

use crate::dataset::{FireFrame, MetStats, Scenario, STEPS};
use crate::error::{CoreError, Result};
use crate::model::{noise_from_seed, GenInputs, Generator, Mode};
use crate::rng;
use crate::training::{baseline_condition, step_condition};

pub const DEFAULT_ENSEMBLE: usize = 5;

/// Everything a transition needs besides the fire state.
#[derive(Clone, Debug, PartialEq)]
pub struct StepContext {
    /// `3 × rows × cols`.
    pub terrain: Vec<f32>,
    pub cond: Vec<f32>,
}

/// Per-step contexts for a scenario's three transitions.
pub fn scenario_contexts(stats: &MetStats, s: &Scenario) -> Vec<StepContext> {
    (0..STEPS)
        .map(|k| StepContext {
            terrain: s.terrain.clone(),
            cond: step_condition(stats, &s.met, k),
        })
        .collect()
}

/// A one-step stochastic transition `S_t+1 = f(S_t, C_t, z)`.
pub trait Transition: Sync {
    fn step(&self, state: &FireFrame, ctx: &StepContext, noise_seed: [u8; 32]) -> Result<FireFrame>;
}

fn frame_tensor<T: Real>(data: &[f32], shape: Vec<usize>) -> Tensor<T> {
    Tensor::new(shape, data.iter().map(|&v| T::lit(v as f64)).collect()).expect("frame fills its shape")
}

/// Runs a generator at batch size one in evaluation mode.
fn run_generator<T: Real>(g: &Generator<T>, state: &FireFrame, ctx: &StepContext, noise: Option<Tensor<T>>) -> Result<FireFrame> {
    let (h, w) = (state.rows, state.cols);
    if ctx.terrain.len() != 3 * h * w {
        return Err(CoreError::Data(format!("terrain holds {} values for a {h}x{w} frame", ctx.terrain.len())));
    }
    let mut t = Tape::new();
    let p = g.params.bind(&mut t);
    let inputs = GenInputs {
        state: t.leaf(frame_tensor(&state.data, vec![1, 1, h, w])),
        terrain: t.leaf(frame_tensor(&ctx.terrain, vec![1, 3, h, w])),
        cond: t.leaf(frame_tensor(&ctx.cond, vec![1, ctx.cond.len()])),
        noise: noise.map(|z| t.leaf(z)),
    };
    let (y, _) = g.forward(&mut t, &p, &inputs, Mode::Eval)?;
    let data: Vec<f32> = t.value(y).data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("generator produced a non-finite frame".into()));
    }
    FireFrame::new(h, w, data)
}

impl<T: Real> Transition for Generator<T> {
    fn step(&self, state: &FireFrame, ctx: &StepContext, noise_seed: [u8; 32]) -> Result<FireFrame> {
        let z = (self.d_z() > 0).then(|| noise_from_seed(noise_seed, self.d_z()));
        run_generator(self, state, ctx, z)
    }
}

/// The members of one ensemble step and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBundle {
    pub members: Vec<FireFrame>,
    pub mean: FireFrame,
    pub master_seed: u64,
    /// Hex-encoded noise seed of each member.
    pub member_seeds: Vec<String>,
}

/// Pixelwise arithmetic mean, accumulated in member order in `f64`.
pub fn mean_of(members: &[FireFrame]) -> Result<FireFrame> {
    let first = members
        .first()
        .ok_or_else(|| CoreError::Config("an ensemble needs at least one member".into()))?;
    let n = members.len() as f64;
    let mut acc = vec![0.0f64; first.data.len()];
    for m in members {
        if (m.rows, m.cols) != (first.rows, first.cols) {
            return Err(CoreError::Data("ensemble members differ in shape".into()));
        }
        for (a, &v) in acc.iter_mut().zip(&m.data) {
            *a += v as f64;
        }
    }
    FireFrame::new(first.rows, first.cols, acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn hex(seed: &[u8; 32]) -> String {
    seed.iter().map(|b| format!("{b:02x}")).collect()
}

fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `N_E` members from `state`; member `i` draws its noise from stream
/// `(master_seed, "ensemble", i)`. `jobs` caps the worker count.
pub fn predict_step_ensemble(
    model: &dyn Transition,
    state: &FireFrame,
    ctx: &StepContext,
    n_e: usize,
    master_seed: u64,
    jobs: Option<usize>,
) -> Result<EnsembleBundle> {
    if n_e == 0 {
        return Err(CoreError::Config("ensemble size must be at least 1".into()));
    }
    let seeds: Vec<[u8; 32]> = (0..n_e).map(|i| rng::stream_seed(master_seed, "ensemble", i as u64)).collect();
    let members = with_jobs(jobs, || {
        seeds
            .par_iter()
            .map(|&s| model.step(state, ctx, s))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(EnsembleBundle {
        mean: mean_of(&members)?,
        members,
        master_seed,
        member_seeds: seeds.iter().map(hex).collect(),
    })
}

/// What is fed back into the next step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Feedback {
    Mean,
    Percentile(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub ensemble: usize,
    pub feedback: Feedback,
    /// When set, OR the fed-back frame with the previous input's support at
    /// this threshold so predicted fire never recedes.
    pub monotone: Option<f32>,
    pub jobs: Option<usize>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            ensemble: DEFAULT_ENSEMBLE,
            feedback: Feedback::Mean,
            monotone: None,
            jobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub initial: FireFrame,
    pub steps: Vec<EnsembleBundle>,
    /// The frame fed into step `k`; `inputs[0]` is the initial state.
    pub inputs: Vec<FireFrame>,
}

impl RolloutResult {
    /// The predicted frame at each horizon.
    pub fn predictions(&self) -> Vec<&FireFrame> {
        self.steps.iter().map(|b| &b.mean).collect()
    }
}

/// Seed of the ensemble at rollout step `k`.
pub fn step_seed(master_seed: u64, k: usize) -> u64 {
    rng::derive_u64(master_seed, "rollout-step", k as u64)
}

pub fn rollout(model: &dyn Transition, s0: &FireFrame, contexts: &[StepContext], opts: &RolloutOptions, master_seed: u64) -> Result<RolloutResult> {
    if contexts.is_empty() {
        return Err(CoreError::Config("rollout needs at least one step".into()));
    }
    let mut input = s0.clone();
    let mut steps = Vec::with_capacity(contexts.len());
    let mut inputs = Vec::with_capacity(contexts.len());
    for (k, ctx) in contexts.iter().enumerate() {
        let bundle = predict_step_ensemble(model, &input, ctx, opts.ensemble, step_seed(master_seed, k), opts.jobs)?;
        let mut next = match opts.feedback {
            Feedback::Mean => bundle.mean.clone(),
            Feedback::Percentile(p) => percentile_map(&bundle, p)?,
        };
        if let Some(tau) = opts.monotone {
            for (v, &prev) in next.data.iter_mut().zip(&input.data) {
                if prev >= tau && *v < prev {
                    *v = prev;
                }
            }
        }
        inputs.push(std::mem::replace(&mut input, next));
        steps.push(bundle);
    }
    Ok(RolloutResult {
        initial: s0.clone(),
        steps,
        inputs,
    })
}

/// Fraction of members at or above `tau` per pixel.
pub fn burn_probability(bundle: &EnsembleBundle, tau: f32) -> Vec<f32> {
    let n = bundle.members.len() as f32;
    let mut counts = vec![0u32; bundle.mean.data.len()];
    for m in &bundle.members {
        for (c, &v) in counts.iter_mut().zip(&m.data) {
            *c += u32::from(v >= tau);
        }
    }
    counts.into_iter().map(|c| c as f32 / n).collect()
}

/// Per-pixel `p`-th percentile of the members, interpolating linearly
/// between order statistics.
pub fn percentile_map(bundle: &EnsembleBundle, p: f64) -> Result<FireFrame> {
    if !(0.0..=100.0).contains(&p) {
        return Err(CoreError::Config(format!("percentile {p} outside [0, 100]")));
    }
    let n = bundle.members.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let (lo, frac) = (rank.floor() as usize, rank - rank.floor());
    let hi = (lo + 1).min(n - 1);
    let mut column = vec![0.0f32; n];
    let data = (0..bundle.mean.data.len())
        .map(|j| {
            for (c, m) in column.iter_mut().zip(&bundle.members) {
                *c = m.data[j];
            }
            column.sort_by(f32::total_cmp);
            let (a, b) = (column[lo] as f64, column[hi] as f64);
            (a + frac * (b - a)) as f32
        })
        .collect();
    FireFrame::new(bundle.mean.rows, bundle.mean.cols, data)
}

/// Direct baseline predictions for every horizon.
pub fn baseline_predict<T: Real>(ae: &Generator<T>, stats: &MetStats, s: &Scenario) -> Result<Vec<FireFrame>> {
    let s0 = s.state(0);
    (0..STEPS)
        .map(|k| {
            let ctx = StepContext {
                terrain: s.terrain.clone(),
                cond: baseline_condition(stats, &s.met, k),
            };
            run_generator(ae, &s0, &ctx, None)
        })
        .collect()
}
