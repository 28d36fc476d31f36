//! Run configuration and the stages behind the command line: simulate,
//! build a dataset, train, predict, evaluate, and an end-to-end smoke run.
//!
//! Stages talk only through directories. Every directory a stage writes
//! holds `resolved_config.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{BuildReport, DataConfig, Dataset, FireFrame, Scenario, BURN_THRESHOLD, STEPS, STEP_HOURS};
use crate::error::{CoreError, Result};
use crate::inference::{self, burn_probability, percentile_map, predict_step_ensemble, rollout, scenario_contexts, RolloutOptions, Transition};
use crate::losses::LossWeights;
use crate::metrics::{self, boundary_length, FrameMetrics, MetricsReport, MetricsRow};
use crate::model::{Generator, ModelConfig};
use crate::training::{BaselineTrainer, DiceWarmup, TrainConfig, Trainer};
use firecast_tensor::AdamConfig;

/// Desk-scale Adam step size; the budget is a few thousand updates.
pub const DESK_LR: f64 = 5e-4;
/// Desk-scale Dice warm-up: weight at step 0 and its length in steps.
pub const DESK_DICE_START: f64 = 15.0;
pub const DESK_DICE_WARMUP: usize = 500;

/// Smoke-run sizes used when the config leaves them at their defaults.
pub const SMOKE_SCENARIOS: usize = 40;
pub const SMOKE_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(CoreError::Config(format!("unknown scale `{other}` (desk | paper)"))),
        }
    }
}

/// Every setting of a run. Unset optional keys take the scale's default
/// when resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scale: Scale,
    /// Channel plan: compact, desk or paper.
    pub model: Option<String>,
    pub scenarios: Option<usize>,
    pub cell_size: f64,
    pub train_fraction: f64,
    pub batch: usize,
    pub steps: usize,
    pub n_critic: usize,
    /// Unset takes the scale's default.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub w_adv: f64,
    pub w_l1: f64,
    pub w_dice: f64,
    /// Dice weight at step 0, falling linearly to `w_dice` over
    /// `dice_warmup` generator steps.
    pub dice_start: f64,
    /// Unset takes the scale's default; 0 disables the warm-up.
    pub dice_warmup: Option<usize>,
    pub w_gp: f64,
    pub ensemble: usize,
    pub threshold: f32,
    pub jobs: Option<usize>,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let a = AdamConfig::default();
        Self {
            seed: None,
            scale: Scale::Desk,
            model: None,
            scenarios: None,
            cell_size: 62.5,
            train_fraction: 0.8,
            batch: 4,
            steps: 2000,
            n_critic: 5,
            lr: None,
            beta1: a.beta1,
            beta2: a.beta2,
            w_adv: w.w_adv,
            w_l1: w.w_l1,
            w_dice: w.w_dice,
            dice_start: DESK_DICE_START,
            dice_warmup: None,
            w_gp: w.w_gp,
            ensemble: inference::DEFAULT_ENSEMBLE,
            threshold: BURN_THRESHOLD,
            jobs: None,
            checkpoint_every: 500,
        }
    }
}

impl RunConfig {
    /// Reads JSON, or flat `key = value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            return Ok(serde_json::from_str(trimmed)?);
        }
        let mut map = serde_json::Map::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            let v = v.trim();
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
            map.insert(k.trim().to_string(), value);
        }
        Ok(serde_json::from_value(serde_json::Value::Object(map))?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| CoreError::Config("a seed is required (config key `seed` or --seed)".into()))
    }

    pub fn grid(&self) -> (usize, usize) {
        match self.scale {
            Scale::Desk => (32, 32),
            Scale::Paper => (128, 128),
        }
    }

    pub fn model_name(&self) -> &str {
        self.model.as_deref().unwrap_or(match self.scale {
            Scale::Desk => "compact",
            Scale::Paper => "paper",
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.scale {
            Scale::Desk => DESK_LR,
            Scale::Paper => AdamConfig::default().lr,
        })
    }

    pub fn dice_warmup_steps(&self) -> usize {
        self.dice_warmup.unwrap_or(match self.scale {
            Scale::Desk => DESK_DICE_WARMUP,
            Scale::Paper => 0,
        })
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios.unwrap_or(500)
    }

    /// Fills every defaulted key and checks ranges.
    pub fn resolve(mut self) -> Result<Self> {
        self.seed()?;
        self.model = Some(self.model_name().to_string());
        self.scenarios = Some(self.scenario_count());
        self.lr = Some(self.learning_rate());
        self.dice_warmup = Some(self.dice_warmup_steps());
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CoreError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.ensemble == 0 {
            return Err(CoreError::Config("ensemble size must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CoreError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.jobs == Some(0) {
            return Err(CoreError::Config("jobs must be at least 1".into()));
        }
        self.model_config()?;
        self.train_config()?.validate()?;
        Ok(self)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let (r, c) = self.grid();
        let m = ModelConfig::by_name(self.model_name(), r, c)?;
        if (m.rows, m.cols) != (r, c) {
            return Err(CoreError::Config(format!(
                "model `{}` is fixed at {}x{} but the {:?} scale uses {r}x{c}",
                self.model_name(),
                m.rows,
                m.cols,
                self.scale
            )));
        }
        Ok(m)
    }

    pub fn data_config(&self) -> Result<DataConfig> {
        let (r, c) = self.grid();
        let mut d = DataConfig::new(self.seed()?, self.scenario_count(), r, c);
        d.cell_size = self.cell_size;
        d.train_fraction = self.train_fraction;
        Ok(d)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.seed()?, self.model_config()?);
        t.batch = self.batch;
        t.steps = self.steps;
        t.n_critic = self.n_critic;
        t.adam = AdamConfig {
            lr: self.learning_rate(),
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        };
        t.weights = LossWeights {
            w_adv: self.w_adv,
            w_l1: self.w_l1,
            w_dice: self.w_dice,
            w_gp: self.w_gp,
        };
        let warmup = self.dice_warmup_steps();
        t.dice_warmup = (warmup > 0).then_some(DiceWarmup {
            start: self.dice_start,
            steps: warmup,
        });
        t.checkpoint_every = self.checkpoint_every;
        Ok(t)
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions {
            ensemble: self.ensemble,
            jobs: self.jobs,
            ..RolloutOptions::default()
        }
    }

    /// Shrinks defaulted sizes to the smoke budget.
    pub fn smoke_sized(mut self) -> Self {
        self.scenarios.get_or_insert(SMOKE_SCENARIOS);
        if self.steps == Self::default().steps {
            self.steps = SMOKE_STEPS;
        }
        self
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("resolved_config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Runs the oracle and writes one `run_XXXXX` directory per retained run.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<BuildReport> {
    let (ds, report) = Dataset::synthesize(&cfg.data_config()?)?;
    fs::create_dir_all(out)?;
    for s in &ds.scenarios {
        s.save_raw(&crate::dataset::raw_dir(out, s.id))?;
    }
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    cfg.write_resolved(out)?;
    Ok(report)
}

/// Encodes the runs of a `simulate` tree into frames and splits them.
pub fn build_dataset(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Dataset> {
    let mut runs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(input)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(id) = name.strip_prefix("run_").and_then(|n| n.parse::<usize>().ok()) {
            runs.push((id, path));
        }
    }
    if runs.is_empty() {
        return Err(CoreError::Data(format!("{}: no simulation runs found", input.display())));
    }
    runs.sort();
    let scenarios = runs
        .iter()
        .map(|(id, p)| Scenario::load_raw(*id, p))
        .collect::<Result<Vec<_>>>()?;
    for s in &scenarios {
        if !crate::dataset::frames_nested(&s.frames) {
            return Err(CoreError::Data(format!("run {}: frames are not nested", s.id)));
        }
    }
    let ds = Dataset::new(scenarios, cfg.train_fraction, cfg.seed()?)?;
    ds.save(out)?;
    cfg.write_resolved(out)?;
    Ok(ds)
}

/// Trains the one-step model under `out/cgan` and the baseline under
/// `out/ae`.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(Trainer<f32>, BaselineTrainer<f32>)> {
    let ds = Dataset::load(data)?;
    let tc = cfg.train_config()?;
    if (ds.rows(), ds.cols()) != (tc.model.rows, tc.model.cols) {
        return Err(CoreError::Data(format!(
            "dataset is {}x{} but the model expects {}x{}",
            ds.rows(),
            ds.cols(),
            tc.model.rows,
            tc.model.cols
        )));
    }
    let mut cgan = Trainer::<f32>::new(tc.clone())?;
    cgan.run(&ds, Some(&out.join("cgan")))?;
    crate::training::write_log(&out.join("train_log.csv"), &cgan.log)?;
    let mut ae = BaselineTrainer::<f32>::new(tc)?;
    ae.run(&ds)?;
    ae.save(&out.join("ae"))?;
    cfg.write_resolved(out)?;
    Ok((cgan, ae))
}

/// Checkpoint directory with the highest step under `root`.
pub fn latest_checkpoint(root: &Path) -> Result<PathBuf> {
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| CoreError::Data(format!("{}: no checkpoints", root.display())))
}

fn hours(k: usize) -> usize {
    (STEP_HOURS as usize) * (k + 1)
}

/// What `predict` records beside the frames of one scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub scenario: usize,
    pub ensemble: usize,
    pub threshold: f32,
    pub horizons_h: Vec<usize>,
    pub step_seeds: Vec<u64>,
    pub member_seeds: Vec<Vec<String>>,
}

/// Every model's frames for one scenario.
#[derive(Clone, Debug)]
pub struct ScenarioPredictions {
    pub models: BTreeMap<String, Vec<FireFrame>>,
    pub rollout: inference::RolloutResult,
}

/// Rolls the one-step model out from `S_0`, runs the baseline, and adds
/// the persistence forecasts. `cgan_one_step` and `persistence` both start
/// from the true previous state; `persistence_s0` repeats the ignition
/// frame at every horizon.
pub fn predict_scenario(
    cgan: &Generator<f32>,
    ae: &Generator<f32>,
    ds: &Dataset,
    pos: usize,
    opts: &RolloutOptions,
    master_seed: u64,
) -> Result<ScenarioPredictions> {
    let s = &ds.scenarios[pos];
    let s0 = s.state(0);
    let ctx = scenario_contexts(&ds.stats, s);
    let seed = crate::rng::derive_u64(master_seed, "predict", s.id as u64);
    let ro = rollout(cgan as &dyn Transition, &s0, &ctx, opts, seed)?;
    let one_step_seed = crate::rng::derive_u64(master_seed, "predict-one-step", s.id as u64);
    let one_step = (0..STEPS)
        .map(|k| {
            let step_seed = crate::rng::derive_u64(one_step_seed, "step", k as u64);
            Ok(predict_step_ensemble(cgan, &s.state(k), &ctx[k], opts.ensemble, step_seed, opts.jobs)?.mean)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut models = BTreeMap::new();
    models.insert("cgan".to_string(), ro.steps.iter().map(|b| b.mean.clone()).collect());
    models.insert("cgan_one_step".to_string(), one_step);
    models.insert("ae".to_string(), inference::baseline_predict(ae, &ds.stats, s)?);
    models.insert("persistence".to_string(), (0..STEPS).map(|k| s.state(k)).collect());
    models.insert("persistence_s0".to_string(), vec![s0; STEPS]);
    Ok(ScenarioPredictions { models, rollout: ro })
}

/// Scores every model against the true frames of one scenario.
pub fn score_scenario(s: &Scenario, models: &BTreeMap<String, Vec<FireFrame>>, tau: f32) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for k in 0..STEPS {
        for (name, frames) in models {
            let m = FrameMetrics::compute(&s.frames[k], &frames[k], tau)?;
            rows.push(MetricsRow::new(s.id, hours(k), name, &m));
        }
    }
    Ok(rows)
}

/// Held-out evaluation kept in memory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub summary: MetricsReport,
    /// Mean perimeter pixel count per model over all samples and
    /// horizons; `truth` is the reference.
    pub boundary_length: BTreeMap<String, f64>,
}

pub fn evaluate_models(
    cgan: &Generator<f32>,
    ae: &Generator<f32>,
    ds: &Dataset,
    ids: &[usize],
    opts: &RolloutOptions,
    master_seed: u64,
    tau: f32,
) -> Result<Evaluation> {
    let mut rows = Vec::new();
    let mut lengths: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for &pos in ids {
        let s = &ds.scenarios[pos];
        let p = predict_scenario(cgan, ae, ds, pos, opts, master_seed)?;
        rows.extend(score_scenario(s, &p.models, tau)?);
        for k in 0..STEPS {
            let e = lengths.entry("truth".into()).or_default();
            e.0 += boundary_length(&s.frames[k], tau) as f64;
            e.1 += 1;
            for (name, frames) in &p.models {
                let e = lengths.entry(name.clone()).or_default();
                e.0 += boundary_length(&frames[k], tau) as f64;
                e.1 += 1;
            }
        }
    }
    Ok(Evaluation {
        summary: metrics::summarize(&rows),
        rows,
        boundary_length: lengths.into_iter().map(|(k, (s, n))| (k, s / n.max(1) as f64)).collect(),
    })
}

fn load_models(model_dir: &Path) -> Result<(Trainer<f32>, BaselineTrainer<f32>)> {
    let cgan = Trainer::<f32>::load(&latest_checkpoint(&model_dir.join("cgan"))?)?;
    let ae = BaselineTrainer::<f32>::load(&model_dir.join("ae"))?;
    Ok((cgan, ae))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_map(values: &[f32], rows: usize, cols: usize, path: &Path) -> Result<()> {
    FireFrame::new(rows, cols, values.iter().map(|&v| to_u8(v) as f32 / 255.0).collect())?.save_pgm(path)
}

/// Writes, per test scenario, `{model}_{h}h.pgm` for every model plus
/// burn-probability and percentile maps under `maps/`.
pub fn predict(cfg: &RunConfig, model_dir: &Path, data: &Path, out: &Path) -> Result<usize> {
    let ds = Dataset::load(data)?;
    let (cgan, ae) = load_models(model_dir)?;
    let opts = cfg.rollout_options();
    let seed = cfg.seed()?;
    fs::create_dir_all(out)?;
    for &pos in &ds.test {
        let s = &ds.scenarios[pos];
        let dir = out.join(format!("scenario_{:05}", s.id));
        fs::create_dir_all(dir.join("maps"))?;
        let p = predict_scenario(&cgan.g, &ae.g, &ds, pos, &opts, seed)?;
        for (name, frames) in &p.models {
            for (k, f) in frames.iter().enumerate() {
                f.save_pgm(&dir.join(format!("{name}_{}h.pgm", hours(k))))?;
            }
        }
        for (k, b) in p.rollout.steps.iter().enumerate() {
            let h = hours(k);
            save_map(&burn_probability(b, cfg.threshold), s.rows(), s.cols(), &dir.join("maps").join(format!("prob_{h}h.pgm")))?;
            for q in [10.0, 90.0] {
                percentile_map(b, q)?.save_pgm(&dir.join("maps").join(format!("p{q}_{h}h.pgm")))?;
            }
        }
        let summary = PredictionSummary {
            scenario: s.id,
            ensemble: opts.ensemble,
            threshold: cfg.threshold,
            horizons_h: (0..STEPS).map(hours).collect(),
            step_seeds: p.rollout.steps.iter().map(|b| b.master_seed).collect(),
            member_seeds: p.rollout.steps.iter().map(|b| b.member_seeds.clone()).collect(),
        };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    cfg.write_resolved(out)?;
    Ok(ds.test.len())
}

/// Frames named `{model}_{h}h.pgm` in a prediction directory, or
/// `frames/{h}h.pgm` in a dataset directory (reported as model `frames`).
fn read_predictions(dir: &Path) -> Result<BTreeMap<String, Vec<FireFrame>>> {
    let mut found: BTreeMap<String, BTreeMap<usize, FireFrame>> = BTreeMap::new();
    let frames_dir = dir.join("frames");
    if frames_dir.is_dir() {
        for k in 0..STEPS {
            let f = FireFrame::load_pgm(&frames_dir.join(format!("{}h.pgm", hours(k))))?;
            found.entry("frames".into()).or_default().insert(k, f);
        }
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix("h.pgm") else { continue };
        let Some((model, h)) = stem.rsplit_once('_') else { continue };
        let Ok(h) = h.parse::<usize>() else { continue };
        if let Some(k) = (0..STEPS).find(|&k| hours(k) == h) {
            found.entry(model.to_string()).or_default().insert(k, FireFrame::load_pgm(&path)?);
        }
    }
    found
        .into_iter()
        .map(|(m, by_k)| {
            if by_k.len() != STEPS {
                return Err(CoreError::Data(format!("{}: model `{m}` lacks some horizons", dir.display())));
            }
            Ok((m, by_k.into_values().collect()))
        })
        .collect()
}

/// Scores every prediction found under `pred` against the frames of the
/// dataset at `truth` and writes `metrics.csv`.
pub fn evaluate(cfg: &RunConfig, truth: &Path, pred: &Path, out: &Path) -> Result<Vec<MetricsRow>> {
    let ds = Dataset::load(truth)?;
    let mut rows = Vec::new();
    let mut seen = 0;
    for s in &ds.scenarios {
        let dir = pred.join(format!("scenario_{:05}", s.id));
        if !dir.is_dir() {
            continue;
        }
        seen += 1;
        rows.extend(score_scenario(s, &read_predictions(&dir)?, cfg.threshold)?);
    }
    if seen == 0 {
        return Err(CoreError::Data(format!("{}: no predictions match the dataset", pred.display())));
    }
    fs::create_dir_all(out)?;
    metrics::write_rows(&out.join("metrics.csv"), &rows)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&metrics::summarize(&rows))? + "\n")?;
    cfg.write_resolved(out)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmokeReport {
    pub build: BuildReport,
    pub train_scenarios: usize,
    pub test_scenarios: usize,
    pub generator_steps: u64,
    pub final_losses: Option<crate::training::LogRow>,
    pub metrics: MetricsReport,
}

/// The whole chain on a small dataset with a short training budget.
pub fn smoke(cfg: &RunConfig, out: &Path) -> Result<SmokeReport> {
    if cfg.scale != Scale::Desk {
        return Err(CoreError::Config("the smoke run uses the desk scale".into()));
    }
    if cfg.scenario_count() > 50 {
        return Err(CoreError::Config("the smoke run uses at most 50 scenarios".into()));
    }
    let cfg = cfg.clone().resolve()?;
    fs::create_dir_all(out)?;
    let (sim, data, models, preds, eval) = (
        out.join("simulate"),
        out.join("dataset"),
        out.join("models"),
        out.join("predict"),
        out.join("evaluate"),
    );
    let build = in_stage("simulate", simulate(&cfg, &sim))?;
    let ds = in_stage("build-dataset", build_dataset(&cfg, &sim, &data))?;
    let (cgan, _) = in_stage("train", train(&cfg, &data, &models))?;
    in_stage("predict", predict(&cfg, &models, &data, &preds))?;
    let rows = in_stage("evaluate", evaluate(&cfg, &data, &preds, &eval))?;
    let report = SmokeReport {
        build,
        train_scenarios: ds.train.len(),
        test_scenarios: ds.test.len(),
        generator_steps: cgan.generator_steps,
        final_losses: cgan.log.iter().rev().find(|r| r.net == "G").cloned(),
        metrics: metrics::summarize(&rows),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    cfg.write_resolved(out)?;
    Ok(report)
}

/// One named check of `selfcheck`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value.is_finite() && value <= tolerance,
            value,
            tolerance,
        }
    }
}

/// Finite-difference checks of every tape op and closed-form checks of
/// the losses.
pub fn selfcheck(seed: u64) -> Result<Vec<Check>> {
    use firecast_tensor::{Tape, Tensor};

    let mut out = Vec::new();
    for r in firecast_tensor::gradcheck::op_gradient_suite(seed, 20)? {
        let order = if r.second_order { "second order" } else { "first order" };
        out.push(Check::new(format!("gradient {} ({order})", r.kind), r.max_error, 1e-4));
    }

    let mut t = Tape::<f64>::new();
    let leaf = |t: &mut Tape<f64>, shape: Vec<usize>, v: Vec<f64>| -> Result<firecast_tensor::NodeId> {
        Ok(t.leaf(Tensor::new(shape, v)?))
    };
    let adv = leaf(&mut t, vec![], vec![-1.0])?;
    let l1 = leaf(&mut t, vec![], vec![0.1])?;
    let dice = leaf(&mut t, vec![], vec![0.2])?;
    let g = crate::losses::generator_loss(&mut t, adv, l1, dice, &LossWeights::default())?;
    out.push(Check::new("generator loss fixture", (t.value(g).item() - 1.06).abs(), 1e-9));
    let wgan = leaf(&mut t, vec![], vec![-2.0])?;
    let gp = leaf(&mut t, vec![], vec![0.5])?;
    let d = crate::losses::discriminator_loss(&mut t, wgan, gp, 10.0)?;
    out.push(Check::new("critic loss fixture", (t.value(d).item() - 3.0).abs(), 1e-12));
    let a = leaf(&mut t, vec![4], vec![1.0, 0.0, 0.0, 0.0])?;
    let b = leaf(&mut t, vec![4], vec![0.0, 1.0, 0.0, 0.0])?;
    let same = crate::losses::dice_loss(&mut t, a, a, crate::losses::DICE_EPS)?;
    out.push(Check::new("dice of identical masks", t.value(same).item().abs(), 1e-6));
    let disjoint = crate::losses::dice_loss(&mut t, a, b, crate::losses::DICE_EPS)?;
    let eps = crate::losses::DICE_EPS;
    out.push(Check::new(
        "dice of disjoint masks",
        (t.value(disjoint).item() - (1.0 - eps / (2.0 + eps))).abs(),
        1e-6,
    ));
    for (norm_sq, want) in [(1.0f64, 0.0), (9.0, 4.0)] {
        let n = 4;
        let w = leaf(&mut t, vec![n, 1], vec![(norm_sq / n as f64).sqrt(); n])?;
        let x = leaf(&mut t, vec![2, n], vec![0.3; 2 * n])?;
        let gp = crate::losses::gradient_penalty(&mut t, x, |t, x| {
            let s = t.matmul(x, w)?;
            Ok(t.reshape(s, &[2])?)
        })?;
        out.push(Check::new(
            format!("penalty of a linear critic with norm {}", norm_sq.sqrt()),
            (t.value(gp).item() - want).abs(),
            1e-8,
        ));
    }
    Ok(out)
}
