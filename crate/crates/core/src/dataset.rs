//! Training representation: grayscale arrival frames, meteorological
//! tensors, scenario splits and teacher-forced pair sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::oracle::{
    self, filter_in_bounds, generate_environment, sample_scenario, simulate_arrival, ArrivalTimeField,
    HourlyWeather, OracleParams, ScenarioBounds, ScenarioSpec, TerrainParams, HORIZON_MINUTES, HOURS,
};
use crate::rng;

pub const STEPS: usize = 3;
pub const STEP_MINUTES: f64 = 240.0;
pub const STEP_HOURS: f64 = 4.0;
pub const HOURS_PER_STEP: usize = 4;
/// Burned-mask threshold, halfway between 0 and the faintest burned
/// intensity 30/255.
pub const BURN_THRESHOLD: f32 = 15.0 / 255.0;
pub const MIN_BURNED: f64 = 30.0 / 255.0;
/// Met features per hour: normalised wind speed, sin and cos of direction,
/// normalised temperature and humidity.
pub const MET_FEATURES_PER_HOUR: usize = 5;
pub const MET_FEATURES: usize = HOURS_PER_STEP * MET_FEATURES_PER_HOUR;

/// Intensity in `[30/255, 1]` for an arrival time in minutes.
pub fn intensity_of(t: f64) -> Result<f64> {
    if !(0.0..=HORIZON_MINUTES).contains(&t) {
        return Err(CoreError::Data(format!("arrival time {t} outside [0, 720]")));
    }
    Ok((255.0 - 225.0 * t / HORIZON_MINUTES) / 255.0)
}

/// 8-bit grey level for an intensity.
pub fn to_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Arrival time recovered from an 8-bit grey level; `None` for unburned.
pub fn minutes_of_level(level: u8) -> Option<f64> {
    (level > 0).then(|| (255.0 - level as f64) * HORIZON_MINUTES / 225.0)
}

/// A single-channel frame in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FireFrame {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FireFrame {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Data(format!("{} values for a {rows}x{cols} frame", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// The state before any spread: the ignition cell at full intensity.
    pub fn ignition(rows: usize, cols: usize, (r, c): (usize, usize)) -> Self {
        let mut f = Self::zeros(rows, cols);
        f.data[r * cols + c] = 1.0;
        f
    }

    pub fn support(&self, tau: f32) -> Vec<bool> {
        self.data.iter().map(|&v| v >= tau).collect()
    }

    pub fn burned(&self) -> usize {
        self.data.iter().filter(|&&v| v >= BURN_THRESHOLD).count()
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let px: Vec<u8> = self.data.iter().map(|&v| to_level(v)).collect();
        image::GrayImage::from_raw(self.cols as u32, self.rows as u32, px)
            .expect("buffer matches frame size")
            .save_with_format(path, image::ImageFormat::Pnm)?;
        Ok(())
    }

    /// Reads an 8-bit PGM; values come back quantised to `k/255`.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            rows: h as usize,
            cols: w as usize,
            data: img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        })
    }
}

/// The three nested frames at 4, 8 and 12 hours.
pub fn encode_arrival_frames(field: &ArrivalTimeField) -> [FireFrame; STEPS] {
    std::array::from_fn(|k| {
        let limit = STEP_MINUTES * (k + 1) as f64;
        let data = field
            .times
            .iter()
            .map(|&t| if t <= limit { intensity_of(t).expect("finite times are within the horizon") as f32 } else { 0.0 })
            .collect();
        FireFrame {
            rows: field.rows,
            cols: field.cols,
            data,
        }
    })
}

/// Weather grouped as `(step, hour, variable)` with variables ordered wind
/// speed, wind direction, temperature, humidity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetTensor {
    pub data: [[[f64; 4]; HOURS_PER_STEP]; STEPS],
}

impl MetTensor {
    pub fn shape(&self) -> [usize; 3] {
        [STEPS, HOURS_PER_STEP, 4]
    }

    pub fn hourly(&self) -> Vec<HourlyWeather> {
        self.data
            .iter()
            .flatten()
            .map(|v| HourlyWeather {
                wind_speed: v[0],
                wind_dir: v[1],
                temperature: v[2],
                humidity: v[3],
            })
            .collect()
    }
}

pub fn build_met_tensor(hourly: &[[f64; 4]]) -> Result<MetTensor> {
    if hourly.len() != HOURS {
        return Err(CoreError::Data(format!("expected {HOURS} hourly rows, got {}", hourly.len())));
    }
    let mut data = [[[0.0; 4]; HOURS_PER_STEP]; STEPS];
    for (h, row) in hourly.iter().enumerate() {
        data[h / HOURS_PER_STEP][h % HOURS_PER_STEP] = *row;
    }
    Ok(MetTensor { data })
}

/// Mean and standard deviation of wind speed, temperature and humidity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl MetStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a MetTensor>) -> Result<Self> {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for m in tensors {
            for v in m.data.iter().flatten() {
                for (k, &var) in [0, 2, 3].iter().enumerate() {
                    sum[k] += v[var];
                    sq[k] += v[var] * v[var];
                }
                n += 1.0;
            }
        }
        if n == 0.0 {
            return Err(CoreError::Data("no weather to normalise".into()));
        }
        let mean = sum.map(|s| s / n);
        let std = std::array::from_fn(|k| (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt().max(1e-6));
        Ok(Self { mean, std })
    }

    /// Network features for one step: per hour, normalised wind speed,
    /// sin and cos of direction, normalised temperature and humidity.
    pub fn features(&self, met: &MetTensor, step: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(MET_FEATURES);
        for v in &met.data[step] {
            let d = v[1].to_radians();
            out.extend([
                ((v[0] - self.mean[0]) / self.std[0]) as f32,
                d.sin() as f32,
                d.cos() as f32,
                ((v[2] - self.mean[1]) / self.std[1]) as f32,
                ((v[3] - self.mean[2]) / self.std[2]) as f32,
            ]);
        }
        out
    }
}

/// One retained oracle run in network-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: usize,
    pub spec: ScenarioSpec,
    pub arrival: ArrivalTimeField,
    pub frames: [FireFrame; STEPS],
    /// `3 × rows × cols` in `[0, 1]`.
    pub terrain: Vec<f32>,
    pub met: MetTensor,
}

impl Scenario {
    pub fn from_parts(id: usize, spec: ScenarioSpec, arrival: ArrivalTimeField, terrain: Vec<f32>) -> Result<Self> {
        let arrival = arrival.to_f32_precision();
        let hourly: Vec<[f64; 4]> = spec.weather.iter().map(|w| w.as_array()).collect();
        let met = build_met_tensor(&hourly)?;
        Ok(Self {
            id,
            frames: encode_arrival_frames(&arrival),
            spec,
            arrival,
            terrain,
            met,
        })
    }

    pub fn rows(&self) -> usize {
        self.arrival.rows
    }

    pub fn cols(&self) -> usize {
        self.arrival.cols
    }

    pub fn ignition_frame(&self) -> FireFrame {
        FireFrame::ignition(self.rows(), self.cols(), self.spec.ignition)
    }

    /// `S_k` for `k` in `0..=3`, with `S_0` the ignition frame.
    pub fn state(&self, k: usize) -> FireFrame {
        if k == 0 {
            self.ignition_frame()
        } else {
            self.frames[k - 1].clone()
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("frames"))?;
        for (k, f) in self.frames.iter().enumerate() {
            f.save_pgm(&dir.join("frames").join(format!("{}h.pgm", 4 * (k + 1))))?;
        }
        save_terrain_ppm(&self.terrain, self.rows(), self.cols(), &dir.join("terrain.ppm"))?;
        save_met_csv(&self.met, &dir.join("met.csv"))?;
        self.arrival.save(dir)?;
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&self.spec)?)?;
        Ok(())
    }

    /// Oracle output only: spec, arrival field and terrain render.
    pub fn save_raw(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_terrain_ppm(&self.terrain, self.rows(), self.cols(), &dir.join("terrain.ppm"))?;
        self.arrival.save(dir)?;
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&self.spec)?)?;
        Ok(())
    }

    /// Re-encodes a raw run written by [`Scenario::save_raw`].
    pub fn load_raw(id: usize, dir: &Path) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_slice(&fs::read(dir.join("scenario.json"))?)?;
        let arrival = ArrivalTimeField::load(dir)?;
        let (terrain, rows, cols) = load_terrain_ppm(&dir.join("terrain.ppm"))?;
        if rows != arrival.rows || cols != arrival.cols {
            return Err(CoreError::Data(format!("{}: terrain and arrival grids differ", dir.display())));
        }
        Self::from_parts(id, spec, arrival, terrain)
    }

    fn load(id: usize, dir: &Path) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_slice(&fs::read(dir.join("scenario.json"))?)?;
        let arrival = ArrivalTimeField::load(dir)?;
        let (terrain, rows, cols) = load_terrain_ppm(&dir.join("terrain.ppm"))?;
        if rows != arrival.rows || cols != arrival.cols {
            return Err(CoreError::Data(format!("{}: terrain and arrival grids differ", dir.display())));
        }
        let met = load_met_csv(&dir.join("met.csv"))?;
        let mut s = Self::from_parts(id, spec, arrival, terrain)?;
        s.met = met;
        Ok(s)
    }
}

pub fn save_terrain_ppm(planar: &[f32], rows: usize, cols: usize, path: &Path) -> Result<()> {
    let n = rows * cols;
    let px: Vec<u8> = (0..n).flat_map(|i| (0..3).map(move |c| to_level(planar[c * n + i]))).collect();
    image::RgbImage::from_raw(cols as u32, rows as u32, px)
        .expect("buffer matches terrain size")
        .save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}

pub fn load_terrain_ppm(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let n = (w * h) as usize;
    let mut planar = vec![0.0; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planar[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    Ok((planar, h as usize, w as usize))
}

const MET_COLUMNS: [&str; 4] = ["wind_speed_ms", "wind_dir_deg", "temperature_c", "humidity_pct"];

pub fn save_met_csv(met: &MetTensor, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MET_COLUMNS)?;
    for row in met.data.iter().flatten() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_met_csv(path: &Path) -> Result<MetTensor> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != MET_COLUMNS {
        return Err(CoreError::Data(format!("{}: unexpected met.csv header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse().map_err(|_| CoreError::Data(format!("{}: bad number `{s}`", path.display()))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(CoreError::Data(format!("{}: expected 4 columns", path.display())));
        }
        rows.push([vals[0], vals[1], vals[2], vals[3]]);
    }
    build_met_tensor(&rows)
}

/// Scenario-level split: a deterministic shuffle of ids, the first
/// `round(fraction · n)` going to training.
pub fn split(ids: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ids.is_empty() {
        return Err(CoreError::Data("cannot split an empty dataset".into()));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, "split", 0));
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).min(ids.len());
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

/// Index of a teacher-forced pair `(S_step, S_step+1)` within one scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub scenario: usize,
    pub step: usize,
}

/// Uniform draw over `(scenario, step)` pairs; `train` holds positions in
/// the dataset's scenario list.
pub fn sample_pair(train: &[usize], rng: &mut impl Rng) -> PairRef {
    PairRef {
        scenario: train[rng.random_range(0..train.len())],
        step: rng.random_range(0..STEPS),
    }
}

/// Settings for synthesising a dataset with the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    /// Scenarios to keep after boundary filtering.
    pub scenarios: usize,
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub margin: usize,
    pub train_fraction: f64,
    pub oracle: OracleParams,
    pub terrain: TerrainParams,
}

impl DataConfig {
    pub fn new(seed: u64, scenarios: usize, rows: usize, cols: usize) -> Self {
        Self {
            seed,
            scenarios,
            rows,
            cols,
            cell_size: 62.5,
            margin: 0,
            train_fraction: 0.8,
            oracle: OracleParams::default(),
            terrain: TerrainParams::default(),
        }
    }
}

/// Outcome of one raw simulation.
#[derive(Clone, Debug)]
pub enum RawRun {
    Kept(Box<Scenario>),
    Unburnable,
    OutOfBounds,
}

/// Runs scenario number `index` of the seed's sequence through the oracle.
pub fn simulate_one(cfg: &DataConfig, index: usize) -> Result<RawRun> {
    let spec = sample_scenario(
        rng::derive_u64(cfg.seed, "scenario", index as u64),
        &ScenarioBounds::new(cfg.rows, cfg.cols, cfg.cell_size),
    )?;
    let env = generate_environment(spec.terrain_seed, cfg.rows, cfg.cols, cfg.cell_size, &cfg.terrain);
    let (r, c) = spec.ignition;
    if env.fuel[r * cfg.cols + c] <= 0.0 {
        return Ok(RawRun::Unburnable);
    }
    let field = simulate_arrival(&spec, &env, &cfg.oracle)?;
    if !filter_in_bounds(&field, cfg.margin) {
        return Ok(RawRun::OutOfBounds);
    }
    Ok(RawRun::Kept(Box::new(Scenario::from_parts(index, spec, field, env.terrain_planar())?)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub simulated: usize,
    pub retained: usize,
    pub unburnable: usize,
    pub out_of_bounds: usize,
}

impl BuildReport {
    pub fn retained_fraction(&self) -> f64 {
        self.retained as f64 / self.simulated.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub scenarios: Vec<Scenario>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub stats: MetStats,
}

impl Dataset {
    /// Splits by scenario and fits met statistics on the training part.
    pub fn new(scenarios: Vec<Scenario>, train_fraction: f64, seed: u64) -> Result<Self> {
        let positions: Vec<usize> = (0..scenarios.len()).collect();
        let (mut train, mut test) = split(&positions, train_fraction, seed)?;
        train.sort_unstable();
        test.sort_unstable();
        let stats = MetStats::fit(train.iter().map(|&i| &scenarios[i].met))?;
        Ok(Self {
            scenarios,
            train,
            test,
            stats,
        })
    }

    pub fn rows(&self) -> usize {
        self.scenarios[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.scenarios[0].cols()
    }

    /// Simulates until `cfg.scenarios` runs survive the boundary filter.
    pub fn synthesize(cfg: &DataConfig) -> Result<(Self, BuildReport)> {
        if cfg.scenarios == 0 {
            return Err(CoreError::Config("scenario count must be positive".into()));
        }
        let mut report = BuildReport::default();
        let mut kept = Vec::with_capacity(cfg.scenarios);
        let chunk = 64;
        let mut next = 0;
        while kept.len() < cfg.scenarios {
            if next > 50 * cfg.scenarios + 1000 {
                return Err(CoreError::Data(format!(
                    "only {} of {} requested scenarios stayed in bounds after {next} runs",
                    kept.len(),
                    cfg.scenarios
                )));
            }
            let runs: Vec<Result<RawRun>> = (next..next + chunk).into_par_iter().map(|i| simulate_one(cfg, i)).collect();
            for run in runs {
                if kept.len() == cfg.scenarios {
                    break;
                }
                report.simulated += 1;
                match run? {
                    RawRun::Kept(s) => kept.push(*s),
                    RawRun::Unburnable => report.unburnable += 1,
                    RawRun::OutOfBounds => report.out_of_bounds += 1,
                }
            }
            next += chunk;
        }
        report.retained = kept.len();
        Ok((Self::new(kept, cfg.train_fraction, cfg.seed)?, report))
    }

    /// Writes one directory per scenario plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = Vec::with_capacity(self.scenarios.len());
        for (pos, s) in self.scenarios.iter().enumerate() {
            let name = format!("scenario_{:05}", s.id);
            s.save(&dir.join(&name))?;
            index.push(IndexEntry {
                dir: name,
                id: s.id,
                split: if self.train.binary_search(&pos).is_ok() { "train" } else { "test" }.into(),
            });
        }
        let file = IndexFile {
            scenarios: index,
            met_stats: self.stats,
        };
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file: IndexFile = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
        if file.scenarios.is_empty() {
            return Err(CoreError::Data(format!("{}: empty index", dir.display())));
        }
        let scenarios = file
            .scenarios
            .par_iter()
            .map(|e| Scenario::load(e.id, &dir.join(&e.dir)))
            .collect::<Result<Vec<_>>>()?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, e) in file.scenarios.iter().enumerate() {
            match e.split.as_str() {
                "train" => train.push(pos),
                "test" => test.push(pos),
                other => return Err(CoreError::Data(format!("unknown split tag `{other}`"))),
            }
        }
        Ok(Self {
            scenarios,
            train,
            test,
            stats: file.met_stats,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    dir: String,
    id: usize,
    split: String,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    scenarios: Vec<IndexEntry>,
    met_stats: MetStats,
}

/// Directory of a raw simulation output inside a `simulate` tree.
pub fn raw_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("run_{index:05}"))
}

/// Checks nesting and intensity persistence across the three frames.
pub fn frames_nested(frames: &[FireFrame; STEPS]) -> bool {
    frames.windows(2).all(|w| {
        w[0].data
            .iter()
            .zip(&w[1].data)
            .all(|(&a, &b)| a == 0.0 || a == b)
    }) && frames
        .iter()
        .all(|f| f.data.iter().all(|&v| v == 0.0 || ((MIN_BURNED as f32)..=1.0).contains(&v)))
}

pub use oracle::HOURS as MET_HOURS;
