//! Travel-time fire spread oracle.
//!
//! Arrival times are shortest travel times over the 8-neighbour lattice,
//! where an edge between two burnable cells costs its length divided by the
//! mean rate of spread of its endpoints. Weather is piecewise constant per
//! hour and an edge always uses the weather of the hour it is entered in.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng;

pub const HOURS: usize = 12;
pub const HORIZON_MINUTES: f64 = 720.0;

/// One hour of weather: wind speed (m/s), wind direction (degrees from
/// north, the heading the wind blows toward), temperature (°C) and
/// relative humidity (%).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyWeather {
    pub wind_speed: f64,
    pub wind_dir: f64,
    pub temperature: f64,
    pub humidity: f64,
}

impl HourlyWeather {
    pub fn calm() -> Self {
        Self {
            wind_speed: 0.0,
            wind_dir: 0.0,
            temperature: 25.0,
            humidity: 30.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.wind_speed, self.wind_dir, self.temperature, self.humidity]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub ignition: (usize, usize),
    pub weather: Vec<HourlyWeather>,
    pub terrain_seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.weather.len() != HOURS {
            return Err(CoreError::Oracle(format!(
                "expected {HOURS} hourly weather entries, got {}",
                self.weather.len()
            )));
        }
        for (h, w) in self.weather.iter().enumerate() {
            if !(0.0..360.0).contains(&w.wind_dir) || !(0.0..=100.0).contains(&w.humidity) || w.wind_speed < 0.0 {
                return Err(CoreError::Oracle(format!("hour {h}: weather out of range {w:?}")));
            }
        }
        Ok(())
    }
}

/// Per-cell fuel factor (0 = unburnable), elevation in metres and the
/// rendered RGB terrain image, quantised to 8 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentGrid {
    pub rows: usize,
    pub cols: usize,
    pub fuel: Vec<f64>,
    pub elevation: Vec<f64>,
    pub terrain: Vec<[u8; 3]>,
}

impl EnvironmentGrid {
    /// Flat terrain with the same fuel factor everywhere.
    pub fn uniform(rows: usize, cols: usize, fuel: f64) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            fuel: vec![fuel; n],
            elevation: vec![0.0; n],
            terrain: vec![[128, 128, 128]; n],
        }
    }

    /// Terrain as a `3 × rows × cols` planar array in `[0, 1]`.
    pub fn terrain_planar(&self) -> Vec<f32> {
        let n = self.rows * self.cols;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.terrain.iter().enumerate() {
            for ch in 0..3 {
                out[ch * n + i] = px[ch] as f32 / 255.0;
            }
        }
        out
    }
}

/// Rate-of-spread constants and the weather-driven fuel dryness modifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Base rate of spread, m/min.
    pub r0: f64,
    /// Wind coefficient per m/s.
    pub a_w: f64,
    pub a_s: f64,
    /// Fuel dryness gains per °C above 25 and per % humidity above 30;
    /// both zero disables the modifier.
    pub temp_coef: f64,
    pub rh_coef: f64,
    pub max_passes: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            r0: 4.0,
            a_w: 0.15,
            a_s: 3.0,
            temp_coef: 0.02,
            rh_coef: 0.01,
            max_passes: 3,
        }
    }
}

impl OracleParams {
    /// Multiplier on the fuel factor for the given hour.
    pub fn dryness(&self, w: &HourlyWeather) -> f64 {
        (1.0 + self.temp_coef * (w.temperature - 25.0) - self.rh_coef * (w.humidity - 30.0)).clamp(0.4, 1.6)
    }
}

/// Local rate of spread in m/min. `spread_dir` and `wind_dir` are degrees
/// from north; `slope_along` is rise over run in the spread direction.
pub fn local_ros(params: &OracleParams, fuel: f64, wind_speed: f64, wind_dir: f64, slope_along: f64, spread_dir: f64) -> f64 {
    if fuel <= 0.0 {
        return 0.0;
    }
    let align = (spread_dir - wind_dir).to_radians().cos().max(0.0);
    params.r0 * fuel * (1.0 + params.a_w * wind_speed * align) * (1.0 + params.a_s * slope_along).max(0.2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalTimeField {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    /// Minutes; `f64::INFINITY` marks cells that do not burn by 720.
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrivalMeta {
    rows: usize,
    cols: usize,
    cell_size: f64,
    dtype: String,
    sentinel: String,
}

impl ArrivalTimeField {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.times[r * self.cols + c]
    }

    pub fn burned_cells(&self) -> usize {
        self.times.iter().filter(|t| t.is_finite()).count()
    }

    /// Rounds every time to f32 precision, the resolution kept on disk.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            times: self.times.iter().map(|&t| t as f32 as f64).collect(),
            ..self.clone()
        }
    }

    /// Writes `arrival.f32` (row-major little-endian f32, +inf sentinel)
    /// and its `meta.json` sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let blob: Vec<u8> = self.times.iter().flat_map(|&t| (t as f32).to_le_bytes()).collect();
        fs::write(dir.join("arrival.f32"), blob)?;
        let meta = ArrivalMeta {
            rows: self.rows,
            cols: self.cols,
            cell_size: self.cell_size,
            dtype: "f32le".into(),
            sentinel: "inf".into(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ArrivalMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let blob = fs::read(dir.join("arrival.f32"))?;
        if meta.dtype != "f32le" || blob.len() != meta.rows * meta.cols * 4 {
            return Err(CoreError::Data(format!(
                "{}: arrival blob of {} bytes does not match {}x{} {}",
                dir.display(),
                blob.len(),
                meta.rows,
                meta.cols,
                meta.dtype
            )));
        }
        let times = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            rows: meta.rows,
            cols: meta.cols,
            cell_size: meta.cell_size,
            times,
        })
    }
}

/// Arrival field plus the shortest-path predecessor of every burned cell.
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub field: ArrivalTimeField,
    pub predecessor: Vec<Option<usize>>,
    /// Sweeps run, including the final change-free one when it converged.
    pub passes: usize,
    pub converged: bool,
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

#[derive(PartialEq)]
struct Entry {
    time: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time to cross from `u` to its neighbour at offset `(dr, dc)` when
/// entering the edge at minute `t`; `None` if either end is unburnable.
pub fn edge_time(
    spec: &ScenarioSpec,
    env: &EnvironmentGrid,
    params: &OracleParams,
    u: usize,
    v: usize,
    (dr, dc): (isize, isize),
    t: f64,
) -> Option<f64> {
    let (fu, fv) = (env.fuel[u], env.fuel[v]);
    if fu <= 0.0 || fv <= 0.0 {
        return None;
    }
    let hour = ((t / 60.0).floor() as usize).min(HOURS - 1);
    let w = &spec.weather[hour];
    let diagonal = dr != 0 && dc != 0;
    let dist = if diagonal { spec.cell_size * std::f64::consts::SQRT_2 } else { spec.cell_size };
    let slope = (env.elevation[v] - env.elevation[u]) / dist;
    let bearing = (dc as f64).atan2(-dr as f64).to_degrees();
    let dry = params.dryness(w);
    let ru = local_ros(params, fu * dry, w.wind_speed, w.wind_dir, slope, bearing);
    let rv = local_ros(params, fv * dry, w.wind_speed, w.wind_dir, slope, bearing);
    Some(dist / (0.5 * (ru + rv)))
}

pub fn simulate_arrival(spec: &ScenarioSpec, env: &EnvironmentGrid, params: &OracleParams) -> Result<ArrivalTimeField> {
    Ok(simulate_arrival_traced(spec, env, params)?.field)
}

pub fn simulate_arrival_traced(spec: &ScenarioSpec, env: &EnvironmentGrid, params: &OracleParams) -> Result<SimulationTrace> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    if rows == 0 || cols == 0 {
        return Err(CoreError::Oracle("empty grid".into()));
    }
    if env.rows != rows || env.cols != cols || env.fuel.len() != rows * cols {
        return Err(CoreError::Oracle(format!(
            "environment is {}x{}, scenario is {rows}x{cols}",
            env.rows, env.cols
        )));
    }
    let (ir, ic) = spec.ignition;
    if ir >= rows || ic >= cols {
        return Err(CoreError::Oracle(format!("ignition {:?} outside {rows}x{cols} grid", spec.ignition)));
    }
    let ign = ir * cols + ic;
    if env.fuel[ign] <= 0.0 {
        return Err(CoreError::Oracle(format!("ignition {:?} is on unburnable fuel", spec.ignition)));
    }

    let n = rows * cols;
    let mut times = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    times[ign] = 0.0;

    let max_passes = params.max_passes.max(1);
    let mut passes = 0;
    let mut converged = false;
    while passes < max_passes {
        passes += 1;
        let mut heap: BinaryHeap<Entry> = (0..n)
            .filter(|&i| times[i].is_finite())
            .map(|cell| Entry { time: times[cell], cell })
            .collect();
        let mut changed = false;
        while let Some(Entry { time, cell }) = heap.pop() {
            if time > times[cell] {
                continue;
            }
            let (r, c) = ((cell / cols) as isize, (cell % cols) as isize);
            for (dr, dc) in NEIGHBOURS {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                    continue;
                }
                let v = nr as usize * cols + nc as usize;
                let Some(dt) = edge_time(spec, env, params, cell, v, (dr, dc), time) else {
                    continue;
                };
                let cand = time + dt;
                if cand < times[v] && cand <= HORIZON_MINUTES {
                    times[v] = cand;
                    pred[v] = Some(cell);
                    changed = true;
                    heap.push(Entry { time: cand, cell: v });
                }
            }
        }
        if passes > 1 && !changed {
            converged = true;
            break;
        }
    }

    Ok(SimulationTrace {
        field: ArrivalTimeField {
            rows,
            cols,
            cell_size: spec.cell_size,
            times,
        },
        predecessor: pred,
        passes,
        converged,
    })
}

/// Half-open row and column ranges from which ignitions are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IgnitionBounds {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl IgnitionBounds {
    /// Central square covering `fraction` of each side.
    pub fn central(rows: usize, cols: usize, fraction: f64) -> Self {
        let span = |n: usize| {
            let len = ((n as f64 * fraction).round() as usize).clamp(1, n);
            let start = (n - len) / 2;
            (start, start + len)
        };
        Self {
            rows: span(rows),
            cols: span(cols),
        }
    }

    pub fn contains(&self, (r, c): (usize, usize)) -> bool {
        (self.rows.0..self.rows.1).contains(&r) && (self.cols.0..self.cols.1).contains(&c)
    }
}

/// Grid geometry and sampling ranges for synthetic scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBounds {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub ignition: IgnitionBounds,
    pub wind_speed: (f64, f64),
    pub temperature: (f64, f64),
    pub humidity: (f64, f64),
}

impl ScenarioBounds {
    /// Ignition zone spanning three quarters of the domain, as a 6 km zone
    /// sits inside an 8 km site.
    pub fn new(rows: usize, cols: usize, cell_size: f64) -> Self {
        Self {
            rows,
            cols,
            cell_size,
            ignition: IgnitionBounds::central(rows, cols, 0.75),
            wind_speed: (0.5, 8.0),
            temperature: (15.0, 38.0),
            humidity: (8.0, 60.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |(a, b): (usize, usize), n: usize| a < b && a > 0 && b < n;
        if !ok(self.ignition.rows, self.rows) || !ok(self.ignition.cols, self.cols) {
            return Err(CoreError::Oracle(format!(
                "ignition bounds {:?} are not strictly inside {}x{}",
                self.ignition, self.rows, self.cols
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(CoreError::Oracle("cell size must be positive".into()));
        }
        Ok(())
    }
}

pub fn sample_scenario(seed: u64, bounds: &ScenarioBounds) -> Result<ScenarioSpec> {
    bounds.validate()?;
    let mut rng = rng::stream(seed, "scenario", 0);
    let ignition = (
        rng.random_range(bounds.ignition.rows.0..bounds.ignition.rows.1),
        rng.random_range(bounds.ignition.cols.0..bounds.ignition.cols.1),
    );
    let weather = sample_weather(&mut rng, bounds);
    Ok(ScenarioSpec {
        ignition,
        weather,
        terrain_seed: rng.random(),
        rows: bounds.rows,
        cols: bounds.cols,
        cell_size: bounds.cell_size,
    })
}

/// Twelve hours of weather: a drifting wind, a diurnal temperature swing
/// and humidity that falls as temperature rises.
fn sample_weather(rng: &mut ChaCha8Rng, b: &ScenarioBounds) -> Vec<HourlyWeather> {
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let ws0 = rng.random_range(b.wind_speed.0..b.wind_speed.1);
    let mut dir: f64 = rng.random_range(0.0..360.0);
    let t0 = rng.random_range(b.temperature.0..b.temperature.1);
    let rh0 = rng.random_range(b.humidity.0..b.humidity.1);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..HOURS)
        .map(|h| {
            dir = (dir + 12.0 * jitter.sample(rng)).rem_euclid(360.0);
            if dir >= 360.0 {
                dir = 0.0;
            }
            let swing = 3.0 * (phase + h as f64 * std::f64::consts::TAU / 24.0).sin();
            let temperature = t0 + swing + 0.5 * jitter.sample(rng);
            HourlyWeather {
                wind_speed: (ws0 + 0.8 * jitter.sample(rng)).clamp(0.0, 15.0),
                wind_dir: dir,
                temperature,
                humidity: (rh0 - 1.5 * (temperature - t0) + 3.0 * jitter.sample(rng)).clamp(0.0, 100.0),
            }
        })
        .collect()
}

/// Ranges for synthetic terrain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub fuel: (f64, f64),
    pub relief: (f64, f64),
    pub patches: (usize, usize),
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            fuel: (0.03, 0.18),
            relief: (20.0, 120.0),
            patches: (2, 4),
        }
    }
}

/// Smoothed random elevation with a random tilt, a smoothed fuel field,
/// and a few unburnable rivers or rock outcrops.
pub fn generate_environment(seed: u64, rows: usize, cols: usize, cell_size: f64, tp: &TerrainParams) -> EnvironmentGrid {
    let mut rng = rng::stream(seed, "terrain", 0);
    let n = rows * cols;

    let mut elev = smooth_noise(&mut rng, rows, cols, 3, 3);
    let relief = rng.random_range(tp.relief.0..tp.relief.1);
    let (tilt_r, tilt_c) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let plane = tilt_r * r as f64 / rows as f64 + tilt_c * c as f64 / cols as f64;
            elev[i] = relief * (elev[i] + plane);
        }
    }

    let base = smooth_noise(&mut rng, rows, cols, 2, 3);
    let mut fuel: Vec<f64> = base.iter().map(|&x| tp.fuel.0 + (tp.fuel.1 - tp.fuel.0) * x).collect();
    let mut water = vec![false; n];
    let patches = rng.random_range(tp.patches.0..=tp.patches.1);
    for _ in 0..patches {
        if rng.random_bool(0.5) {
            // River: a meandering walk entering from one edge.
            let horizontal = rng.random_bool(0.5);
            let (len, across) = if horizontal { (cols, rows) } else { (rows, cols) };
            let mut pos = rng.random_range(0..across) as isize;
            for step in 0..len {
                pos = (pos + rng.random_range(-1i64..=1) as isize).clamp(0, across as isize - 1);
                let (r, c) = if horizontal { (pos as usize, step) } else { (step, pos as usize) };
                fuel[r * cols + c] = 0.0;
                water[r * cols + c] = true;
            }
        } else {
            let (cr, cc) = (rng.random_range(0..rows) as f64, rng.random_range(0..cols) as f64);
            let radius = rng.random_range(1.0..3.0);
            for r in 0..rows {
                for c in 0..cols {
                    if (r as f64 - cr).hypot(c as f64 - cc) <= radius {
                        fuel[r * cols + c] = 0.0;
                    }
                }
            }
        }
    }

    let terrain = render_terrain(&elev, &fuel, &water, rows, cols, cell_size, tp.fuel.1);
    EnvironmentGrid {
        rows,
        cols,
        fuel,
        elevation: elev,
        terrain,
    }
}

/// Box-blurred white noise rescaled to `[0, 1]`.
fn smooth_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, radius: usize, rounds: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    let rad = radius as isize;
    for _ in 0..rounds {
        let mut g = vec![0.0; f.len()];
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let (mut s, mut k) = (0.0, 0.0);
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr >= 0 && cc >= 0 && rr < rows as isize && cc < cols as isize {
                            s += f[rr as usize * cols + cc as usize];
                            k += 1.0;
                        }
                    }
                }
                g[r as usize * cols + c as usize] = s / k;
            }
        }
        f = g;
    }
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    f.iter().map(|&x| (x - lo) / span).collect()
}

fn render_terrain(
    elev: &[f64],
    fuel: &[f64],
    water: &[bool],
    rows: usize,
    cols: usize,
    cell: f64,
    fuel_max: f64,
) -> Vec<[u8; 3]> {
    let at = |r: isize, c: isize| elev[r.clamp(0, rows as isize - 1) as usize * cols + c.clamp(0, cols as isize - 1) as usize];
    let (az, alt) = (315f64.to_radians(), 45f64.to_radians());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let dzdx = (at(r, c + 1) - at(r, c - 1)) / (2.0 * cell);
            let dzdy = (at(r + 1, c) - at(r - 1, c)) / (2.0 * cell);
            let slope = dzdx.hypot(dzdy).atan();
            let aspect = dzdy.atan2(-dzdx);
            let shade = (alt.sin() * slope.cos() + alt.cos() * slope.sin() * (az - aspect).cos()).clamp(0.0, 1.0);
            let i = r as usize * cols + c as usize;
            let light = 0.55 + 0.45 * shade;
            let rgb = if water[i] {
                [0.15, 0.3, 0.75]
            } else if fuel[i] <= 0.0 {
                [0.6 * light, 0.55 * light, 0.5 * light]
            } else {
                let f = (fuel[i] / fuel_max).clamp(0.0, 1.0);
                [(0.55 - 0.35 * f) * light, (0.4 + 0.5 * f) * light, 0.2 * light]
            };
            out.push(rgb.map(|v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    out
}

/// True iff no burned cell lies within `margin` cells of the grid edge.
pub fn filter_in_bounds(field: &ArrivalTimeField, margin: usize) -> bool {
    let (rows, cols) = (field.rows, field.cols);
    field.times.iter().enumerate().all(|(i, t)| {
        if !t.is_finite() {
            return true;
        }
        let (r, c) = (i / cols, i % cols);
        r.min(c).min(rows - 1 - r).min(cols - 1 - c) > margin
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calm_spec(rows: usize, cols: usize, ignition: (usize, usize), cell: f64) -> ScenarioSpec {
        ScenarioSpec {
            ignition,
            weather: vec![HourlyWeather::calm(); HOURS],
            terrain_seed: 0,
            rows,
            cols,
            cell_size: cell,
        }
    }

    fn plain() -> OracleParams {
        OracleParams {
            temp_coef: 0.0,
            rh_coef: 0.0,
            ..OracleParams::default()
        }
    }

    #[test]
    fn ros_closed_forms() {
        let p = OracleParams { r0: 5.0, a_w: 0.2, ..plain() };
        assert_eq!(local_ros(&p, 0.0, 10.0, 0.0, 0.0, 0.0), 0.0);
        for dir in [0.0, 45.0, 90.0, 200.0] {
            assert_eq!(local_ros(&p, 1.0, 0.0, 0.0, 0.0, dir), 5.0);
        }
        assert!((local_ros(&p, 1.0, 10.0, 90.0, 0.0, 90.0) - 15.0).abs() < 1e-12);
        // Upwind spread gets no wind boost.
        assert_eq!(local_ros(&p, 1.0, 10.0, 90.0, 0.0, 270.0), 5.0);
        // Steep downhill is floored at 0.2.
        assert_eq!(local_ros(&p, 1.0, 0.0, 0.0, -1.0, 0.0), 5.0 * 0.2);
    }

    #[test]
    fn axis_travel_is_exact() {
        // ROS 1 cell/min: cell size 4 m and R0 4 m/min.
        let spec = calm_spec(21, 21, (10, 10), 4.0);
        let env = EnvironmentGrid::uniform(21, 21, 1.0);
        let f = simulate_arrival(&spec, &env, &plain()).unwrap();
        assert_eq!(f.get(10, 20), 10.0);
        assert_eq!(f.get(0, 10), 10.0);
        assert_eq!(f.get(10, 10), 0.0);
    }

    #[test]
    fn errors() {
        let mut spec = calm_spec(5, 5, (2, 2), 10.0);
        let mut env = EnvironmentGrid::uniform(5, 5, 1.0);
        env.fuel[12] = 0.0;
        assert!(simulate_arrival(&spec, &env, &plain()).is_err());
        env.fuel[12] = 1.0;
        spec.weather.pop();
        assert!(simulate_arrival(&spec, &env, &plain()).is_err());
        let spec = calm_spec(0, 0, (0, 0), 10.0);
        assert!(simulate_arrival(&spec, &EnvironmentGrid::uniform(0, 0, 1.0), &plain()).is_err());
    }

    #[test]
    fn horizon_cut_and_sweeps_converge() {
        let spec = calm_spec(40, 40, (20, 20), 62.5);
        let env = EnvironmentGrid::uniform(40, 40, 0.1);
        let tr = simulate_arrival_traced(&spec, &env, &plain()).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.passes, 2);
        assert!(tr.field.times.iter().all(|t| !t.is_finite() || (0.0..=720.0).contains(t)));
        assert!(tr.field.times.iter().any(|t| !t.is_finite()));
    }

    #[test]
    fn boundary_filter() {
        let mut f = ArrivalTimeField {
            rows: 5,
            cols: 5,
            cell_size: 1.0,
            times: vec![f64::INFINITY; 25],
        };
        f.times[12] = 0.0;
        assert!(filter_in_bounds(&f, 0));
        assert!(filter_in_bounds(&f, 1));
        assert!(!filter_in_bounds(&f, 2));
        f.times[2] = 5.0;
        assert!(!filter_in_bounds(&f, 0));
    }

    #[test]
    fn scenario_sampling() {
        let b = ScenarioBounds::new(32, 32, 62.5);
        assert_eq!(sample_scenario(5, &b).unwrap(), sample_scenario(5, &b).unwrap());
        let mut bad = b.clone();
        bad.ignition.rows = (0, 10);
        assert!(sample_scenario(1, &bad).is_err());
        let s = sample_scenario(9, &b).unwrap();
        s.validate().unwrap();
    }

    #[test]
    fn arrival_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = ArrivalTimeField {
            rows: 2,
            cols: 3,
            cell_size: 62.5,
            times: vec![0.0, 1.5, f64::INFINITY, 719.25, 3.0, f64::INFINITY],
        };
        f.save(dir.path()).unwrap();
        assert_eq!(ArrivalTimeField::load(dir.path()).unwrap(), f);
    }
}
