//! Synthetic coupled-wildfire world, weekly preprocessing, and the WFGM
//! on-disk grid-series format.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

pub const CHANNELS: usize = 11;
pub const DAYS_PER_WEEK: usize = 7;
pub const FIRE_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("bad magic (expected WFGM)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionMismatch(u16),
    #[error("truncated file")]
    TruncatedFile,
    #[error("value out of range: {0}")]
    RangeViolation(String),
    #[error("empty input")]
    EmptyInput,
    #[error("split out of range: {0}")]
    SplitOutOfRange(String),
    #[error("empty train split")]
    EmptyTrain,
    #[error("resample: {0}")]
    Resample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Weekly multi-channel observation stack plus aligned binary fire targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSeries {
    pub obs: Tensor,       // [T, C, H, W], values in [0,1]
    pub fire: Vec<u8>,     // [T, H, W], 0/1
    pub channel_names: Vec<String>,
}

impl GridSeries {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.obs.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let (t, c, h, w) = self.dims();
        if self.fire.len() != t * h * w {
            return Err(EnvError::RangeViolation(format!(
                "fire length {} != T*H*W {}",
                self.fire.len(),
                t * h * w
            )));
        }
        if self.channel_names.len() != c {
            return Err(EnvError::RangeViolation(format!(
                "{} channel names for {c} channels",
                self.channel_names.len()
            )));
        }
        for v in self.obs.data() {
            if !(0.0..=1.0).contains(v) {
                return Err(EnvError::RangeViolation(format!("obs value {v}")));
            }
        }
        if self.fire.iter().any(|b| *b > 1) {
            return Err(EnvError::RangeViolation("fire byte not 0/1".into()));
        }
        Ok(())
    }

    /// Observation frame t as a [C,H,W] tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        let (_, c, h, w) = self.dims();
        let n = c * h * w;
        Tensor::from_parts(vec![c, h, w], self.obs.data()[t * n..(t + 1) * n].to_vec())
    }

    /// Fire target frame t as 0.0/1.0 values, flattened H*W.
    pub fn fire_frame(&self, t: usize) -> Vec<f64> {
        let (_, _, h, w) = self.dims();
        self.fire[t * h * w..(t + 1) * h * w]
            .iter()
            .map(|b| *b as f64)
            .collect()
    }

    fn slice(&self, start: usize, len: usize) -> GridSeries {
        let (_, c, h, w) = self.dims();
        let n = c * h * w;
        GridSeries {
            obs: Tensor::from_parts(
                vec![len, c, h, w],
                self.obs.data()[start * n..(start + len) * n].to_vec(),
            ),
            fire: self.fire[start * h * w..(start + len) * h * w].to_vec(),
            channel_names: self.channel_names.clone(),
        }
    }
}

/// Contiguous, ordered, non-overlapping train/validation slices.
pub fn split(
    gs: &GridSeries,
    train_weeks: usize,
    val_weeks: usize,
) -> Result<(GridSeries, GridSeries), EnvError> {
    let t = gs.dims().0;
    if train_weeks == 0 {
        return Err(EnvError::EmptyTrain);
    }
    if train_weeks + val_weeks > t {
        return Err(EnvError::SplitOutOfRange(format!(
            "train {train_weeks} + val {val_weeks} > T {t}"
        )));
    }
    Ok((gs.slice(0, train_weeks), gs.slice(train_weeks, val_weeks)))
}

// ---------------------------------------------------------------------------
// WFGM file format

const MAGIC: &[u8; 4] = b"WFGM";
const VERSION: u16 = 1;

pub fn save_grid_series(gs: &GridSeries, path: &Path) -> Result<(), EnvError> {
    gs.validate()?;
    let (t, c, h, w) = gs.dims();
    let mut buf = Vec::with_capacity(18 + t * c * h * w * 4 + t * h * w);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [t, c, h, w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in gs.obs.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&gs.fire);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_grid_series(path: &Path) -> Result<GridSeries, EnvError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_grid_series_bytes(&bytes)
}

pub fn load_grid_series_bytes(bytes: &[u8]) -> Result<GridSeries, EnvError> {
    if bytes.len() < 4 {
        return Err(EnvError::TruncatedFile);
    }
    if &bytes[0..4] != MAGIC {
        return Err(EnvError::BadMagic);
    }
    if bytes.len() < 22 {
        return Err(EnvError::TruncatedFile);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(EnvError::VersionMismatch(version));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 6 + 4 * i;
        *d = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    }
    let [t, c, h, w] = dims;
    let obs_len = t * c * h * w;
    let fire_len = t * h * w;
    let need = 22 + obs_len * 4 + fire_len;
    if bytes.len() < need {
        return Err(EnvError::TruncatedFile);
    }
    let mut obs = Vec::with_capacity(obs_len);
    for i in 0..obs_len {
        let o = 22 + 4 * i;
        let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
        obs.push(v);
    }
    let fire = bytes[22 + obs_len * 4..need].to_vec();
    let gs = GridSeries {
        obs: Tensor::from_parts(vec![t, c, h, w], obs),
        fire,
        channel_names: default_channel_names(c),
    };
    gs.validate()?;
    Ok(gs)
}

pub fn default_channel_names(c: usize) -> Vec<String> {
    let mut names = vec!["fire_confidence".to_string()];
    for i in 1..c {
        names.push(format!("climate_{i:02}"));
    }
    names
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AgentFile {
    pub id: usize,
    pub path: PathBuf,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub agents: Vec<AgentFile>,
    pub train_weeks: usize,
    pub val_weeks: usize,
    pub seed: u64,
    pub generator: GeneratorParams,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }
}

// ---------------------------------------------------------------------------
// Generator

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub n_agents: usize,
    pub raw_h: usize,
    pub raw_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub weeks: usize,
    /// Ignition logit weight on the dryness field.
    pub kappa_d: f64,
    /// Ignition logit weight per burning in-grid neighbor cell.
    pub kappa_n: f64,
    /// Ignition logit weight on cross-agent edge fire.
    pub kappa_x: f64,
    /// Ignition logit offset (base rarity).
    pub kappa_0: f64,
    pub dryness_relax: f64,
    pub dryness_diffusion: f64,
    pub dryness_noise: f64,
    /// Dryness decrease per unit of (zero-mean) precipitation anomaly.
    pub precip_strength: f64,
    /// Dryness increase per unit of (zero-mean) evaporation anomaly.
    pub evap_strength: f64,
    pub season_amplitude: f64,
    pub burn_rate: f64,
    pub fuel_regrowth: f64,
    pub persist_logit: f64,
    pub obs_noise: f64,
    pub climate_noise: f64,
    /// When set, every emitted observation channel is pure noise carrying no
    /// information about the fire process; targets are unaffected.
    pub decouple_channels: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_agents: 3,
            raw_h: 16,
            raw_w: 16,
            out_h: 16,
            out_w: 16,
            weeks: 364,
            kappa_d: 6.0,
            kappa_n: 1.6,
            kappa_x: 2.5,
            kappa_0: 7.5,
            dryness_relax: 0.05,
            dryness_diffusion: 0.15,
            dryness_noise: 0.005,
            precip_strength: 0.12,
            evap_strength: 0.08,
            season_amplitude: 0.35,
            burn_rate: 0.35,
            fuel_regrowth: 0.004,
            persist_logit: 1.0,
            obs_noise: 0.01,
            climate_noise: 0.3,
            decouple_channels: false,
        }
    }
}

/// Hidden per-agent world state; only noisy projections of it are observed.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub dryness: Vec<f64>, // [H*W] in [0,1]
    pub fuel: Vec<f64>,    // [H*W] in [0,1]
    pub active: Vec<u8>,   // [H*W] binary
    pub day: usize,
}

impl WorldState {
    pub fn init(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Self {
        let n = params.raw_h * params.raw_w;
        WorldState {
            dryness: (0..n).map(|_| rng.gen_range(0.2..0.6)).collect(),
            fuel: (0..n).map(|_| rng.gen_range(0.7..1.0)).collect(),
            active: vec![0; n],
            day: 0,
        }
    }
}

/// One day's raw emission for one agent: the observation channels that a
/// sensor would export plus the ground-truth fire confidence used to build
/// targets. In coupled mode channel 0 is a noisy copy of `fire_conf`.
#[derive(Clone, Debug)]
pub struct RawFrame {
    pub obs: Vec<f64>,       // [C, H, W] raw (unnormalized) values
    pub fire_conf: Vec<f64>, // [H, W] in [0,1]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn season(day: usize, amplitude: f64) -> f64 {
    0.5 + amplitude * (2.0 * std::f64::consts::PI * day as f64 / 364.0).sin()
}

/// Advance all N coupled agents by one day. Agents sit on a ring; fire along
/// agent i's east edge raises ignition pressure on agent (i+1)'s west edge.
pub fn synth_step(
    states: &mut [WorldState],
    params: &GeneratorParams,
    rng: &mut ChaCha8Rng,
) -> Vec<RawFrame> {
    let n_agents = states.len();
    let (h, w) = (params.raw_h, params.raw_w);
    let day = states[0].day;
    let s = season(day, params.season_amplitude);

    // east-edge fire fractions from the previous day drive today's coupling
    let edge_frac: Vec<Vec<f64>> = states
        .iter()
        .map(|st| {
            (0..h)
                .map(|r| st.active[r * w + w - 1] as f64)
                .collect::<Vec<f64>>()
        })
        .collect();

    let mut frames = Vec::with_capacity(n_agents);
    for (ai, st) in states.iter_mut().enumerate() {
        // observable weather drivers: precipitation showers and an
        // evaporation anomaly, both per pixel per day
        let precip: Vec<f64> = (0..h * w)
            .map(|_| {
                let r: f64 = rng.gen();
                r * r // skewed toward dry days, mean 1/3
            })
            .collect();
        let evap: Vec<f64> = (0..h * w)
            .map(|_| s + 0.3 * rng.gen_range(-1.0..1.0))
            .collect();
        // dryness: relax toward season, diffuse, integrate the drivers
        let mut next_d = st.dryness.clone();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let mut lap = -4.0 * st.dryness[i];
                lap += st.dryness[if r > 0 { i - w } else { i }];
                lap += st.dryness[if r + 1 < h { i + w } else { i }];
                lap += st.dryness[if c > 0 { i - 1 } else { i }];
                lap += st.dryness[if c + 1 < w { i + 1 } else { i }];
                let noise = rng.gen_range(-1.0..1.0) * params.dryness_noise;
                next_d[i] = (st.dryness[i]
                    + params.dryness_relax * (s - st.dryness[i])
                    + params.dryness_diffusion * lap
                    - params.precip_strength * (precip[i] - 1.0 / 3.0)
                    + params.evap_strength * (evap[i] - s)
                    + noise)
                    .clamp(0.0, 1.0);
            }
        }
        st.dryness = next_d;

        // ignition / persistence
        let west_src = &edge_frac[(ai + n_agents - 1) % n_agents];
        let prev_active = st.active.clone();
        let mut next_a = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let mut neighbors = 0.0;
                if r > 0 {
                    neighbors += prev_active[i - w] as f64;
                }
                if r + 1 < h {
                    neighbors += prev_active[i + w] as f64;
                }
                if c > 0 {
                    neighbors += prev_active[i - 1] as f64;
                }
                if c + 1 < w {
                    neighbors += prev_active[i + 1] as f64;
                }
                let cross = if c == 0 { west_src[r] } else { 0.0 };
                let logit = params.kappa_d * st.dryness[i]
                    + params.kappa_n * neighbors
                    + params.kappa_x * cross
                    - params.kappa_0;
                let p_ignite = sigmoid(logit);
                let burning = if prev_active[i] == 1 {
                    st.fuel[i] > 0.05 && rng.gen::<f64>() < sigmoid(logit + params.persist_logit)
                } else {
                    st.fuel[i] > 0.05 && rng.gen::<f64>() < p_ignite
                };
                next_a[i] = burning as u8;
            }
        }
        st.active = next_a;

        // fuel consumption and regrowth
        for i in 0..h * w {
            if st.active[i] == 1 {
                st.fuel[i] = (st.fuel[i] - params.burn_rate).max(0.0);
            } else {
                st.fuel[i] = (st.fuel[i] + params.fuel_regrowth).min(1.0);
            }
        }
        st.day += 1;

        // emissions
        let mut fire_conf = vec![0.0; h * w];
        for i in 0..h * w {
            let base = if st.active[i] == 1 {
                0.4 + 0.5 * st.dryness[i]
            } else {
                0.0
            };
            fire_conf[i] = (base + rng.gen_range(-1.0..1.0) * params.obs_noise).clamp(0.0, 1.0);
        }
        let mut obs = vec![0.0; CHANNELS * h * w];
        if params.decouple_channels {
            for v in obs.iter_mut() {
                *v = rng.gen::<f64>();
            }
        } else {
            obs[..h * w].copy_from_slice(&fire_conf);
            // channels 1-3: precipitation, 4-6: evaporation — the observable
            // drivers of the dryness state, distinct gains per channel
            for (slot, field) in [(1usize, &precip), (4usize, &evap)] {
                for k in 0..3 {
                    let a = 0.8 + 0.2 * k as f64;
                    let base = (slot + k) * h * w;
                    for i in 0..h * w {
                        obs[base + i] = a * field[i] + rng.gen_range(-1.0..1.0) * 0.02;
                    }
                }
            }
            // channels 7-9: dryness leak corrupted by a common-mode
            // disturbance shared across the three channels, so no per-frame
            // channel mix can cancel it; only temporal integration of the
            // driver channels recovers the level
            let eps: Vec<f64> = (0..h * w)
                .map(|_| rng.gen_range(-1.0..1.0) * params.climate_noise)
                .collect();
            for k in 0..3 {
                let a = 0.8 + 0.2 * k as f64;
                let base = (7 + k) * h * w;
                for i in 0..h * w {
                    obs[base + i] =
                        a * (st.dryness[i] + eps[i]) + rng.gen_range(-1.0..1.0) * 0.02;
                }
            }
            // channel 10: a clean seasonal clock
            let base = 10 * h * w;
            for i in 0..h * w {
                obs[base + i] = s + rng.gen_range(-1.0..1.0) * 0.02;
            }
        }
        frames.push(RawFrame { obs, fire_conf });
    }
    frames
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Block-mean downsample of a single [H,W] field; input dims must be integer
/// multiples of output dims.
pub fn area_average(
    field: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>, EnvError> {
    if out_h == 0 || out_w == 0 || in_h % out_h != 0 || in_w % out_w != 0 {
        return Err(EnvError::Resample(format!(
            "{in_h}x{in_w} -> {out_h}x{out_w} is not an integer block factor"
        )));
    }
    let (fh, fw) = (in_h / out_h, in_w / out_w);
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        for c in 0..out_w {
            let mut sum = 0.0;
            for dr in 0..fh {
                for dc in 0..fw {
                    sum += field[(r * fh + dr) * in_w + c * fw + dc];
                }
            }
            out[r * out_w + c] = sum / (fh * fw) as f64;
        }
    }
    Ok(out)
}

/// Daily raw frames -> weekly GridSeries: climate channels are 7-day means,
/// fire confidence is the 7-day max; both are area-averaged to the output
/// grid; channels are min-max normalized with train-split statistics; the
/// binary target thresholds the resampled weekly confidence at 0.05.
pub fn preprocess(
    frames: &[RawFrame],
    params: &GeneratorParams,
    train_weeks: usize,
) -> Result<GridSeries, EnvError> {
    if frames.is_empty() || frames.len() < DAYS_PER_WEEK {
        return Err(EnvError::EmptyInput);
    }
    let (h, w) = (params.raw_h, params.raw_w);
    let (oh, ow) = (params.out_h, params.out_w);
    let weeks = frames.len() / DAYS_PER_WEEK;
    let hw = h * w;
    let n_out = oh * ow;

    let mut weekly_obs = vec![0.0; weeks * CHANNELS * n_out];
    let mut fire = vec![0u8; weeks * n_out];
    for t in 0..weeks {
        let days = &frames[t * DAYS_PER_WEEK..(t + 1) * DAYS_PER_WEEK];
        // channel 0: weekly max confidence; channels 1..: weekly mean
        let mut week_raw = vec![0.0f64; CHANNELS * hw];
        for d in days {
            for i in 0..hw {
                week_raw[i] = week_raw[i].max(d.obs[i]);
            }
            for ch in 1..CHANNELS {
                for i in 0..hw {
                    week_raw[ch * hw + i] += d.obs[ch * hw + i] / DAYS_PER_WEEK as f64;
                }
            }
        }
        for ch in 0..CHANNELS {
            let small = area_average(&week_raw[ch * hw..(ch + 1) * hw], h, w, oh, ow)?;
            weekly_obs[(t * CHANNELS + ch) * n_out..(t * CHANNELS + ch + 1) * n_out]
                .copy_from_slice(&small);
        }
        // weekly target from the true confidence, max over days then resample
        let mut conf_max = vec![0.0f64; hw];
        for d in days {
            for i in 0..hw {
                conf_max[i] = conf_max[i].max(d.fire_conf[i]);
            }
        }
        let conf_small = area_average(&conf_max, h, w, oh, ow)?;
        for i in 0..n_out {
            fire[t * n_out + i] = (conf_small[i] > FIRE_THRESHOLD) as u8;
        }
    }

    // per-channel min-max from the train split only
    let stat_weeks = train_weeks.clamp(1, weeks);
    for ch in 0..CHANNELS {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..stat_weeks {
            for i in 0..n_out {
                let v = weekly_obs[(t * CHANNELS + ch) * n_out + i];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let degenerate = hi - lo < 1e-12;
        for t in 0..weeks {
            for i in 0..n_out {
                let v = &mut weekly_obs[(t * CHANNELS + ch) * n_out + i];
                *v = if degenerate {
                    0.5
                } else {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                };
            }
        }
    }

    let gs = GridSeries {
        obs: Tensor::from_parts(vec![weeks, CHANNELS, oh, ow], weekly_obs),
        fire,
        channel_names: default_channel_names(CHANNELS),
    };
    gs.validate()?;
    Ok(gs)
}

/// Run the coupled generator for the configured horizon and emit one weekly
/// series per agent.
pub fn generate(params: &GeneratorParams, seed: u64, train_weeks: usize) -> Vec<GridSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<WorldState> = (0..params.n_agents)
        .map(|_| WorldState::init(params, &mut rng))
        .collect();
    let days = params.weeks * DAYS_PER_WEEK;
    let mut per_agent: Vec<Vec<RawFrame>> = vec![Vec::with_capacity(days); params.n_agents];
    for _ in 0..days {
        let frames = synth_step(&mut states, params, &mut rng);
        for (a, f) in frames.into_iter().enumerate() {
            per_agent[a].push(f);
        }
    }
    per_agent
        .into_iter()
        .map(|frames| preprocess(&frames, params, train_weeks).expect("generator emits full weeks"))
        .collect()
}

/// Generate, save per-agent WFGM files plus manifest.json under `out_dir`.
pub fn generate_dataset(
    params: &GeneratorParams,
    seed: u64,
    train_weeks: usize,
    val_weeks: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, EnvError> {
    if train_weeks + val_weeks > params.weeks {
        return Err(EnvError::SplitOutOfRange(format!(
            "train {train_weeks} + val {val_weeks} > generated weeks {}",
            params.weeks
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let series = generate(params, seed, train_weeks);
    let mut agents = Vec::new();
    for (id, gs) in series.iter().enumerate() {
        let path = out_dir.join(format!("agent_{id:02}.wfgm"));
        save_grid_series(gs, &path)?;
        agents.push(AgentFile { id, path });
    }
    let manifest = DatasetManifest {
        agents,
        train_weeks,
        val_weeks,
        seed,
        generator: params.clone(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params() -> GeneratorParams {
        GeneratorParams {
            n_agents: 2,
            raw_h: 8,
            raw_w: 8,
            out_h: 8,
            out_w: 8,
            weeks: 4,
            ..GeneratorParams::default()
        }
    }

    #[test]
    fn no_ignition_with_hard_negative_offset() {
        let params = GeneratorParams {
            kappa_0: 1e6,
            persist_logit: 0.0,
            ..tiny_params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut states: Vec<WorldState> = (0..2)
            .map(|_| WorldState::init(&params, &mut rng))
            .collect();
        for _ in 0..28 {
            let frames = synth_step(&mut states, &params, &mut rng);
            for f in &frames {
                assert!(f.fire_conf.iter().all(|v| *v <= params.obs_noise));
            }
            for st in &states {
                assert!(st.active.iter().all(|a| *a == 0));
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let params = tiny_params();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut states: Vec<WorldState> = (0..2)
                .map(|_| WorldState::init(&params, &mut rng))
                .collect();
            let mut out = Vec::new();
            for _ in 0..21 {
                out.push(synth_step(&mut states, &params, &mut rng));
            }
            out
        };
        let a = run();
        let b = run();
        for (fa, fb) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(fa.obs, fb.obs);
            assert_eq!(fa.fire_conf, fb.fire_conf);
        }
    }

    #[test]
    fn cross_coupling_raises_edge_ignitions() {
        // force agent 0's east edge fully on fire; count next-day ignitions
        // on agent 1's west edge with and without coupling.
        let base = GeneratorParams {
            kappa_d: 0.0,
            kappa_n: 0.0,
            kappa_0: 4.0,
            dryness_noise: 0.0,
            ..tiny_params()
        };
        let count_edge = |kappa_x: f64, seed: u64| -> usize {
            let params = GeneratorParams { kappa_x, ..base.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0usize;
            for _ in 0..1000 {
                let mut states: Vec<WorldState> = (0..2)
                    .map(|_| WorldState::init(&params, &mut rng))
                    .collect();
                let (h, w) = (params.raw_h, params.raw_w);
                for r in 0..h {
                    states[0].active[r * w + w - 1] = 1;
                    states[0].fuel[r * w + w - 1] = 1.0;
                }
                synth_step(&mut states, &params, &mut rng);
                for r in 0..h {
                    total += states[1].active[r * w] as usize;
                }
            }
            total
        };
        let with = count_edge(2.5, 11);
        let without = count_edge(0.0, 11);
        assert!(
            with > without,
            "coupled {with} should exceed uncoupled {without}"
        );
    }

    fn const_frame(c0: f64, conf: f64, params: &GeneratorParams) -> RawFrame {
        let hw = params.raw_h * params.raw_w;
        let mut obs = vec![0.0; CHANNELS * hw];
        obs[..hw].fill(c0);
        for ch in 1..CHANNELS {
            obs[ch * hw..(ch + 1) * hw].fill(5.0);
        }
        RawFrame {
            obs,
            fire_conf: vec![conf; hw],
        }
    }

    #[test]
    fn weekly_max_thresholds_at_005() {
        let params = tiny_params();
        // one pixel sees confidences (0,0,0.3,0,0,0,0) -> weekly 0.3 -> target 1
        let mut frames: Vec<RawFrame> = (0..7).map(|_| const_frame(0.0, 0.0, &params)).collect();
        frames[2].fire_conf[0] = 0.3;
        let gs = preprocess(&frames, &params, 1).unwrap();
        assert_eq!(gs.fire[0], 1);
        assert!(gs.fire[1..].iter().all(|b| *b == 0));

        // just below threshold stays 0
        let mut frames: Vec<RawFrame> = (0..7).map(|_| const_frame(0.0, 0.0, &params)).collect();
        frames[3].fire_conf[0] = 0.05;
        let gs = preprocess(&frames, &params, 1).unwrap();
        assert_eq!(gs.fire[0], 0);
    }

    #[test]
    fn constant_channel_normalizes_to_half() {
        let params = tiny_params();
        let frames: Vec<RawFrame> = (0..14).map(|_| const_frame(0.0, 0.0, &params)).collect();
        let gs = preprocess(&frames, &params, 2).unwrap();
        let (_, _, h, w) = gs.dims();
        // climate channel 1 was constant 5.0 across the whole train split
        for t in 0..2 {
            for i in 0..h * w {
                assert_eq!(gs.obs.data()[(t * CHANNELS + 1) * h * w + i], 0.5);
            }
        }
    }

    #[test]
    fn area_average_block_means() {
        let field = vec![
            1.0, 1.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        let out = area_average(&field, 4, 4, 2, 2).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(area_average(&field, 4, 4, 3, 2).is_err());
    }

    #[test]
    fn normalization_uses_train_split_only() {
        let params = tiny_params();
        let mut frames = Vec::new();
        // train week: channel 1 spans [5,5]; val week: jumps to 50
        for _ in 0..7 {
            frames.push(const_frame(0.0, 0.0, &params));
        }
        for _ in 0..7 {
            let mut f = const_frame(0.0, 0.0, &params);
            let hw = params.raw_h * params.raw_w;
            f.obs[hw..2 * hw].fill(50.0);
            frames.push(f);
        }
        let gs = preprocess(&frames, &params, 1).unwrap();
        let hw = params.out_h * params.out_w;
        // degenerate on train -> whole series pinned at 0.5 for that channel
        assert_eq!(gs.obs.data()[(0 * CHANNELS + 1) * hw], 0.5);
        assert_eq!(gs.obs.data()[(1 * CHANNELS + 1) * hw], 0.5);
    }

    #[test]
    fn preprocess_rejects_empty() {
        let params = tiny_params();
        assert!(matches!(
            preprocess(&[], &params, 1),
            Err(EnvError::EmptyInput)
        ));
        let short: Vec<RawFrame> = (0..3).map(|_| const_frame(0.0, 0.0, &params)).collect();
        assert!(matches!(
            preprocess(&short, &params, 1),
            Err(EnvError::EmptyInput)
        ));
    }

    fn random_series(t: usize, c: usize, h: usize, w: usize, seed: u64) -> GridSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f64> = (0..t * c * h * w)
            .map(|_| (rng.gen::<f32>()) as f64)
            .collect();
        let fire: Vec<u8> = (0..t * h * w).map(|_| rng.gen_range(0..=1u8)).collect();
        GridSeries {
            obs: Tensor::from_parts(vec![t, c, h, w], obs),
            fire,
            channel_names: default_channel_names(c),
        }
    }

    #[test]
    fn wfgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gs = random_series(5, 11, 4, 4, 3);
        let path = dir.path().join("a.wfgm");
        save_grid_series(&gs, &path).unwrap();
        let back = load_grid_series(&path).unwrap();
        assert_eq!(gs, back);
    }

    #[test]
    fn wfgm_bad_magic_and_truncation() {
        let gs = random_series(2, 3, 4, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wfgm");
        save_grid_series(&gs, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            load_grid_series_bytes(&bad),
            Err(EnvError::BadMagic)
        ));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            load_grid_series_bytes(&bytes),
            Err(EnvError::TruncatedFile)
        ));
        let mut vers = std::fs::read(&path).unwrap();
        vers[4] = 9;
        assert!(matches!(
            load_grid_series_bytes(&vers),
            Err(EnvError::VersionMismatch(9))
        ));
    }

    #[test]
    fn wfgm_hand_built_bytes() {
        // 1x1x2x2, obs [0.0, 0.5, 1.0, 0.25], fire [1,0,0,1]
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"WFGM");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        for d in [1u32, 1, 2, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for v in [0.0f32, 0.5, 1.0, 0.25] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[1, 0, 0, 1]);
        let gs = load_grid_series_bytes(&bytes).unwrap();
        assert_eq!(gs.dims(), (1, 1, 2, 2));
        assert_eq!(gs.obs.data(), &[0.0, 0.5, 1.0, 0.25]);
        assert_eq!(gs.fire, vec![1, 0, 0, 1]);
    }

    #[test]
    fn split_slices_and_errors() {
        let gs = random_series(10, 2, 4, 4, 5);
        let (tr, va) = split(&gs, 6, 4).unwrap();
        assert_eq!(tr.dims().0, 6);
        assert_eq!(va.dims().0, 4);
        assert_eq!(tr.obs.data()[0], gs.obs.data()[0]);
        assert_eq!(va.fire_frame(0), gs.fire_frame(6));
        assert!(matches!(split(&gs, 0, 4), Err(EnvError::EmptyTrain)));
        assert!(matches!(
            split(&gs, 8, 4),
            Err(EnvError::SplitOutOfRange(_))
        ));
    }

    #[test]
    fn generated_series_within_range_and_has_fire() {
        let params = GeneratorParams {
            weeks: 30,
            ..tiny_params()
        };
        let series = generate(&params, 42, 20);
        assert_eq!(series.len(), 2);
        for gs in &series {
            gs.validate().unwrap();
            assert_eq!(gs.dims(), (30, CHANNELS, 8, 8));
        }
        let burned: usize = series
            .iter()
            .flat_map(|g| g.fire.iter())
            .map(|b| *b as usize)
            .sum();
        assert!(burned > 0, "generator produced no fire at all");
        let total: usize = series.iter().map(|g| g.fire.len()).sum();
        assert!(
            (burned as f64) < 0.5 * total as f64,
            "fire should be the minority class: {burned}/{total}"
        );
    }

    #[test]
    fn decoupled_channels_forget_the_fire() {
        // crude check: with decoupling, channel 0 at burning target pixels
        // matches the global channel-0 distribution (no fire signal).
        let params = GeneratorParams {
            weeks: 40,
            decouple_channels: true,
            ..tiny_params()
        };
        let series = generate(&params, 9, 30);
        let gs = &series[0];
        let (t, _, h, w) = gs.dims();
        let mut on = Vec::new();
        let mut all = Vec::new();
        for wk in 0..t {
            for i in 0..h * w {
                let v = gs.obs.data()[wk * CHANNELS * h * w + i];
                all.push(v);
                if gs.fire[wk * h * w + i] == 1 {
                    on.push(v);
                }
            }
        }
        assert!(on.len() > 20, "need some fire weeks, got {}", on.len());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&on) - mean(&all)).abs() < 0.1);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = GeneratorParams {
            weeks: 10,
            ..tiny_params()
        };
        let m = generate_dataset(&params, 13, 7, 3, dir.path()).unwrap();
        assert_eq!(m.agents.len(), 2);
        for a in &m.agents {
            assert!(a.path.exists());
            load_grid_series(&a.path).unwrap();
        }
        let back = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.train_weeks, 7);
        assert_eq!(back.val_weeks, 3);
        assert_eq!(back.seed, 13);
        assert_eq!(back.agents.len(), 2);
    }
}
