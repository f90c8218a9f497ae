//! Experiment orchestration: configuration, dataset generation and storage,
//! heuristic runs, empirical CDFs and the report bundle.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{mix_seed, pol_avg_covariance, schedule_users, ArrayGeometry, ChannelParams, Drop};
use crate::complexity::{energy_report_from_counts, fpo_nn, fpo_report, DistributionMode, FpoParams, PowerModel};
use crate::error::{Error, Result};
use crate::nam::{
    evaluate, featurize, Architecture, EvalMetrics, LossConfig, NamModel, Sample, SampleMeta, Split, TrainConfig,
    FEATURE_WIDTH,
};
use crate::tam::{
    evaluate_mask, fixed_config_tam, greedy_tam, sequential_tam, AntennaMask, ConfigFamily,
    ScheduledUser, SolverId, TamProblem, TamSolution,
};
use crate::txrx::LinkParams;

/// Boltzmann constant times 290 K, in dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Candidate users per drop, `J`.
    pub users_per_drop: usize,
    /// Maximum co-scheduled users, `K`.
    pub k_max: usize,
    pub corr_threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            users_per_drop: 10,
            k_max: 4,
            corr_threshold: 0.3,
        }
    }
}

/// Link budget. Power and throughput targets refer to `reference_prbs`
/// resource blocks and are scaled to `n_prb`, so per-PRB quantities do not
/// depend on the simulated bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub n_prb: usize,
    pub reference_prbs: usize,
    /// Total transmit power over `reference_prbs`.
    pub bs_power_dbm: f64,
    pub noise_figure_db: f64,
    pub prb_bandwidth_hz: f64,
    pub slot_duration_s: f64,
    pub se_cap: f64,
    pub streams_per_user: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            n_prb: 12,
            reference_prbs: 273,
            bs_power_dbm: 53.0,
            noise_figure_db: 9.0,
            prb_bandwidth_hz: 360e3,
            slot_duration_s: 0.5e-3,
            se_cap: 8.0,
            streams_per_user: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TamConfig {
    /// Per-user throughput target over `reference_prbs`, bits per slot.
    pub r_min_reference_bits: f64,
    /// Minimum active elements per polarization.
    pub m_min: usize,
    pub family: ConfigFamily,
}

impl Default for TamConfig {
    fn default() -> Self {
        Self {
            r_min_reference_bits: 0.3e6,
            m_min: 4,
            family: ConfigFamily::Columns,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NamConfig {
    pub architecture: Architecture,
    pub loss: LossConfig,
    pub symmetric: TrainConfig,
    pub asymmetric: TrainConfig,
    /// Count slots that are infeasible even at the full array in metrics.
    pub include_infeasible: bool,
}

impl Default for NamConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            loss: LossConfig::default(),
            symmetric: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            // fine-tuning from the symmetric checkpoint, hence the small step
            asymmetric: TrainConfig {
                epochs: 10,
                learning_rate: 1e-4,
                seed: 8,
                ..TrainConfig::default()
            },
            include_infeasible: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub drops: usize,
    pub slots_per_drop: usize,
    /// Train, validation and test fractions of the drops.
    pub split: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            drops: 2000,
            slots_per_drop: 10,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            split: 2,
            init: 3,
        }
    }
}

/// Which drops the heuristic comparison runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicsConfig {
    /// Restrict to drops in this split; all drops when absent.
    pub split: Option<Split>,
    /// Cap on slots per drop; all slots when absent.
    pub slots_per_drop: Option<usize>,
}

impl Default for HeuristicsConfig {
    fn default() -> Self {
        Self {
            split: Some(Split::Test),
            slots_per_drop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub geometry: ArrayGeometry,
    pub channel: ChannelParams,
    pub scheduler: SchedulerConfig,
    pub link: LinkConfig,
    pub tam: TamConfig,
    pub nam: NamConfig,
    pub dataset: DatasetConfig,
    pub heuristics: HeuristicsConfig,
    pub power: PowerModel,
    pub fpo_mode: DistributionMode,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Scaled-down profile: 2000 drops of 10 slots on 12 PRBs.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            geometry: ArrayGeometry::default(),
            channel: ChannelParams::default(),
            scheduler: SchedulerConfig::default(),
            link: LinkConfig::default(),
            tam: TamConfig::default(),
            nam: NamConfig::default(),
            dataset: DatasetConfig::default(),
            heuristics: HeuristicsConfig::default(),
            power: PowerModel::default(),
            fpo_mode: DistributionMode::Paper,
            seeds: Seeds::default(),
        }
    }

    /// Full-scale profile: 500 drops of 2000 slots on 273 PRBs, 100 epochs.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.name = "full".into();
        c.link.n_prb = 273;
        c.dataset.drops = 500;
        c.dataset.slots_per_drop = 2000;
        c.nam.symmetric.epochs = 100;
        c.nam.asymmetric.epochs = 100;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}"))),
        }
    }

    /// Derives every seed (data, split, init and both training shuffles)
    /// from one base value.
    pub fn reseed(&mut self, base: u64) {
        self.seeds = Seeds {
            data: base,
            split: base.wrapping_add(1),
            init: base.wrapping_add(2),
        };
        self.nam.symmetric.seed = base.wrapping_add(3);
        self.nam.asymmetric.seed = base.wrapping_add(4);
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.channel.validate()?;
        self.nam.loss.validate()?;
        self.power.validate()?;
        let s = &self.scheduler;
        if s.k_max == 0 || s.users_per_drop == 0 {
            return Err(Error::InvalidArgument("k_max and users_per_drop must be positive".into()));
        }
        if s.k_max > u8::MAX as usize {
            return Err(Error::OutOfRange("k_max must fit in a byte".into()));
        }
        let l = &self.link;
        if l.n_prb == 0 || l.reference_prbs == 0 {
            return Err(Error::InvalidArgument("PRB counts must be positive".into()));
        }
        if l.prb_bandwidth_hz != self.channel.prb_bandwidth_hz {
            return Err(Error::InvalidArgument(
                "link and channel PRB bandwidths differ".into(),
            ));
        }
        self.link_params().validate()?;
        if self.tam.m_min > self.geometry.per_pol() {
            return Err(Error::OutOfRange(format!(
                "m_min {} exceeds {} elements",
                self.tam.m_min,
                self.geometry.per_pol()
            )));
        }
        if self.tam.family.num_classes(&self.geometry) > u8::MAX as usize {
            return Err(Error::OutOfRange("class count must fit in a byte".into()));
        }
        let sum: f64 = self.dataset.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.dataset.split.iter().any(|&f| f < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.dataset.split
            )));
        }
        if self.dataset.drops == 0 || self.dataset.slots_per_drop == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one drop and one slot".into()));
        }
        if self.dataset.drops > u32::MAX as usize || self.dataset.slots_per_drop > u32::MAX as usize {
            return Err(Error::OutOfRange("drop and slot counts must fit in 32 bits".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.tam.family.num_classes(&self.geometry)
    }

    fn band_scale(&self) -> f64 {
        self.link.n_prb as f64 / self.link.reference_prbs as f64
    }

    /// Rate target for the simulated bandwidth.
    pub fn r_min_bits(&self) -> f64 {
        self.tam.r_min_reference_bits * self.band_scale()
    }

    /// Equal power per stream and PRB: total power over the reference band
    /// shared by `k_max · L_k` streams.
    pub fn link_params(&self) -> LinkParams {
        let l = &self.link;
        let streams = (self.scheduler.k_max * l.streams_per_user) as f64;
        let noise_dbm = THERMAL_NOISE_DBM_HZ + 10.0 * l.prb_bandwidth_hz.log10() + l.noise_figure_db;
        LinkParams {
            stream_power_w: dbm_to_w(l.bs_power_dbm) / (l.reference_prbs as f64 * streams),
            noise_power_w: dbm_to_w(noise_dbm),
            prb_bandwidth_hz: l.prb_bandwidth_hz,
            slot_duration_s: l.slot_duration_s,
            se_cap: l.se_cap,
            streams_per_user: l.streams_per_user,
        }
    }

    pub fn fpo_params(&self) -> FpoParams {
        FpoParams {
            geometry: self.geometry,
            users: self.scheduler.k_max,
            rx_antennas: self.channel.n_rx,
            streams: self.link.streams_per_user,
            n_prb: self.link.n_prb,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn drop_seed(&self, drop: usize) -> u64 {
        mix_seed(self.seeds.data, drop as u64)
    }

    pub fn make_drop(&self, drop: usize) -> Result<Drop> {
        Drop::new(
            self.geometry,
            self.channel.clone(),
            self.scheduler.users_per_drop,
            self.drop_seed(drop),
        )
    }

    /// Split of every drop: a seeded permutation, then contiguous blocks.
    pub fn drop_splits(&self) -> Vec<Split> {
        let n = self.dataset.drops;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seeds.split));
        let n_train = (self.dataset.split[0] * n as f64).round() as usize;
        let n_val = ((self.dataset.split[1] * n as f64).round() as usize).min(n - n_train.min(n));
        let mut splits = vec![Split::Test; n];
        for (rank, &d) in order.iter().enumerate() {
            splits[d] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        splits
    }
}

/// Channels, schedule and muting problem of one slot.
pub struct SlotContext {
    pub drop: usize,
    pub slot: usize,
    pub scheduled: Vec<usize>,
    pub problem: TamProblem,
}

impl SlotContext {
    pub fn new(cfg: &ExperimentConfig, drop: &Drop, drop_idx: usize, slot: usize) -> Result<Self> {
        let channels = drop.realize(slot as u64, cfg.link.n_prb)?;
        let covs = channels
            .users
            .iter()
            .map(|u| pol_avg_covariance(&u.prbs, &cfg.geometry))
            .collect::<Result<Vec<_>>>()?;
        let scheduled = schedule_users(&covs, cfg.scheduler.k_max, cfg.scheduler.corr_threshold)?;
        let users = scheduled
            .iter()
            .map(|&k| ScheduledUser {
                prbs: channels.users[k].prbs.clone(),
                r_avg: covs[k].clone(),
            })
            .collect();
        let problem = TamProblem::from_users(cfg.geometry, users, cfg.link_params(), cfg.r_min_bits(), cfg.tam.m_min)?;
        Ok(Self {
            drop: drop_idx,
            slot,
            scheduled,
            problem,
        })
    }

    /// Classifier input from full-array precoders.
    pub fn features(&self, k_max: usize) -> Result<Vec<f32>> {
        let full = AntennaMask::full(self.problem.n_elements());
        let precoders = self.problem.precoders(&full)?;
        let channels: Vec<&[crate::linalg::CMat]> = self.problem.users.iter().map(|u| u.prbs.as_slice()).collect();
        featurize(&channels, &precoders, &self.problem.geometry, k_max)
    }

    /// Labeled sample from the fixed-configuration scan.
    pub fn sample(&self, cfg: &ExperimentConfig, split: Split) -> Result<Sample> {
        let (class, sol) = fixed_config_tam(&self.problem, cfg.tam.family)?;
        Ok(Sample {
            features: self.features(cfg.scheduler.k_max)?,
            label: class.0,
            meta: SampleMeta {
                drop: self.drop as u32,
                slot: self.slot as u32,
                scheduled: self.scheduled.len() as u8,
                infeasible: !sol.feasible,
                split,
            },
        })
    }
}

/// Runs `f` on every slot of the given drops in parallel and returns results
/// in `(drop, slot)` order.
fn map_slots<T: Send>(
    cfg: &ExperimentConfig,
    drops: &[usize],
    slots: usize,
    f: impl Fn(&SlotContext) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let per_drop: Vec<Vec<T>> = drops
        .par_iter()
        .map(|&d| {
            let drop = cfg.make_drop(d)?;
            (0..slots)
                .map(|s| f(&SlotContext::new(cfg, &drop, d, s)?))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_drop.into_iter().flatten().collect())
}

pub const DATASET_MAGIC: &[u8; 8] = b"AMUTEDS\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub config_hash: String,
    pub geometry: ArrayGeometry,
    pub k_max: usize,
    pub classes: usize,
    pub feature_len: usize,
    pub samples: usize,
    pub infeasible: usize,
    pub data_seed: u64,
    pub split_seed: u64,
}

/// Labeled samples plus the header describing how they were produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

const FLAG_INFEASIBLE: u8 = 1;

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.meta.split == split).cloned().collect()
    }

    pub fn infeasible_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.header.infeasible as f64 / self.samples.len() as f64
    }

    /// Label counts per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.header.classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Binary layout: magic, `u32` version, `u32` header length, JSON header,
    /// then per sample `drop u32`, `slot u32`, `scheduled u8`, `flags u8`,
    /// `split u8`, `label u8` and the features as `f32`, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let rec = 12 + 4 * self.header.feature_len;
        let mut out = Vec::with_capacity(16 + header.len() + rec * self.samples.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.samples {
            if s.features.len() != self.header.feature_len {
                return Err(Error::DimensionMismatch("sample feature length".into()));
            }
            out.extend_from_slice(&s.meta.drop.to_le_bytes());
            out.extend_from_slice(&s.meta.slot.to_le_bytes());
            out.push(s.meta.scheduled);
            out.push(if s.meta.infeasible { FLAG_INFEASIBLE } else { 0 });
            out.push(s.meta.split.code());
            out.push(s.label as u8);
            for v in &s.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != DATASET_MAGIC {
            return Err(bad("not a dataset file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        if u32::from_le_bytes(word) != DATASET_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut word).map_err(|_| bad("truncated header length"))?;
        let hlen = u32::from_le_bytes(word) as usize;
        if r.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: DatasetHeader = serde_json::from_slice(&r[..hlen]).map_err(|e| bad(&e.to_string()))?;
        r = &r[hlen..];
        let rec = 12 + 4 * header.feature_len;
        if r.len() != rec * header.samples {
            return Err(bad(&format!(
                "header announces {} samples but {} record bytes follow",
                header.samples,
                r.len()
            )));
        }
        let samples = r
            .chunks_exact(rec)
            .map(|c| {
                let u32_at = |i: usize| u32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes"));
                let split = Split::from_code(c[10]).ok_or_else(|| bad("unknown split code"))?;
                let label = c[11] as usize;
                if label >= header.classes {
                    return Err(bad("label out of range"));
                }
                let features = c[12..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                Ok(Sample {
                    features,
                    label,
                    meta: SampleMeta {
                        drop: u32_at(0),
                        slot: u32_at(4),
                        scheduled: c[8],
                        infeasible: c[9] & FLAG_INFEASIBLE != 0,
                        split,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails unless the file was produced by `cfg`.
    pub fn check_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.header.config_hash != cfg.hash() {
            return Err(Error::Invariant(format!(
                "dataset config hash {} does not match config {}",
                self.header.config_hash,
                cfg.hash()
            )));
        }
        Ok(())
    }
}

/// Labels every slot of every drop with the fixed-configuration scan.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let splits = cfg.drop_splits();
    let drops: Vec<usize> = (0..cfg.dataset.drops).collect();
    let samples = map_slots(cfg, &drops, cfg.dataset.slots_per_drop, |ctx| {
        ctx.sample(cfg, splits[ctx.drop])
    })?;
    let infeasible = samples.iter().filter(|s| s.meta.infeasible).count();
    if infeasible > 0 {
        log::warn!(
            "{infeasible} of {} slots are infeasible even at the full array",
            samples.len()
        );
    }
    Ok(Dataset {
        header: DatasetHeader {
            version: DATASET_VERSION,
            config_hash: cfg.hash(),
            geometry: cfg.geometry,
            k_max: cfg.scheduler.k_max,
            classes: cfg.classes(),
            feature_len: cfg.geometry.per_pol() * FEATURE_WIDTH * cfg.scheduler.k_max,
            samples: samples.len(),
            infeasible,
            data_seed: cfg.seeds.data,
            split_seed: cfg.seeds.split,
        },
        samples,
    })
}

/// Result of one solver on one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub solver: SolverId,
    pub active_elements: usize,
    pub feasible: bool,
    pub fpo: f64,
    pub evaluations: usize,
    pub spectral_efficiency: Vec<f64>,
    pub rate_bits: Vec<f64>,
}

impl SolverOutcome {
    fn from_solution(s: &TamSolution) -> Self {
        Self {
            solver: s.solver,
            active_elements: s.active_elements,
            feasible: s.feasible,
            fpo: s.fpo_consumed,
            evaluations: s.evaluations,
            spectral_efficiency: s.rates.iter().map(|r| r.spectral_efficiency).collect(),
            rate_bits: s.rates.iter().map(|r| r.rate_bits).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub drop: usize,
    pub slot: usize,
    pub scheduled: usize,
    pub label: usize,
    pub outcomes: Vec<SolverOutcome>,
}

/// Per-slot solver comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRun {
    pub config_hash: String,
    pub seeds: Seeds,
    pub solvers: Vec<SolverId>,
    pub records: Vec<SlotRecord>,
}

/// Verifies the solution invariants that hold for every solver.
pub fn check_solution(problem: &TamProblem, sol: &TamSolution) -> Result<()> {
    if sol.active_elements != 2 * sol.mask.popcount() {
        return Err(Error::Invariant(format!("{}: active count mismatch", sol.solver.name())));
    }
    if sol.feasible {
        let e = problem.evaluate(&sol.mask)?;
        if !e.feasible {
            return Err(Error::Invariant(format!(
                "{}: solution flagged feasible fails recomputation",
                sol.solver.name()
            )));
        }
    }
    Ok(())
}

/// Runs greedy, sequential and fixed-configuration search (and the
/// classifier when given) on the configured drops.
pub fn run_heuristics(cfg: &ExperimentConfig, model: Option<&NamModel>) -> Result<HeuristicRun> {
    cfg.validate()?;
    let splits = cfg.drop_splits();
    let drops: Vec<usize> = (0..cfg.dataset.drops)
        .filter(|&d| cfg.heuristics.split.is_none_or(|s| splits[d] == s))
        .collect();
    let slots = cfg
        .heuristics
        .slots_per_drop
        .map_or(cfg.dataset.slots_per_drop, |s| s.min(cfg.dataset.slots_per_drop));
    let nn_fpo = match model {
        Some(m) => {
            if m.classes != cfg.classes() || m.in_channels() != cfg.scheduler.k_max {
                return Err(Error::InvalidArgument("model does not match the configuration".into()));
            }
            Some(fpo_nn(&m.arch, &cfg.geometry, cfg.scheduler.k_max, cfg.classes())?.total)
        }
        None => None,
    };
    let records = map_slots(cfg, &drops, slots, |ctx| {
        let p = &ctx.problem;
        let greedy = greedy_tam(p)?;
        let seq = sequential_tam(p)?;
        let (class, fixed) = fixed_config_tam(p, cfg.tam.family)?;
        for s in [&greedy, &seq, &fixed] {
            check_solution(p, s)?;
        }
        let mut outcomes: Vec<SolverOutcome> = [&greedy, &seq, &fixed].iter().map(|s| SolverOutcome::from_solution(s)).collect();
        if let (Some(m), Some(fpo)) = (model, nn_fpo) {
            let y = m.predict(&ctx.features(cfg.scheduler.k_max)?)?;
            let mask = crate::tam::family_class_to_mask(cfg.tam.family, crate::tam::ColumnClass(y), &cfg.geometry)?;
            let mut sol = evaluate_mask(p, mask, SolverId::Nam)?;
            sol.fpo_consumed = fpo;
            sol.evaluations = 0;
            outcomes.push(SolverOutcome::from_solution(&sol));
        }
        Ok(SlotRecord {
            drop: ctx.drop,
            slot: ctx.slot,
            scheduled: ctx.scheduled.len(),
            label: class.0,
            outcomes,
        })
    })?;
    let mut solvers = vec![SolverId::Greedy, SolverId::Sequential, fixed_solver_id(cfg.tam.family)];
    if model.is_some() {
        solvers.push(SolverId::Nam);
    }
    Ok(HeuristicRun {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        solvers,
        records,
    })
}

fn fixed_solver_id(family: ConfigFamily) -> SolverId {
    match family {
        ConfigFamily::Columns => SolverId::FixedColumn,
        ConfigFamily::Rows => SolverId::FixedRow,
    }
}

impl HeuristicRun {
    pub fn outcomes(&self, solver: SolverId) -> Vec<&SolverOutcome> {
        self.records
            .iter()
            .flat_map(|r| r.outcomes.iter().filter(move |o| o.solver == solver))
            .collect()
    }
}

/// Right-continuous empirical CDF: sorted distinct values with the fraction
/// of samples at or below each.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Empty("CDF of an empty sequence".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("CDF input contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Trains the symmetric phase from a fresh seeded model.
pub fn train_symmetric(cfg: &ExperimentConfig, data: &Dataset) -> Result<(NamModel, crate::nam::History)> {
    let mut model = NamModel::new(
        cfg.nam.architecture.clone(),
        cfg.geometry.per_pol(),
        cfg.scheduler.k_max,
        cfg.classes(),
        cfg.seeds.init,
    )?;
    model.provenance.config_hash = Some(cfg.hash());
    let hist = crate::nam::train(
        &mut model,
        &data.split(Split::Train),
        &data.split(Split::Validation),
        crate::nam::Phase::Symmetric,
        &cfg.nam.loss,
        &cfg.nam.symmetric,
    )?;
    Ok((model, hist))
}

/// Retrains `model` with the asymmetric loss.
pub fn train_asymmetric(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &NamModel,
    loss: &LossConfig,
) -> Result<(NamModel, crate::nam::History)> {
    let mut m = model.clone();
    let hist = crate::nam::train(
        &mut m,
        &data.split(Split::Train),
        &data.split(Split::Validation),
        crate::nam::Phase::Asymmetric,
        loss,
        &cfg.nam.asymmetric,
    )?;
    Ok((m, hist))
}

/// Metrics on one split.
pub fn evaluate_split(cfg: &ExperimentConfig, data: &Dataset, model: &NamModel, split: Split) -> Result<EvalMetrics> {
    evaluate(model, &data.split(split), cfg.nam.include_infeasible)
}

/// Named evaluation result persisted by the `eval` step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub config_hash: String,
    pub seeds: Seeds,
    pub model: String,
    pub split: Split,
    pub metrics: EvalMetrics,
}

/// Inputs of the report bundle.
pub struct ReportInputs<'a> {
    pub config: &'a ExperimentConfig,
    pub heuristics: Option<&'a HeuristicRun>,
    pub metrics: &'a [MetricsArtifact],
}

fn provenance_line(cfg: &ExperimentConfig) -> String {
    format!(
        "# config_hash={} seed_data={} seed_split={} seed_init={}\n",
        cfg.hash(),
        cfg.seeds.data,
        cfg.seeds.split,
        cfg.seeds.init
    )
}

/// Report files as `(file name, contents)` in a fixed order.
pub fn report_files(inputs: &ReportInputs) -> Result<Vec<(String, String)>> {
    let cfg = inputs.config;
    let head = provenance_line(cfg);
    let mut files = Vec::new();

    let fpo = fpo_report(&cfg.fpo_params(), &cfg.nam.architecture, cfg.fpo_mode)?;
    files.push(("fpo.csv".to_string(), head.clone() + &fpo.to_csv()));
    files.push(("fpo.txt".to_string(), head.clone() + &fpo.to_text()));
    let reference = fpo_report(&FpoParams::reference(), &cfg.nam.architecture, cfg.fpo_mode)?;
    files.push(("fpo_reference.csv".to_string(), head.clone() + &reference.to_csv()));

    let run = inputs
        .heuristics
        .ok_or_else(|| Error::Missing("heuristic run (heuristics.json)".into()))?;
    if run.config_hash != cfg.hash() {
        return Err(Error::Invariant("heuristic run was produced by a different config".into()));
    }
    let mut energy = String::from("solver,slots,mean_active,saving_fraction,frontend_w,feasible_fraction,mean_fpo\n");
    let mut active_cdf = String::from("solver,active_elements,cdf\n");
    let mut se_cdf = String::from("solver,spectral_efficiency,cdf\n");
    for &solver in &run.solvers {
        let outs = run.outcomes(solver);
        if outs.is_empty() {
            continue;
        }
        let counts: Vec<usize> = outs.iter().map(|o| o.active_elements).collect();
        let e = energy_report_from_counts(&counts, &cfg.geometry, &cfg.power)?;
        let feasible = outs.iter().filter(|o| o.feasible).count() as f64 / outs.len() as f64;
        let mean_fpo = outs.iter().map(|o| o.fpo).sum::<f64>() / outs.len() as f64;
        let _ = writeln!(
            energy,
            "{},{},{},{},{},{},{}",
            solver.name(),
            e.slots,
            e.mean_active,
            e.saving_fraction,
            e.frontend_w,
            feasible,
            mean_fpo
        );
        for (a, f) in &e.active_cdf {
            let _ = writeln!(active_cdf, "{},{a},{f}", solver.name());
        }
        let se: Vec<f64> = outs.iter().flat_map(|o| o.spectral_efficiency.iter().copied()).collect();
        for (v, f) in empirical_cdf(&se)? {
            let _ = writeln!(se_cdf, "{},{v},{f}", solver.name());
        }
    }
    files.push(("energy.csv".to_string(), head.clone() + &energy));
    files.push(("active_cdf.csv".to_string(), head.clone() + &active_cdf));
    files.push(("se_cdf.csv".to_string(), head.clone() + &se_cdf));

    if inputs.metrics.is_empty() {
        return Err(Error::Missing("classifier metrics (metrics_*.json)".into()));
    }
    let mut table = String::from("model,split,samples,accuracy,qos_guarantee\n");
    for m in inputs.metrics {
        let _ = writeln!(
            table,
            "{},{:?},{},{},{}",
            m.model, m.split, m.metrics.samples, m.metrics.accuracy, m.metrics.qos_guarantee
        );
        let mut conf = String::from("label");
        for j in 0..m.metrics.confusion.len() {
            let _ = write!(conf, ",pred_{j}");
        }
        conf.push('\n');
        for (i, row) in m.metrics.confusion.iter().enumerate() {
            let _ = write!(conf, "{i}");
            for v in row {
                let _ = write!(conf, ",{v}");
            }
            conf.push('\n');
        }
        files.push((format!("confusion_{}.csv", m.model), head.clone() + &conf));
    }
    files.insert(files.len() - inputs.metrics.len(), ("metrics.csv".to_string(), head + &table));
    Ok(files)
}

pub fn write_report(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report_files(inputs)?
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        })
        .collect()
}

/// Label distribution and feasibility over a small sample of slots; used to
/// sanity-check a configuration before a long run.
pub fn label_histogram(cfg: &ExperimentConfig, drops: usize, slots: usize) -> Result<(Vec<usize>, usize)> {
    let ids: Vec<usize> = (0..drops).collect();
    let labels = map_slots(cfg, &ids, slots, |ctx| {
        let (class, sol) = fixed_config_tam(&ctx.problem, cfg.tam.family)?;
        Ok((class.0, sol.feasible))
    })?;
    let mut h = vec![0; cfg.classes()];
    let mut infeasible = 0;
    for (c, ok) in labels {
        h[c] += 1;
        infeasible += usize::from(!ok);
    }
    Ok((h, infeasible))
}
