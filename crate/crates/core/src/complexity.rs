//! Analytic floating-point-operation (FPO) accounting for the muting solvers
//! and the classifier, plus frontend energy reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};
use crate::nam::Architecture;
use crate::tam::TamSolution;

/// Cost `F_i` of one evaluation round with `m_i` active antennas (both
/// polarizations): covariance and eigenvector terms of `m_i³/8` each, plus the
/// per-PRB receiver terms, for each of the `k` users.
pub fn fpo_iteration(m_i: usize, k: usize, n_k: usize, l_k: usize, n_prb: usize) -> f64 {
    let m = m_i as f64;
    let (nk, lk) = (n_k as f64, l_k as f64);
    let per_prb = nk * m * lk + nk * nk * lk + nk * lk * lk + lk * lk * lk;
    k as f64 * (m * m * m / 8.0 + m * m * m / 8.0 + n_prb as f64 * per_prb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FixedColumn,
    Sequential,
    Greedy,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Greedy, Algorithm::Sequential, Algorithm::FixedColumn];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FixedColumn => "fixed_column",
            Algorithm::Sequential => "sequential",
            Algorithm::Greedy => "greedy",
        }
    }
}

/// Weighting of the fixed-column class costs under a uniform class prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionMode {
    /// `w_i = i / N`.
    #[default]
    Paper,
    /// `w_i = (i + 1) / N`.
    Corrected,
}

/// Problem dimensions entering the FPO model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpoParams {
    pub geometry: ArrayGeometry,
    pub users: usize,
    pub rx_antennas: usize,
    pub streams: usize,
    pub n_prb: usize,
}

impl FpoParams {
    /// Dimensions used for the reference comparison: 2x8x4 array, 4 users
    /// with 4 antennas and 2 streams, 273 PRBs.
    pub fn reference() -> Self {
        Self {
            geometry: ArrayGeometry::default(),
            users: 4,
            rx_antennas: 4,
            streams: 2,
            n_prb: 273,
        }
    }

    fn f(&self, m_i: usize) -> f64 {
        fpo_iteration(m_i, self.users, self.rx_antennas, self.streams, self.n_prb)
    }

    /// Round cost of fixed-column class `y` (0-based).
    pub fn class_cost(&self, y: usize) -> f64 {
        self.f(2 * (y + 1) * self.geometry.m_row)
    }

    /// Round cost with `p` active elements per polarization.
    pub fn element_cost(&self, p: usize) -> f64 {
        self.f(2 * p)
    }
}

/// Expected FPOs per slot of a heuristic solver under the uniform prior.
pub fn fpo_algorithm(algorithm: Algorithm, params: &FpoParams, mode: DistributionMode) -> f64 {
    let g = &params.geometry;
    let half = g.per_pol();
    let m = g.total() as f64;
    match algorithm {
        Algorithm::FixedColumn => {
            let n = g.m_col as f64;
            (0..g.m_col)
                .map(|i| {
                    let w = match mode {
                        DistributionMode::Paper => i as f64 / n,
                        DistributionMode::Corrected => (i + 1) as f64 / n,
                    };
                    w * params.class_cost(i)
                })
                .sum()
        }
        Algorithm::Sequential => (1..=half)
            .map(|i| 2.0 * i as f64 / m * params.element_cost(i))
            .sum(),
        Algorithm::Greedy => (1..=half)
            .map(|i| 2.0 * i as f64 / m * (half + 1 - i) as f64 * params.element_cost(i))
            .sum(),
    }
}

/// Expected FPOs when the solver stops at step `s` with probability
/// `stop_probs[s]`. Step `i` is executed whenever the stop step is `≥ i`, so
/// each round cost is weighted by the survival probability.
///
/// Steps are classes for fixed-column and per-polarization counts minus one
/// for sequential and greedy.
pub fn fpo_with_distribution(algorithm: Algorithm, params: &FpoParams, stop_probs: &[f64]) -> Result<f64> {
    let steps = match algorithm {
        Algorithm::FixedColumn => params.geometry.m_col,
        Algorithm::Sequential | Algorithm::Greedy => params.geometry.per_pol(),
    };
    if stop_probs.len() != steps {
        return Err(Error::DimensionMismatch(format!(
            "{} stop probabilities for {steps} steps",
            stop_probs.len()
        )));
    }
    let half = params.geometry.per_pol();
    let mut survival: f64 = stop_probs.iter().sum();
    let mut total = 0.0;
    for (s, &p) in stop_probs.iter().enumerate() {
        let round = match algorithm {
            Algorithm::FixedColumn => params.class_cost(s),
            Algorithm::Sequential => params.element_cost(s + 1),
            Algorithm::Greedy => (half - s) as f64 * params.element_cost(s + 1),
        };
        total += survival * round;
        survival -= p;
    }
    Ok(total)
}

/// FPO breakdown of one classifier inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFpos {
    pub conv: f64,
    pub dense: Vec<f64>,
    pub input_prep: f64,
    pub total: f64,
}

/// Convolution cost `2·(a·b·n_i·n_k)·(x1−a+1)·(x2−b+1)`.
pub fn conv_fpos(kernel: (usize, usize), in_channels: usize, out_channels: usize, input: (usize, usize)) -> f64 {
    let (a, b) = kernel;
    let (x1, x2) = input;
    2.0 * (a * b * in_channels * out_channels) as f64 * ((x1 + 1 - a) * (x2 + 1 - b)) as f64
}

/// Dense layer cost `2·A·B`.
pub fn dense_fpos(inputs: usize, outputs: usize) -> f64 {
    2.0 * (inputs * outputs) as f64
}

/// Covariance plus dominant eigenvector per user on the per-polarization
/// averaged covariance of size `M/2`.
pub fn input_prep_fpos(geometry: &ArrayGeometry, users: usize) -> f64 {
    let m = geometry.per_pol() as f64;
    users as f64 * 2.0 * (m * m * m / 8.0)
}

pub fn fpo_nn(arch: &Architecture, geometry: &ArrayGeometry, users: usize, classes: usize) -> Result<NnFpos> {
    let shape = arch.shapes(geometry.per_pol(), users, classes)?;
    let conv = conv_fpos(arch.kernel, users, arch.conv_channels, (geometry.per_pol(), crate::nam::FEATURE_WIDTH));
    let dense: Vec<f64> = shape.dense.iter().map(|&(a, b)| dense_fpos(a, b)).collect();
    let input_prep = input_prep_fpos(geometry, users);
    let total = conv + dense.iter().sum::<f64>() + input_prep;
    Ok(NnFpos {
        conv,
        dense,
        input_prep,
        total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmFpos {
    pub algorithm: Algorithm,
    pub fpos_per_slot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpoReport {
    pub params: FpoParams,
    pub mode: DistributionMode,
    /// `(M_i, F_i)` for every per-polarization count `M_i / 2 = 1..=M/2`.
    pub iteration_costs: Vec<(usize, f64)>,
    pub algorithms: Vec<AlgorithmFpos>,
    pub nn: NnFpos,
    pub greedy_over_nn: f64,
    pub fixed_column_over_nn: f64,
    pub input_prep_share: f64,
}

pub fn fpo_report(params: &FpoParams, arch: &Architecture, mode: DistributionMode) -> Result<FpoReport> {
    let nn = fpo_nn(arch, &params.geometry, params.users, params.geometry.m_col)?;
    let algorithms: Vec<AlgorithmFpos> = Algorithm::ALL
        .iter()
        .map(|&a| AlgorithmFpos {
            algorithm: a,
            fpos_per_slot: fpo_algorithm(a, params, mode),
        })
        .collect();
    let get = |a: Algorithm| {
        algorithms
            .iter()
            .find(|x| x.algorithm == a)
            .map(|x| x.fpos_per_slot)
            .unwrap_or(0.0)
    };
    Ok(FpoReport {
        params: *params,
        mode,
        iteration_costs: (1..=params.geometry.per_pol())
            .map(|p| (2 * p, params.element_cost(p)))
            .collect(),
        greedy_over_nn: get(Algorithm::Greedy) / nn.total,
        fixed_column_over_nn: get(Algorithm::FixedColumn) / nn.total,
        input_prep_share: nn.input_prep / nn.total,
        algorithms,
        nn,
    })
}

impl FpoReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>16}", "algorithm", "fpos_per_slot");
        for a in &self.algorithms {
            let _ = writeln!(s, "{:<14} {:>16.0}", a.algorithm.name(), a.fpos_per_slot);
        }
        let _ = writeln!(s, "{:<14} {:>16.0}", "nn", self.nn.total);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<22} {:>10.2}", "greedy / nn", self.greedy_over_nn);
        let _ = writeln!(s, "{:<22} {:>10.2}", "fixed_column / nn", self.fixed_column_over_nn);
        let _ = writeln!(s, "{:<22} {:>10.3}", "nn input-prep share", self.input_prep_share);
        s
    }

    /// `algorithm,fpos_per_slot` rows including the classifier.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("algorithm,fpos_per_slot\n");
        for a in &self.algorithms {
            let _ = writeln!(s, "{},{}", a.algorithm.name(), a.fpos_per_slot);
        }
        let _ = writeln!(s, "nn,{}", self.nn.total);
        s
    }
}

/// Per-active-antenna analog frontend power draw in watts. The defaults are
/// unit placeholders; only relative savings are meaningful with them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerModel {
    pub tx_conversion_w: f64,
    pub power_amplifier_w: f64,
    pub rx_conversion_w: f64,
    pub low_noise_amplifier_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            tx_conversion_w: 1.0,
            power_amplifier_w: 1.0,
            rx_conversion_w: 1.0,
            low_noise_amplifier_w: 1.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let terms = [
            self.tx_conversion_w,
            self.power_amplifier_w,
            self.rx_conversion_w,
            self.low_noise_amplifier_w,
        ];
        if terms.iter().all(|t| t.is_finite() && *t >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("power terms must be finite and non-negative".into()))
        }
    }

    pub fn per_antenna_w(&self) -> f64 {
        self.tx_conversion_w + self.power_amplifier_w + self.rx_conversion_w + self.low_noise_amplifier_w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub slots: usize,
    pub total_antennas: usize,
    pub mean_active: f64,
    pub saving_fraction: f64,
    pub frontend_w: f64,
    pub full_array_w: f64,
    /// `(active count, fraction of slots with at most that many)`.
    pub active_cdf: Vec<(usize, f64)>,
}

pub fn energy_report(solutions: &[TamSolution], geometry: &ArrayGeometry, power: &PowerModel) -> Result<EnergyReport> {
    let counts: Vec<usize> = solutions.iter().map(|s| s.active_elements).collect();
    energy_report_from_counts(&counts, geometry, power)
}

/// Same as [`energy_report`] on raw active-antenna counts.
pub fn energy_report_from_counts(
    active: &[usize],
    geometry: &ArrayGeometry,
    power: &PowerModel,
) -> Result<EnergyReport> {
    if active.is_empty() {
        return Err(Error::Empty("energy report needs at least one slot".into()));
    }
    power.validate()?;
    let m = geometry.total();
    if let Some(&bad) = active.iter().find(|&&a| a > m) {
        return Err(Error::OutOfRange(format!("{bad} active antennas of {m}")));
    }
    let mean_active = active.iter().sum::<usize>() as f64 / active.len() as f64;
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut active_cdf: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match active_cdf.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => active_cdf.push((v, frac)),
        }
    }
    Ok(EnergyReport {
        slots: active.len(),
        total_antennas: m,
        mean_active,
        saving_fraction: 1.0 - mean_active / m as f64,
        frontend_w: mean_active * power.per_antenna_w(),
        full_array_w: m as f64 * power.per_antenna_w(),
        active_cdf,
    })
}
