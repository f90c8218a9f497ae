//! Transmit antenna muting: per-polarization masks, the feasibility test and
//! the non-learned solvers (greedy, sequential, fixed column).

use serde::{Deserialize, Serialize};

use crate::channel::{pol_avg_covariance, ArrayGeometry, ChannelSet};
use crate::complexity::fpo_iteration;
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::txrx::{masked_eigen_beamformer, user_rate, LinkParams, UserRate};

/// Binary activation over co-located element pairs (length `M/2`). Both
/// polarizations of an element switch together.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaMask {
    bits: Vec<bool>,
}

impl AntennaMask {
    pub fn empty(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_indices(n: usize, active: &[usize]) -> Result<Self> {
        let mut m = Self::empty(n);
        for &i in active {
            if i >= n {
                return Err(Error::OutOfRange(format!("element {i} of {n}")));
            }
            m.bits[i] = true;
        }
        Ok(m)
    }

    /// First `count` elements in index order.
    pub fn prefix(n: usize, count: usize) -> Self {
        Self {
            bits: (0..n).map(|i| i < count).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn activate(&mut self, i: usize) {
        self.bits[i] = true;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Active antennas across both polarizations.
    pub fn active_elements(&self) -> usize {
        2 * self.popcount()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Diagonal of the full-array activation matrix, `[a; a]`.
    pub fn full_array_activation(&self) -> Vec<bool> {
        self.bits.iter().chain(self.bits.iter()).copied().collect()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Zeroes the columns of `h` at muted antennas in both polarization blocks.
pub fn apply_mask(h: &CMat, mask: &AntennaMask, geometry: &ArrayGeometry) -> Result<CMat> {
    if h.ncols() != geometry.total() || mask.len() != geometry.per_pol() {
        return Err(Error::DimensionMismatch(format!(
            "channel width {} / mask length {} vs geometry M = {}",
            h.ncols(),
            mask.len(),
            geometry.total()
        )));
    }
    let act = mask.full_array_activation();
    let mut out = h.clone();
    for (j, &on) in act.iter().enumerate() {
        if !on {
            out.column_mut(j).fill(C64::new(0.0, 0.0));
        }
    }
    Ok(out)
}

/// Fixed array configuration family used by the class-based solvers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigFamily {
    /// Class `y` activates columns `0..=y`.
    #[default]
    Columns,
    /// Class `y` activates rows `0..=y` of every column.
    Rows,
}

impl ConfigFamily {
    pub fn num_classes(self, geometry: &ArrayGeometry) -> usize {
        match self {
            ConfigFamily::Columns => geometry.m_col,
            ConfigFamily::Rows => geometry.m_row,
        }
    }
}

/// Index of a fixed array configuration; `N = m_col` classes for columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnClass(pub usize);

/// Mask activating the first `y + 1` columns.
pub fn class_to_mask(y: ColumnClass, geometry: &ArrayGeometry) -> Result<AntennaMask> {
    family_class_to_mask(ConfigFamily::Columns, y, geometry)
}

pub fn family_class_to_mask(family: ConfigFamily, y: ColumnClass, geometry: &ArrayGeometry) -> Result<AntennaMask> {
    let n = family.num_classes(geometry);
    if y.0 >= n {
        return Err(Error::OutOfRange(format!("class {} of {n}", y.0)));
    }
    let bits = (0..geometry.per_pol())
        .map(|i| {
            let (col, row) = geometry.position(i);
            match family {
                ConfigFamily::Columns => col <= y.0,
                ConfigFamily::Rows => row <= y.0,
            }
        })
        .collect();
    Ok(AntennaMask { bits })
}

/// Channels and pre-computed `R_avg` of one co-scheduled user.
#[derive(Clone, Debug)]
pub struct ScheduledUser {
    pub prbs: Vec<CMat>,
    pub r_avg: CMat,
}

/// One slot's muting problem: minimize active elements subject to every user
/// reaching `r_min` bits and at least `m_min` active elements per polarization.
#[derive(Clone, Debug)]
pub struct TamProblem {
    pub geometry: ArrayGeometry,
    pub users: Vec<ScheduledUser>,
    pub link: LinkParams,
    pub r_min: f64,
    pub m_min: usize,
}

/// Rates of every user under one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rates: Vec<UserRate>,
    pub sum_rate: f64,
    /// Every user meets `r_min`.
    pub rates_ok: bool,
    /// `rates_ok` and the mask meets `m_min`.
    pub feasible: bool,
}

impl TamProblem {
    pub fn new(
        channels: &ChannelSet,
        scheduled: &[usize],
        link: LinkParams,
        r_min: f64,
        m_min: usize,
    ) -> Result<Self> {
        if scheduled.is_empty() {
            return Err(Error::InvalidArgument("no scheduled users".into()));
        }
        let users = scheduled
            .iter()
            .map(|&k| {
                let u = channels
                    .users
                    .get(k)
                    .ok_or_else(|| Error::OutOfRange(format!("user {k} of {}", channels.num_users())))?;
                Ok(ScheduledUser {
                    r_avg: pol_avg_covariance(&u.prbs, &channels.geometry)?,
                    prbs: u.prbs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_users(channels.geometry, users, link, r_min, m_min)
    }

    pub fn from_users(
        geometry: ArrayGeometry,
        users: Vec<ScheduledUser>,
        link: LinkParams,
        r_min: f64,
        m_min: usize,
    ) -> Result<Self> {
        link.validate()?;
        if users.is_empty() {
            return Err(Error::InvalidArgument("no scheduled users".into()));
        }
        if r_min.is_nan() {
            return Err(Error::InvalidArgument("r_min is NaN".into()));
        }
        Ok(Self {
            geometry,
            users,
            link,
            r_min,
            m_min,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.per_pol()
    }

    pub fn n_rx(&self) -> usize {
        self.users[0].prbs[0].nrows()
    }

    pub fn n_prb(&self) -> usize {
        self.users[0].prbs.len()
    }

    /// Eigen-beamformers of every user on `mask`.
    pub fn precoders(&self, mask: &AntennaMask) -> Result<Vec<CMat>> {
        let active = mask.active_indices();
        self.users
            .iter()
            .map(|u| {
                masked_eigen_beamformer(
                    &u.r_avg,
                    &active,
                    self.link.streams_per_user,
                    self.link.stream_power_w,
                    &self.geometry,
                )
            })
            .collect()
    }

    pub fn evaluate(&self, mask: &AntennaMask) -> Result<Evaluation> {
        if mask.len() != self.n_elements() {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} vs {} elements",
                mask.len(),
                self.n_elements()
            )));
        }
        let rates = self
            .precoders(mask)?
            .iter()
            .zip(&self.users)
            .map(|(w, u)| user_rate(&u.prbs, w, &self.link))
            .collect::<Result<Vec<_>>>()?;
        let sum_rate = rates.iter().map(|r| r.rate_bits).sum();
        let rates_ok = rates.iter().all(|r| r.rate_bits >= self.r_min);
        let feasible = rates_ok && mask.popcount() >= self.m_min;
        Ok(Evaluation {
            rates,
            sum_rate,
            rates_ok,
            feasible,
        })
    }

    /// FPOs of one evaluation round on `popcount` active elements per polarization.
    pub fn round_cost(&self, popcount: usize) -> f64 {
        fpo_iteration(
            2 * popcount,
            self.users.len(),
            self.n_rx(),
            self.link.streams_per_user,
            self.n_prb(),
        )
    }
}

/// Feasibility of `mask` together with the per-user rates behind the verdict.
pub fn is_feasible(problem: &TamProblem, mask: &AntennaMask) -> Result<(bool, Vec<UserRate>)> {
    let e = problem.evaluate(mask)?;
    Ok((e.feasible, e.rates))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverId {
    Greedy,
    Sequential,
    FixedColumn,
    FixedRow,
    FullArray,
    Nam,
}

impl SolverId {
    pub fn name(self) -> &'static str {
        match self {
            SolverId::Greedy => "greedy",
            SolverId::Sequential => "sequential",
            SolverId::FixedColumn => "fixed_column",
            SolverId::FixedRow => "fixed_row",
            SolverId::FullArray => "full_array",
            SolverId::Nam => "nam",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamSolution {
    pub mask: AntennaMask,
    pub rates: Vec<UserRate>,
    pub feasible: bool,
    /// `2 * popcount(mask)`.
    pub active_elements: usize,
    pub solver: SolverId,
    /// Sum of `F_i` over every evaluation round actually executed.
    pub fpo_consumed: f64,
    /// Number of mask evaluations.
    pub evaluations: usize,
}

/// Tracks evaluation rounds and their FPO cost.
struct Meter<'a> {
    problem: &'a TamProblem,
    fpo: f64,
    evaluations: usize,
}

impl<'a> Meter<'a> {
    fn new(problem: &'a TamProblem) -> Self {
        Self {
            problem,
            fpo: 0.0,
            evaluations: 0,
        }
    }

    fn evaluate(&mut self, mask: &AntennaMask) -> Result<Evaluation> {
        self.evaluations += 1;
        self.fpo += self.problem.round_cost(mask.popcount());
        self.problem.evaluate(mask)
    }

    fn finish(self, mask: AntennaMask, eval: Evaluation, feasible: bool, solver: SolverId) -> TamSolution {
        TamSolution {
            active_elements: mask.active_elements(),
            mask,
            rates: eval.rates,
            feasible,
            solver,
            fpo_consumed: self.fpo,
            evaluations: self.evaluations,
        }
    }
}

/// Greedy element-by-element search.
///
/// Each round tries every remaining element. If some candidates meet all rate
/// constraints, the one with the highest sum rate is kept and the search stops
/// once `m_min` is also met; otherwise the best infeasible candidate is kept
/// and the search continues. Sum-rate ties go to the lower element index.
/// Exhausting the array without success returns the full mask, infeasible.
pub fn greedy_tam(problem: &TamProblem) -> Result<TamSolution> {
    let n = problem.n_elements();
    let mut meter = Meter::new(problem);
    let mut selected = AntennaMask::empty(n);
    let mut last: Option<Evaluation> = None;

    for _round in 1..=n {
        let mut best_ok: Option<(usize, Evaluation)> = None;
        let mut best_other: Option<(usize, Evaluation)> = None;
        for i in (0..n).filter(|&i| !selected.is_active(i)) {
            let mut cand = selected.clone();
            cand.activate(i);
            let e = meter.evaluate(&cand)?;
            let slot = if e.rates_ok { &mut best_ok } else { &mut best_other };
            if slot.as_ref().is_none_or(|(_, b)| e.sum_rate > b.sum_rate) {
                *slot = Some((i, e));
            }
        }
        let (i, e) = match (best_ok, best_other) {
            (Some(p), _) => p,
            (None, Some(q)) => q,
            (None, None) => break,
        };
        selected.activate(i);
        if e.rates_ok && selected.popcount() >= problem.m_min {
            return Ok(meter.finish(selected, e, true, SolverId::Greedy));
        }
        last = Some(e);
    }

    let full = AntennaMask::full(n);
    let eval = match last {
        Some(e) if selected == full => e,
        _ => problem.evaluate(&full)?,
    };
    Ok(meter.finish(full, eval, false, SolverId::Greedy))
}

/// Activates elements in index order and stops at the first prefix that meets
/// every constraint.
pub fn sequential_tam(problem: &TamProblem) -> Result<TamSolution> {
    let n = problem.n_elements();
    let mut meter = Meter::new(problem);
    let mut last = None;
    for i in 1..=n {
        let mask = AntennaMask::prefix(n, i);
        let e = meter.evaluate(&mask)?;
        if e.feasible {
            return Ok(meter.finish(mask, e, true, SolverId::Sequential));
        }
        last = Some(e);
    }
    let eval = match last {
        Some(e) => e,
        None => problem.evaluate(&AntennaMask::full(n))?,
    };
    Ok(meter.finish(AntennaMask::full(n), eval, false, SolverId::Sequential))
}

/// Scans fixed configurations in increasing size and returns the first
/// feasible one, or the largest class flagged infeasible.
pub fn fixed_config_tam(problem: &TamProblem, family: ConfigFamily) -> Result<(ColumnClass, TamSolution)> {
    let n_classes = family.num_classes(&problem.geometry);
    let solver = match family {
        ConfigFamily::Columns => SolverId::FixedColumn,
        ConfigFamily::Rows => SolverId::FixedRow,
    };
    let mut meter = Meter::new(problem);
    let mut last = None;
    for y in 0..n_classes {
        let mask = family_class_to_mask(family, ColumnClass(y), &problem.geometry)?;
        let e = meter.evaluate(&mask)?;
        if e.feasible {
            return Ok((ColumnClass(y), meter.finish(mask, e, true, solver)));
        }
        last = Some((mask, e));
    }
    let (mask, e) = last.ok_or_else(|| Error::InvalidArgument("geometry has no classes".into()))?;
    Ok((ColumnClass(n_classes - 1), meter.finish(mask, e, false, solver)))
}

pub fn fixed_column_tam(problem: &TamProblem) -> Result<(ColumnClass, TamSolution)> {
    fixed_config_tam(problem, ConfigFamily::Columns)
}

/// Rates of an externally chosen mask (e.g. a classifier output), packaged as
/// a solution. One evaluation is charged.
pub fn evaluate_mask(problem: &TamProblem, mask: AntennaMask, solver: SolverId) -> Result<TamSolution> {
    let mut meter = Meter::new(problem);
    let e = meter.evaluate(&mask)?;
    let feasible = e.feasible;
    Ok(meter.finish(mask, e, feasible, solver))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_drop, schedule_users};
    use crate::linalg::c;

    fn link() -> LinkParams {
        LinkParams {
            stream_power_w: 1.0,
            noise_power_w: 1.0,
            prb_bandwidth_hz: 1.0,
            slot_duration_s: 1.0,
            se_cap: 8.0,
            streams_per_user: 2,
        }
    }

    /// Small problem on a 2x2x2 array with unit-scale channels.
    fn toy_problem(seed: u64, users: usize, r_min: f64, m_min: usize) -> TamProblem {
        let g = ArrayGeometry::new(4, 2).unwrap();
        let mut set = generate_drop(g, users, 2, 4, seed).unwrap();
        // rescale to unit average power
        for u in &mut set.users {
            let p: f64 = u.prbs.iter().map(|h| h.norm_squared()).sum::<f64>() / (u.prbs.len() * 4 * 16) as f64;
            for h in &mut u.prbs {
                *h /= c(p.sqrt(), 0.0);
            }
        }
        let sched: Vec<usize> = (0..users).collect();
        TamProblem::new(&set, &sched, link(), r_min, m_min).unwrap()
    }

    #[test]
    fn mask_basics() {
        let g = ArrayGeometry::new(8, 4).unwrap();
        let h = CMat::from_fn(4, 64, |i, j| c(1.0 + i as f64, j as f64));
        assert_eq!(apply_mask(&h, &AntennaMask::full(32), &g).unwrap(), h);
        assert_eq!(apply_mask(&h, &AntennaMask::empty(32), &g).unwrap(), CMat::zeros(4, 64));
        let only0 = AntennaMask::from_indices(32, &[0]).unwrap();
        let m = apply_mask(&h, &only0, &g).unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&j| m.column(j).norm() > 0.0).collect();
        assert_eq!(nonzero, vec![0, 32]);
        assert!(AntennaMask::from_indices(4, &[4]).is_err());
    }

    #[test]
    fn class_masks() {
        let g = ArrayGeometry::new(8, 4).unwrap();
        assert_eq!(class_to_mask(ColumnClass(0), &g).unwrap().popcount(), 4);
        assert_eq!(class_to_mask(ColumnClass(3), &g).unwrap().popcount(), 16);
        assert_eq!(class_to_mask(ColumnClass(7), &g).unwrap().popcount(), 32);
        assert!(class_to_mask(ColumnClass(8), &g).is_err());
        for y in 0..8 {
            let m = class_to_mask(ColumnClass(y), &g).unwrap();
            assert_eq!(m, AntennaMask::prefix(32, (y + 1) * 4));
        }
        let rows = family_class_to_mask(ConfigFamily::Rows, ColumnClass(1), &g).unwrap();
        assert_eq!(rows.popcount(), 16);
        assert!(rows.is_active(1) && !rows.is_active(2));
    }

    #[test]
    fn zero_rate_requirement_is_feasible() {
        let p = toy_problem(1, 2, 0.0, 2);
        let (ok, rates) = is_feasible(&p, &AntennaMask::prefix(8, 2)).unwrap();
        assert!(ok);
        assert_eq!(rates.len(), 2);
        let (ok, _) = is_feasible(&p, &AntennaMask::prefix(8, 1)).unwrap();
        assert!(!ok, "below m_min");
    }

    #[test]
    fn infinite_rate_requirement_is_infeasible() {
        let p = toy_problem(1, 2, f64::INFINITY, 1);
        for n in 0..=8 {
            assert!(!is_feasible(&p, &AntennaMask::prefix(8, n)).unwrap().0);
        }
    }

    #[test]
    fn feasibility_matches_pipeline_replay() {
        let p = toy_problem(3, 2, 20.0, 1);
        let mask = AntennaMask::from_indices(8, &[0, 2, 5]).unwrap();
        let (ok, rates) = is_feasible(&p, &mask).unwrap();
        // replay: mask the channel, rebuild covariance and precoder from scratch
        for (u, r) in p.users.iter().zip(&rates) {
            let masked: Vec<CMat> = u.prbs.iter().map(|h| apply_mask(h, &mask, &p.geometry).unwrap()).collect();
            let r_avg = crate::channel::per_pol_avg_covariance(
                &crate::channel::channel_covariance(&masked).unwrap(),
                &p.geometry,
            )
            .unwrap();
            let w = crate::txrx::eigen_beamformer(&r_avg, 2, 1.0, &p.geometry).unwrap();
            let replay = user_rate(&masked, &w, &p.link).unwrap();
            assert!((replay.rate_bits - r.rate_bits).abs() <= 1e-9 * r.rate_bits.max(1.0));
        }
        assert_eq!(ok, rates.iter().all(|r| r.rate_bits >= 20.0));
    }

    #[test]
    fn greedy_with_trivial_constraints_uses_one_element() {
        let p = toy_problem(2, 2, 0.0, 1);
        let s = greedy_tam(&p).unwrap();
        assert!(s.feasible);
        assert_eq!(s.mask.popcount(), 1);
        assert_eq!(s.evaluations, 8);
        assert_eq!(s.active_elements, 2);
    }

    #[test]
    fn greedy_not_better_than_exhaustive() {
        for seed in 0..6 {
            let p = toy_problem(seed, 1, 14.0, 1);
            let g = greedy_tam(&p).unwrap();
            let best = (0u32..(1 << 8))
                .filter(|&bits| {
                    let m = AntennaMask::from_bits((0..8).map(|i| bits >> i & 1 == 1).collect());
                    p.evaluate(&m).unwrap().feasible
                })
                .map(|bits| bits.count_ones() as usize)
                .min();
            match best {
                Some(b) => {
                    assert!(g.feasible);
                    assert!(g.mask.popcount() >= b);
                }
                None => assert!(!g.feasible),
            }
        }
    }

    #[test]
    fn sequential_prefix_cases() {
        let p = toy_problem(4, 2, 0.0, 3);
        let s = sequential_tam(&p).unwrap();
        assert!(s.feasible);
        assert_eq!(s.mask.active_indices(), vec![0, 1, 2]);
        assert_eq!(s.evaluations, 3);

        let p = toy_problem(4, 2, f64::INFINITY, 1);
        let s = sequential_tam(&p).unwrap();
        assert!(!s.feasible);
        assert_eq!(s.mask, AntennaMask::full(8));
        assert_eq!(s.evaluations, 8);
    }

    #[test]
    fn sequential_returns_minimal_prefix() {
        for seed in 0..8 {
            let p = toy_problem(seed, 2, 16.0, 2);
            let s = sequential_tam(&p).unwrap();
            let scan = (1..=8).find(|&i| p.evaluate(&AntennaMask::prefix(8, i)).unwrap().feasible);
            match scan {
                Some(i) => assert_eq!(s.mask.popcount(), i),
                None => assert!(!s.feasible),
            }
        }
    }

    #[test]
    fn fixed_column_cases() {
        let p = toy_problem(5, 2, 0.0, 1);
        let (y, s) = fixed_column_tam(&p).unwrap();
        assert_eq!(y, ColumnClass(0));
        assert_eq!(s.mask.popcount(), 2);

        let p = toy_problem(5, 2, f64::INFINITY, 1);
        let (y, s) = fixed_column_tam(&p).unwrap();
        assert_eq!(y, ColumnClass(3));
        assert!(!s.feasible);
        assert_eq!(s.evaluations, 4);

        for seed in 0..8 {
            let p = toy_problem(seed, 2, 15.0, 1);
            let (y, s) = fixed_column_tam(&p).unwrap();
            let scan = (0..4).find(|&k| {
                p.evaluate(&class_to_mask(ColumnClass(k), &p.geometry).unwrap()).unwrap().feasible
            });
            match scan {
                Some(k) => assert_eq!(y.0, k),
                None => assert!(!s.feasible),
            }
        }
    }

    #[test]
    fn fpo_meter_counts_rounds() {
        let p = toy_problem(6, 2, f64::INFINITY, 1);
        let s = sequential_tam(&p).unwrap();
        let expect: f64 = (1..=8).map(|i| p.round_cost(i)).sum();
        assert_eq!(s.fpo_consumed, expect);
    }

    #[test]
    fn scheduled_problem_builds() {
        let g = ArrayGeometry::new(8, 4).unwrap();
        let set = generate_drop(g, 6, 2, 3, 9).unwrap();
        let covs: Vec<CMat> = set.users.iter().map(|u| pol_avg_covariance(&u.prbs, &g).unwrap()).collect();
        let sched = schedule_users(&covs, 4, 0.9).unwrap();
        let p = TamProblem::new(&set, &sched, link(), 0.0, 4).unwrap();
        assert_eq!(p.users.len(), sched.len());
        assert!(TamProblem::new(&set, &[], link(), 0.0, 4).is_err());
    }
}
