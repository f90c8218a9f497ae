//! Seeded synthetic multi-user channels over a cross-polarized planar array,
//! spatial covariances, and the semi-orthogonal user scheduler.
//!
//! Each user sees a small cluster of plane waves around the line-of-sight
//! direction from an elevated base station. The vertical phase progression of
//! the array response therefore carries the user's distance, which is also what
//! sets its path loss.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, dominant_eigenpair, CMat, CVec, C64};

/// Cross-polarized planar array.
///
/// Antennas are ordered polarization-major: indices `[0, per_pol)` carry
/// polarization 0 and `i + per_pol` is the co-located partner of `i`. Inside a
/// polarization block elements are column-major, `col * m_row + row`, so the
/// first `(y + 1) * m_row` indices are exactly the first `y + 1` columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub m_col: usize,
    pub m_row: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            m_col: 8,
            m_row: 4,
            element_spacing: 0.5,
        }
    }
}

impl ArrayGeometry {
    pub const POLARIZATIONS: usize = 2;

    pub fn new(m_col: usize, m_row: usize) -> Result<Self> {
        let g = Self {
            m_col,
            m_row,
            element_spacing: 0.5,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_col == 0 || self.m_row == 0 {
            return Err(Error::InvalidArgument(format!(
                "array needs at least one column and row, got {}x{}",
                self.m_col, self.m_row
            )));
        }
        if !(self.element_spacing.is_finite() && self.element_spacing > 0.0) {
            return Err(Error::InvalidArgument("element spacing must be positive".into()));
        }
        Ok(())
    }

    /// Total antenna count `M = 2 * m_col * m_row`.
    pub fn total(&self) -> usize {
        Self::POLARIZATIONS * self.per_pol()
    }

    pub fn per_pol(&self) -> usize {
        self.m_col * self.m_row
    }

    /// Per-polarization index of element `(col, row)`.
    pub fn index(&self, col: usize, row: usize) -> usize {
        col * self.m_row + row
    }

    /// `(col, row)` of a per-polarization index.
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i / self.m_row, i % self.m_row)
    }

    /// Cross-polarized partner of full-array index `i`.
    pub fn partner(&self, i: usize) -> usize {
        (i + self.per_pol()) % self.total()
    }

    /// Per-polarization array response towards `(azimuth, elevation)` in
    /// radians. Unit-modulus entries.
    pub fn steering_vector(&self, azimuth: f64, elevation: f64) -> CVec {
        let d = self.element_spacing;
        CVec::from_fn(self.per_pol(), |i, _| {
            let (col, row) = self.position(i);
            let phase = 2.0
                * PI
                * d
                * (col as f64 * azimuth.sin() * elevation.cos() + row as f64 * elevation.sin());
            C64::from_polar(1.0, phase)
        })
    }
}

/// Propagation parameters of the synthetic channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Receive antennas per user, `N_k`.
    pub n_rx: usize,
    pub paths_per_user: usize,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    /// Angular width of the served sector.
    pub sector_deg: f64,
    /// Path loss `intercept + 10 * exponent * log10(d)` in dB.
    pub pathloss_intercept_db: f64,
    pub pathloss_exponent: f64,
    /// Line-of-sight path loss law. A non-LOS user never sees less loss than
    /// a LOS user at the same distance.
    pub los_pathloss_intercept_db: f64,
    pub los_pathloss_exponent: f64,
    /// LOS probability `min(b/d, 1) (1 - e^(-d/c)) + e^(-d/c)` with
    /// `b = los_breakpoint_m`, `c = los_decay_m`; `c = 0` disables LOS.
    pub los_breakpoint_m: f64,
    pub los_decay_m: f64,
    /// Power of the direct path over the sum of the scattered paths.
    pub los_k_factor_db: f64,
    /// Building entry loss added to every user's path loss.
    pub penetration_loss_db: f64,
    /// Half-power beamwidth of the element pattern, both planes; zero
    /// disables the pattern (isotropic elements).
    pub element_beamwidth_deg: f64,
    /// Floor of the element pattern attenuation.
    pub element_max_attenuation_db: f64,
    /// Electrical downtilt of the element pattern.
    pub downtilt_deg: f64,
    pub shadowing_db: f64,
    pub azimuth_spread_deg: f64,
    pub elevation_spread_deg: f64,
    pub delay_spread_s: f64,
    pub prb_bandwidth_hz: f64,
    /// Width of the carrier in PRBs. Fewer simulated PRBs are spread evenly
    /// over it rather than packed at the band edge.
    pub band_prbs: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            n_rx: 4,
            paths_per_user: 6,
            min_distance_m: 10.0,
            max_distance_m: 250.0,
            bs_height_m: 35.0,
            ue_height_m: 1.5,
            sector_deg: 120.0,
            pathloss_intercept_db: 34.0,
            pathloss_exponent: 3.53,
            los_pathloss_intercept_db: 43.3,
            los_pathloss_exponent: 2.1,
            los_breakpoint_m: 18.0,
            los_decay_m: 36.0,
            los_k_factor_db: 9.0,
            penetration_loss_db: 12.0,
            element_beamwidth_deg: 65.0,
            element_max_attenuation_db: 30.0,
            downtilt_deg: 10.0,
            shadowing_db: 1.0,
            azimuth_spread_deg: 8.0,
            elevation_spread_deg: 1.0,
            delay_spread_s: 100e-9,
            prb_bandwidth_hz: 360e3,
            band_prbs: 273,
        }
    }
}

impl ChannelParams {
    /// Linear power gain of one element towards `(azimuth, elevation)`,
    /// elevation negative below the horizon. Parabolic in both planes with a
    /// common floor, unity at boresight.
    pub fn element_gain(&self, azimuth: f64, elevation: f64) -> f64 {
        if self.element_beamwidth_deg <= 0.0 {
            return 1.0;
        }
        let bw = self.element_beamwidth_deg;
        let cap = self.element_max_attenuation_db;
        let h = 12.0 * (azimuth.to_degrees() / bw).powi(2);
        let v = 12.0 * ((-elevation.to_degrees() - self.downtilt_deg) / bw).powi(2);
        10f64.powf(-(h.min(cap) + v.min(cap)).min(cap) / 10.0)
    }

    /// Probability that a user at `distance_m` has a line of sight.
    pub fn los_probability(&self, distance_m: f64) -> f64 {
        if self.los_decay_m <= 0.0 {
            return 0.0;
        }
        let e = (-distance_m / self.los_decay_m).exp();
        (self.los_breakpoint_m / distance_m).min(1.0) * (1.0 - e) + e
    }

    /// Path loss in dB before shadowing and building entry loss.
    pub fn pathloss_db(&self, distance_m: f64, los: bool) -> f64 {
        let lg = distance_m.log10();
        let pl_los = self.los_pathloss_intercept_db + 10.0 * self.los_pathloss_exponent * lg;
        if los {
            pl_los
        } else {
            pl_los.max(self.pathloss_intercept_db + 10.0 * self.pathloss_exponent * lg)
        }
    }

    /// Offset from the band edge of simulated PRB `prb` out of `n_prb`.
    pub fn prb_frequency(&self, prb: usize, n_prb: usize) -> f64 {
        let stride = (self.band_prbs.max(n_prb) / n_prb.max(1)) as f64;
        prb as f64 * stride * self.prb_bandwidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_rx", self.n_rx as f64),
            ("paths_per_user", self.paths_per_user as f64),
            ("min_distance_m", self.min_distance_m),
            ("prb_bandwidth_hz", self.prb_bandwidth_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.max_distance_m < self.min_distance_m {
            return Err(Error::InvalidArgument("max_distance_m < min_distance_m".into()));
        }
        if self.shadowing_db < 0.0
            || self.delay_spread_s < 0.0
            || self.penetration_loss_db < 0.0
            || self.element_beamwidth_deg < 0.0
            || self.element_max_attenuation_db < 0.0
            || self.los_breakpoint_m < 0.0
            || self.los_decay_m < 0.0
        {
            return Err(Error::InvalidArgument("spreads must be non-negative".into()));
        }
        Ok(())
    }
}

/// Channels of every user in one slot: `prbs[p]` is the `N_k x M` matrix on PRB `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct UserChannel {
    pub prbs: Vec<CMat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub geometry: ArrayGeometry,
    pub n_rx: usize,
    pub n_prb: usize,
    pub users: Vec<UserChannel>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let m = self.geometry.total();
        for (k, u) in self.users.iter().enumerate() {
            if u.prbs.len() != self.n_prb {
                return Err(Error::DimensionMismatch(format!(
                    "user {k} has {} PRBs, expected {}",
                    u.prbs.len(),
                    self.n_prb
                )));
            }
            for h in &u.prbs {
                if h.nrows() != self.n_rx || h.ncols() != m {
                    return Err(Error::DimensionMismatch(format!(
                        "user {k} channel is {}x{}, expected {}x{m}",
                        h.nrows(),
                        h.ncols(),
                        self.n_rx
                    )));
                }
                if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::InvalidArgument(format!("user {k} has a non-finite entry")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PathLayout {
    azimuth: f64,
    elevation: f64,
    delay_s: f64,
    power: f64,
    /// Direct path: constant amplitude, only its phases change per slot.
    specular: bool,
    response: CVec,
}

/// Large-scale placement of one user, fixed for the whole drop.
#[derive(Clone, Debug, PartialEq)]
pub struct UserLayout {
    pub distance_m: f64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Linear power gain including shadowing.
    pub large_scale_gain: f64,
    pub los: bool,
    paths: Vec<PathLayout>,
}

/// One random user placement. Slots of a drop share the geometry and redraw
/// the small-scale gains.
#[derive(Clone, Debug)]
pub struct Drop {
    pub geometry: ArrayGeometry,
    pub params: ChannelParams,
    pub seed: u64,
    pub users: Vec<UserLayout>,
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn complex_normal(rng: &mut ChaCha8Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re * s, im * s)
}

impl Drop {
    pub fn new(geometry: ArrayGeometry, params: ChannelParams, j_users: usize, seed: u64) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        if j_users == 0 {
            return Err(Error::InvalidArgument("at least one user per drop".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
        let half_sector = params.sector_deg.to_radians() / 2.0;
        let az_spread = Normal::new(0.0, params.azimuth_spread_deg.to_radians())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let el_spread = Normal::new(0.0, params.elevation_spread_deg.to_radians())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let shadow = Normal::new(0.0, params.shadowing_db)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;

        let users = (0..j_users)
            .map(|_| {
                let (d0, d1) = (params.min_distance_m, params.max_distance_m);
                // uniform over the annulus area
                let u: f64 = rng.random();
                let distance_m = (d0 * d0 + u * (d1 * d1 - d0 * d0)).sqrt();
                let azimuth = rng.random_range(-half_sector..=half_sector);
                let elevation = -((params.bs_height_m - params.ue_height_m) / distance_m).atan();
                let los = rng.random::<f64>() < params.los_probability(distance_m);
                let pl_db = params.pathloss_db(distance_m, los)
                    + params.penetration_loss_db
                    + shadow.sample(&mut rng);
                let large_scale_gain = 10f64.powf(-pl_db / 10.0);

                let mut paths: Vec<PathLayout> = (0..params.paths_per_user)
                    .map(|_| {
                        let az = azimuth + az_spread.sample(&mut rng);
                        let el = elevation + el_spread.sample(&mut rng);
                        let v: f64 = rng.random();
                        let delay_s = -params.delay_spread_s * (1.0 - v).ln();
                        let power = if params.delay_spread_s > 0.0 {
                            (-delay_s / params.delay_spread_s).exp()
                        } else {
                            1.0
                        };
                        PathLayout {
                            azimuth: az,
                            elevation: el,
                            delay_s,
                            power,
                            specular: false,
                            response: geometry.steering_vector(az, el),
                        }
                    })
                    .collect();
                if los {
                    let scattered: f64 = paths.iter().map(|p| p.power).sum();
                    paths.insert(
                        0,
                        PathLayout {
                            azimuth,
                            elevation,
                            delay_s: 0.0,
                            power: scattered * 10f64.powf(params.los_k_factor_db / 10.0),
                            specular: true,
                            response: geometry.steering_vector(azimuth, elevation),
                        },
                    );
                }
                let total: f64 = paths.iter().map(|p| p.power).sum();
                for p in &mut paths {
                    p.power *= params.element_gain(p.azimuth, p.elevation) / total;
                }
                UserLayout {
                    distance_m,
                    azimuth,
                    elevation,
                    large_scale_gain,
                    los,
                    paths,
                }
            })
            .collect();

        Ok(Self {
            geometry,
            params,
            seed,
            users,
        })
    }

    /// Small-scale realization of every user's channel in `slot`.
    pub fn realize(&self, slot: u64, n_prb: usize) -> Result<ChannelSet> {
        if n_prb == 0 {
            return Err(Error::InvalidArgument("n_prb must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, slot.wrapping_add(1)));
        let geometry = self.geometry;
        let (per_pol, m) = (geometry.per_pol(), geometry.total());
        let n_rx = self.params.n_rx;

        let users = self
            .users
            .iter()
            .map(|user| {
                let amp = user.large_scale_gain.sqrt();
                // per path: receive gains and the two polarization phases
                let draws: Vec<(Vec<C64>, [C64; 2])> = user
                    .paths
                    .iter()
                    .map(|p| {
                        let g = (0..n_rx)
                            .map(|_| {
                                if p.specular {
                                    C64::from_polar(p.power.sqrt() * amp, rng.random_range(0.0..2.0 * PI))
                                } else {
                                    complex_normal(&mut rng, p.power) * amp
                                }
                            })
                            .collect();
                        let psi0: f64 = rng.random_range(0.0..2.0 * PI);
                        let psi1: f64 = rng.random_range(0.0..2.0 * PI);
                        (g, [C64::from_polar(1.0, psi0), C64::from_polar(1.0, psi1)])
                    })
                    .collect();
                let prbs = (0..n_prb)
                    .map(|prb| {
                        let f = self.params.prb_frequency(prb, n_prb);
                        let mut h = CMat::zeros(n_rx, m);
                        for (p, (g, pol)) in user.paths.iter().zip(&draws) {
                            let delay = C64::from_polar(1.0, -2.0 * PI * f * p.delay_s);
                            for n in 0..n_rx {
                                for q in 0..2 {
                                    let coef = g[n] * pol[q] * delay;
                                    for i in 0..per_pol {
                                        h[(n, q * per_pol + i)] += coef * p.response[i];
                                    }
                                }
                            }
                        }
                        h
                    })
                    .collect();
                UserChannel { prbs }
            })
            .collect();

        Ok(ChannelSet {
            geometry,
            n_rx,
            n_prb,
            users,
        })
    }
}

/// One seeded drop with default propagation parameters, realized at slot 0.
pub fn generate_drop(
    geometry: ArrayGeometry,
    j_users: usize,
    n_prb: usize,
    paths_per_user: usize,
    seed: u64,
) -> Result<ChannelSet> {
    let params = ChannelParams {
        paths_per_user,
        ..ChannelParams::default()
    };
    Drop::new(geometry, params, j_users, seed)?.realize(0, n_prb)
}

/// `R_k`: average of `H^H H` over the PRBs of the slot.
pub fn channel_covariance(prbs: &[CMat]) -> Result<CMat> {
    let first = prbs
        .first()
        .ok_or_else(|| Error::Empty("covariance needs at least one PRB".into()))?;
    let m = first.ncols();
    let mut r = CMat::zeros(m, m);
    for h in prbs {
        if h.ncols() != m {
            return Err(Error::DimensionMismatch("PRB matrices differ in width".into()));
        }
        r += h.adjoint() * h;
    }
    r /= c(prbs.len() as f64, 0.0);
    Ok(r)
}

/// `R_avg`: mean of the two per-polarization diagonal blocks of `R_k`.
pub fn per_pol_avg_covariance(r: &CMat, geometry: &ArrayGeometry) -> Result<CMat> {
    let m = geometry.total();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, geometry has M = {m}",
            r.nrows(),
            r.ncols()
        )));
    }
    let pp = geometry.per_pol();
    Ok(CMat::from_fn(pp, pp, |i, j| (r[(i, j)] + r[(i + pp, j + pp)]) * 0.5))
}

/// `R_avg` straight from the PRB channels; same value as
/// `per_pol_avg_covariance(channel_covariance(prbs))` without forming `R_k`.
pub fn pol_avg_covariance(prbs: &[CMat], geometry: &ArrayGeometry) -> Result<CMat> {
    if prbs.is_empty() {
        return Err(Error::Empty("covariance needs at least one PRB".into()));
    }
    let pp = geometry.per_pol();
    let m = geometry.total();
    let mut r = CMat::zeros(pp, pp);
    for h in prbs {
        if h.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "channel has {} columns, geometry has M = {m}",
                h.ncols()
            )));
        }
        for q in 0..2 {
            let off = q * pp;
            for i in 0..pp {
                for j in i..pp {
                    let mut acc = C64::new(0.0, 0.0);
                    for n in 0..h.nrows() {
                        acc += h[(n, off + i)].conj() * h[(n, off + j)];
                    }
                    r[(i, j)] += acc;
                }
            }
        }
    }
    let scale = 1.0 / (2.0 * prbs.len() as f64);
    for i in 0..pp {
        r[(i, i)] = c(r[(i, i)].re * scale, 0.0);
        for j in (i + 1)..pp {
            let v = r[(i, j)] * scale;
            r[(i, j)] = v;
            r[(j, i)] = v.conj();
        }
    }
    Ok(r)
}

/// Greedy semi-orthogonal co-scheduling.
///
/// Candidates are visited in descending dominant-eigenvalue order (ties to the
/// lower user index). A candidate is admitted when the sum of `|u_c^H u_a|`
/// over already admitted users is below `corr_threshold`. Returns admitted
/// user indices in admission order, at most `k_max` of them.
pub fn schedule_users(covariances: &[CMat], k_max: usize, corr_threshold: f64) -> Result<Vec<usize>> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&corr_threshold) {
        return Err(Error::OutOfRange(format!(
            "correlation threshold {corr_threshold} outside [0, 1]"
        )));
    }
    let pairs = covariances
        .iter()
        .map(dominant_eigenpair)
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0).then(a.cmp(&b)));

    let mut admitted: Vec<usize> = Vec::with_capacity(k_max);
    for cand in order {
        if admitted.len() == k_max {
            break;
        }
        let u = &pairs[cand].1;
        let cumulative: f64 = admitted.iter().map(|&a| u.dotc(&pairs[a].1).norm()).sum();
        if cumulative < corr_threshold {
            admitted.push(cand);
        }
    }
    Ok(admitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, singular_values};

    fn paper_geometry() -> ArrayGeometry {
        ArrayGeometry::new(8, 4).unwrap()
    }

    #[test]
    fn paper_geometry_shapes() {
        let g = paper_geometry();
        assert_eq!(g.total(), 64);
        assert_eq!(g.per_pol(), 32);
        let set = generate_drop(g, 10, 3, 4, 7).unwrap();
        assert_eq!(set.num_users(), 10);
        for u in &set.users {
            assert_eq!(u.prbs.len(), 3);
            for h in &u.prbs {
                assert_eq!((h.nrows(), h.ncols()), (4, 64));
            }
        }
        set.validate().unwrap();
    }

    #[test]
    fn ordering_contract() {
        let g = paper_geometry();
        assert_eq!(g.partner(0), 32);
        assert_eq!(g.partner(40), 8);
        assert_eq!(g.index(1, 0), 4);
        assert_eq!(g.position(7), (1, 3));
    }

    #[test]
    fn drop_is_deterministic() {
        let g = paper_geometry();
        let a = generate_drop(g, 5, 4, 3, 99).unwrap();
        let b = generate_drop(g, 5, 4, 3, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_drop(g, 5, 4, 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_path_single_prb_is_rank_one() {
        let g = paper_geometry();
        let params = ChannelParams {
            paths_per_user: 1,
            los_decay_m: 0.0,
            ..ChannelParams::default()
        };
        for seed in 0..5 {
            let set = Drop::new(g, params.clone(), 3, seed).unwrap().realize(0, 1).unwrap();
            for u in &set.users {
                let s = singular_values(&u.prbs[0]);
                assert!(s[0] > 0.0);
                assert!(s[1] / s[0] < 1e-10, "second singular value {:e}", s[1] / s[0]);
            }
        }
    }

    #[test]
    fn los_probability_and_pathloss() {
        let p = ChannelParams::default();
        assert_eq!(p.los_probability(10.0), 1.0);
        let d = 200.0;
        let e = (-d / 36.0f64).exp();
        assert!((p.los_probability(d) - (18.0 / d * (1.0 - e) + e)).abs() < 1e-15);
        for d in [10.0, 50.0, 250.0] {
            assert!(p.pathloss_db(d, false) >= p.pathloss_db(d, true));
        }
        let off = ChannelParams {
            los_decay_m: 0.0,
            ..p
        };
        assert_eq!(off.los_probability(1.0), 0.0);
    }

    #[test]
    fn rejects_bad_counts() {
        let g = paper_geometry();
        assert!(generate_drop(g, 0, 1, 1, 0).is_err());
        assert!(generate_drop(g, 1, 0, 1, 0).is_err());
        assert!(generate_drop(g, 1, 1, 0, 0).is_err());
    }

    #[test]
    fn covariance_of_identity() {
        let r = channel_covariance(&[CMat::identity(2, 2)]).unwrap();
        assert_eq!(r, CMat::identity(2, 2));
    }

    #[test]
    fn covariance_single_column() {
        let mut h = CMat::zeros(3, 4);
        h[(0, 2)] = c(1.0, 2.0);
        h[(2, 2)] = c(-0.5, 0.0);
        let r = channel_covariance(&[h]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == 2 && j == 2 { 5.25 } else { 0.0 };
                assert!((r[(i, j)] - c(expect, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn covariance_matches_loop_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prbs: Vec<CMat> = (0..3)
            .map(|_| CMat::from_fn(4, 8, |_, _| complex_normal(&mut rng, 1.0)))
            .collect();
        let r = channel_covariance(&prbs).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = C64::new(0.0, 0.0);
                for h in &prbs {
                    for n in 0..4 {
                        acc += h[(n, i)].conj() * h[(n, j)];
                    }
                }
                assert!((r[(i, j)] - acc / 3.0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pol_average_cases() {
        let g = ArrayGeometry::new(2, 2).unwrap();
        let avg = per_pol_avg_covariance(&CMat::identity(8, 8), &g).unwrap();
        assert_eq!(avg, CMat::identity(4, 4));

        let a = CMat::from_fn(4, 4, |i, j| c((i + j) as f64, i as f64 - j as f64));
        let b = CMat::from_fn(4, 4, |i, j| c((i * j) as f64, 0.5 * (j as f64 - i as f64)));
        let mut r = CMat::zeros(8, 8);
        r.view_mut((0, 0), (4, 4)).copy_from(&a);
        r.view_mut((4, 4), (4, 4)).copy_from(&b);
        let avg = per_pol_avg_covariance(&r, &g).unwrap();
        assert!((avg - (a + b) * c(0.5, 0.0)).norm() < 1e-14);

        assert!(per_pol_avg_covariance(&CMat::identity(6, 6), &g).is_err());
    }

    #[test]
    fn pol_average_index_oracle_on_random_psd() {
        let g = ArrayGeometry::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = CMat::from_fn(8, 8, |_, _| complex_normal(&mut rng, 1.0));
        let r = x.adjoint() * &x;
        let avg = per_pol_avg_covariance(&r, &g).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = (r[(i, j)] + r[(i + 4, j + 4)]) / 2.0;
                assert!((avg[(i, j)] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn fused_pol_average_matches_two_step() {
        let g = ArrayGeometry::new(4, 2).unwrap();
        let set = generate_drop(g, 3, 5, 4, 21).unwrap();
        for u in &set.users {
            let two_step = per_pol_avg_covariance(&channel_covariance(&u.prbs).unwrap(), &g).unwrap();
            let fused = pol_avg_covariance(&u.prbs, &g).unwrap();
            let scale = two_step.norm();
            assert!((two_step - fused).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn swapping_polarization_blocks_keeps_average() {
        let g = ArrayGeometry::new(4, 2).unwrap();
        let set = generate_drop(g, 2, 3, 3, 5).unwrap();
        let pp = g.per_pol();
        for u in &set.users {
            let swapped: Vec<CMat> = u
                .prbs
                .iter()
                .map(|h| CMat::from_fn(h.nrows(), h.ncols(), |n, i| h[(n, (i + pp) % (2 * pp))]))
                .collect();
            let a = pol_avg_covariance(&u.prbs, &g).unwrap();
            let b = pol_avg_covariance(&swapped, &g).unwrap();
            assert!((a.clone() - b).norm() <= 1e-13 * a.norm());
        }
    }

    fn rank_one(u: &CVec, scale: f64) -> CMat {
        u * u.adjoint() * c(scale, 0.0)
    }

    #[test]
    fn orthogonal_users_both_admitted() {
        let e0 = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let e1 = CVec::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let s = schedule_users(&[rank_one(&e0, 2.0), rank_one(&e1, 1.0)], 2, 0.5).unwrap();
        assert_eq!(s, vec![0, 1]);
    }

    #[test]
    fn identical_users_only_one_admitted() {
        let u = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let r = rank_one(&u, 1.0);
        let s = schedule_users(&[r.clone(), r], 2, 0.5).unwrap();
        assert_eq!(s, vec![0]);
    }

    #[test]
    fn scheduler_matches_step_replay() {
        let g = ArrayGeometry::new(4, 2).unwrap();
        for seed in 0..10 {
            let set = generate_drop(g, 5, 2, 3, seed).unwrap();
            let covs: Vec<CMat> = set
                .users
                .iter()
                .map(|u| pol_avg_covariance(&u.prbs, &g).unwrap())
                .collect();
            let got = schedule_users(&covs, 4, 0.6).unwrap();

            // replay with an independent eigendecomposition
            let mut pairs = Vec::new();
            for r in &covs {
                let (vals, vecs) = hermitian_eigen(r);
                let (idx, _) = vals
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                pairs.push((vals[idx], vecs.column(idx).into_owned()));
            }
            let mut order: Vec<usize> = (0..5).collect();
            order.sort_by(|&a, &b| pairs[b].0.partial_cmp(&pairs[a].0).unwrap());
            let mut expect: Vec<usize> = Vec::new();
            for cand in order {
                if expect.len() == 4 {
                    break;
                }
                let sum: f64 = expect
                    .iter()
                    .map(|&a| pairs[cand].1.dotc(&pairs[a].1).norm())
                    .sum();
                if sum < 0.6 {
                    expect.push(cand);
                }
            }
            assert_eq!(got, expect, "seed {seed}");
        }
    }
}
