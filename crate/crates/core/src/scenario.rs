//! Network geometry, large-scale fading and MMSE estimation variances.
//!
//! Distances use the minimum-image convention on a square torus. Shadowing is
//! log-normal and correlated across users seen by the same AP; the
//! eavesdropper's shadowing is drawn independently.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar position in meters.
pub type Point = [f64; 2];

/// Index of the user whose pilot the eavesdropper spoofs.
pub const ATTACKED_USER: usize = 0;

/// Distances below this are clamped before the path-loss model is applied.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Decorrelation distance of the shadowing kernel in meters.
pub const DECORRELATION_M: f64 = 9.0;

fn default_area_side() -> f64 {
    1000.0
}

fn default_shadow_std_db() -> f64 {
    4.0
}

/// Static network description with dimensionless transmit SNRs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Number of APs.
    #[serde(rename = "L", alias = "l")]
    pub aps: usize,
    /// Antennas per AP.
    #[serde(rename = "M", alias = "m")]
    pub antennas: usize,
    /// Number of single-antenna users.
    #[serde(rename = "K", alias = "k")]
    pub users: usize,
    /// Eavesdropper antennas.
    #[serde(rename = "N_E", alias = "n_e")]
    pub eav_antennas: usize,
    #[serde(default = "default_area_side")]
    pub area_side: f64,
    /// Radius of the disc around user 1 that contains the eavesdropper.
    pub r_eav: f64,
    pub rho_u: f64,
    /// Spoofing SNR per eavesdropper antenna; zero disables the attack.
    #[serde(rename = "rho_E", alias = "rho_e")]
    pub rho_e: f64,
    pub rho_max: f64,
    pub tau_p: usize,
    pub tau: usize,
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub seed: u64,
    /// Shadowing standard deviation in dB.
    #[serde(default = "default_shadow_std_db")]
    pub shadow_std_db: f64,
}

/// Converts a power in dBm to milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Converts a power in milliwatts to an SNR against the given noise floor.
pub fn snr_from_mw(power_mw: f64, noise_dbm: f64) -> f64 {
    power_mw / dbm_to_mw(noise_dbm)
}

impl Scenario {
    /// Default simulation parameters: 20 MHz, -92 dBm noise, 200 mW APs,
    /// 100 mW users and eavesdropper, `tau_p = K`, `tau = 200`.
    pub fn with_defaults(aps: usize, antennas: usize, users: usize, r_eav: f64, seed: u64) -> Self {
        PhysicalScenario::defaults(aps, antennas, users, r_eav, seed).to_scenario()
    }

    /// Checks structural constraints.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.aps == 0 || self.antennas == 0 || self.users == 0 || self.eav_antennas == 0 {
            return bad("L, M, K and N_E must be at least 1".into());
        }
        if self.aps * self.antennas <= self.users {
            return bad(format!("need L*M > K, got {}*{} <= {}", self.aps, self.antennas, self.users));
        }
        if self.tau_p < self.users {
            return bad(format!("tau_p = {} is shorter than K = {}", self.tau_p, self.users));
        }
        if self.tau == 0 || self.tau < self.tau_p {
            return bad(format!("tau = {} must be at least tau_p = {}", self.tau, self.tau_p));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return bad("area_side must be positive".into());
        }
        if !(self.r_eav >= 0.0 && self.r_eav < self.area_side) {
            return bad(format!("r_eav = {} must lie in [0, area_side)", self.r_eav));
        }
        if !(self.rho_u > 0.0 && self.rho_max > 0.0 && self.rho_u.is_finite() && self.rho_max.is_finite()) {
            return bad("rho_u and rho_max must be positive".into());
        }
        if !(self.rho_e >= 0.0 && self.rho_e.is_finite()) {
            return bad("rho_E must be nonnegative".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive".into());
        }
        if !(self.shadow_std_db >= 0.0 && self.shadow_std_db.is_finite()) {
            return bad("shadow_std_db must be nonnegative".into());
        }
        Ok(())
    }

    /// Training constants carried into the large-scale state.
    pub fn training(&self) -> Training {
        Training {
            tau_p: self.tau_p as f64,
            rho_u: self.rho_u,
            rho_e: self.rho_e,
            eav_antennas: self.eav_antennas,
        }
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

fn default_tau() -> usize {
    200
}

fn default_bandwidth() -> f64 {
    20e6
}

fn default_noise_dbm() -> f64 {
    -92.0
}

fn default_ap_mw() -> f64 {
    200.0
}

fn default_user_mw() -> f64 {
    100.0
}

fn one() -> usize {
    1
}

/// Scenario expressed in physical units (mW, dBm) as found in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalScenario {
    #[serde(rename = "L", alias = "l")]
    pub aps: usize,
    #[serde(rename = "M", alias = "m")]
    pub antennas: usize,
    #[serde(rename = "K", alias = "k")]
    pub users: usize,
    #[serde(rename = "N_E", alias = "n_e", default = "one")]
    pub eav_antennas: usize,
    #[serde(default = "default_area_side")]
    pub area_side: f64,
    pub r_eav: f64,
    #[serde(default = "default_ap_mw")]
    pub ap_power_mw: f64,
    #[serde(default = "default_user_mw")]
    pub user_power_mw: f64,
    /// Spoofing power per eavesdropper antenna; zero disables the attack.
    #[serde(default = "default_user_mw")]
    pub eav_power_mw: f64,
    /// Pilot length; defaults to K.
    #[serde(default)]
    pub tau_p: Option<usize>,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_dbm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shadow_std_db")]
    pub shadow_std_db: f64,
}

impl PhysicalScenario {
    /// Physical defaults; see [`Scenario::with_defaults`].
    pub fn defaults(aps: usize, antennas: usize, users: usize, r_eav: f64, seed: u64) -> Self {
        PhysicalScenario {
            aps,
            antennas,
            users,
            eav_antennas: 1,
            area_side: default_area_side(),
            r_eav,
            ap_power_mw: 200.0,
            user_power_mw: 100.0,
            eav_power_mw: 100.0,
            tau_p: None,
            tau: 200,
            bandwidth_hz: 20e6,
            noise_dbm: -92.0,
            seed,
            shadow_std_db: default_shadow_std_db(),
        }
    }

    /// Converts powers to SNRs against the noise floor.
    pub fn to_scenario(&self) -> Scenario {
        Scenario {
            aps: self.aps,
            antennas: self.antennas,
            users: self.users,
            eav_antennas: self.eav_antennas,
            area_side: self.area_side,
            r_eav: self.r_eav,
            rho_u: snr_from_mw(self.user_power_mw, self.noise_dbm),
            rho_e: snr_from_mw(self.eav_power_mw, self.noise_dbm),
            rho_max: snr_from_mw(self.ap_power_mw, self.noise_dbm),
            tau_p: self.tau_p.unwrap_or(self.users),
            tau: self.tau,
            bandwidth_hz: self.bandwidth_hz,
            noise_dbm: self.noise_dbm,
            seed: self.seed,
            shadow_std_db: self.shadow_std_db,
        }
    }
}

/// Node positions of one network drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    pub eav_position: Point,
}

fn wrap_coord(x: f64, side: f64) -> f64 {
    let w = x.rem_euclid(side);
    if w >= side {
        0.0
    } else {
        w
    }
}

impl Geometry {
    /// Uniform APs and users; eavesdropper uniform in the disc of radius `r_eav` around user 1.
    pub fn generate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Self {
        let side = scenario.area_side;
        let point = |rng: &mut R| -> Point { [rng.random::<f64>() * side, rng.random::<f64>() * side] };
        let ap_positions: Vec<Point> = (0..scenario.aps).map(|_| point(rng)).collect();
        let user_positions: Vec<Point> = (0..scenario.users).map(|_| point(rng)).collect();
        let radius = scenario.r_eav * rng.random::<f64>().sqrt();
        let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let anchor = user_positions[ATTACKED_USER];
        let eav_position = [
            wrap_coord(anchor[0] + radius * angle.cos(), side),
            wrap_coord(anchor[1] + radius * angle.sin(), side),
        ];
        Self { ap_positions, user_positions, eav_position }
    }

    /// Checks counts and placement against the scenario.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let side = scenario.area_side;
        if self.ap_positions.len() != scenario.aps || self.user_positions.len() != scenario.users {
            return Err(Error::InvalidGeometry("position counts do not match L and K".into()));
        }
        let inside = |p: &Point| p.iter().all(|c| (0.0..side).contains(c));
        let all = self.ap_positions.iter().chain(&self.user_positions).chain(std::iter::once(&self.eav_position));
        if !all.clone().all(inside) {
            return Err(Error::InvalidGeometry("all points must lie in [0, area_side)^2".into()));
        }
        let d = wrap_distance(self.eav_position, self.user_positions[ATTACKED_USER], side);
        if d > scenario.r_eav * (1.0 + 1e-12) {
            return Err(Error::InvalidGeometry(format!("eavesdropper is {d} m from user 1, beyond r_eav")));
        }
        Ok(())
    }
}

/// Minimum-image Euclidean distance on the square torus of the given side.
pub fn wrap_distance(a: Point, b: Point, area_side: f64) -> f64 {
    let mut dx = (a[0] - b[0]).abs();
    let mut dy = (a[1] - b[1]).abs();
    dx = dx.min(area_side - dx);
    dy = dy.min(area_side - dy);
    dx.hypot(dy)
}

/// Path loss in dB at distance `d` meters.
pub fn path_loss_db(d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDistance(d));
    }
    Ok(-30.5 - 36.7 * d.log10())
}

fn clamped_path_loss_db(d: f64) -> f64 {
    -30.5 - 36.7 * d.max(MIN_DISTANCE_M).log10()
}

/// Shadowing covariance among users in dB², repaired to be positive semidefinite.
pub fn shadow_covariance(user_positions: &[Point], area_side: f64) -> DMatrix<f64> {
    shadow_covariance_with_std(user_positions, area_side, default_shadow_std_db())
}

/// Shadowing covariance for an arbitrary standard deviation in dB.
pub fn shadow_covariance_with_std(user_positions: &[Point], area_side: f64, std_db: f64) -> DMatrix<f64> {
    let k = user_positions.len();
    let var = std_db * std_db;
    let raw = DMatrix::from_fn(k, k, |i, j| {
        let zeta = wrap_distance(user_positions[i], user_positions[j], area_side);
        var * 2f64.powf(-zeta / DECORRELATION_M)
    });
    repair_psd(raw)
}

fn repair_psd(c: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return c;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}

/// Square-root factor `F` with `F Fᵀ = C` for a PSD matrix.
fn psd_factor(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Constants of the uplink training phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Training {
    pub tau_p: f64,
    pub rho_u: f64,
    /// Spoofing SNR per eavesdropper antenna.
    pub rho_e: f64,
    pub eav_antennas: usize,
}

impl Training {
    pub fn attacked(&self) -> bool {
        self.rho_e > 0.0
    }

    /// Expected pilot-projection power per antenna of user `k` at an AP.
    pub fn projection_power(&self, k: usize, beta: f64, beta_e: f64) -> f64 {
        let mut p = self.tau_p * self.rho_u * beta + 1.0;
        if k == ATTACKED_USER {
            p += self.eav_antennas as f64 * self.tau_p * self.rho_e * beta_e;
        }
        p
    }
}

/// Large-scale gains and estimation variances for every AP-node pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LargeScaleState {
    /// L×K linear gains.
    pub beta: DMatrix<f64>,
    /// Per-AP gain towards the eavesdropper (each antenna).
    pub beta_e: DVector<f64>,
    /// L×K estimation variances.
    pub gamma: DMatrix<f64>,
    /// Per-AP variance of the eavesdropper component aligned with user 1's estimate.
    pub gamma_e: DVector<f64>,
    /// L×K user shadowing in dB.
    pub shadow: DMatrix<f64>,
    /// Per-AP eavesdropper shadowing in dB.
    pub shadow_e: DVector<f64>,
    pub antennas: usize,
    pub training: Training,
}

impl LargeScaleState {
    /// Builds the state from gains, filling the estimation variances.
    pub fn from_gains(beta: DMatrix<f64>, beta_e: DVector<f64>, antennas: usize, training: Training) -> Self {
        let (l, k) = beta.shape();
        let mut s = Self {
            gamma: DMatrix::zeros(l, k),
            gamma_e: DVector::zeros(l),
            shadow: DMatrix::zeros(l, k),
            shadow_e: DVector::zeros(l),
            beta,
            beta_e,
            antennas,
            training,
        };
        s.refresh_gamma();
        s
    }

    /// Recomputes `gamma` and `gamma_e` from `beta`, `beta_e` and the training constants.
    pub fn refresh_gamma(&mut self) {
        let t = self.training;
        for l in 0..self.aps() {
            for k in 0..self.users() {
                let b = self.beta[(l, k)];
                let den = t.projection_power(k, b, self.beta_e[l]);
                self.gamma[(l, k)] = t.tau_p * t.rho_u * b * b / den;
            }
            let den = t.projection_power(ATTACKED_USER, self.beta[(l, ATTACKED_USER)], self.beta_e[l]);
            self.gamma_e[l] = t.tau_p * t.rho_e * self.beta_e[l] * self.beta_e[l] / den;
        }
    }

    /// Copy in which user 1's pilot no longer collides with the eavesdropper.
    pub fn without_attack(&self) -> Self {
        let mut s = self.clone();
        s.training.rho_e = 0.0;
        s.refresh_gamma();
        s
    }

    pub fn aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn eav_antennas(&self) -> usize {
        self.training.eav_antennas
    }
}

/// Draws path loss, correlated shadowing and estimation variances for one geometry.
pub fn draw_large_scale<R: Rng + ?Sized>(scenario: &Scenario, geometry: &Geometry, rng: &mut R) -> LargeScaleState {
    let (l_n, k_n) = (scenario.aps, scenario.users);
    let side = scenario.area_side;
    let cov = shadow_covariance_with_std(&geometry.user_positions, side, scenario.shadow_std_db);
    let factor = psd_factor(&cov);
    let mut shadow = DMatrix::zeros(l_n, k_n);
    for l in 0..l_n {
        let z = DVector::from_fn(k_n, |_, _| rng.sample::<f64, _>(StandardNormal));
        shadow.row_mut(l).copy_from(&(&factor * z).transpose());
    }
    let shadow_e = DVector::from_fn(l_n, |_, _| scenario.shadow_std_db * rng.sample::<f64, _>(StandardNormal));
    let gain = |ap: Point, node: Point, f: f64| 10f64.powf((clamped_path_loss_db(wrap_distance(ap, node, side)) + f) / 10.0);
    let beta = DMatrix::from_fn(l_n, k_n, |l, k| gain(geometry.ap_positions[l], geometry.user_positions[k], shadow[(l, k)]));
    let beta_e = DVector::from_fn(l_n, |l, _| gain(geometry.ap_positions[l], geometry.eav_position, shadow_e[l]));
    let mut state = LargeScaleState::from_gains(beta, beta_e, scenario.antennas, scenario.training());
    state.shadow = shadow;
    state.shadow_e = shadow_e;
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn wrap_distance_examples() {
        assert_eq!(wrap_distance([0.0, 0.0], [0.0, 0.0], 1000.0), 0.0);
        assert!((wrap_distance([0.0, 0.0], [999.0, 0.0], 1000.0) - 1.0).abs() < 1e-9);
        assert!((wrap_distance([100.0, 100.0], [400.0, 500.0], 1000.0) - 500.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_db(1.0).unwrap() + 30.5).abs() < 1e-12);
        assert!((path_loss_db(10.0).unwrap() + 67.2).abs() < 1e-12);
        assert!((path_loss_db(100.0).unwrap() + 103.9).abs() < 1e-12);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-3.0).is_err());
    }

    #[test]
    fn shadow_covariance_entries() {
        let pos = [[0.0, 0.0], [9.0, 0.0], [0.0, 18.0]];
        let c = shadow_covariance(&pos, 1000.0);
        assert!(close(c[(0, 0)], 16.0, 1e-12));
        assert!(close(c[(0, 1)], 8.0, 1e-12));
        assert!(close(c[(0, 2)], 4.0, 1e-12));
        assert_eq!(c, c.transpose());
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = repair_psd(c);
        let eig = SymmetricEigen::new(r.clone());
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-12));
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn gamma_matches_hand_value() {
        let training = Training { tau_p: 4.0, rho_u: 10.0, rho_e: 10.0, eav_antennas: 1 };
        let beta = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let s = LargeScaleState::from_gains(beta, DVector::from_element(1, 0.2), 2, training);
        assert!(close(s.gamma[(0, 0)], 10.0 / 29.0, 1e-12));
        assert!(close(s.gamma[(0, 1)], 10.0 / 21.0, 1e-12));
        assert!(close(s.gamma_e[0], 1.6 / 29.0, 1e-12));
        let clean = s.without_attack();
        assert_eq!(clean.gamma[(0, 0)], clean.gamma[(0, 1)]);
        assert_eq!(clean.gamma_e[0], 0.0);
    }

    #[test]
    fn zero_shadowing_gives_pure_path_loss() {
        let mut sc = Scenario::with_defaults(4, 2, 3, 50.0, 1);
        sc.shadow_std_db = 0.0;
        let g = Geometry::generate(&sc, &mut substream(1, Stream::Geometry, 0));
        let s = draw_large_scale(&sc, &g, &mut substream(1, Stream::Shadowing, 0));
        for l in 0..4 {
            for k in 0..3 {
                let d = wrap_distance(g.ap_positions[l], g.user_positions[k], 1000.0).max(1.0);
                assert!(close(s.beta[(l, k)], 10f64.powf(path_loss_db(d).unwrap() / 10.0), 1e-12));
            }
        }
    }

    #[test]
    fn attack_shrinks_user_one_gamma() {
        let sc = Scenario::with_defaults(8, 4, 4, 100.0, 3);
        let g = Geometry::generate(&sc, &mut substream(3, Stream::Geometry, 0));
        g.validate(&sc).unwrap();
        let s = draw_large_scale(&sc, &g, &mut substream(3, Stream::Shadowing, 0));
        let clean = s.without_attack();
        for l in 0..8 {
            assert!(s.gamma[(l, 0)] < clean.gamma[(l, 0)]);
            assert!(s.gamma[(l, 0)] > 0.0 && s.gamma[(l, 0)] <= s.beta[(l, 0)]);
            assert!(s.gamma_e[l] > 0.0 && s.gamma_e[l] <= s.beta_e[l]);
        }
    }

    #[test]
    fn scenario_validation() {
        let ok = Scenario::with_defaults(4, 2, 3, 50.0, 1);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.tau_p = 2;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.aps = 1;
        bad.antennas = 3;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.r_eav = 1000.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.rho_u = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scenario_json_round_trip_and_unknown_keys() {
        let s = Scenario::with_defaults(4, 2, 3, 50.0, 9);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"L\":4") && text.contains("\"rho_E\""));
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
        let extra = text.replacen('{', "{\"bogus\":1,", 1);
        assert!(Scenario::from_json(&extra).is_err());
    }

    #[test]
    fn default_units() {
        let s = Scenario::with_defaults(4, 2, 3, 50.0, 1);
        assert!(close(s.rho_max, 200.0 / 10f64.powf(-9.2), 1e-12));
        assert!(close(s.rho_u, s.rho_e, 1e-15));
        assert_eq!(s.tau_p, 3);
    }
}
