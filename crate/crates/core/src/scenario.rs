//! Network geometry, large-scale fading, small-scale fading and noise
//! normalisation for one Monte-Carlo trial.
//!
//! All channels produced here are divided by `sqrt(P_n)`, so every
//! downstream SINR or rate expression uses identity noise covariance.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{c, CMat, CVec};
use crate::{Error, Result};

/// Network dimensions and trial seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_vehicles: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub bandwidth_hz: f64,
    pub serving_set_size: usize,
    pub area_side_km: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_aps: 6,
            antennas_per_ap: 8,
            num_vehicles: 6,
            tx_antennas: 8,
            rx_antennas: 8,
            bandwidth_hz: 10e6,
            serving_set_size: 3,
            area_side_km: 0.2,
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Small network used by CI and the acceptance suite.
    pub fn desk() -> Self {
        Self {
            num_aps: 4,
            antennas_per_ap: 4,
            num_vehicles: 3,
            tx_antennas: 4,
            rx_antennas: 4,
            serving_set_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_vehicles", self.num_vehicles),
            ("tx_antennas", self.tx_antennas),
            ("rx_antennas", self.rx_antennas),
            ("serving_set_size", self.serving_set_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        if self.serving_set_size > self.num_aps {
            return Err(Error::InvalidParameter(format!(
                "serving_set_size {} exceeds num_aps {}",
                self.serving_set_size, self.num_aps
            )));
        }
        if !(self.area_side_km > 0.0) {
            return Err(Error::InvalidParameter("area_side_km must be positive".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidParameter("bandwidth_hz must be positive".into()));
        }
        Ok(())
    }
}

/// Three-slope path loss and thermal noise constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub carrier_freq_mhz: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub breakpoint_d0_km: f64,
    pub breakpoint_d1_km: f64,
    pub noise_figure_db: f64,
    pub boltzmann: f64,
    pub temperature_k: f64,
    /// Distances below this are clamped before evaluating the path loss.
    pub min_distance_km: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            carrier_freq_mhz: 1900.0,
            ap_height_m: 15.0,
            user_height_m: 1.65,
            breakpoint_d0_km: 0.01,
            breakpoint_d1_km: 0.05,
            noise_figure_db: 9.0,
            boltzmann: 1.381e-23,
            temperature_k: 290.0,
            min_distance_km: 0.005,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.breakpoint_d0_km > 0.0 && self.breakpoint_d0_km < self.breakpoint_d1_km) {
            return Err(Error::InvalidParameter("require 0 < d0 < d1".into()));
        }
        if !(self.min_distance_km > 0.0) {
            return Err(Error::InvalidParameter("min_distance_km must be positive".into()));
        }
        Ok(())
    }
}

/// Constant term of the three-slope model, in dB.
pub fn lloss_db(params: &PathLossParams) -> Result<f64> {
    let f = params.carrier_freq_mhz;
    let h_ap = params.ap_height_m;
    let h_u = params.user_height_m;
    if !(f > 0.0) || !(h_ap > 0.0) || !(h_u >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "path loss needs f > 0, h_AP > 0, h_u >= 0 (got {f}, {h_ap}, {h_u})"
        )));
    }
    let lf = f.log10();
    Ok(46.3 + 33.9 * lf - 13.82 * h_ap.log10() - (1.1 * lf - 0.7) * h_u + (1.56 * lf - 0.8))
}

/// Three-slope path loss at distance `d_km`, in dB.
pub fn pathloss_db(d_km: f64, params: &PathLossParams) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be positive, got {d_km}")));
    }
    let l = lloss_db(params)?;
    let d0 = params.breakpoint_d0_km;
    let d1 = params.breakpoint_d1_km;
    Ok(if d_km > d1 {
        l + 35.0 * d_km.log10()
    } else if d_km <= d0 {
        l + 15.0 * d1.log10() + 20.0 * d0.log10()
    } else {
        l + 15.0 * d1.log10() + 20.0 * d_km.log10()
    })
}

/// Linear power gain `10^(-PL/10)` with the minimum-distance clamp applied.
pub fn large_scale_gain(d_km: f64, params: &PathLossParams) -> Result<f64> {
    let d = d_km.max(params.min_distance_km);
    Ok(10f64.powf(-pathloss_db(d, params)? / 10.0))
}

/// Thermal noise power `B k_B T_0 10^(N_dB/10)` in watts.
pub fn noise_power_watts(bandwidth_hz: f64, params: &PathLossParams) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidParameter("bandwidth must be positive".into()));
    }
    Ok(bandwidth_hz * params.boltzmann * params.temperature_k * 10f64.powf(params.noise_figure_db / 10.0))
}

/// Positions and sensing-target parameters of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub vehicle_positions: Vec<[f64; 2]>,
    pub target_angles: Vec<f64>,
    pub target_distances_m: Vec<f64>,
    pub reflection_coeffs: Vec<f64>,
    /// `K x M`, vehicle-to-AP distance in km.
    pub ap_distances_km: DMatrix<f64>,
    /// `K x K`, vehicle-to-vehicle distance in km.
    pub vehicle_distances_km: DMatrix<f64>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform AP and vehicle drop plus random sensing targets.
pub fn place_network(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Geometry {
    let side = cfg.area_side_km;
    let point = |rng: &mut ChaCha8Rng| [rng.gen::<f64>() * side, rng.gen::<f64>() * side];
    let ap_positions: Vec<_> = (0..cfg.num_aps).map(|_| point(rng)).collect();
    let vehicle_positions: Vec<_> = (0..cfg.num_vehicles).map(|_| point(rng)).collect();

    let k = cfg.num_vehicles;
    let mut target_angles = Vec::with_capacity(k);
    let mut target_distances_m = Vec::with_capacity(k);
    let mut reflection_coeffs = Vec::with_capacity(k);
    for _ in 0..k {
        target_angles.push(rng.gen_range(0.0..=PI));
        target_distances_m.push(rng.gen_range(40.0..=50.0));
        reflection_coeffs.push(rng.gen_range(0.8..=1.0));
    }

    let ap_distances_km = DMatrix::from_fn(k, cfg.num_aps, |i, m| dist(vehicle_positions[i], ap_positions[m]));
    let vehicle_distances_km =
        DMatrix::from_fn(k, k, |i, j| dist(vehicle_positions[i], vehicle_positions[j]));

    Geometry {
        ap_positions,
        vehicle_positions,
        target_angles,
        target_distances_m,
        reflection_coeffs,
        ap_distances_km,
        vehicle_distances_km,
    }
}

/// Half-wavelength ULA steering vector, element `i` is `exp(-j pi i sin(theta))`.
pub fn steering(theta: f64, n: usize) -> CVec {
    let phase = -PI * theta.sin();
    CVec::from_fn(n, |i, _| {
        let a = phase * i as f64;
        c(a.cos(), a.sin())
    })
}

/// Indices of the `l` largest gains in each row, ties to the lower AP index.
/// Each returned set is sorted by AP index.
pub fn select_serving_aps(gains: &DMatrix<f64>, l: usize) -> Result<Vec<Vec<usize>>> {
    if l > gains.ncols() {
        return Err(Error::InvalidParameter(format!(
            "serving set size {l} exceeds AP count {}",
            gains.ncols()
        )));
    }
    Ok((0..gains.nrows())
        .map(|k| {
            let mut order: Vec<usize> = (0..gains.ncols()).collect();
            order.sort_by(|&a, &b| gains[(k, b)].total_cmp(&gains[(k, a)]).then(a.cmp(&b)));
            let mut set = order[..l].to_vec();
            set.sort_unstable();
            set
        })
        .collect())
}

/// Noise-normalised channels and large-scale gains for one trial.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `uplink[k][m]`: `N x N_t` channel from vehicle `k` to AP `m`.
    pub uplink: Vec<Vec<CMat>>,
    /// `cross[k][j]`: `N_r x N_t` channel from vehicle `j` into vehicle `k`'s
    /// radar receiver; `None` on the diagonal.
    pub cross: Vec<Vec<Option<CMat>>>,
    /// `K x M` linear gains.
    pub gain_ap: DMatrix<f64>,
    /// `K x K` linear gains, zero on the diagonal.
    pub gain_cross: DMatrix<f64>,
    pub serving_sets: Vec<Vec<usize>>,
    pub noise_power: f64,
    /// Transmit steering vector toward each vehicle's target.
    pub tx_steering: Vec<CVec>,
    /// Noise-normalised target reflection amplitude `eta / sqrt(P_n)`.
    pub echo_gain: Vec<f64>,
    pub rx_antennas: usize,
}

impl ChannelSet {
    pub fn num_vehicles(&self) -> usize {
        self.uplink.len()
    }

    pub fn num_aps(&self) -> usize {
        self.gain_ap.ncols()
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_steering.first().map_or(0, |a| a.len())
    }

    pub fn ap_antennas(&self) -> usize {
        self.uplink.first().and_then(|r| r.first()).map_or(0, |h| h.nrows())
    }

    pub fn serves(&self, k: usize, m: usize) -> bool {
        self.serving_sets[k].binary_search(&m).is_ok()
    }

    /// Pairs `(k, m)` with `m` in the serving set of `k`, in vehicle-major order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.serving_sets
            .iter()
            .enumerate()
            .flat_map(|(k, set)| set.iter().map(move |&m| (k, m)))
    }
}

fn complex_gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMat {
    let s = scale * std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re * s, im * s)
    })
}

/// Rayleigh channels scaled by `sqrt(beta / P_n)`.
pub fn draw_channels(
    geom: &Geometry,
    cfg: &ScenarioConfig,
    params: &PathLossParams,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelSet> {
    cfg.validate()?;
    params.validate()?;
    let k = cfg.num_vehicles;
    let m = cfg.num_aps;
    if geom.vehicle_positions.len() != k || geom.ap_positions.len() != m {
        return Err(Error::InvalidInput("geometry does not match the scenario dimensions".into()));
    }
    let noise_power = noise_power_watts(cfg.bandwidth_hz, params)?;

    let mut gain_ap = DMatrix::zeros(k, m);
    for i in 0..k {
        for a in 0..m {
            gain_ap[(i, a)] = large_scale_gain(geom.ap_distances_km[(i, a)], params)?;
        }
    }
    let mut gain_cross = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                gain_cross[(i, j)] = large_scale_gain(geom.vehicle_distances_km[(i, j)], params)?;
            }
        }
    }

    let uplink = (0..k)
        .map(|i| {
            (0..m)
                .map(|a| {
                    let scale = (gain_ap[(i, a)] / noise_power).sqrt();
                    complex_gaussian(cfg.antennas_per_ap, cfg.tx_antennas, scale, rng)
                })
                .collect()
        })
        .collect();
    let cross = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    (i != j).then(|| {
                        let scale = (gain_cross[(i, j)] / noise_power).sqrt();
                        complex_gaussian(cfg.rx_antennas, cfg.tx_antennas, scale, rng)
                    })
                })
                .collect()
        })
        .collect();

    let serving_sets = select_serving_aps(&gain_ap, cfg.serving_set_size)?;
    let tx_steering = geom.target_angles.iter().map(|&t| steering(t, cfg.tx_antennas)).collect();
    let echo_gain = geom.reflection_coeffs.iter().map(|&e| e / noise_power.sqrt()).collect();

    Ok(ChannelSet {
        uplink,
        cross,
        gain_ap,
        gain_cross,
        serving_sets,
        noise_power,
        tx_steering,
        echo_gain,
        rx_antennas: cfg.rx_antennas,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn params_with(f: f64, h_ap: f64, h_u: f64) -> PathLossParams {
        PathLossParams { carrier_freq_mhz: f, ap_height_m: h_ap, user_height_m: h_u, ..Default::default() }
    }

    #[test]
    fn lloss_closed_form_values() {
        let l = lloss_db(&PathLossParams::default()).unwrap();
        assert!((l - 140.72).abs() < 0.01, "{l}");
        assert!((lloss_db(&params_with(10.0, 1.0, 0.0)).unwrap() - 80.96).abs() < 1e-12);
        assert!((lloss_db(&params_with(1.0, 1.0, 0.0)).unwrap() - 45.5).abs() < 1e-12);
        assert!(lloss_db(&params_with(0.0, 15.0, 1.65)).is_err());
        assert!(lloss_db(&params_with(1900.0, -1.0, 1.65)).is_err());
    }

    #[test]
    fn pathloss_branches() {
        let p = PathLossParams::default();
        let l = lloss_db(&p).unwrap();
        assert!((pathloss_db(0.1, &p).unwrap() - (l - 35.0)).abs() < 1e-12);
        let at_d0 = pathloss_db(0.01, &p).unwrap();
        assert!((at_d0 - (l + 15.0 * 0.05f64.log10() + 20.0 * 0.01f64.log10())).abs() < 1e-12);
        let mid = pathloss_db(0.05, &p).unwrap();
        assert!((mid - (l + 15.0 * 0.05f64.log10() + 20.0 * 0.05f64.log10())).abs() < 1e-12);
        assert!(pathloss_db(0.0, &p).is_err());
        assert!(pathloss_db(-1.0, &p).is_err());
    }

    #[test]
    fn pathloss_is_monotone_across_branches() {
        let p = PathLossParams::default();
        let mut prev = f64::NEG_INFINITY;
        for i in 1..4000 {
            let d = i as f64 * 1e-4;
            let v = pathloss_db(d, &p).unwrap();
            assert!(v >= prev - 1e-12, "decrease at d = {d}");
            prev = v;
        }
    }

    #[test]
    fn noise_power_values() {
        let p = PathLossParams::default();
        let pn = noise_power_watts(10e6, &p).unwrap();
        assert!((pn - 3.181e-13).abs() < 1e-16, "{pn}");
        let unit = PathLossParams { noise_figure_db: 0.0, ..p.clone() };
        assert!((noise_power_watts(1.0, &unit).unwrap() - 4.0049e-21).abs() < 1e-25);
        assert_eq!(noise_power_watts(2e6, &p).unwrap(), 2.0 * noise_power_watts(1e6, &p).unwrap());
    }

    #[test]
    fn steering_vectors() {
        let a = steering(0.0, 8);
        assert!(a.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        let b = steering(PI / 2.0, 2);
        assert!((b[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((b[1] - c(-1.0, 0.0)).norm() < 1e-12);
        for theta in [0.1, 0.7, 2.0, 3.0] {
            assert!(steering(theta, 5).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn serving_set_selection() {
        let g = DMatrix::from_row_slice(1, 3, &[3.0, 1.0, 2.0]);
        assert_eq!(select_serving_aps(&g, 2).unwrap(), vec![vec![0, 2]]);
        assert_eq!(select_serving_aps(&g, 3).unwrap(), vec![vec![0, 1, 2]]);
        let eq = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        assert_eq!(select_serving_aps(&eq, 1).unwrap(), vec![vec![0]]);
        assert!(select_serving_aps(&g, 4).is_err());
    }

    #[test]
    fn placement_is_deterministic_and_in_range() {
        let cfg = ScenarioConfig::default();
        let g1 = place_network(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let g2 = place_network(&cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(g1, g2);
        for p in g1.ap_positions.iter().chain(&g1.vehicle_positions) {
            assert!(p.iter().all(|&x| (0.0..=cfg.area_side_km).contains(&x)));
        }
        assert!(g1.reflection_coeffs.iter().all(|e| (0.8..=1.0).contains(e)));
        assert!(g1.target_distances_m.iter().all(|d| (40.0..=50.0).contains(d)));
        assert!(g1.target_angles.iter().all(|t| (0.0..=PI).contains(t)));
    }

    #[test]
    fn target_angle_mean_is_half_pi() {
        let cfg = ScenarioConfig { num_vehicles: 10_000, num_aps: 1, serving_set_size: 1, ..Default::default() };
        let g = place_network(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let mean = g.target_angles.iter().sum::<f64>() / g.target_angles.len() as f64;
        assert!((mean - PI / 2.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn channel_entry_variance_matches_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = complex_gaussian(100, 100, 2.0, &mut rng);
        let var = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e4;
        assert!((var - 4.0).abs() < 0.4, "{var}");
    }

    #[test]
    fn channels_are_deterministic_and_clamped() {
        let cfg = ScenarioConfig::desk();
        let p = PathLossParams::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = place_network(&cfg, &mut rng);
            draw_channels(&g, &cfg, &p, &mut rng).unwrap()
        };
        let a = draw(11);
        let b = draw(11);
        assert_eq!(a.uplink, b.uplink);
        assert_eq!(a.gain_cross, b.gain_cross);
        assert!(a.serving_sets.iter().all(|s| s.len() == cfg.serving_set_size));
        assert!(a.gain_ap.iter().all(|&g| g > 0.0));
        assert!((0..cfg.num_vehicles).all(|k| a.cross[k][k].is_none()));

        // a co-located pair is clamped to the minimum distance
        let max_gain = large_scale_gain(p.min_distance_km, &p).unwrap();
        assert_eq!(large_scale_gain(0.0, &p).unwrap(), max_gain);
        assert!(max_gain.is_finite());
    }
}
