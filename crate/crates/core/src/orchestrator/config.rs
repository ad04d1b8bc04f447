use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamform::Alg2Settings;
use crate::error::{Error, Result};
use crate::metrics::TaskParams;
use crate::offload::{Alg1Settings, Scheme};
use crate::resources::ResourceSettings;
use crate::scenario::{PathLossParams, ScenarioConfig};

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Network dimensions. Keys follow the simulation parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(rename = "M")]
    pub m: usize,
    /// Antennas per AP.
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N_t")]
    pub n_t: usize,
    #[serde(rename = "N_r")]
    pub n_r: usize,
    /// Bandwidth in Hz.
    #[serde(rename = "B")]
    pub b: f64,
    /// Serving set size.
    #[serde(rename = "L")]
    pub l: usize,
    pub area_side_km: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self::from_scenario(&ScenarioConfig::desk())
    }
}

impl NetworkSection {
    fn from_scenario(s: &ScenarioConfig) -> Self {
        Self {
            m: s.num_aps,
            n: s.antennas_per_ap,
            k: s.num_vehicles,
            n_t: s.tx_antennas,
            n_r: s.rx_antennas,
            b: s.bandwidth_hz,
            l: s.serving_set_size,
            area_side_km: s.area_side_km,
        }
    }
}

/// Task and budget parameters in table units: cycles/bit, MB, Hz, bit/s,
/// dB and dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    #[serde(rename = "D_MB")]
    pub d_mb: f64,
    #[serde(rename = "alpha_Loc")]
    pub alpha_loc: f64,
    #[serde(rename = "alpha_MEC")]
    pub alpha_mec: f64,
    #[serde(rename = "alpha_CC")]
    pub alpha_cc: f64,
    #[serde(rename = "f_Loc")]
    pub f_loc: f64,
    #[serde(rename = "F_MEC_max")]
    pub f_mec_max: f64,
    #[serde(rename = "F_CC_max")]
    pub f_cc_max: f64,
    #[serde(rename = "R_f_max")]
    pub r_f_max: f64,
    pub kappa: f64,
    #[serde(rename = "SINR_req_dB")]
    pub sinr_req_db: f64,
    #[serde(rename = "P_max_dBm")]
    pub p_max_dbm: f64,
    #[serde(rename = "P_MEC_max_dBm")]
    pub p_mec_max_dbm: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            d_mb: 0.2,
            alpha_loc: 400.0,
            alpha_mec: 400.0,
            alpha_cc: 400.0,
            f_loc: 3e8,
            f_mec_max: 3e9,
            f_cc_max: 1e10,
            r_f_max: 5e8,
            kappa: 1e-28,
            sinr_req_db: 1.0,
            p_max_dbm: 23.0,
            p_mec_max_dbm: 30.0,
        }
    }
}

impl TaskSection {
    pub fn to_params(&self) -> TaskParams {
        TaskParams {
            task_bits: self.d_mb * 8e6,
            alpha_local: self.alpha_loc,
            alpha_mec: self.alpha_mec,
            alpha_cc: self.alpha_cc,
            kappa_local: self.kappa,
            kappa_mec: self.kappa,
            vehicle_power_max: dbm_to_watts(self.p_max_dbm),
            ap_power_max: dbm_to_watts(self.p_mec_max_dbm),
            mec_freq_max: self.f_mec_max,
            cc_freq_max: self.f_cc_max,
            fronthaul_max: self.r_f_max,
            sinr_req: db_to_linear(self.sinr_req_db),
            local_freq_max: self.f_loc,
        }
    }
}

/// Block tolerances and iteration caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSection {
    pub zeta_offload: f64,
    pub zeta_beam: f64,
    pub zeta_outer: f64,
    pub max_outer: usize,
    pub max_offload_iter: usize,
    pub max_beam_iter: usize,
    pub upsilon_scale: f64,
    pub eps: f64,
    /// Hold `f_Loc` at its table value.
    pub pin_local: bool,
    /// Restart the proposed scheme from each benchmark's final state.
    pub multi_start: bool,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            zeta_offload: 0.01,
            zeta_beam: 1e-3,
            zeta_outer: 0.01,
            max_outer: 30,
            max_offload_iter: 30,
            max_beam_iter: 30,
            upsilon_scale: 100.0,
            eps: 1e-3,
            pin_local: false,
            multi_start: true,
        }
    }
}

impl AlgorithmSection {
    pub fn alg1(&self) -> Alg1Settings {
        Alg1Settings {
            zeta: self.zeta_offload,
            max_iter: self.max_offload_iter,
            upsilon_scale: self.upsilon_scale,
            eps: self.eps,
            ..Alg1Settings::default()
        }
    }

    pub fn alg2(&self) -> Alg2Settings {
        Alg2Settings { zeta: self.zeta_beam, max_iter: self.max_beam_iter, ..Alg2Settings::default() }
    }

    pub fn resources(&self) -> ResourceSettings {
        ResourceSettings { pin_local: self.pin_local, ..ResourceSettings::default() }
    }
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    L,
    #[serde(rename = "F_CC_max")]
    FccMax,
    #[serde(rename = "R_f_max")]
    RfMax,
    #[serde(rename = "SINR_req_dB")]
    SinrReqDb,
    #[serde(rename = "N_t")]
    Nt,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::L, Axis::FccMax, Axis::RfMax, Axis::SinrReqDb, Axis::Nt];

    pub fn name(self) -> &'static str {
        match self {
            Axis::L => "L",
            Axis::FccMax => "F_CC_max",
            Axis::RfMax => "R_f_max",
            Axis::SinrReqDb => "SINR_req_dB",
            Axis::Nt => "N_t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    /// Default sweep points.
    pub fn default_values(self, cfg: &RunConfig) -> Vec<f64> {
        match self {
            Axis::L => (1..=cfg.network.m.min(5)).map(|l| l as f64).collect(),
            Axis::FccMax => vec![3e9, 1e10, 3e10],
            Axis::RfMax => vec![1e8, 5e8, 2e9],
            Axis::SinrReqDb => vec![0.0, 1.0, 5.0],
            Axis::Nt => vec![4.0, 8.0],
        }
    }

    /// Copy of `cfg` with this axis set to `v`.
    pub fn apply(self, cfg: &RunConfig, v: f64) -> Result<RunConfig> {
        let mut out = cfg.clone();
        let count = || {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} needs a positive integer, got {v}", self.name())))
            }
        };
        match self {
            Axis::L => out.network.l = count()?,
            Axis::FccMax => out.task.f_cc_max = v,
            Axis::RfMax => out.task.r_f_max = v,
            Axis::SinrReqDb => out.task.sinr_req_db = v,
            Axis::Nt => out.network.n_t = count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

/// Run selection: scheme, seeds, sweep and output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scheme: String,
    pub trials: usize,
    /// First seed; trial `i` uses `seed + i`.
    pub seed: u64,
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { scheme: "proposed".into(), trials: 20, seed: 0, axis: None, values: None, out: PathBuf::from("results") }
    }
}

/// Complete run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub task: TaskSection,
    pub path_loss: PathLossParams,
    pub algorithm: AlgorithmSection,
    pub run: RunSection,
}

impl RunConfig {
    /// Full-scale network of the simulation table.
    pub fn table() -> Self {
        Self { network: NetworkSection::from_scenario(&ScenarioConfig::default()), ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn scenario(&self) -> ScenarioConfig {
        let n = &self.network;
        ScenarioConfig {
            num_aps: n.m,
            antennas_per_ap: n.n,
            num_vehicles: n.k,
            tx_antennas: n.n_t,
            rx_antennas: n.n_r,
            bandwidth_hz: n.b,
            serving_set_size: n.l,
            area_side_km: n.area_side_km,
            rng_seed: self.run.seed,
        }
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::parse(&self.run.scheme).ok_or_else(|| Error::Config(format!("unknown scheme {:?}", self.run.scheme)))
    }

    pub fn axis(&self) -> Result<Option<Axis>> {
        match &self.run.axis {
            None => Ok(None),
            Some(s) => Axis::parse(s).map(Some).ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        self.path_loss.validate()?;
        self.task.to_params().validate()?;
        let a = &self.algorithm;
        for (name, v) in [
            ("zeta_offload", a.zeta_offload),
            ("zeta_beam", a.zeta_beam),
            ("zeta_outer", a.zeta_outer),
            ("upsilon_scale", a.upsilon_scale),
            ("eps", a.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if a.max_outer == 0 || a.max_offload_iter == 0 || a.max_beam_iter == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        if self.run.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.scheme()?;
        self.axis()?;
        Ok(())
    }
}
