//! Closed-form model quantities: link rates, sensing SINR, per-tier
//! latencies, power draw and budget slacks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_outer, c, det, hpd_solve, inner, norm_sq, zeros, CMat, CVec};
use crate::scenario::ChannelSet;
use crate::{Error, Result};

/// Fractions at or below this value count as inactive for `U(t)`.
pub const STEP_THRESHOLD: f64 = 1e-9;

/// Unit step with the activity threshold applied.
pub fn step(t: f64) -> f64 {
    if t > STEP_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

pub fn is_active(t: f64) -> bool {
    t > STEP_THRESHOLD
}

/// Communication precoders `w_{k,m}` (aligned with the serving set of `k`)
/// and sensing precoders `w_k^sen`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub comm: Vec<Vec<CVec>>,
    pub sensing: Vec<CVec>,
}

impl BeamformerSet {
    pub fn zeros(ch: &ChannelSet) -> Self {
        let nt = ch.tx_antennas();
        Self {
            comm: ch.serving_sets.iter().map(|s| vec![zeros(nt); s.len()]).collect(),
            sensing: vec![zeros(nt); ch.num_vehicles()],
        }
    }

    /// `g_k = Σ_m w_{k,m} + w_k^sen`.
    pub fn aggregate(&self, k: usize) -> CVec {
        let mut g = self.sensing[k].clone();
        for w in &self.comm[k] {
            g += w;
        }
        g
    }

    /// Precoder toward AP `m`, if `m` serves `k`.
    pub fn comm_for<'a>(&'a self, ch: &ChannelSet, k: usize, m: usize) -> Option<&'a CVec> {
        ch.serving_sets[k].iter().position(|&a| a == m).map(|i| &self.comm[k][i])
    }

    /// Sum of per-stream transmit powers of vehicle `k`.
    pub fn stream_power(&self, k: usize) -> f64 {
        norm_sq(&self.sensing[k]) + self.comm[k].iter().map(norm_sq).sum::<f64>()
    }

    pub fn check_shape(&self, ch: &ChannelSet) -> Result<()> {
        let nt = ch.tx_antennas();
        let ok = self.comm.len() == ch.num_vehicles()
            && self.sensing.len() == ch.num_vehicles()
            && self.comm.iter().zip(&ch.serving_sets).all(|(w, s)| w.len() == s.len())
            && self.comm.iter().flatten().chain(&self.sensing).all(|w| w.len() == nt);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("beamformer set does not match the channel dimensions".into()))
        }
    }
}

/// Offloading fractions `b_{k,m}` (edge) and `c_{k,m}` (cloud), `K x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadMatrix {
    pub mec: DMatrix<f64>,
    pub cc: DMatrix<f64>,
}

impl OffloadMatrix {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self { mec: DMatrix::zeros(k, m), cc: DMatrix::zeros(k, m) }
    }

    pub fn x_b(&self, k: usize) -> f64 {
        self.mec.row(k).sum()
    }

    pub fn x_c(&self, k: usize) -> f64 {
        self.cc.row(k).sum()
    }

    pub fn num_vehicles(&self) -> usize {
        self.mec.nrows()
    }

    pub fn validate(&self, ch: &ChannelSet, tol: f64) -> Result<()> {
        let (k, m) = (ch.num_vehicles(), ch.num_aps());
        if self.mec.shape() != (k, m) || self.cc.shape() != (k, m) {
            return Err(Error::InvalidInput("offload matrix has the wrong shape".into()));
        }
        for i in 0..k {
            for a in 0..m {
                for v in [self.mec[(i, a)], self.cc[(i, a)]] {
                    if !(-tol..=1.0 + tol).contains(&v) {
                        return Err(Error::ConstraintViolation(format!("fraction {v} outside [0, 1]")));
                    }
                    if !ch.serves(i, a) && v.abs() > tol {
                        return Err(Error::ConstraintViolation(format!(
                            "vehicle {i} offloads to AP {a} outside its serving set"
                        )));
                    }
                }
            }
            if self.x_b(i) + self.x_c(i) > 1.0 + tol {
                return Err(Error::ConstraintViolation(format!("vehicle {i} offloads more than its task")));
            }
        }
        Ok(())
    }
}

/// Task sizes, processing densities, hardware constants and budgets. All
/// vehicles and APs share the same values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Bits per task. 0.2 MB is read as 0.2e6 bytes.
    pub task_bits: f64,
    pub alpha_local: f64,
    pub alpha_mec: f64,
    pub alpha_cc: f64,
    pub kappa_local: f64,
    pub kappa_mec: f64,
    pub vehicle_power_max: f64,
    pub ap_power_max: f64,
    pub mec_freq_max: f64,
    pub cc_freq_max: f64,
    pub fronthaul_max: f64,
    /// Linear sensing SINR requirement.
    pub sinr_req: f64,
    /// Upper bound on the local CPU frequency.
    pub local_freq_max: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            task_bits: 1.6e6,
            alpha_local: 400.0,
            alpha_mec: 400.0,
            alpha_cc: 400.0,
            kappa_local: 1e-28,
            kappa_mec: 1e-28,
            vehicle_power_max: 10f64.powf(-0.7),
            ap_power_max: 1.0,
            mec_freq_max: 3e9,
            cc_freq_max: 1e10,
            fronthaul_max: 5e8,
            sinr_req: 10f64.powf(0.1),
            local_freq_max: 3e8,
        }
    }
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("task_bits", self.task_bits),
            ("alpha_local", self.alpha_local),
            ("alpha_mec", self.alpha_mec),
            ("alpha_cc", self.alpha_cc),
            ("kappa_local", self.kappa_local),
            ("kappa_mec", self.kappa_mec),
            ("vehicle_power_max", self.vehicle_power_max),
            ("ap_power_max", self.ap_power_max),
            ("mec_freq_max", self.mec_freq_max),
            ("cc_freq_max", self.cc_freq_max),
            ("fronthaul_max", self.fronthaul_max),
            ("sinr_req", self.sinr_req),
            ("local_freq_max", self.local_freq_max),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Execution frequencies and fronthaul shares.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePlan {
    pub local: Vec<f64>,
    /// `K x M`.
    pub mec: DMatrix<f64>,
    pub cc: Vec<f64>,
    /// `K x M`, bit/s.
    pub fronthaul: DMatrix<f64>,
}

impl ResourcePlan {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self { local: vec![0.0; k], mec: DMatrix::zeros(k, m), cc: vec![0.0; k], fronthaul: DMatrix::zeros(k, m) }
    }
}

/// Per-vehicle latencies and their components, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub local: Vec<f64>,
    pub mec: Vec<f64>,
    pub cc: Vec<f64>,
    pub total: Vec<f64>,
    pub mec_tx: DMatrix<f64>,
    pub mec_compute: DMatrix<f64>,
    pub cc_uplink: DMatrix<f64>,
    pub cc_fronthaul: DMatrix<f64>,
    pub cc_compute: Vec<f64>,
    pub max_latency: f64,
}

/// `N_{k,m}`: interference plus (identity) noise seen by stream `(k, m)`.
pub fn interference_cov(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet) -> Result<CMat> {
    beams.check_shape(ch)?;
    let own = ch.serving_sets[k]
        .iter()
        .position(|&a| a == m)
        .ok_or_else(|| Error::InvalidInput(format!("AP {m} does not serve vehicle {k}")))?;
    let n = ch.ap_antennas();
    let mut cov = CMat::identity(n, n);
    for j in 0..ch.num_vehicles() {
        let h = &ch.uplink[j][m];
        for (i, w) in beams.comm[j].iter().enumerate() {
            if j == k && i == own {
                continue;
            }
            add_outer(&mut cov, &(h * w), 1.0);
        }
        add_outer(&mut cov, &(h * &beams.sensing[j]), 1.0);
    }
    Ok(cov)
}

/// `B log2(1 + w^H H^H N^{-1} H w)`.
pub fn rate_with_cov(h: &CMat, w: &CVec, ncov: &CMat, bandwidth: f64) -> Result<f64> {
    let hw = h * w;
    if norm_sq(&hw) == 0.0 {
        return Ok(0.0);
    }
    let x = hpd_solve(ncov, &hw)?;
    let q = inner(&hw, &x).re.max(0.0);
    Ok(bandwidth * (1.0 + q).log2())
}

/// Rate of stream `(k, m)` in bit/s.
pub fn rate(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet, bandwidth: f64) -> Result<f64> {
    let ncov = interference_cov(k, m, beams, ch)?;
    let w = beams.comm_for(ch, k, m).expect("serving AP checked above");
    rate_with_cov(&ch.uplink[k][m], w, &ncov, bandwidth)
}

/// Log-det form `B log2 det(I + H w w^H H^H N^{-1})`.
pub fn rate_logdet(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet, bandwidth: f64) -> Result<f64> {
    let ncov = interference_cov(k, m, beams, ch)?;
    let w = beams.comm_for(ch, k, m).expect("serving AP checked above");
    let hw = &ch.uplink[k][m] * w;
    let inv = ncov
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular interference covariance".into()))?;
    let n = hw.len();
    let mut s = CMat::zeros(n, n);
    add_outer(&mut s, &hw, 1.0);
    let mat = CMat::identity(n, n) + s * inv;
    Ok(bandwidth * det(&mat).re.log2())
}

/// `K x M` rate matrix, zero outside the serving sets.
pub fn all_rates(beams: &BeamformerSet, ch: &ChannelSet, bandwidth: f64) -> Result<DMatrix<f64>> {
    beams.check_shape(ch)?;
    let n = ch.ap_antennas();
    // total received covariance at each AP, own stream removed per link below
    let totals: Vec<CMat> = (0..ch.num_aps())
        .map(|m| {
            let mut cov = CMat::identity(n, n);
            for j in 0..ch.num_vehicles() {
                let h = &ch.uplink[j][m];
                for w in beams.comm[j].iter().chain(std::iter::once(&beams.sensing[j])) {
                    add_outer(&mut cov, &(h * w), 1.0);
                }
            }
            cov
        })
        .collect();
    let mut out = DMatrix::zeros(ch.num_vehicles(), ch.num_aps());
    for (k, m) in ch.links() {
        let w = beams.comm_for(ch, k, m).unwrap();
        let hw = &ch.uplink[k][m] * w;
        let mut ncov = totals[m].clone();
        add_outer(&mut ncov, &hw, -1.0);
        out[(k, m)] = rate_with_cov(&ch.uplink[k][m], w, &ncov, bandwidth)?;
    }
    Ok(out)
}

/// Radar SINR of vehicle `k`; interferers contribute through their own
/// aggregate precoders.
pub fn sensing_sinr(k: usize, beams: &BeamformerSet, ch: &ChannelSet) -> f64 {
    let nr = ch.rx_antennas as f64;
    let g = beams.aggregate(k);
    let eta = ch.echo_gain[k];
    let num = eta * eta * nr * inner(&ch.tx_steering[k], &g).norm_sqr();
    let mut den = nr;
    for j in 0..ch.num_vehicles() {
        if let Some(h) = &ch.cross[k][j] {
            den += norm_sq(&(h * beams.aggregate(j)));
        }
    }
    num / den
}

pub fn local_latency(k: usize, task: &TaskParams, plan: &ResourcePlan) -> Result<f64> {
    let f = plan.local[k];
    if !(f > 0.0) {
        return Err(Error::DivideByZero(format!("local frequency of vehicle {k} is {f}")));
    }
    Ok(task.alpha_local * task.task_bits / f)
}

/// `κ f³ + g^H g`.
pub fn local_power(k: usize, task: &TaskParams, plan: &ResourcePlan, beams: &BeamformerSet) -> f64 {
    task.kappa_local * plan.local[k].powi(3) + norm_sq(&beams.aggregate(k))
}

fn link_terms(frac: f64, bits: f64, rate: f64, second: f64, what: &str, k: usize, m: usize) -> Result<(f64, f64)> {
    if frac <= 0.0 {
        return Ok((0.0, 0.0));
    }
    if rate > 0.0 && second > 0.0 {
        return Ok((frac * bits / rate, frac * bits / second));
    }
    if is_active(frac) {
        Err(Error::InfeasibleLatency(format!(
            "vehicle {k} sends a {what} fraction {frac} to AP {m} with rate {rate} and divisor {second}"
        )))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Edge tier latency and its per-AP transmission/compute components.
pub fn mec_latency(
    k: usize,
    task: &TaskParams,
    plan: &ResourcePlan,
    offload: &OffloadMatrix,
    rates: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let m_count = offload.mec.ncols();
    let mut tx = vec![0.0; m_count];
    let mut comp = vec![0.0; m_count];
    let mut worst: f64 = 0.0;
    for m in 0..m_count {
        let b = offload.mec[(k, m)];
        let (t1, t2) = link_terms(b, task.task_bits, rates[(k, m)], plan.mec[(k, m)], "MEC", k, m)?;
        tx[m] = t1;
        comp[m] = task.alpha_mec * t2;
        worst = worst.max(tx[m] + comp[m]);
    }
    Ok((worst, tx, comp))
}

/// Cloud tier latency with per-AP uplink/fronthaul components and the
/// compute term. Reported as zero when the vehicle sends nothing to the cloud.
pub fn cc_latency(
    k: usize,
    task: &TaskParams,
    plan: &ResourcePlan,
    offload: &OffloadMatrix,
    rates: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>, f64)> {
    let m_count = offload.cc.ncols();
    let mut up = vec![0.0; m_count];
    let mut fh = vec![0.0; m_count];
    let mut worst: f64 = 0.0;
    for m in 0..m_count {
        let cf = offload.cc[(k, m)];
        let (t1, t2) = link_terms(cf, task.task_bits, rates[(k, m)], plan.fronthaul[(k, m)], "CC", k, m)?;
        up[m] = t1;
        fh[m] = t2;
        worst = worst.max(t1 + t2);
    }
    if !is_active(offload.x_c(k)) {
        return Ok((0.0, up, fh, 0.0));
    }
    let f = plan.cc[k];
    if !(f > 0.0) {
        return Err(Error::InfeasibleLatency(format!("vehicle {k} uses the cloud with frequency {f}")));
    }
    let comp = task.alpha_cc * task.task_bits / f;
    Ok((worst + comp, up, fh, comp))
}

/// `Σ_k U(b_{k,m}) κ (f_{k,m})³`.
pub fn mec_power(m: usize, task: &TaskParams, plan: &ResourcePlan, offload: &OffloadMatrix) -> f64 {
    (0..offload.num_vehicles())
        .map(|k| step(offload.mec[(k, m)]) * task.kappa_mec * plan.mec[(k, m)].powi(3))
        .sum()
}

/// Received communication power from cloud-bound streams at AP `m`, in watts.
pub fn ap_received_power(m: usize, beams: &BeamformerSet, offload: &OffloadMatrix, ch: &ChannelSet) -> f64 {
    (0..ch.num_vehicles())
        .filter(|&k| is_active(offload.cc[(k, m)]))
        .filter_map(|k| beams.comm_for(ch, k, m).map(|w| norm_sq(&(&ch.uplink[k][m] * w))))
        .sum::<f64>()
        * ch.noise_power
}

/// Per-vehicle total latency `(1-x_b-x_c) T_loc + x_b T_mec + x_c T_cc`
/// together with every component and the maximum over vehicles.
pub fn total_latency(
    task: &TaskParams,
    plan: &ResourcePlan,
    offload: &OffloadMatrix,
    rates: &DMatrix<f64>,
) -> Result<LatencyReport> {
    let (kk, mm) = offload.mec.shape();
    let mut rep = LatencyReport {
        local: vec![0.0; kk],
        mec: vec![0.0; kk],
        cc: vec![0.0; kk],
        total: vec![0.0; kk],
        mec_tx: DMatrix::zeros(kk, mm),
        mec_compute: DMatrix::zeros(kk, mm),
        cc_uplink: DMatrix::zeros(kk, mm),
        cc_fronthaul: DMatrix::zeros(kk, mm),
        cc_compute: vec![0.0; kk],
        max_latency: 0.0,
    };
    for k in 0..kk {
        let xb = offload.x_b(k);
        let xc = offload.x_c(k);
        if xb + xc > 1.0 + 1e-6 {
            return Err(Error::ConstraintViolation(format!("vehicle {k}: x_b + x_c = {}", xb + xc)));
        }
        let w_loc = (1.0 - xb - xc).max(0.0);
        rep.local[k] = if plan.local[k] > 0.0 {
            local_latency(k, task, plan)?
        } else if is_active(w_loc) {
            return Err(Error::InfeasibleLatency(format!("vehicle {k} computes locally at zero frequency")));
        } else {
            0.0
        };
        let (tm, tx, comp) = mec_latency(k, task, plan, offload, rates)?;
        let (tc, up, fh, ccomp) = cc_latency(k, task, plan, offload, rates)?;
        rep.mec[k] = if is_active(xb) { tm } else { 0.0 };
        rep.cc[k] = tc;
        rep.cc_compute[k] = ccomp;
        for m in 0..mm {
            rep.mec_tx[(k, m)] = tx[m];
            rep.mec_compute[(k, m)] = comp[m];
            rep.cc_uplink[(k, m)] = up[m];
            rep.cc_fronthaul[(k, m)] = fh[m];
        }
        rep.total[k] = w_loc * rep.local[k] + xb * rep.mec[k] + xc * rep.cc[k];
        rep.max_latency = rep.max_latency.max(rep.total[k]);
    }
    Ok(rep)
}

/// One network realisation together with its task parameters.
#[derive(Debug, Clone)]
pub struct Instance {
    pub channels: ChannelSet,
    pub task: TaskParams,
    pub bandwidth: f64,
}

/// Complete decision state of the min-max latency problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub offload: OffloadMatrix,
    pub beams: BeamformerSet,
    pub plan: ResourcePlan,
}

impl Instance {
    pub fn num_vehicles(&self) -> usize {
        self.channels.num_vehicles()
    }

    pub fn num_aps(&self) -> usize {
        self.channels.num_aps()
    }

    pub fn rates(&self, beams: &BeamformerSet) -> Result<DMatrix<f64>> {
        all_rates(beams, &self.channels, self.bandwidth)
    }

    pub fn evaluate(&self, a: &Allocation) -> Result<LatencyReport> {
        let rates = self.rates(&a.beams)?;
        total_latency(&self.task, &a.plan, &a.offload, &rates)
    }

    /// Max latency, or infinity when the state has no finite latency.
    pub fn objective(&self, a: &Allocation) -> f64 {
        self.evaluate(a).map_or(f64::INFINITY, |r| r.max_latency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlackKind {
    LocalPower,
    ApPower,
    MecCapacity,
    Fronthaul,
    CloudCapacity,
    Sensing,
    OffloadSum,
    OffloadBox,
}

/// Signed slack of one constraint; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    pub kind: SlackKind,
    pub index: usize,
    pub slack: f64,
    /// Slack divided by the constraint's budget (or requirement).
    pub relative: f64,
}

/// Slacks of every power, capacity, fronthaul, sensing and offloading
/// constraint.
pub fn budget_slacks(inst: &Instance, a: &Allocation) -> Vec<Slack> {
    let ch = &inst.channels;
    let t = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let mut out = Vec::new();
    let mut push = |kind, index, slack: f64, scale: f64| out.push(Slack { kind, index, slack, relative: slack / scale });

    for k in 0..kk {
        let s = t.vehicle_power_max - local_power(k, t, &a.plan, &a.beams);
        push(SlackKind::LocalPower, k, s, t.vehicle_power_max);
    }
    for m in 0..mm {
        let used = mec_power(m, t, &a.plan, &a.offload) + ap_received_power(m, &a.beams, &a.offload, ch);
        push(SlackKind::ApPower, m, t.ap_power_max - used, t.ap_power_max);
        let f: f64 = (0..kk).map(|k| step(a.offload.mec[(k, m)]) * a.plan.mec[(k, m)]).sum();
        push(SlackKind::MecCapacity, m, t.mec_freq_max - f, t.mec_freq_max);
        let r: f64 = (0..kk).map(|k| step(a.offload.cc[(k, m)]) * a.plan.fronthaul[(k, m)]).sum();
        push(SlackKind::Fronthaul, m, t.fronthaul_max - r, t.fronthaul_max);
    }
    let fcc: f64 = (0..kk).map(|k| a.offload.x_c(k) * a.plan.cc[k]).sum();
    push(SlackKind::CloudCapacity, 0, t.cc_freq_max - fcc, t.cc_freq_max);
    for k in 0..kk {
        let s = sensing_sinr(k, &a.beams, ch) - t.sinr_req;
        push(SlackKind::Sensing, k, s, t.sinr_req);
        push(SlackKind::OffloadSum, k, 1.0 - a.offload.x_b(k) - a.offload.x_c(k), 1.0);
        let mut box_slack = f64::INFINITY;
        for m in 0..mm {
            for v in [a.offload.mec[(k, m)], a.offload.cc[(k, m)]] {
                box_slack = box_slack.min(v).min(1.0 - v);
            }
        }
        push(SlackKind::OffloadBox, k, box_slack, 1.0);
    }
    out
}

/// Constraints whose relative slack is below `-tol`.
pub fn check_budgets(inst: &Instance, a: &Allocation, tol: f64) -> Vec<Slack> {
    budget_slacks(inst, a).into_iter().filter(|s| s.relative < -tol).collect()
}

/// Smallest relative slack over all constraints.
pub fn min_relative_slack(inst: &Instance, a: &Allocation) -> f64 {
    budget_slacks(inst, a).iter().map(|s| s.relative).fold(f64::INFINITY, f64::min)
}

/// Single-antenna network with channel amplitudes `h` (`K x M`), every AP
/// serving every vehicle and silent cross channels.
#[doc(hidden)]
pub fn scalar_network(h: &DMatrix<f64>) -> ChannelSet {
    let (kk, mm) = h.shape();
    let one = |v: f64| CMat::from_element(1, 1, c(v, 0.0));
    ChannelSet {
        uplink: (0..kk).map(|k| (0..mm).map(|m| one(h[(k, m)])).collect()).collect(),
        cross: (0..kk).map(|k| (0..kk).map(|j| (j != k).then(|| one(0.0))).collect()).collect(),
        gain_ap: h.map(|v| v * v),
        gain_cross: DMatrix::zeros(kk, kk),
        serving_sets: vec![(0..mm).collect(); kk],
        noise_power: 1.0,
        tx_steering: vec![CVec::from_element(1, c(1.0, 0.0)); kk],
        echo_gain: vec![1.0; kk],
        rx_antennas: 1,
    }
}

#[doc(hidden)]
pub fn scalar_channel_set(h: f64) -> ChannelSet {
    let one = |v: f64| CMat::from_element(1, 1, c(v, 0.0));
    ChannelSet {
        uplink: vec![vec![one(h)]],
        cross: vec![vec![None]],
        gain_ap: DMatrix::from_element(1, 1, 1.0),
        gain_cross: DMatrix::zeros(1, 1),
        serving_sets: vec![vec![0]],
        noise_power: 1.0,
        tx_steering: vec![CVec::from_element(1, c(1.0, 0.0))],
        echo_gain: vec![1.0],
        rx_antennas: 1,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::dominant_right_singular;
    use crate::scenario::{draw_channels, place_network, steering, PathLossParams, ScenarioConfig};

    fn desk_channels(seed: u64) -> ChannelSet {
        let cfg = ScenarioConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = place_network(&cfg, &mut rng);
        draw_channels(&g, &cfg, &PathLossParams::default(), &mut rng).unwrap()
    }

    fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * scale)
    }

    fn random_beams(ch: &ChannelSet, rng: &mut ChaCha8Rng) -> BeamformerSet {
        let nt = ch.tx_antennas();
        BeamformerSet {
            comm: ch.serving_sets.iter().map(|s| s.iter().map(|_| random_vec(nt, 0.1, rng)).collect()).collect(),
            sensing: (0..ch.num_vehicles()).map(|_| random_vec(nt, 0.2, rng)).collect(),
        }
    }

    fn is_hermitian(a: &CMat) -> bool {
        (a - a.adjoint()).norm() <= 1e-9 * a.norm()
    }

    #[test]
    fn interference_cov_cases() {
        let ch = desk_channels(1);
        let zero = BeamformerSet::zeros(&ch);
        let (k, m) = ch.links().next().unwrap();
        let n = ch.ap_antennas();
        assert_eq!(interference_cov(k, m, &zero, &ch).unwrap(), CMat::identity(n, n));

        let single = scalar_channel_set(2.0);
        let mut b = BeamformerSet::zeros(&single);
        b.comm[0][0][0] = c(3.0, 0.0);
        assert_eq!(interference_cov(0, 0, &b, &single).unwrap(), CMat::identity(1, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let beams = random_beams(&ch, &mut rng);
        for (k, m) in ch.links() {
            let cov = interference_cov(k, m, &beams, &ch).unwrap();
            assert!(is_hermitian(&cov));
            let herm = (cov.clone() + cov.adjoint()) * c(0.5, 0.0);
            let eig = herm.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= 1.0 - 1e-10), "{eig:?}");
        }
        let bad = (0..ch.num_aps()).find(|&m| !ch.serves(0, m)).unwrap();
        assert!(interference_cov(0, bad, &beams, &ch).is_err());
    }

    #[test]
    fn rate_cases() {
        let ch = desk_channels(2);
        let zero = BeamformerSet::zeros(&ch);
        let (k, m) = ch.links().next().unwrap();
        assert_eq!(rate(k, m, &zero, &ch, 1e7).unwrap(), 0.0);

        let single = scalar_channel_set(1.0);
        let mut b = BeamformerSet::zeros(&single);
        b.comm[0][0][0] = c(1.0, 0.0);
        assert!((rate(0, 0, &b, &single, 1e7).unwrap() - 1e7).abs() < 1e-6);
    }

    #[test]
    fn logdet_and_scalar_rates_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let ch = desk_channels(100 + seed);
            let beams = random_beams(&ch, &mut rng);
            let all = all_rates(&beams, &ch, 1e7).unwrap();
            for (k, m) in ch.links() {
                let r1 = rate(k, m, &beams, &ch, 1e7).unwrap();
                let r2 = rate_logdet(k, m, &beams, &ch, 1e7).unwrap();
                assert!((r1 - r2).abs() <= 1e-12 * r1.abs().max(1.0) * 10.0, "{r1} {r2}");
                assert!((all[(k, m)] - r1).abs() <= 1e-9 * r1, "{} {r1}", all[(k, m)]);
            }
        }
    }

    #[test]
    fn noise_normalisation_is_equivalent() {
        let ch = desk_channels(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beams = random_beams(&ch, &mut rng);
        let pn = ch.noise_power;
        let s = c(pn.sqrt(), 0.0);
        for (k, m) in ch.links() {
            let normalised = rate(k, m, &beams, &ch, 1e7).unwrap();
            // rebuild the covariance on raw channels with explicit noise P_n I
            let n = ch.ap_antennas();
            let mut cov = CMat::identity(n, n) * c(pn, 0.0);
            for j in 0..ch.num_vehicles() {
                let raw = &ch.uplink[j][m] * s;
                for (i, w) in beams.comm[j].iter().enumerate() {
                    if j == k && ch.serving_sets[k][i] == m {
                        continue;
                    }
                    add_outer(&mut cov, &(&raw * w), 1.0);
                }
                add_outer(&mut cov, &(&raw * &beams.sensing[j]), 1.0);
            }
            let raw_h = &ch.uplink[k][m] * s;
            let w = beams.comm_for(&ch, k, m).unwrap();
            let explicit = rate_with_cov(&raw_h, w, &cov, 1e7).unwrap();
            assert!((explicit - normalised).abs() <= 1e-12 * normalised.max(1.0) * 10.0);
        }
    }

    #[test]
    fn sensing_sinr_cases() {
        let nt = 8;
        let theta = 0.7;
        let mut ch = scalar_channel_set(1.0);
        ch.tx_steering = vec![steering(theta, nt)];
        ch.rx_antennas = 8;
        ch.uplink = vec![vec![CMat::zeros(1, nt)]];
        let mut b = BeamformerSet { comm: vec![vec![zeros(nt)]], sensing: vec![zeros(nt)] };
        let a = steering(theta, nt);
        b.sensing[0] = &a * c(1.0 / (nt as f64).sqrt(), 0.0);
        assert!((sensing_sinr(0, &b, &ch) - 8.0).abs() < 1e-12);

        let s = 1.7;
        let mut scaled = b.clone();
        scaled.sensing[0] *= c(s, 0.0);
        assert!((sensing_sinr(0, &scaled, &ch) - 8.0 * s * s).abs() < 1e-10);

        // e_0 with its component along the steering vector removed
        let mut e0 = zeros(nt);
        e0[0] = c(1.0, 0.0);
        let proj = inner(&a, &e0) / c(nt as f64, 0.0);
        b.sensing[0] = &e0 - &a * proj;
        assert!(sensing_sinr(0, &b, &ch) < 1e-20);
    }

    #[test]
    fn sensing_interference_uses_interferer_precoder() {
        let ch = desk_channels(6);
        let mut b = BeamformerSet::zeros(&ch);
        b.sensing[0] = steering(0.3, ch.tx_antennas());
        let alone = sensing_sinr(0, &b, &ch);
        b.sensing[1] = dominant_right_singular(ch.cross[0][1].as_ref().unwrap());
        let with = sensing_sinr(0, &b, &ch);
        assert!(with < alone);
    }

    fn table_plan(k: usize, m: usize) -> ResourcePlan {
        let mut p = ResourcePlan::zeros(k, m);
        p.local = vec![3e8; k];
        p.mec.fill(3e9);
        p.cc = vec![1e10; k];
        p.fronthaul.fill(5e8);
        p
    }

    #[test]
    fn local_latency_and_power() {
        let t = TaskParams::default();
        let p = table_plan(1, 1);
        assert!((local_latency(0, &t, &p).unwrap() - 2.1333333333).abs() < 1e-9);
        let ch = scalar_channel_set(1.0);
        let zero = BeamformerSet::zeros(&ch);
        assert_eq!(local_power(0, &t, &p, &zero), t.kappa_local * 3e8f64.powi(3));
        assert!((local_power(0, &t, &p, &zero) - 2.7e-3).abs() < 1e-15);
        let mut z = p.clone();
        z.local[0] = 0.0;
        assert!(matches!(local_latency(0, &t, &z), Err(Error::DivideByZero(_))));
    }

    #[test]
    fn mec_latency_cases() {
        let t = TaskParams::default();
        let p = table_plan(1, 2);
        let rates = DMatrix::from_element(1, 2, 4e7);
        let mut o = OffloadMatrix::zeros(1, 2);
        o.mec[(0, 0)] = 1.0;
        let (tm, tx, comp) = mec_latency(0, &t, &p, &o, &rates).unwrap();
        assert!((tm - 0.253333333333).abs() < 1e-9);
        assert!((tx[0] - 0.04).abs() < 1e-12 && (comp[0] - 0.2133333333).abs() < 1e-9);
        o.mec[(0, 0)] = 0.5;
        o.mec[(0, 1)] = 0.5;
        assert!((mec_latency(0, &t, &p, &o, &rates).unwrap().0 - 0.126666666667).abs() < 1e-9);
        let zero = OffloadMatrix::zeros(1, 2);
        assert_eq!(mec_latency(0, &t, &p, &zero, &rates).unwrap().0, 0.0);
        let dead = DMatrix::zeros(1, 2);
        assert!(matches!(mec_latency(0, &t, &p, &o, &dead), Err(Error::InfeasibleLatency(_))));
    }

    #[test]
    fn cc_latency_cases() {
        let t = TaskParams::default();
        let p = table_plan(1, 1);
        let rates = DMatrix::from_element(1, 1, 4e7);
        let mut o = OffloadMatrix::zeros(1, 1);
        o.cc[(0, 0)] = 1.0;
        let (tc, up, fh, comp) = cc_latency(0, &t, &p, &o, &rates).unwrap();
        assert!((fh[0] - 3.2e-3).abs() < 1e-15);
        assert!((comp - 0.064).abs() < 1e-15);
        assert!((tc - (0.04 + 3.2e-3 + 0.064)).abs() < 1e-12);
        assert!((up[0] - 0.04).abs() < 1e-15);
        let zero = OffloadMatrix::zeros(1, 1);
        assert_eq!(cc_latency(0, &t, &p, &zero, &rates).unwrap().0, 0.0);
    }

    #[test]
    fn mec_power_cases() {
        let t = TaskParams::default();
        let p = table_plan(2, 1);
        let mut o = OffloadMatrix::zeros(2, 1);
        assert_eq!(mec_power(0, &t, &p, &o), 0.0);
        o.mec[(0, 0)] = 1.0;
        let one = mec_power(0, &t, &p, &o);
        assert!((one - 2.7).abs() < 1e-12);
        o.mec[(1, 0)] = 0.3;
        assert_eq!(mec_power(0, &t, &p, &o), 2.0 * one);
    }

    #[test]
    fn total_latency_recombination() {
        let t = TaskParams::default();
        let p = table_plan(1, 1);
        let rates = DMatrix::from_element(1, 1, 4e7);
        let tl = 2.1333333333333333;
        let tm = 0.04 + 0.21333333333333333;
        let eval = |xb: f64, xc: f64| {
            let mut o = OffloadMatrix::zeros(1, 1);
            o.mec[(0, 0)] = xb;
            o.cc[(0, 0)] = xc;
            total_latency(&t, &p, &o, &rates)
        };
        assert!((eval(0.0, 0.0).unwrap().total[0] - tl).abs() < 1e-12);
        let pure = eval(1.0, 0.0).unwrap();
        assert!((pure.total[0] - pure.mec[0]).abs() < 1e-15 && (pure.mec[0] - tm).abs() < 1e-12);
        let half = eval(0.5, 0.5).unwrap();
        assert!((half.total[0] - 0.5 * (half.mec[0] + half.cc[0])).abs() < 1e-15);
        assert!((half.cc[0] - (0.02 + 1.6e-3 + 0.064)).abs() < 1e-12);
        assert!(matches!(eval(0.7, 0.7), Err(Error::ConstraintViolation(_))));
    }

    fn budget_instance() -> (Instance, Allocation) {
        let ch = desk_channels(3);
        let (k, m) = (ch.num_vehicles(), ch.num_aps());
        let inst = Instance { channels: ch, task: TaskParams::default(), bandwidth: 1e7 };
        let a = Allocation {
            offload: OffloadMatrix::zeros(k, m),
            beams: BeamformerSet::zeros(&inst.channels),
            plan: table_plan(k, m),
        };
        (inst, a)
    }

    #[test]
    fn zero_beams_violate_sensing() {
        let (inst, a) = budget_instance();
        let v = check_budgets(&inst, &a, 1e-6);
        assert!(!v.is_empty());
        assert!(v.iter().all(|s| s.kind == SlackKind::Sensing));
        assert_eq!(v.len(), inst.num_vehicles());
    }

    #[test]
    fn capacity_boundary_probe() {
        let (inst, mut a) = budget_instance();
        for k in 0..inst.num_vehicles() {
            a.beams.sensing[k] = steering(0.0, inst.channels.tx_antennas()) * c(0.1, 0.0);
        }
        let (k0, m0) = inst.channels.links().next().unwrap();
        a.offload.mec[(k0, m0)] = 1.0;
        a.plan.mec.fill(0.0);
        a.plan.mec[(k0, m0)] = 3e9 + 1.0;
        let mut task = inst.task.clone();
        task.ap_power_max = 10.0;
        task.sinr_req = 1e-6;
        let inst = Instance { task, ..inst };
        let v = check_budgets(&inst, &a, 0.0);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, SlackKind::MecCapacity);
        assert_eq!(v[0].index, m0);
        assert_eq!(v[0].slack, -1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn recombination_matches_direct_formula(xb in 0.0f64..1.0, split in 0.0f64..1.0, r in 1e6f64..1e9) {
            let xc = (1.0 - xb) * split;
            let t = TaskParams::default();
            let p = table_plan(1, 2);
            let rates = DMatrix::from_element(1, 2, r);
            let mut o = OffloadMatrix::zeros(1, 2);
            o.mec[(0, 0)] = xb * 0.3;
            o.mec[(0, 1)] = xb * 0.7;
            o.cc[(0, 1)] = xc;
            let rep = total_latency(&t, &p, &o, &rates).unwrap();
            let d = t.task_bits;
            let tl = t.alpha_local * d / 3e8;
            let tm = (0.7 * xb * d / r + t.alpha_mec * 0.7 * xb * d / 3e9)
                .max(0.3 * xb * d / r + t.alpha_mec * 0.3 * xb * d / 3e9);
            let tc = if xc > STEP_THRESHOLD { xc * d / r + xc * d / 5e8 + t.alpha_cc * d / 1e10 } else { 0.0 };
            let tm = if xb > STEP_THRESHOLD { tm } else { 0.0 };
            let direct = (1.0 - xb - xc) * tl + xb * tm + xc * tc;
            prop_assert!((rep.total[0] - direct).abs() <= 1e-12 * direct.max(1.0));
        }

        #[test]
        fn latency_is_homogeneous_in_task_size(s in 0.1f64..10.0, xb in 0.0f64..1.0) {
            let t = TaskParams::default();
            let t2 = TaskParams { task_bits: t.task_bits * s, ..t.clone() };
            let p = table_plan(1, 1);
            let rates = DMatrix::from_element(1, 1, 3e7);
            let mut o = OffloadMatrix::zeros(1, 1);
            o.mec[(0, 0)] = xb;
            o.cc[(0, 0)] = (1.0 - xb) * 0.5;
            let a = total_latency(&t, &p, &o, &rates).unwrap();
            let b = total_latency(&t2, &p, &o, &rates).unwrap();
            for (x, y) in a.total.iter().zip(&b.total) {
                prop_assert!((y - s * x).abs() <= 1e-12 * y.abs().max(1e-12));
            }
            prop_assert!((b.cc_compute[0] - s * a.cc_compute[0]).abs() <= 1e-12 * b.cc_compute[0].max(1e-12));
        }

        #[test]
        fn step_function_threshold(t in -1.0f64..1.0) {
            prop_assert_eq!(step(t), if t > 1e-9 { 1.0 } else { 0.0 });
        }

        #[test]
        fn budgets_monotone_in_frequency(f1 in 1e8f64..3e9, df in 0.0f64..1e9) {
            let (inst, mut a) = budget_instance();
            let (k0, m0) = inst.channels.links().next().unwrap();
            a.offload.mec[(k0, m0)] = 1.0;
            a.plan.mec[(k0, m0)] = f1;
            let s1 = budget_slacks(&inst, &a);
            a.plan.mec[(k0, m0)] = f1 + df;
            let s2 = budget_slacks(&inst, &a);
            for (x, y) in s1.iter().zip(&s2) {
                if matches!(x.kind, SlackKind::MecCapacity | SlackKind::ApPower) {
                    prop_assert!(y.slack <= x.slack);
                }
            }
        }
    }
}
