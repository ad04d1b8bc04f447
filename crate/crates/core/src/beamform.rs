//! Beamforming block: WMMSE receivers and weights, the rate surrogate, the
//! linearised sensing constraint and the second-order cone program over all
//! precoders.

use std::f64::consts::LN_2;

use crate::conic::{solve, ConicProblem, ConicSolution, Lin, Var, DEFAULT_TOL};
use crate::linalg::{add_outer, c, dominant_right_singular, hpd_solve, inner, norm_sq, zeros, CMat, CVec};
use crate::metrics::{
    budget_slacks, interference_cov, is_active, mec_power, sensing_sinr, Allocation, BeamformerSet, Instance,
    OffloadMatrix, ResourcePlan, SlackKind,
};
use crate::scenario::ChannelSet;
use crate::{Error, Result};

/// `N_{k,m} + H w w^H H^H` and `H w` for stream `(k, m)`.
fn total_cov(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet) -> Result<(CMat, CVec)> {
    let mut cov = interference_cov(k, m, beams, ch)?;
    let w = beams.comm_for(ch, k, m).expect("serving AP checked by interference_cov");
    let hw = &ch.uplink[k][m] * w;
    add_outer(&mut cov, &hw, 1.0);
    Ok((cov, hw))
}

/// MMSE receiver `(N + H w w^H H^H)^{-1} H w`.
pub fn mmse_receiver(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet) -> Result<CVec> {
    let (cov, hw) = total_cov(k, m, beams, ch)?;
    hpd_solve(&cov, &hw)
}

/// Optimal MSE weight `1 / (1 - w^H H^H (N + H w w^H H^H)^{-1} H w)`.
pub fn wmmse_weight(k: usize, m: usize, beams: &BeamformerSet, ch: &ChannelSet) -> Result<f64> {
    let (cov, hw) = total_cov(k, m, beams, ch)?;
    let q = inner(&hw, &hpd_solve(&cov, &hw)?).re;
    Ok(1.0 / (1.0 - q).max(f64::MIN_POSITIVE))
}

/// Every transmitted stream as `(vehicle, precoder)`.
fn streams(beams: &BeamformerSet) -> impl Iterator<Item = (usize, &CVec)> {
    beams
        .comm
        .iter()
        .zip(&beams.sensing)
        .enumerate()
        .flat_map(|(j, (ws, s))| ws.iter().chain(std::iter::once(s)).map(move |w| (j, w)))
}

/// Mean squared error of stream `(k, m)` under receiver `v`.
pub fn mse(k: usize, m: usize, beams: &BeamformerSet, v: &CVec, ch: &ChannelSet) -> f64 {
    let own = beams.comm_for(ch, k, m).expect("m serves k");
    let mut e = 1.0 + norm_sq(v);
    for (j, w) in streams(beams) {
        e += inner(v, &(&ch.uplink[j][m] * w)).norm_sqr();
    }
    e - 2.0 * inner(v, &(&ch.uplink[k][m] * own)).re
}

/// Rate surrogate `(B / ln 2)(ln V + 1 - V·MSE)` in bit/s. It never exceeds
/// the true rate and matches it at the receiver and weight of the anchor.
pub fn surrogate_rate(
    k: usize,
    m: usize,
    beams: &BeamformerSet,
    v: &CVec,
    weight: f64,
    ch: &ChannelSet,
    bandwidth: f64,
) -> f64 {
    bandwidth / LN_2 * (weight.ln() + 1.0 - weight * mse(k, m, beams, v, ch))
}

/// Affine minorant of `η² N_r |a^H g|²` anchored at `g0`:
/// `η² N_r (2 Re(conj(a^H g0) a^H g) - |a^H g0|²)`.
pub fn sensing_minorant(k: usize, g: &CVec, g0: &CVec, ch: &ChannelSet) -> f64 {
    let a = &ch.tx_steering[k];
    let eta = ch.echo_gain[k];
    let a0 = inner(a, g0);
    let ag = inner(a, g);
    eta * eta * ch.rx_antennas as f64 * (2.0 * (a0.conj() * ag).re - a0.norm_sqr())
}

/// Exact echo term `η² N_r |a^H g|²`.
pub fn sensing_quadratic(k: usize, g: &CVec, ch: &ChannelSet) -> f64 {
    let eta = ch.echo_gain[k];
    eta * eta * ch.rx_antennas as f64 * inner(&ch.tx_steering[k], g).norm_sqr()
}

/// Receivers and weights of the links carrying offloaded data.
#[derive(Debug, Clone)]
pub struct WmmseState {
    /// Aligned with the serving sets; `None` on idle links.
    pub receivers: Vec<Vec<Option<CVec>>>,
    pub weights: Vec<Vec<Option<f64>>>,
}

pub fn link_active(o: &OffloadMatrix, k: usize, m: usize) -> bool {
    is_active(o.mec[(k, m)]) || is_active(o.cc[(k, m)])
}

pub fn wmmse_state(beams: &BeamformerSet, o: &OffloadMatrix, ch: &ChannelSet) -> Result<WmmseState> {
    let mut receivers = Vec::with_capacity(ch.num_vehicles());
    let mut weights = Vec::with_capacity(ch.num_vehicles());
    for k in 0..ch.num_vehicles() {
        let mut rs = Vec::new();
        let mut ws = Vec::new();
        for &m in &ch.serving_sets[k] {
            if link_active(o, k, m) {
                rs.push(Some(mmse_receiver(k, m, beams, ch)?));
                ws.push(Some(wmmse_weight(k, m, beams, ch)?));
            } else {
                rs.push(None);
                ws.push(None);
            }
        }
        receivers.push(rs);
        weights.push(ws);
    }
    Ok(WmmseState { receivers, weights })
}

/// Zeroes the precoders of links that carry no offloaded data.
pub fn zero_idle_links(beams: &BeamformerSet, o: &OffloadMatrix, ch: &ChannelSet) -> BeamformerSet {
    let mut out = beams.clone();
    for k in 0..ch.num_vehicles() {
        for (i, &m) in ch.serving_sets[k].iter().enumerate() {
            if !link_active(o, k, m) {
                out.comm[k][i] = zeros(ch.tx_antennas());
            }
        }
    }
    out
}

/// Precoder budget `P^max - κ (f^Loc)³` of vehicle `k`.
/// Norm cap of any single precoder, in units of `sqrt(P_max)`.
pub const PRECODER_CAP: f64 = 4.0;

pub fn precoder_budget(inst: &Instance, local_freq: f64) -> f64 {
    inst.task.vehicle_power_max - inst.task.kappa_local * local_freq.powi(3)
}

/// Sensing-feasible starting point: most of the budget on the matched
/// sensing beam and the rest on equal-power communication precoders along
/// each link's dominant direction. The communication share is halved until
/// every sensing constraint holds. Returns the beams and whether sensing is
/// satisfied.
pub fn init_beams(inst: &Instance, local_freq: &[f64]) -> (BeamformerSet, bool) {
    let ch = &inst.channels;
    let kk = ch.num_vehicles();
    let build = |share: f64| {
        let mut beams = BeamformerSet::zeros(ch);
        for k in 0..kk {
            let budget = precoder_budget(inst, local_freq[k]).max(0.0);
            let a = &ch.tx_steering[k];
            let sens = a * c((budget * (1.0 - share)).sqrt() / a.norm(), 0.0);
            let l = ch.serving_sets[k].len() as f64;
            for (i, &m) in ch.serving_sets[k].iter().enumerate() {
                let u = dominant_right_singular(&ch.uplink[k][m]);
                beams.comm[k][i] = u * c((budget * share / l).sqrt(), 0.0);
            }
            beams.sensing[k] = sens;
            // the aggregate may exceed the budget when the directions overlap
            let p = norm_sq(&beams.aggregate(k));
            if p > budget && p > 0.0 {
                let s = c((budget / p).sqrt() * (1.0 - 1e-9), 0.0);
                beams.sensing[k] *= s;
                for w in &mut beams.comm[k] {
                    *w *= s;
                }
            }
        }
        beams
    };
    let sensing_ok = |b: &BeamformerSet| (0..kk).all(|k| sensing_sinr(k, b, ch) >= inst.task.sinr_req);
    let mut share = 0.1;
    for _ in 0..30 {
        let beams = build(share);
        if sensing_ok(&beams) {
            return (beams, true);
        }
        share *= 0.5;
    }
    let beams = build(0.0);
    let ok = sensing_ok(&beams);
    (beams, ok)
}

type CVarVec = Vec<(Var, Var)>;
type CExpr = Vec<(Lin, Lin)>;

fn cvar(p: &mut ConicProblem, n: usize) -> CVarVec {
    (0..n).map(|_| (p.var(), p.var())).collect()
}

/// `a^H w` as (real, imaginary) affine forms.
fn inner_var(a: &CVec, w: &CVarVec, s: f64) -> (Lin, Lin) {
    let mut re = Lin::zero();
    let mut im = Lin::zero();
    for (ai, &(wr, wi)) in a.iter().zip(w) {
        // conj(a) w = (ar wr + ai wi) + j (ar wi - ai wr)
        re.add_term(wr, s * ai.re);
        re.add_term(wi, s * ai.im);
        im.add_term(wi, s * ai.re);
        im.add_term(wr, -s * ai.im);
    }
    (re, im)
}

/// `s H w` as a list of (real, imaginary) affine forms.
fn mat_var(h: &CMat, w: &CVarVec, s: f64) -> CExpr {
    (0..h.nrows())
        .map(|i| {
            let row: CVec = CVec::from_fn(h.ncols(), |j, _| h[(i, j)].conj());
            inner_var(&row, w, s)
        })
        .collect()
}

fn flatten(e: CExpr) -> Vec<Lin> {
    e.into_iter().flat_map(|(r, i)| [r, i]).collect()
}

/// Decision variables of the beamforming program.
#[derive(Debug, Clone)]
pub struct BeamVars {
    pub comm: Vec<Vec<Option<CVarVec>>>,
    pub sensing: Vec<CVarVec>,
    pub rate: Vec<Vec<Option<Var>>>,
    pub latency: Vec<Var>,
    pub t: Var,
}

impl BeamVars {
    fn vectors(&self, k: usize) -> impl Iterator<Item = &CVarVec> {
        self.comm[k].iter().flatten().chain(std::iter::once(&self.sensing[k]))
    }

    /// `g_k` as affine forms.
    fn aggregate(&self, k: usize, n: usize) -> CExpr {
        let mut g: CExpr = vec![(Lin::zero(), Lin::zero()); n];
        for w in self.vectors(k) {
            for (gi, &(wr, wi)) in g.iter_mut().zip(w) {
                gi.0.add_term(wr, 1.0);
                gi.1.add_term(wi, 1.0);
            }
        }
        g
    }

    pub fn extract(&self, sol: &ConicSolution, ch: &ChannelSet) -> BeamformerSet {
        let read = |w: &CVarVec| CVec::from_iterator(w.len(), w.iter().map(|&(r, i)| c(sol.value(r), sol.value(i))));
        let mut beams = BeamformerSet::zeros(ch);
        for k in 0..ch.num_vehicles() {
            for (i, w) in self.comm[k].iter().enumerate() {
                if let Some(w) = w {
                    beams.comm[k][i] = read(w);
                }
            }
            beams.sensing[k] = read(&self.sensing[k]);
        }
        beams
    }
}

/// Convex beamforming program around `anchor`. Rates enter through the
/// WMMSE surrogate, the echo power through its linearisation at the anchor,
/// and precoders of idle links are fixed at zero. The objective is left
/// unset.
pub fn build_beam_socp(
    inst: &Instance,
    anchor: &BeamformerSet,
    wmmse: &WmmseState,
    o: &OffloadMatrix,
    plan: &ResourcePlan,
) -> Result<(ConicProblem, BeamVars)> {
    let ch = &inst.channels;
    let task = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let nt = ch.tx_antennas();
    let d = task.task_bits;
    let bw = inst.bandwidth;

    let mut p = ConicProblem::new();
    let t = p.var();
    let mut comm = Vec::with_capacity(kk);
    let mut rate = Vec::with_capacity(kk);
    let mut sensing = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut cs = Vec::new();
        let mut rs = Vec::new();
        for &m in &ch.serving_sets[k] {
            if link_active(o, k, m) {
                cs.push(Some(cvar(&mut p, nt)));
                rs.push(Some(p.var()));
            } else {
                cs.push(None);
                rs.push(None);
            }
        }
        comm.push(cs);
        rate.push(rs);
        sensing.push(cvar(&mut p, nt));
    }
    let latency: Vec<Var> = (0..kk).map(|_| p.var()).collect();
    let vars = BeamVars { comm, sensing, rate, latency, t };

    // surrogate rate rows, scaled by 1/V:
    // (ln V + 1)/V - 1 - ‖v‖² + 2 Re z_own - ln2 r / V >= Σ_s |z_s|²
    for k in 0..kk {
        for (i, &m) in ch.serving_sets[k].iter().enumerate() {
            let (Some(r), Some(v), Some(weight)) = (vars.rate[k][i], &wmmse.receivers[k][i], wmmse.weights[k][i])
            else {
                continue;
            };
            let own = vars.comm[k][i].as_ref().expect("active link has a variable");
            let a_own = ch.uplink[k][m].adjoint() * v;
            let (re_own, _) = inner_var(&a_own, own, 1.0);
            let mut lhs = Lin::constant((weight.ln() + 1.0) / weight - 1.0 - norm_sq(v)) + 2.0 * re_own;
            lhs.add_term(r, -LN_2 / weight);
            let mut cone = Vec::new();
            for j in 0..kk {
                let a = ch.uplink[j][m].adjoint() * v;
                for w in vars.vectors(j) {
                    let (re, im) = inner_var(&a, w, 1.0);
                    cone.push(re);
                    cone.push(im);
                }
            }
            p.rsoc(lhs, Lin::constant(1.0), cone);
            p.nonneg(r);
        }
    }

    for k in 0..kk {
        let (xb, xc) = (o.x_b(k), o.x_c(k));
        let w_loc = (1.0 - xb - xc).max(0.0);
        let mut rhs = Lin::zero();
        if is_active(w_loc) {
            let f = plan.local[k];
            if !(f > 0.0) {
                return Err(Error::InfeasibleStructure(format!("vehicle {k} computes locally at zero frequency")));
            }
            rhs += Lin::constant(w_loc * task.alpha_local * d / f);
        }
        if is_active(xb) {
            let tm = p.var();
            for (i, &m) in ch.serving_sets[k].iter().enumerate() {
                let b = o.mec[(k, m)];
                if !is_active(b) {
                    continue;
                }
                let f = plan.mec[(k, m)];
                if !(f > 0.0) {
                    return Err(Error::InfeasibleStructure(format!("edge frequency of ({k}, {m}) is zero")));
                }
                let r = vars.rate[k][i].expect("active link");
                p.rsoc(tm - task.alpha_mec * b * d / f, r, vec![Lin::constant((b * d / bw).sqrt())]);
            }
            rhs += xb * Lin::from(tm);
        }
        if is_active(xc) {
            let tc = p.var();
            let fc = plan.cc[k];
            if !(fc > 0.0) {
                return Err(Error::InfeasibleStructure(format!("cloud frequency of vehicle {k} is zero")));
            }
            for (i, &m) in ch.serving_sets[k].iter().enumerate() {
                let cf = o.cc[(k, m)];
                if !is_active(cf) {
                    continue;
                }
                let rf = plan.fronthaul[(k, m)];
                if !(rf > 0.0) {
                    return Err(Error::InfeasibleStructure(format!("fronthaul share of ({k}, {m}) is zero")));
                }
                let r = vars.rate[k][i].expect("active link");
                let shift = cf * d / rf + task.alpha_cc * d / fc;
                p.rsoc(tc - shift, r, vec![Lin::constant((cf * d / bw).sqrt())]);
            }
            rhs += xc * Lin::from(tc);
        }
        p.nonneg(vars.latency[k] - rhs);
        p.nonneg(t - vars.latency[k]);
    }

    // vehicle power
    for k in 0..kk {
        let budget = precoder_budget(inst, plan.local[k]);
        if budget < 0.0 {
            return Err(Error::InfeasibleStructure(format!("local compute of vehicle {k} exhausts its power")));
        }
        p.soc(Lin::constant(budget.sqrt()), flatten(vars.aggregate(k, nt)));
        // only g_k is budgeted, so a stream and the sensing beam could grow
        // as +u and -u along a direction no receiver sees
        let cap = PRECODER_CAP * task.vehicle_power_max.sqrt();
        for w in vars.vectors(k) {
            p.soc(Lin::constant(cap), w.iter().flat_map(|&(r, i)| [Lin::from(r), Lin::from(i)]).collect());
        }
    }

    // received power of cloud-bound streams at each AP
    for m in 0..mm {
        let mut cone = Vec::new();
        for k in 0..kk {
            if !is_active(o.cc[(k, m)]) {
                continue;
            }
            if let Some(i) = ch.serving_sets[k].iter().position(|&a| a == m) {
                if let Some(w) = &vars.comm[k][i] {
                    cone.extend(flatten(mat_var(&ch.uplink[k][m], w, ch.noise_power.sqrt())));
                }
            }
        }
        if cone.is_empty() {
            continue;
        }
        let budget = task.ap_power_max - mec_power(m, task, plan, o);
        if budget < 0.0 {
            return Err(Error::InfeasibleStructure(format!("edge compute exhausts the power of AP {m}")));
        }
        p.soc(Lin::constant(budget.sqrt()), cone);
    }

    // linearised sensing: 2 Re(conj(α0) a^H g) - |α0|² - c >= (c / N_r) Σ ‖H g'‖²
    let nr = ch.rx_antennas as f64;
    for k in 0..kk {
        let a = &ch.tx_steering[k];
        let eta = ch.echo_gain[k];
        let req = task.sinr_req / (eta * eta);
        let alpha0 = inner(a, &anchor.aggregate(k));
        let mut lhs = Lin::constant(-alpha0.norm_sqr() - req);
        for w in vars.vectors(k) {
            let (re, im) = inner_var(a, w, 1.0);
            // Re(conj(α0) (re + j im)) = α0.re re + α0.im im
            lhs += 2.0 * alpha0.re * re + 2.0 * alpha0.im * im;
        }
        let scale = (req / nr).sqrt();
        let mut cone = Vec::new();
        for j in 0..kk {
            let Some(h) = &ch.cross[k][j] else { continue };
            for w in vars.vectors(j) {
                cone.extend(flatten(mat_var(h, w, scale)));
            }
        }
        p.rsoc(lhs, Lin::constant(1.0), cone);
    }
    Ok((p, vars))
}

/// Per-iteration record of the beamforming block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamTraceRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Smallest relative sensing slack.
    pub min_sensing_slack: f64,
    /// Smallest relative slack among vehicle and AP power budgets.
    pub min_power_slack: f64,
}

#[derive(Debug, Clone)]
pub struct Alg2Settings {
    pub zeta: f64,
    pub max_iter: usize,
    /// Second stage that minimises the sum of latencies at the optimal max.
    pub lexicographic: bool,
}

impl Default for Alg2Settings {
    fn default() -> Self {
        Self { zeta: 1e-3, max_iter: 30, lexicographic: true }
    }
}

#[derive(Debug, Clone)]
pub struct Alg2Outcome {
    pub beams: BeamformerSet,
    pub objective: f64,
    pub trace: Vec<BeamTraceRecord>,
    pub warning: Option<String>,
}

fn record(inst: &Instance, a: &Allocation, iteration: usize, objective: f64) -> BeamTraceRecord {
    let slacks = budget_slacks(inst, a);
    let pick = |f: &dyn Fn(SlackKind) -> bool| {
        slacks.iter().filter(|s| f(s.kind)).map(|s| s.relative).fold(f64::INFINITY, f64::min)
    };
    BeamTraceRecord {
        iteration,
        objective,
        min_sensing_slack: pick(&|k| k == SlackKind::Sensing),
        min_power_slack: pick(&|k| matches!(k, SlackKind::LocalPower | SlackKind::ApPower)),
    }
}

/// Power and sensing constraints hold to within `tol` (relative).
fn beam_feasible(inst: &Instance, a: &Allocation, tol: f64) -> bool {
    budget_slacks(inst, a)
        .iter()
        .filter(|s| matches!(s.kind, SlackKind::Sensing | SlackKind::LocalPower | SlackKind::ApPower))
        .all(|s| s.relative >= -tol)
}

fn solve_stage(p: &mut ConicProblem, vars: &BeamVars, lexicographic: bool) -> std::result::Result<ConicSolution, String> {
    p.minimize(vars.t);
    let first = match solve(p, DEFAULT_TOL) {
        Ok(s) if s.is_usable() => s,
        Ok(s) => return Err(format!("beam program ended with {:?}", s.status)),
        Err(e) => return Err(e.to_string()),
    };
    if !lexicographic {
        return Ok(first);
    }
    let t_star = first.value(vars.t);
    let mut sum = Lin::zero();
    for &l in &vars.latency {
        sum.add_term(l, 1.0);
    }
    p.leq(vars.t, t_star * (1.0 + 1e-7) + 1e-12);
    p.minimize(sum);
    match solve(p, DEFAULT_TOL) {
        Ok(s) if s.is_usable() => Ok(s),
        _ => Ok(first),
    }
}

/// Alternates WMMSE/linearisation refreshes with cone program solves. A new
/// iterate is kept only when it meets the power and sensing constraints and
/// does not raise the true objective.
pub fn run_algorithm2(
    inst: &Instance,
    incoming: &BeamformerSet,
    o: &OffloadMatrix,
    plan: &ResourcePlan,
    settings: &Alg2Settings,
) -> Result<Alg2Outcome> {
    let ch = &inst.channels;
    let alloc = |beams: &BeamformerSet| Allocation { offload: o.clone(), beams: beams.clone(), plan: plan.clone() };
    let mut beams = incoming.clone();
    let mut obj = inst.objective(&alloc(&beams));
    let mut trace = vec![record(inst, &alloc(&beams), 0, obj)];
    let mut warning = None;

    let trimmed = zero_idle_links(&beams, o, ch);
    let trimmed_obj = inst.objective(&alloc(&trimmed));
    if trimmed_obj <= obj && (beam_feasible(inst, &alloc(&trimmed), 1e-9) || !beam_feasible(inst, &alloc(&beams), 1e-9))
    {
        beams = trimmed;
        obj = trimmed_obj;
    }
    let mut anchor = zero_idle_links(&beams, o, ch);
    let mut restarted = false;

    for n in 1..=settings.max_iter {
        let wmmse = wmmse_state(&anchor, o, ch)?;
        let (mut p, vars) = match build_beam_socp(inst, &anchor, &wmmse, o, plan) {
            Ok(x) => x,
            Err(e) => {
                warning = Some(e.to_string());
                break;
            }
        };
        let sol = match solve_stage(&mut p, &vars, settings.lexicographic) {
            Ok(s) => s,
            Err(msg) => {
                if !restarted {
                    // the anchor may violate sensing; retry from the matched-beam start
                    restarted = true;
                    let (init, _) = init_beams(inst, &plan.local);
                    anchor = zero_idle_links(&init, o, ch);
                    continue;
                }
                warning = Some(msg);
                break;
            }
        };
        let next = vars.extract(&sol, ch);
        let a = alloc(&next);
        let next_obj = inst.objective(&a);
        let feasible = beam_feasible(inst, &a, 1e-7);
        if !feasible || !(next_obj <= obj * (1.0 + 1e-12)) {
            if !feasible && warning.is_none() {
                warning = Some("beam iterate failed the power or sensing check".into());
            }
            if restarted && anchor != zero_idle_links(&beams, o, ch) {
                // the restart anchor did not pay off; continue from the kept beams
                anchor = zero_idle_links(&beams, o, ch);
                continue;
            }
            break;
        }
        let change = (obj - next_obj).abs() / obj.max(next_obj).max(f64::MIN_POSITIVE);
        beams = next;
        obj = next_obj;
        anchor = beams.clone();
        trace.push(record(inst, &a, n, obj));
        if change < settings.zeta {
            break;
        }
    }
    Ok(Alg2Outcome { beams, objective: obj, trace, warning })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::conic::ConeKind;
    use crate::metrics::{rate, rate_logdet, scalar_channel_set, TaskParams};
    use crate::resources::fair_share_plan;
    use crate::scenario::{draw_channels, place_network, PathLossParams, ScenarioConfig};

    fn desk_instance(seed: u64) -> Instance {
        let cfg = ScenarioConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = place_network(&cfg, &mut rng);
        let ch = draw_channels(&geom, &cfg, &PathLossParams::default(), &mut rng).unwrap();
        Instance { channels: ch, task: TaskParams::default(), bandwidth: cfg.bandwidth_hz }
    }

    fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c(re * scale, im * scale)
        })
    }

    fn random_beams(ch: &ChannelSet, scale: f64, rng: &mut ChaCha8Rng) -> BeamformerSet {
        let mut b = BeamformerSet::zeros(ch);
        let nt = ch.tx_antennas();
        for k in 0..ch.num_vehicles() {
            for w in &mut b.comm[k] {
                *w = random_vec(nt, scale, rng);
            }
            b.sensing[k] = random_vec(nt, scale, rng);
        }
        b
    }

    #[test]
    fn scalar_receiver_and_weight() {
        let ch = scalar_channel_set(1.0);
        let mut beams = BeamformerSet::zeros(&ch);
        beams.comm[0][0] = CVec::from_element(1, c(1.0, 0.0));
        let v = mmse_receiver(0, 0, &beams, &ch).unwrap();
        assert!((v[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((wmmse_weight(0, 0, &beams, &ch).unwrap() - 2.0).abs() < 1e-12);
        let zero = BeamformerSet::zeros(&ch);
        assert_eq!(mmse_receiver(0, 0, &zero, &ch).unwrap()[0], c(0.0, 0.0));
        assert_eq!(wmmse_weight(0, 0, &zero, &ch).unwrap(), 1.0);
    }

    #[test]
    fn weight_log_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let inst = desk_instance(seed);
            let ch = &inst.channels;
            let beams = random_beams(ch, 0.05, &mut rng);
            for (k, m) in ch.links() {
                let v_w = wmmse_weight(k, m, &beams, ch).unwrap();
                let r = rate_logdet(k, m, &beams, ch, inst.bandwidth).unwrap();
                let got = inst.bandwidth * v_w.log2();
                assert!((got - r).abs() <= 1e-9 * r.abs().max(1.0), "{got} vs {r}");
            }
        }
    }

    #[test]
    fn receiver_minimises_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = desk_instance(4);
        let ch = &inst.channels;
        let beams = random_beams(ch, 0.05, &mut rng);
        let (k, m) = ch.links().next().unwrap();
        let v = mmse_receiver(k, m, &beams, ch).unwrap();
        let best = mse(k, m, &beams, &v, ch);
        for _ in 0..1000 {
            let pert = &v + random_vec(v.len(), 1e-3 * v.norm(), &mut rng);
            assert!(mse(k, m, &beams, &pert, ch) >= best - 1e-12);
        }
        // MSE at the optimum equals 1 / V
        let wt = wmmse_weight(k, m, &beams, ch).unwrap();
        assert!((best * wt - 1.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_is_tight_and_below_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..100 {
            let inst = desk_instance(seed % 10);
            let ch = &inst.channels;
            let beams = random_beams(ch, 0.05, &mut rng);
            let (k, m) = ch.links().nth(seed as usize % 6).unwrap();
            let v = mmse_receiver(k, m, &beams, ch).unwrap();
            let wt = wmmse_weight(k, m, &beams, ch).unwrap();
            let r = rate(k, m, &beams, ch, inst.bandwidth).unwrap();
            let s = surrogate_rate(k, m, &beams, &v, wt, ch, inst.bandwidth);
            assert!((s - r).abs() <= 1e-9 * r.max(1.0), "{s} vs {r}");
            let other = random_beams(ch, 0.05, &mut rng);
            let s2 = surrogate_rate(k, m, &other, &v, wt, ch, inst.bandwidth);
            let r2 = rate(k, m, &other, ch, inst.bandwidth).unwrap();
            assert!(s2 <= r2 + 1e-9 * r2.max(1.0));
        }
    }

    #[test]
    fn surrogate_at_zero_precoders() {
        let inst = desk_instance(1);
        let ch = &inst.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let beams = random_beams(ch, 0.05, &mut rng);
        let (k, m) = ch.links().next().unwrap();
        let v = mmse_receiver(k, m, &beams, ch).unwrap();
        let wt = wmmse_weight(k, m, &beams, ch).unwrap();
        let zero = BeamformerSet::zeros(ch);
        let s = surrogate_rate(k, m, &zero, &v, wt, ch, inst.bandwidth);
        let expect = inst.bandwidth / LN_2 * (wt.ln() + 1.0 - wt * (1.0 + norm_sq(&v)));
        assert!((s - expect).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn sensing_minorant_below_quadratic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ch = desk_instance(seed % 5).channels;
            ch.echo_gain = vec![0.9; ch.num_vehicles()];
            let n = ch.tx_antennas();
            let g = random_vec(n, 1.0, &mut rng);
            let g0 = random_vec(n, 1.0, &mut rng);
            let q = sensing_quadratic(0, &g, &ch);
            prop_assert!(sensing_minorant(0, &g, &g0, &ch) <= q + 1e-10 * q.max(1.0));
            let q0 = sensing_quadratic(0, &g0, &ch);
            prop_assert!((sensing_minorant(0, &g0, &g0, &ch) - q0).abs() <= 1e-10 * q0.max(1.0));
        }
    }

    #[test]
    fn sensing_minorant_at_zero() {
        let ch = desk_instance(2).channels;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g0 = random_vec(ch.tx_antennas(), 1e-6, &mut rng);
        let zero = zeros(ch.tx_antennas());
        let m = sensing_minorant(0, &zero, &g0, &ch);
        assert!(m <= 0.0);
        assert!((m + sensing_quadratic(0, &g0, &ch)).abs() <= 1e-9 * m.abs());
    }

    fn offloaded(inst: &Instance) -> OffloadMatrix {
        let ch = &inst.channels;
        let mut o = OffloadMatrix::zeros(ch.num_vehicles(), ch.num_aps());
        for k in 0..ch.num_vehicles() {
            let set = &ch.serving_sets[k];
            if k % 2 == 0 {
                o.mec[(k, set[0])] = 0.5;
                o.mec[(k, set[1])] = 0.5;
            } else {
                o.cc[(k, set[0])] = 1.0;
            }
        }
        o
    }

    #[test]
    fn cone_audit_and_previous_point_feasible() {
        let inst = desk_instance(3);
        let ch = &inst.channels;
        let (beams, ok) = init_beams(&inst, &vec![inst.task.local_freq_max; ch.num_vehicles()]);
        assert!(ok);
        let plan = fair_share_plan(&inst, &beams);
        let o = offloaded(&inst);
        let anchor = zero_idle_links(&beams, &o, ch);
        let wm = wmmse_state(&anchor, &o, ch).unwrap();
        let (p, _) = build_beam_socp(&inst, &anchor, &wm, &o, &plan).unwrap();
        assert!(p.cones().iter().all(|c| matches!(c.kind, ConeKind::Nonneg | ConeKind::Soc | ConeKind::Rsoc)));
        let out = run_algorithm2(&inst, &beams, &o, &plan, &Alg2Settings::default()).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-6 * w[0].objective);
        }
        assert!(out.trace.len() >= 2, "{:?} {:?}", out.trace, out.warning);
        let a = Allocation { offload: o, beams: out.beams, plan };
        for k in 0..ch.num_vehicles() {
            assert!(sensing_sinr(k, &a.beams, ch) >= inst.task.sinr_req * (1.0 - 1e-6));
        }
    }

    #[test]
    fn loose_tolerance_gives_one_iteration() {
        let inst = desk_instance(6);
        let ch = &inst.channels;
        let (beams, _) = init_beams(&inst, &vec![inst.task.local_freq_max; ch.num_vehicles()]);
        let plan = fair_share_plan(&inst, &beams);
        let o = offloaded(&inst);
        let s = Alg2Settings { zeta: 1.0, ..Alg2Settings::default() };
        let out = run_algorithm2(&inst, &beams, &o, &plan, &s).unwrap();
        assert!(out.trace.len() <= 2);
    }

    #[test]
    fn single_precoders_stay_capped() {
        let inst = desk_instance(6);
        let ch = &inst.channels;
        let (beams, _) = init_beams(&inst, &vec![inst.task.local_freq_max; ch.num_vehicles()]);
        let plan = fair_share_plan(&inst, &beams);
        let out = run_algorithm2(&inst, &beams, &offloaded(&inst), &plan, &Alg2Settings::default()).unwrap();
        let cap = PRECODER_CAP * inst.task.vehicle_power_max.sqrt();
        for k in 0..ch.num_vehicles() {
            for w in out.beams.comm[k].iter().chain([&out.beams.sensing[k]]) {
                assert!(w.norm() <= cap * (1.0 + 1e-6));
            }
        }
    }

    #[test]
    fn more_power_never_hurts() {
        let inst = desk_instance(7);
        let ch = &inst.channels;
        let (beams, _) = init_beams(&inst, &vec![inst.task.local_freq_max; ch.num_vehicles()]);
        let plan = fair_share_plan(&inst, &beams);
        let o = offloaded(&inst);
        let anchor = zero_idle_links(&beams, &o, ch);
        let wm = wmmse_state(&anchor, &o, ch).unwrap();
        let opt = |inst: &Instance| {
            let (mut p, vars) = build_beam_socp(inst, &anchor, &wm, &o, &plan).unwrap();
            p.minimize(vars.t);
            solve(&p, DEFAULT_TOL).unwrap().value(vars.t)
        };
        let mut rich = inst.clone();
        rich.task.vehicle_power_max *= 2.0;
        assert!(opt(&rich) <= opt(&inst) * (1.0 + 1e-6));
    }

    #[test]
    fn sensing_only_beam_aligns_with_target() {
        let mut inst = desk_instance(2);
        let cfg = ScenarioConfig { num_vehicles: 1, ..ScenarioConfig::desk() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = place_network(&cfg, &mut rng);
        inst.channels = draw_channels(&geom, &cfg, &PathLossParams::default(), &mut rng).unwrap();
        let ch = inst.channels.clone();
        let budget = precoder_budget(&inst, inst.task.local_freq_max);
        let a = &ch.tx_steering[0];
        let eta = ch.echo_gain[0];
        // requirement just below what a perfectly matched beam achieves
        inst.task.sinr_req = 0.9999 * eta * eta * budget * a.norm_squared();
        let mut perp = CVec::from_fn(a.len(), |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        perp -= a * (inner(a, &perp) / c(a.norm_squared(), 0.0));
        let g0 = (a / c(a.norm(), 0.0) + &perp * c(0.003 / perp.norm(), 0.0)) * c(budget.sqrt() * 0.99999, 0.0);
        let mut beams = BeamformerSet::zeros(&ch);
        beams.sensing[0] = g0 / c(1.00001, 0.0);
        let o = OffloadMatrix::zeros(1, ch.num_aps());
        let mut plan = ResourcePlan::zeros(1, ch.num_aps());
        plan.local[0] = inst.task.local_freq_max;
        let wm = wmmse_state(&beams, &o, &ch).unwrap();
        let (mut p, vars) = build_beam_socp(&inst, &beams, &wm, &o, &plan).unwrap();
        p.minimize(vars.t);
        let sol = solve(&p, DEFAULT_TOL).unwrap();
        assert!(sol.is_usable());
        let g = vars.extract(&sol, &ch).aggregate(0);
        let corr = inner(a, &g).norm() / (a.norm() * g.norm());
        assert!(corr > 0.999, "{corr}");
    }

    #[test]
    fn init_beams_respect_budget() {
        let inst = desk_instance(9);
        let ch = &inst.channels;
        let f = vec![inst.task.local_freq_max; ch.num_vehicles()];
        let (beams, ok) = init_beams(&inst, &f);
        assert!(ok);
        for k in 0..ch.num_vehicles() {
            assert!(norm_sq(&beams.aggregate(k)) <= precoder_budget(&inst, f[k]));
        }
    }
}
