//! Offloading block: penalty-relaxed offloading fractions solved as a
//! sequence of linear programs, its per-vehicle initializer, and the final
//! rounding with a pattern-fixed repair.

use nalgebra::DMatrix;

use crate::conic::{solve, ConicProblem, Lin, Var, DEFAULT_TOL};
use crate::linalg::norm_sq;
use crate::metrics::{is_active, min_relative_slack, Allocation, BeamformerSet, Instance, OffloadMatrix, ResourcePlan};
use crate::resources::fit_plan_to_pattern;
use crate::Result;

/// Which tiers a run may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Proposed,
    Local,
    Mec,
    Cc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::Local, Scheme::Mec, Scheme::Cc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Local => "local",
            Scheme::Mec => "mec",
            Scheme::Cc => "cc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name().eq_ignore_ascii_case(s))
    }

    pub fn allows_mec(self) -> bool {
        matches!(self, Scheme::Proposed | Scheme::Mec)
    }

    pub fn allows_cc(self) -> bool {
        matches!(self, Scheme::Proposed | Scheme::Cc)
    }
}

/// Tier assigned to one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Local,
    Mec,
    Cc,
}

/// Penalty factors, step weights and their constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    pub rho_b: Vec<f64>,
    pub rho_c: Vec<f64>,
    pub upsilon: f64,
    pub w_b: DMatrix<f64>,
    pub w_c: DMatrix<f64>,
    pub eps: f64,
    pub iter: usize,
}

/// `υ (1 - x) x`.
pub fn penalty_factor(upsilon: f64, x_prev: f64) -> f64 {
    upsilon * (1.0 - x_prev) * x_prev
}

/// Concave penalty `G(x) = (1 - x) x` of a fraction sum.
pub fn penalty(x: f64) -> f64 {
    (1.0 - x) * x
}

/// Tangent upper bound of `G` at `x0`, returned as `(constant, slope)`:
/// `G(x) <= x0² + (1 - 2 x0) x`.
pub fn penalty_majorant(x0: f64) -> (f64, f64) {
    (x0 * x0, 1.0 - 2.0 * x0)
}

/// First-order expansion of `x t` around `(x0, t0)`.
pub fn bilinear_linearize(x: Lin, t: Lin, x0: f64, t0: f64) -> Lin {
    x0 * t + t0 * x - x0 * t0
}

pub fn bilinear_value(x: f64, t: f64, x0: f64, t0: f64) -> f64 {
    x0 * t + t0 * x - x0 * t0
}

/// `1 / (prev + ε)`.
pub fn step_weight(prev: f64, eps: f64) -> f64 {
    1.0 / (prev + eps)
}

/// Tangent of the smoothed link indicator `b / (b + ε)` at the anchor whose
/// step weight is `w = 1 / (b0 + ε)`, as `(constant, slope)`. At `b0 = 0`
/// the slope is the step weight itself.
pub fn activity_majorant(w: f64, eps: f64) -> (f64, f64) {
    ((1.0 - eps * w).powi(2), eps * w * w)
}

impl PenaltyState {
    pub fn new(k: usize, m: usize, upsilon: f64, eps: f64) -> Self {
        Self {
            rho_b: vec![0.0; k],
            rho_c: vec![0.0; k],
            upsilon,
            w_b: DMatrix::from_element(k, m, step_weight(0.0, eps)),
            w_c: DMatrix::from_element(k, m, step_weight(0.0, eps)),
            eps,
            iter: 0,
        }
    }

    /// Factors never decrease, otherwise a binary iterate zeroes its own
    /// penalty and the next LP walks back to a fraction.
    pub fn penalty_update(&mut self, prev: &OffloadMatrix) {
        for k in 0..prev.num_vehicles() {
            self.rho_b[k] = self.rho_b[k].max(penalty_factor(self.upsilon, prev.x_b(k).clamp(0.0, 1.0)));
            self.rho_c[k] = self.rho_c[k].max(penalty_factor(self.upsilon, prev.x_c(k).clamp(0.0, 1.0)));
        }
    }

    pub fn weight_update(&mut self, prev: &OffloadMatrix) {
        self.w_b = prev.mec.map(|b| step_weight(b.max(0.0), self.eps));
        self.w_c = prev.cc.map(|c| step_weight(c.max(0.0), self.eps));
        self.iter += 1;
    }
}

/// Frozen beamformers and resources seen by the offloading block.
#[derive(Debug, Clone, Copy)]
pub struct Frozen<'a> {
    pub inst: &'a Instance,
    pub beams: &'a BeamformerSet,
    pub plan: &'a ResourcePlan,
    pub rates: &'a DMatrix<f64>,
    pub scheme: Scheme,
}

/// Per-pair unit latencies under the frozen state. Pairs that are not yet
/// active are priced with the residual capacity they could receive alone.
#[derive(Debug, Clone)]
pub struct Prospect {
    pub allow_mec: DMatrix<bool>,
    pub allow_cc: DMatrix<bool>,
    /// `D/R + α D / f` per unit edge fraction.
    pub tau_mec: DMatrix<f64>,
    /// `D/R + D / r` per unit cloud fraction.
    pub tau_cc: DMatrix<f64>,
    /// Cloud compute time `α D / f_cc`.
    pub theta_cc: Vec<f64>,
    pub mec_freq: DMatrix<f64>,
    pub fronthaul: DMatrix<f64>,
    pub cc_freq: Vec<f64>,
    /// Received power `P_n ‖H w‖²` of each link, watts.
    pub recv: DMatrix<f64>,
}

const FREQ_FLOOR: f64 = 1e3;

pub fn prospect(fz: &Frozen, current: &OffloadMatrix) -> Prospect {
    let inst = fz.inst;
    let ch = &inst.channels;
    let t = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let d = t.task_bits;

    let mut recv = DMatrix::zeros(kk, mm);
    for (k, m) in ch.links() {
        if let Some(w) = fz.beams.comm_for(ch, k, m) {
            recv[(k, m)] = ch.noise_power * norm_sq(&(&ch.uplink[k][m] * w));
        }
    }

    let mut mec_freq = DMatrix::zeros(kk, mm);
    let mut fronthaul = DMatrix::zeros(kk, mm);
    for m in 0..mm {
        let act_b: Vec<usize> = (0..kk).filter(|&k| is_active(current.mec[(k, m)])).collect();
        let act_c: Vec<usize> = (0..kk).filter(|&k| is_active(current.cc[(k, m)])).collect();
        let used_f: f64 = act_b.iter().map(|&k| fz.plan.mec[(k, m)]).sum();
        let used_p: f64 = act_b.iter().map(|&k| t.kappa_mec * fz.plan.mec[(k, m)].powi(3)).sum::<f64>()
            + act_c.iter().map(|&k| recv[(k, m)]).sum::<f64>();
        let used_r: f64 = act_c.iter().map(|&k| fz.plan.fronthaul[(k, m)]).sum();
        let f_res = (t.mec_freq_max - used_f).max(0.0);
        let p_res = (t.ap_power_max - used_p).max(0.0);
        let f_new = f_res.min((p_res / t.kappa_mec).cbrt());
        let r_new = (t.fronthaul_max - used_r).max(0.0);
        for k in 0..kk {
            mec_freq[(k, m)] = if act_b.contains(&k) { fz.plan.mec[(k, m)] } else { f_new };
            fronthaul[(k, m)] = if act_c.contains(&k) { fz.plan.fronthaul[(k, m)] } else { r_new };
        }
    }
    let used_cc: f64 = (0..kk)
        .filter(|&k| is_active(current.x_c(k)))
        .map(|k| current.x_c(k) * fz.plan.cc[k])
        .sum();
    let cc_res = (t.cc_freq_max - used_cc).max(0.0);
    let cc_freq: Vec<f64> =
        (0..kk).map(|k| if is_active(current.x_c(k)) { fz.plan.cc[k] } else { cc_res }).collect();

    let mut allow_mec = DMatrix::from_element(kk, mm, false);
    let mut allow_cc = DMatrix::from_element(kk, mm, false);
    let mut tau_mec = DMatrix::from_element(kk, mm, f64::INFINITY);
    let mut tau_cc = DMatrix::from_element(kk, mm, f64::INFINITY);
    let theta_cc: Vec<f64> = cc_freq
        .iter()
        .map(|&f| if f > FREQ_FLOOR { t.alpha_cc * d / f } else { f64::INFINITY })
        .collect();
    for (k, m) in ch.links() {
        let r = fz.rates[(k, m)];
        if !(r > 0.0) {
            continue;
        }
        // a pair whose AP power is already spent by this link cannot take edge work
        if fz.scheme.allows_mec() && mec_freq[(k, m)] > FREQ_FLOOR {
            allow_mec[(k, m)] = true;
            tau_mec[(k, m)] = d / r + t.alpha_mec * d / mec_freq[(k, m)];
        }
        if fz.scheme.allows_cc() && fronthaul[(k, m)] > FREQ_FLOOR && theta_cc[k].is_finite() {
            allow_cc[(k, m)] = true;
            tau_cc[(k, m)] = d / r + d / fronthaul[(k, m)];
        }
    }
    Prospect { allow_mec, allow_cc, tau_mec, tau_cc, theta_cc, mec_freq, fronthaul, cc_freq, recv }
}

/// Latency of a full offload with the best split over the allowed pairs:
/// `1 / Σ 1/τ_m`.
fn best_split_latency(taus: impl Iterator<Item = f64>) -> f64 {
    let inv: f64 = taus.filter(|t| t.is_finite()).map(|t| 1.0 / t).sum();
    if inv > 0.0 {
        1.0 / inv
    } else {
        f64::INFINITY
    }
}

/// Auxiliary tier latencies `(t_mec, t_cc)` of an offloading state; a tier
/// that is not in use is anchored at its best full-offload latency.
pub fn tier_anchors(p: &Prospect, o: &OffloadMatrix, k: usize) -> (f64, f64) {
    let mm = o.mec.ncols();
    let tm = if is_active(o.x_b(k)) {
        (0..mm).filter(|&m| p.allow_mec[(k, m)]).map(|m| o.mec[(k, m)] * p.tau_mec[(k, m)]).fold(0.0, f64::max)
    } else {
        best_split_latency((0..mm).filter(|&m| p.allow_mec[(k, m)]).map(|m| p.tau_mec[(k, m)]))
    };
    let tc = if is_active(o.x_c(k)) {
        (0..mm).filter(|&m| p.allow_cc[(k, m)]).map(|m| o.cc[(k, m)] * p.tau_cc[(k, m)]).fold(0.0, f64::max)
            + p.theta_cc[k]
    } else {
        best_split_latency((0..mm).filter(|&m| p.allow_cc[(k, m)]).map(|m| p.tau_cc[(k, m)])) + p.theta_cc[k]
    };
    (tm, tc)
}

/// Variables of the offloading LP.
#[derive(Debug, Clone)]
pub struct LpVars {
    pub b: Vec<Vec<(usize, Var)>>,
    pub c: Vec<Vec<(usize, Var)>>,
    pub t_mec: Vec<Option<Var>>,
    pub t_cc: Vec<Option<Var>>,
    pub t: Var,
}

impl LpVars {
    pub fn extract(&self, x: &[f64], k: usize, m: usize) -> OffloadMatrix {
        let mut o = OffloadMatrix::zeros(k, m);
        for (i, row) in self.b.iter().enumerate() {
            for &(a, v) in row {
                o.mec[(i, a)] = x[v.index()].clamp(0.0, 1.0);
            }
        }
        for (i, row) in self.c.iter().enumerate() {
            for &(a, v) in row {
                o.cc[(i, a)] = x[v.index()].clamp(0.0, 1.0);
            }
        }
        // strip interior-point dust so the step function reads the intended support
        o.mec.iter_mut().chain(o.cc.iter_mut()).for_each(|v| {
            if *v < 1e-6 {
                *v = 0.0
            }
        });
        o
    }
}

fn sum_lin(vars: &[(usize, Var)]) -> Lin {
    let mut e = Lin::zero();
    for &(_, v) in vars {
        e.add_term(v, 1.0);
    }
    e
}

/// Linearised penalty LP around the offloading state `anchor`.
pub fn build_offload_lp(
    fz: &Frozen,
    p: &Prospect,
    anchor: &OffloadMatrix,
    state: &PenaltyState,
) -> (ConicProblem, LpVars) {
    let inst = fz.inst;
    let ch = &inst.channels;
    let task = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let mut lp = ConicProblem::new();
    let t = lp.var();
    let mut vars = LpVars { b: vec![vec![]; kk], c: vec![vec![]; kk], t_mec: vec![None; kk], t_cc: vec![None; kk], t };
    let mut objective = Lin::from(t);

    for k in 0..kk {
        for &m in &ch.serving_sets[k] {
            if p.allow_mec[(k, m)] {
                vars.b[k].push((m, lp.var()));
            }
            if p.allow_cc[(k, m)] {
                vars.c[k].push((m, lp.var()));
            }
        }
        for &(_, v) in vars.b[k].iter().chain(&vars.c[k]) {
            lp.nonneg(v);
        }
        let xb = sum_lin(&vars.b[k]);
        let xc = sum_lin(&vars.c[k]);
        let (tm0, tc0) = tier_anchors(p, anchor, k);
        let (xb0, xc0) = (anchor.x_b(k), anchor.x_c(k));
        let t_loc = task.alpha_local * task.task_bits / fz.plan.local[k];

        let mut rhs = Lin::constant(t_loc) - t_loc * xb.clone() - t_loc * xc.clone();
        if !vars.b[k].is_empty() {
            let tm = lp.var();
            vars.t_mec[k] = Some(tm);
            for &(m, v) in &vars.b[k] {
                lp.nonneg(tm - p.tau_mec[(k, m)] * v);
            }
            rhs += bilinear_linearize(xb.clone(), tm.into(), xb0, tm0);
            let (_, slope) = penalty_majorant(xb0);
            objective += state.rho_b[k] * slope * xb.clone();
        }
        if !vars.c[k].is_empty() {
            let tc = lp.var();
            vars.t_cc[k] = Some(tc);
            lp.nonneg(tc - p.theta_cc[k]);
            for &(m, v) in &vars.c[k] {
                lp.nonneg(tc - p.tau_cc[(k, m)] * v - p.theta_cc[k]);
            }
            rhs += bilinear_linearize(xc.clone(), tc.into(), xc0, tc0);
            let (_, slope) = penalty_majorant(xc0);
            objective += state.rho_c[k] * slope * xc.clone();
        }
        lp.nonneg(t - rhs);

        let total = xb.clone() + xc.clone();
        match fz.scheme {
            Scheme::Proposed => lp.leq(total, 1.0),
            Scheme::Mec if !vars.b[k].is_empty() => {
                lp.leq(xb.clone(), 1.0);
                lp.nonneg(xb - 1.0);
            }
            Scheme::Cc if !vars.c[k].is_empty() => {
                lp.leq(xc.clone(), 1.0);
                lp.nonneg(xc - 1.0);
            }
            _ => lp.leq(total, 1.0),
        }
    }

    // AP rows over the linearised link indicators, each normalised by its budget
    let eps = state.eps;
    for m in 0..mm {
        let mut cap = Lin::zero();
        let mut pow = Lin::zero();
        let mut fh = Lin::zero();
        let add = |row: &mut Lin, v: Var, w: f64, cost: f64| {
            let (c0, g) = activity_majorant(w, eps);
            row.add_term(v, g * cost);
            row.constant += c0 * cost;
        };
        for k in 0..kk {
            for &(a, v) in &vars.b[k] {
                if a == m {
                    let f = p.mec_freq[(k, m)];
                    add(&mut cap, v, state.w_b[(k, m)], f / task.mec_freq_max);
                    add(&mut pow, v, state.w_b[(k, m)], task.kappa_mec * f.powi(3) / task.ap_power_max);
                }
            }
            for &(a, v) in &vars.c[k] {
                if a == m {
                    add(&mut pow, v, state.w_c[(k, m)], p.recv[(k, m)] / task.ap_power_max);
                    add(&mut fh, v, state.w_c[(k, m)], p.fronthaul[(k, m)] / task.fronthaul_max);
                }
            }
        }
        for row in [cap, pow, fh] {
            if !row.terms.is_empty() {
                lp.leq(row, 1.0);
            }
        }
    }
    let mut cloud = Lin::zero();
    for k in 0..kk {
        for &(_, v) in &vars.c[k] {
            cloud.add_term(v, p.cc_freq[k] / task.cc_freq_max);
        }
    }
    if !cloud.terms.is_empty() {
        lp.leq(cloud, 1.0);
    }
    lp.minimize(objective);
    (lp, vars)
}

/// One record per accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct Alg1Settings {
    pub zeta: f64,
    pub max_iter: usize,
    /// `υ = upsilon_scale · t`.
    pub upsilon_scale: f64,
    pub eps: f64,
    /// Largest `min(x, 1 - x)` accepted as converged.
    pub binary_tol: f64,
}

impl Default for Alg1Settings {
    fn default() -> Self {
        Self { zeta: 0.01, max_iter: 30, upsilon_scale: 100.0, eps: 1e-3, binary_tol: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct Alg1Outcome {
    pub offload: OffloadMatrix,
    pub plan: ResourcePlan,
    pub objective: f64,
    pub trace: Vec<TraceRecord>,
    /// Relaxed fractions and their objective before rounding.
    pub relaxed: OffloadMatrix,
    pub relaxed_objective: f64,
    /// Objective after rounding and repair.
    pub rounded_objective: f64,
    pub rejected: usize,
    pub warning: Option<String>,
}

/// Evaluates a candidate offloading state: the plan is fitted to the new
/// pattern and the state must meet every budget.
fn candidate(fz: &Frozen, p: &Prospect, o: &OffloadMatrix) -> Option<(ResourcePlan, f64)> {
    let plan = fit_plan_to_pattern(fz.inst, fz.beams, fz.plan, p, o)?;
    let a = Allocation { offload: o.clone(), beams: fz.beams.clone(), plan };
    let obj = fz.inst.objective(&a);
    if !obj.is_finite() {
        return None;
    }
    let slack = min_relative_slack(fz.inst, &a);
    if slack < -1e-7 && slack < min_relative_slack_existing(fz) {
        return None;
    }
    Some((a.plan, obj))
}

fn min_relative_slack_existing(fz: &Frozen) -> f64 {
    // violations already present in the incoming state (for example an
    // unsatisfiable sensing target) must not block every candidate
    let k = fz.inst.num_vehicles();
    let m = fz.inst.num_aps();
    let a = Allocation { offload: OffloadMatrix::zeros(k, m), beams: fz.beams.clone(), plan: fz.plan.clone() };
    min_relative_slack(fz.inst, &a).min(-1e-7)
}

fn max_violation(inst: &Instance, beams: &BeamformerSet, plan: &ResourcePlan, o: &OffloadMatrix) -> f64 {
    let a = Allocation { offload: o.clone(), beams: beams.clone(), plan: plan.clone() };
    (-min_relative_slack(inst, &a)).max(0.0)
}

/// Per-vehicle tier choice and split from the initializer LPs.
pub fn init_offload(fz: &Frozen, settings: &Alg1Settings) -> OffloadMatrix {
    let ch = &fz.inst.channels;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    // every serving link counts as active, so pairs are priced with the
    // frozen plan rather than with a whole AP each
    let mut everyone = OffloadMatrix::zeros(kk, mm);
    for (k, m) in ch.links() {
        everyone.mec[(k, m)] = 1e-6;
        everyone.cc[(k, m)] = 1e-6;
    }
    let p = prospect(fz, &everyone);
    let task = &fz.inst.task;
    let mut out = OffloadMatrix::zeros(kk, mm);

    for k in 0..kk {
        let t_loc = task.alpha_local * task.task_bits / fz.plan.local[k];
        let mut best = (t_loc, Tier::Local, Vec::new());
        for tier in [Tier::Mec, Tier::Cc] {
            let allowed: Vec<usize> = ch.serving_sets[k]
                .iter()
                .copied()
                .filter(|&m| if tier == Tier::Mec { p.allow_mec[(k, m)] } else { p.allow_cc[(k, m)] })
                .collect();
            if allowed.is_empty() {
                continue;
            }
            let Some((x, split)) = init_tier_lp(&p, k, t_loc, tier, &allowed, settings) else {
                continue;
            };
            if x < 0.5 {
                continue;
            }
            let lat = tier_latency(&p, k, tier, &split);
            let must = (fz.scheme == Scheme::Mec && tier == Tier::Mec) || (fz.scheme == Scheme::Cc && tier == Tier::Cc);
            if lat < best.0 || must {
                best = (lat, tier, split);
            }
        }
        if fz.scheme == Scheme::Mec || fz.scheme == Scheme::Cc {
            // a single-tier scheme offloads every vehicle even when local is faster
            let tier = if fz.scheme == Scheme::Mec { Tier::Mec } else { Tier::Cc };
            if best.1 != tier {
                let allowed: Vec<usize> = ch.serving_sets[k]
                    .iter()
                    .copied()
                    .filter(|&m| if tier == Tier::Mec { p.allow_mec[(k, m)] } else { p.allow_cc[(k, m)] })
                    .collect();
                if !allowed.is_empty() {
                    best = (0.0, tier, equal_latency_split(&p, k, tier, &allowed));
                }
            }
        }
        for (m, v) in best.2 {
            match best.1 {
                Tier::Mec => out.mec[(k, m)] = v,
                Tier::Cc => out.cc[(k, m)] = v,
                Tier::Local => {}
            }
        }
    }
    out
}

fn tier_latency(p: &Prospect, k: usize, tier: Tier, split: &[(usize, f64)]) -> f64 {
    let worst = split
        .iter()
        .map(|&(m, v)| v * if tier == Tier::Mec { p.tau_mec[(k, m)] } else { p.tau_cc[(k, m)] })
        .fold(0.0, f64::max);
    if tier == Tier::Cc {
        worst + p.theta_cc[k]
    } else {
        worst
    }
}

fn equal_latency_split(p: &Prospect, k: usize, tier: Tier, allowed: &[usize]) -> Vec<(usize, f64)> {
    let tau = |m: usize| if tier == Tier::Mec { p.tau_mec[(k, m)] } else { p.tau_cc[(k, m)] };
    let inv: f64 = allowed.iter().map(|&m| 1.0 / tau(m)).sum();
    allowed.iter().map(|&m| (m, (1.0 / tau(m)) / inv)).collect()
}

/// Single-vehicle penalty LP for one tier, iterated from a full offload
/// with an equal-latency split. Returns the tier fraction and split.
fn init_tier_lp(
    p: &Prospect,
    k: usize,
    t_loc: f64,
    tier: Tier,
    allowed: &[usize],
    settings: &Alg1Settings,
) -> Option<(f64, Vec<(usize, f64)>)> {
    let tau = |m: usize| if tier == Tier::Mec { p.tau_mec[(k, m)] } else { p.tau_cc[(k, m)] };
    let theta = if tier == Tier::Cc { p.theta_cc[k] } else { 0.0 };
    let mut split = equal_latency_split(p, k, tier, allowed);
    let mut prev_obj = f64::INFINITY;
    for _ in 0..settings.max_iter {
        let x0: f64 = split.iter().map(|s| s.1).sum();
        let t0 = split.iter().map(|&(m, v)| v * tau(m)).fold(0.0, f64::max) + theta;
        let rho = penalty_factor(settings.upsilon_scale * t_loc.min(t0.max(1e-12)), x0);
        let mut lp = ConicProblem::new();
        let eta = lp.var();
        let tt = lp.var();
        let vars: Vec<(usize, Var)> = allowed.iter().map(|&m| (m, lp.var())).collect();
        let x = sum_lin(&vars);
        for &(m, v) in &vars {
            lp.nonneg(v);
            lp.nonneg(tt - tau(m) * v - theta);
        }
        lp.nonneg(tt - theta);
        lp.leq(x.clone(), 1.0);
        // η >= (1 - x) T_loc + Σ b0 (t - t0) + x t0
        let rhs = Lin::constant(t_loc) - t_loc * x.clone() + x0 * (tt - t0) + t0 * x.clone();
        lp.nonneg(eta - rhs);
        let (_, slope) = penalty_majorant(x0);
        lp.minimize(eta + rho * slope * x);
        let sol = solve(&lp, DEFAULT_TOL).ok().filter(|s| s.is_usable())?;
        split = vars.iter().map(|&(m, v)| (m, sol.value(v).clamp(0.0, 1.0))).collect();
        let obj = sol.value(eta);
        if (prev_obj - obj).abs() <= settings.zeta * obj.abs() {
            break;
        }
        prev_obj = obj;
    }
    let x: f64 = split.iter().map(|s| s.1).sum();
    if x > 0.0 {
        for s in &mut split {
            s.1 /= x;
        }
    }
    Some((x, split))
}

/// Snaps `x_b`, `x_c` to `{0, 1}` (edge wins ties) and rescales the
/// fractions of the surviving tier.
pub fn round_pattern(o: &OffloadMatrix) -> (OffloadMatrix, Vec<Tier>) {
    let (kk, mm) = o.mec.shape();
    let mut out = OffloadMatrix::zeros(kk, mm);
    let mut tiers = vec![Tier::Local; kk];
    for k in 0..kk {
        let (xb, xc) = (o.x_b(k), o.x_c(k));
        let tier = if xb >= 0.5 && xb >= xc {
            Tier::Mec
        } else if xc >= 0.5 {
            Tier::Cc
        } else {
            Tier::Local
        };
        tiers[k] = tier;
        for m in 0..mm {
            match tier {
                Tier::Mec => out.mec[(k, m)] = o.mec[(k, m)] / xb,
                Tier::Cc => out.cc[(k, m)] = o.cc[(k, m)] / xc,
                Tier::Local => {}
            }
        }
    }
    (out, tiers)
}

/// Re-optimises the within-tier splits with the tier of every vehicle and
/// the support of its fractions held fixed.
pub fn repair_split(p: &Prospect, rounded: &OffloadMatrix, tiers: &[Tier]) -> Option<OffloadMatrix> {
    let (kk, mm) = rounded.mec.shape();
    let mut out = OffloadMatrix::zeros(kk, mm);
    for k in 0..kk {
        let tier = tiers[k];
        if tier == Tier::Local {
            continue;
        }
        let src = if tier == Tier::Mec { &rounded.mec } else { &rounded.cc };
        let support: Vec<usize> = (0..mm).filter(|&m| is_active(src[(k, m)])).collect();
        let tau = |m: usize| if tier == Tier::Mec { p.tau_mec[(k, m)] } else { p.tau_cc[(k, m)] };
        if support.iter().any(|&m| !tau(m).is_finite()) {
            return None;
        }
        let mut lp = ConicProblem::new();
        let tt = lp.var();
        let vars: Vec<(usize, Var)> = support.iter().map(|&m| (m, lp.var())).collect();
        for &(m, v) in &vars {
            lp.nonneg(v);
            lp.nonneg(tt - tau(m) * v);
        }
        let x = sum_lin(&vars);
        lp.leq(x.clone(), 1.0);
        lp.nonneg(x - 1.0);
        lp.minimize(tt);
        let sol = solve(&lp, DEFAULT_TOL).ok().filter(|s| s.is_usable())?;
        let total: f64 = vars.iter().map(|&(_, v)| sol.value(v).max(0.0)).sum();
        for &(m, v) in &vars {
            let val = sol.value(v).max(0.0) / total;
            let val = if val < 1e-7 { 0.0 } else { val };
            if tier == Tier::Mec {
                out.mec[(k, m)] = val;
            } else {
                out.cc[(k, m)] = val;
            }
        }
        // renormalise after dropping dust
        let s: f64 = if tier == Tier::Mec { out.x_b(k) } else { out.x_c(k) };
        for m in 0..mm {
            if tier == Tier::Mec {
                out.mec[(k, m)] /= s;
            } else {
                out.cc[(k, m)] /= s;
            }
        }
    }
    Some(out)
}

/// Rounds `o`, repairs the split and prices the result.
fn rounded_candidate(fz: &Frozen, p: &Prospect, o: &OffloadMatrix) -> Option<(OffloadMatrix, ResourcePlan, f64)> {
    let (rounded, tiers) = round_pattern(o);
    let repaired = repair_split(p, &rounded, &tiers)?;
    let (plan, obj) = candidate(fz, p, &repaired)?;
    Some((repaired, plan, obj))
}

fn max_fraction(o: &OffloadMatrix) -> f64 {
    (0..o.num_vehicles()).flat_map(|k| [o.x_b(k), o.x_c(k)]).map(|x| x.min(1.0 - x)).fold(0.0, f64::max)
}

/// Penalty iterations from the incoming offloading state. Every iterate is
/// rounded and repaired; the best binary state seen (starting from the
/// incoming one) is returned, so the trace of its objective never rises.
/// Iterations stop when the penalised objective settles and the fractions
/// are within `binary_tol` of a binary point.
pub fn run_algorithm1(fz: &Frozen, incoming: &OffloadMatrix, settings: &Alg1Settings) -> Result<Alg1Outcome> {
    let inst = fz.inst;
    let (kk, mm) = (inst.num_vehicles(), inst.num_aps());
    let base = Allocation { offload: incoming.clone(), beams: fz.beams.clone(), plan: fz.plan.clone() };
    let obj_in = inst.objective(&base);
    let mut best = (incoming.clone(), fz.plan.clone(), obj_in);
    let mut trace = vec![TraceRecord {
        iteration: 0,
        objective: obj_in,
        max_violation: max_violation(inst, fz.beams, fz.plan, incoming),
    }];
    let mut state = PenaltyState::new(kk, mm, settings.upsilon_scale * obj_in, settings.eps);
    let mut current = incoming.clone();
    let mut relaxed_objective = obj_in;
    let mut rounded_objective = obj_in;
    let mut rejected = 0;
    let mut warning = None;
    let mut prev_penalised = obj_in;
    // resources are priced against the incoming pattern throughout
    let p = prospect(fz, incoming);

    if fz.scheme != Scheme::Local && obj_in.is_finite() {
        for n in 1..=settings.max_iter {
            state.penalty_update(&current);
            state.weight_update(&current);
            let (lp, vars) = build_offload_lp(fz, &p, &current, &state);
            let sol = match solve(&lp, DEFAULT_TOL) {
                Ok(s) if s.is_usable() => s,
                Ok(s) => {
                    warning = Some(format!("offload LP ended with {:?}", s.status));
                    break;
                }
                Err(e) => {
                    warning = Some(format!("offload LP failed: {e}"));
                    break;
                }
            };
            let next = vars.extract(&sol.x, kk, mm);
            let Some((next_plan, next_obj)) = candidate(fz, &p, &next) else {
                rejected += 1;
                break;
            };
            current = next;
            relaxed_objective = next_obj;
            rounded_objective = f64::INFINITY;
            if let Some((o, plan, robj)) = rounded_candidate(fz, &p, &current) {
                rounded_objective = robj;
                if robj < best.2 {
                    best = (o, plan, robj);
                }
            }
            trace.push(TraceRecord {
                iteration: n,
                objective: best.2,
                max_violation: max_violation(inst, fz.beams, &next_plan, &current),
            });
            let penalised = next_obj
                + (0..kk).map(|k| state.rho_b[k] * penalty(current.x_b(k)) + state.rho_c[k] * penalty(current.x_c(k))).sum::<f64>();
            let change = (prev_penalised - penalised).abs() / prev_penalised.abs().max(penalised.abs()).max(f64::MIN_POSITIVE);
            prev_penalised = penalised;
            if change < settings.zeta && max_fraction(&current) <= settings.binary_tol {
                break;
            }
        }
    }

    let (offload, plan, objective) = best;
    Ok(Alg1Outcome {
        offload,
        plan,
        objective,
        trace,
        relaxed: current,
        relaxed_objective,
        rounded_objective,
        rejected,
        warning,
    })
}
