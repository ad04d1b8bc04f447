//! Execution frequencies and fronthaul shares with offloading and beams
//! frozen.
//!
//! Inside the conic program frequencies are in GHz, fronthaul in Gbit/s and
//! latencies in seconds, so every hyperbolic row has constants near one.

use nalgebra::DMatrix;

use crate::conic::{encode_cube_bound, encode_hyperbolic, solve, ConicProblem, ConicSolution, Lin, Var, DEFAULT_TOL};
use crate::linalg::norm_sq;
use crate::metrics::{is_active, Allocation, BeamformerSet, Instance, OffloadMatrix, ResourcePlan};
use crate::offload::Prospect;
use crate::{Error, Result};

const GIGA: f64 = 1e9;
/// Frequency and bandwidth floor for active entries, in Hz (or bit/s).
pub const FLOOR_HZ: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceSettings {
    /// Hold `f^Loc` at the incoming plan instead of optimising it.
    pub pin_local: bool,
    /// Second stage that minimises the sum of latencies at the optimal max.
    pub lexicographic: bool,
}

impl Default for ResourceSettings {
    fn default() -> Self {
        Self { pin_local: false, lexicographic: true }
    }
}

/// Largest local frequency allowed by the vehicle power budget and the cap.
pub fn local_freq_closed_form(inst: &Instance, beams: &BeamformerSet, k: usize) -> f64 {
    let t = &inst.task;
    let spare = t.vehicle_power_max - norm_sq(&beams.aggregate(k));
    if spare <= 0.0 {
        return 0.0;
    }
    // the 1 - 1e-12 factor keeps κ f³ strictly inside the budget after rounding
    t.local_freq_max.min((spare * (1.0 - 1e-12) / t.kappa_local).cbrt())
}

fn recv_power(inst: &Instance, beams: &BeamformerSet, k: usize, m: usize) -> f64 {
    let ch = &inst.channels;
    beams
        .comm_for(ch, k, m)
        .map_or(0.0, |w| ch.noise_power * norm_sq(&(&ch.uplink[k][m] * w)))
}

/// Equal split of every AP among the vehicles it serves, and of the cloud
/// among all vehicles. Every serving link gets a share, so any offloading
/// pattern is priced with what it could actually receive.
pub fn fair_share_plan(inst: &Instance, beams: &BeamformerSet) -> ResourcePlan {
    let ch = &inst.channels;
    let t = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let mut plan = ResourcePlan::zeros(kk, mm);
    for k in 0..kk {
        plan.local[k] = local_freq_closed_form(inst, beams, k);
        plan.cc[k] = t.cc_freq_max / kk as f64;
    }
    for m in 0..mm {
        let users: Vec<usize> = (0..kk).filter(|&k| ch.serves(k, m)).collect();
        if users.is_empty() {
            continue;
        }
        let n = users.len() as f64;
        let recv: f64 = users.iter().map(|&k| recv_power(inst, beams, k, m)).sum();
        let spare = (t.ap_power_max - recv).max(0.0);
        let f = (t.mec_freq_max / n).min((spare * (1.0 - 1e-12) / (n * t.kappa_mec)).cbrt());
        for &k in &users {
            plan.mec[(k, m)] = f;
            plan.fronthaul[(k, m)] = t.fronthaul_max / n;
        }
    }
    plan
}

/// Adapts `plan` to the offloading pattern `o`: entries that stay active keep
/// their values, newly active entries split what is left at their AP (or the
/// cloud), and inactive entries are cleared. Returns `None` when a newly
/// active entry would receive nothing.
pub fn fit_plan_to_pattern(
    inst: &Instance,
    beams: &BeamformerSet,
    plan: &ResourcePlan,
    _p: &Prospect,
    o: &OffloadMatrix,
) -> Option<ResourcePlan> {
    let t = &inst.task;
    let (kk, mm) = o.mec.shape();
    let mut out = ResourcePlan::zeros(kk, mm);
    out.local = plan.local.clone();

    for m in 0..mm {
        let act_b: Vec<usize> = (0..kk).filter(|&k| is_active(o.mec[(k, m)])).collect();
        let act_c: Vec<usize> = (0..kk).filter(|&k| is_active(o.cc[(k, m)])).collect();
        let recv: f64 = act_c.iter().map(|&k| recv_power(inst, beams, k, m)).sum();
        let avail = t.ap_power_max - recv;

        let (kept, fresh): (Vec<usize>, Vec<usize>) = act_b.iter().partition(|&&k| plan.mec[(k, m)] > FLOOR_HZ);
        let mut kept_f: Vec<f64> = kept.iter().map(|&k| plan.mec[(k, m)]).collect();
        let mut kept_p: f64 = kept_f.iter().map(|f| t.kappa_mec * f.powi(3)).sum();
        if !act_b.is_empty() && avail <= 0.0 {
            return None;
        }
        if kept_p > avail {
            let s = (avail * (1.0 - 1e-12) / kept_p).cbrt();
            kept_f.iter_mut().for_each(|f| *f *= s);
            kept_p = avail * (1.0 - 1e-12);
        }
        let kept_sum: f64 = kept_f.iter().sum();
        if kept_sum > t.mec_freq_max {
            let s = t.mec_freq_max / kept_sum;
            kept_f.iter_mut().for_each(|f| *f *= s);
        }
        for (&k, &f) in kept.iter().zip(&kept_f) {
            out.mec[(k, m)] = f;
        }
        if !fresh.is_empty() {
            let n = fresh.len() as f64;
            let f_res = t.mec_freq_max - kept_f.iter().sum::<f64>();
            let p_res = avail - kept_p;
            let f = (f_res / n).min((p_res.max(0.0) * (1.0 - 1e-12) / (n * t.kappa_mec)).cbrt());
            if !(f > FLOOR_HZ) {
                return None;
            }
            for &k in &fresh {
                out.mec[(k, m)] = f;
            }
        }

        let (kept, fresh): (Vec<usize>, Vec<usize>) =
            act_c.iter().partition(|&&k| plan.fronthaul[(k, m)] > FLOOR_HZ);
        let mut kept_r: Vec<f64> = kept.iter().map(|&k| plan.fronthaul[(k, m)]).collect();
        let kept_sum: f64 = kept_r.iter().sum();
        if kept_sum > t.fronthaul_max {
            let s = t.fronthaul_max / kept_sum;
            kept_r.iter_mut().for_each(|r| *r *= s);
        }
        for (&k, &r) in kept.iter().zip(&kept_r) {
            out.fronthaul[(k, m)] = r;
        }
        if !fresh.is_empty() {
            let r = (t.fronthaul_max - kept_r.iter().sum::<f64>()) / fresh.len() as f64;
            if !(r > FLOOR_HZ) {
                return None;
            }
            for &k in &fresh {
                out.fronthaul[(k, m)] = r;
            }
        }
    }

    let cloud: Vec<usize> = (0..kk).filter(|&k| is_active(o.x_c(k))).collect();
    let (kept, fresh): (Vec<usize>, Vec<usize>) = cloud.iter().partition(|&&k| plan.cc[k] > FLOOR_HZ);
    let mut used: f64 = kept.iter().map(|&k| o.x_c(k) * plan.cc[k]).sum();
    let shrink = if used > t.cc_freq_max { t.cc_freq_max / used } else { 1.0 };
    used *= shrink;
    for &k in &kept {
        out.cc[k] = plan.cc[k] * shrink;
    }
    if !fresh.is_empty() {
        let weight: f64 = fresh.iter().map(|&k| o.x_c(k)).sum();
        let f = (t.cc_freq_max - used) / weight;
        if !(f > FLOOR_HZ) {
            return None;
        }
        for &k in &fresh {
            out.cc[k] = f;
        }
    }
    Some(out)
}

/// Variables of the resource program. Frequencies are in GHz and fronthaul
/// in Gbit/s.
#[derive(Debug, Clone)]
pub struct ResourceVars {
    pub local: Vec<Option<Var>>,
    pub mec: DMatrix<Option<Var>>,
    pub cc: Vec<Option<Var>>,
    pub fronthaul: DMatrix<Option<Var>>,
    /// Per-vehicle latency epigraphs.
    pub latency: Vec<Var>,
    pub t: Var,
}

impl ResourceVars {
    /// Plan in Hz and bit/s; inactive entries are zero and offloaded-only
    /// vehicles take `fixed_local`.
    pub fn extract(&self, sol: &ConicSolution, fixed_local: &[f64]) -> ResourcePlan {
        let (kk, mm) = self.mec.shape();
        let mut plan = ResourcePlan::zeros(kk, mm);
        let val = |v: Option<Var>| v.map_or(0.0, |v| (sol.value(v) * GIGA).max(FLOOR_HZ));
        for k in 0..kk {
            plan.local[k] = match self.local[k] {
                Some(v) => (sol.value(v) * GIGA).clamp(FLOOR_HZ, fixed_local[k].max(FLOOR_HZ)),
                None => fixed_local[k],
            };
            plan.cc[k] = val(self.cc[k]);
            for m in 0..mm {
                plan.mec[(k, m)] = val(self.mec[(k, m)]);
                plan.fronthaul[(k, m)] = val(self.fronthaul[(k, m)]);
            }
        }
        plan
    }
}

/// Builds the min-max latency program over frequencies and fronthaul for a
/// frozen offloading pattern. The objective is left unset.
pub fn build_resource_problem(
    inst: &Instance,
    beams: &BeamformerSet,
    o: &OffloadMatrix,
    rates: &DMatrix<f64>,
    incoming: &ResourcePlan,
    settings: &ResourceSettings,
) -> Result<(ConicProblem, ResourceVars)> {
    let ch = &inst.channels;
    let task = &inst.task;
    let (kk, mm) = (ch.num_vehicles(), ch.num_aps());
    let d = task.task_bits;
    let kappa_mec = task.kappa_mec * GIGA.powi(3);
    let kappa_loc = task.kappa_local * GIGA.powi(3);
    let floor = FLOOR_HZ / GIGA;

    let mut p = ConicProblem::new();
    let t = p.var();
    let mut vars = ResourceVars {
        local: vec![None; kk],
        mec: DMatrix::from_element(kk, mm, None),
        cc: vec![None; kk],
        fronthaul: DMatrix::from_element(kk, mm, None),
        latency: Vec::with_capacity(kk),
        t,
    };
    let mut ap_power: Vec<Lin> = vec![Lin::zero(); mm];
    let mut ap_freq: Vec<Lin> = vec![Lin::zero(); mm];
    let mut ap_fh: Vec<Lin> = vec![Lin::zero(); mm];
    let mut cloud = Lin::zero();

    for k in 0..kk {
        let (xb, xc) = (o.x_b(k), o.x_c(k));
        let w_loc = (1.0 - xb - xc).max(0.0);
        let lat = p.var();
        vars.latency.push(lat);
        p.nonneg(t - lat);
        let mut rhs = Lin::zero();

        if is_active(w_loc) {
            let tl = p.var();
            if settings.pin_local {
                let f = incoming.local[k];
                if !(f > 0.0) {
                    return Err(Error::InfeasibleStructure(format!("vehicle {k} computes locally at zero frequency")));
                }
                p.nonneg(tl - task.alpha_local * d / f);
            } else {
                let spare = task.vehicle_power_max - norm_sq(&beams.aggregate(k));
                if spare <= 0.0 {
                    return Err(Error::InfeasibleStructure(format!("vehicle {k} has no power left for local compute")));
                }
                let f = p.var();
                vars.local[k] = Some(f);
                p.nonneg(f - floor);
                p.leq(f, task.local_freq_max / GIGA);
                encode_cube_bound(&mut p, f, Lin::constant(spare / kappa_loc));
                encode_hyperbolic(&mut p, tl, f, (task.alpha_local * d / GIGA).sqrt());
            }
            rhs += w_loc * Lin::from(tl);
        }

        if is_active(xb) {
            let tm = p.var();
            for m in 0..mm {
                let b = o.mec[(k, m)];
                if !is_active(b) {
                    continue;
                }
                let r = rates[(k, m)];
                if !(r > 0.0) {
                    return Err(Error::InfeasibleStructure(format!("vehicle {k} offloads to AP {m} at zero rate")));
                }
                let f = p.var();
                vars.mec[(k, m)] = Some(f);
                p.nonneg(f - floor);
                encode_hyperbolic(&mut p, tm - b * d / r, f, (task.alpha_mec * b * d / GIGA).sqrt());
                let s = p.var();
                encode_cube_bound(&mut p, f, s);
                ap_power[m].add_term(s, kappa_mec);
                ap_freq[m].add_term(f, 1.0);
            }
            rhs += xb * Lin::from(tm);
        }

        if is_active(xc) {
            let tc = p.var();
            let q = p.var();
            let fc = p.var();
            vars.cc[k] = Some(fc);
            p.nonneg(fc - floor);
            encode_hyperbolic(&mut p, q, fc, (task.alpha_cc * d / GIGA).sqrt());
            cloud.add_term(fc, xc);
            for m in 0..mm {
                let c = o.cc[(k, m)];
                if !is_active(c) {
                    continue;
                }
                let r = rates[(k, m)];
                if !(r > 0.0) {
                    return Err(Error::InfeasibleStructure(format!("vehicle {k} sends cloud work via AP {m} at zero rate")));
                }
                let rf = p.var();
                vars.fronthaul[(k, m)] = Some(rf);
                p.nonneg(rf - floor);
                let hop = p.var();
                encode_hyperbolic(&mut p, hop, rf, (c * d / GIGA).sqrt());
                p.nonneg(tc - c * d / r - hop - q);
                ap_fh[m].add_term(rf, 1.0);
            }
            rhs += xc * Lin::from(tc);
        }
        p.nonneg(lat - rhs);
    }

    for m in 0..mm {
        let recv: f64 = (0..kk)
            .filter(|&k| is_active(o.cc[(k, m)]))
            .map(|k| recv_power(inst, beams, k, m))
            .sum();
        if !ap_power[m].terms.is_empty() {
            if recv >= task.ap_power_max {
                return Err(Error::InfeasibleStructure(format!("AP {m} has no power left for edge compute")));
            }
            p.leq(ap_power[m].clone(), task.ap_power_max - recv);
            p.leq(ap_freq[m].clone(), task.mec_freq_max / GIGA);
        }
        if !ap_fh[m].terms.is_empty() {
            p.leq(ap_fh[m].clone(), task.fronthaul_max / GIGA);
        }
    }
    if !cloud.terms.is_empty() {
        p.leq(cloud, task.cc_freq_max / GIGA);
    }
    Ok((p, vars))
}

#[derive(Debug, Clone)]
pub struct ResourceOutcome {
    pub plan: ResourcePlan,
    pub objective: f64,
    /// Whether the returned plan differs from the incoming one.
    pub updated: bool,
    pub warning: Option<String>,
}

/// Solves the resource block. The incoming plan is returned when the solve
/// fails or its result does not improve the true objective.
pub fn solve_resources(
    inst: &Instance,
    beams: &BeamformerSet,
    o: &OffloadMatrix,
    incoming: &ResourcePlan,
    settings: &ResourceSettings,
) -> Result<ResourceOutcome> {
    let rates = inst.rates(beams)?;
    let base = Allocation { offload: o.clone(), beams: beams.clone(), plan: incoming.clone() };
    let obj_in = inst.objective(&base);
    let keep = |warning: Option<String>| ResourceOutcome { plan: incoming.clone(), objective: obj_in, updated: false, warning };

    let (mut p, vars) = match build_resource_problem(inst, beams, o, &rates, incoming, settings) {
        Ok(x) => x,
        Err(e) => return Ok(keep(Some(e.to_string()))),
    };
    let fixed_local: Vec<f64> = (0..inst.num_vehicles())
        .map(|k| if settings.pin_local { incoming.local[k] } else { local_freq_closed_form(inst, beams, k) })
        .collect();

    p.minimize(vars.t);
    let first = match solve(&p, DEFAULT_TOL) {
        Ok(s) if s.is_usable() => s,
        Ok(s) => return Ok(keep(Some(format!("resource program ended with {:?}", s.status)))),
        Err(e) => return Ok(keep(Some(e.to_string()))),
    };
    let mut best = vars.extract(&first, &fixed_local);
    let mut best_obj = inst.objective(&Allocation { offload: o.clone(), beams: beams.clone(), plan: best.clone() });

    if settings.lexicographic {
        let t_star = first.value(vars.t);
        let mut sum = Lin::zero();
        for &l in &vars.latency {
            sum.add_term(l, 1.0);
        }
        p.leq(vars.t, t_star * (1.0 + 1e-7) + 1e-12);
        p.minimize(sum);
        if let Ok(s) = solve(&p, DEFAULT_TOL) {
            if s.is_usable() {
                let plan = vars.extract(&s, &fixed_local);
                let obj = inst.objective(&Allocation { offload: o.clone(), beams: beams.clone(), plan: plan.clone() });
                if obj <= best_obj * (1.0 + 1e-9) {
                    best = plan;
                    best_obj = obj;
                }
            }
        }
    }

    let cand = Allocation { offload: o.clone(), beams: beams.clone(), plan: best };
    let violation = crate::metrics::check_budgets(inst, &cand, 1e-6)
        .into_iter()
        .any(|s| !matches!(s.kind, crate::metrics::SlackKind::Sensing));
    if violation || !(best_obj <= obj_in * (1.0 + 1e-12)) && obj_in.is_finite() {
        return Ok(keep(None));
    }
    Ok(ResourceOutcome { plan: cand.plan, objective: best_obj, updated: true, warning: None })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::linalg::{c, CVec};
    use crate::metrics::{check_budgets, scalar_network, TaskParams};

    fn instance(h: DMatrix<f64>, task: TaskParams) -> (Instance, BeamformerSet) {
        let mut ch = scalar_network(&h);
        ch.noise_power = 1e-3;
        let mut beams = BeamformerSet::zeros(&ch);
        for k in 0..ch.num_vehicles() {
            for w in &mut beams.comm[k] {
                *w = CVec::from_element(1, c(0.1, 0.0));
            }
            beams.sensing[k] = CVec::from_element(1, c(0.1, 0.0));
        }
        (Instance { channels: ch, task: TaskParams { sinr_req: 1e-6, ..task }, bandwidth: 1e7 }, beams)
    }

    #[test]
    fn pure_local_matches_closed_form() {
        let task = TaskParams { local_freq_max: 1e12, ..TaskParams::default() };
        let (inst, beams) = instance(DMatrix::from_element(1, 1, 1.0), task);
        let o = OffloadMatrix::zeros(1, 1);
        let mut plan = fair_share_plan(&inst, &beams);
        plan.local[0] = 1e8;
        let out = solve_resources(&inst, &beams, &o, &plan, &ResourceSettings::default()).unwrap();
        let spare = inst.task.vehicle_power_max - norm_sq(&beams.aggregate(0));
        let f = (spare / inst.task.kappa_local).cbrt();
        assert!((out.plan.local[0] - f).abs() <= 1e-6 * f, "{} vs {f}", out.plan.local[0]);
        let t = inst.task.alpha_local * inst.task.task_bits / f;
        assert!((out.objective - t).abs() <= 1e-6 * t);
    }

    #[test]
    fn symmetric_vehicles_share_equally() {
        let (inst, beams) = instance(DMatrix::from_element(2, 1, 100.0), TaskParams::default());
        let o = OffloadMatrix { mec: DMatrix::from_element(2, 1, 1.0), cc: DMatrix::zeros(2, 1) };
        let plan = fair_share_plan(&inst, &beams);
        let mut skew = plan.clone();
        skew.mec[(0, 0)] *= 0.5;
        let out = solve_resources(&inst, &beams, &o, &skew, &ResourceSettings::default()).unwrap();
        let (a, b) = (out.plan.mec[(0, 0)], out.plan.mec[(1, 0)]);
        assert!((a - b).abs() <= 1e-5 * a, "{a} {b}");
        let used = inst.task.kappa_mec * (a.powi(3) + b.powi(3));
        assert!(a + b <= inst.task.mec_freq_max * (1.0 + 1e-6) && used <= inst.task.ap_power_max * (1.0 + 1e-6));
    }

    #[test]
    fn inactive_entries_get_nothing() {
        let (inst, beams) = instance(DMatrix::from_row_slice(2, 2, &[100.0, 50.0, 80.0, 60.0]), TaskParams::default());
        let mut o = OffloadMatrix::zeros(2, 2);
        o.mec[(0, 0)] = 1.0;
        o.cc[(1, 1)] = 1.0;
        let plan = fit_plan_to_pattern(&inst, &beams, &fair_share_plan(&inst, &beams), &dummy_prospect(2, 2), &o).unwrap();
        let out = solve_resources(&inst, &beams, &o, &plan, &ResourceSettings::default()).unwrap();
        assert!(out.updated);
        assert_eq!(out.plan.mec[(0, 1)], 0.0);
        assert_eq!(out.plan.mec[(1, 0)], 0.0);
        assert_eq!(out.plan.mec[(1, 1)], 0.0);
        assert_eq!(out.plan.fronthaul[(0, 0)], 0.0);
        assert_eq!(out.plan.fronthaul[(1, 0)], 0.0);
        assert_eq!(out.plan.cc[0], 0.0);
        assert!(out.plan.cc[1] > 0.0 && out.plan.mec[(0, 0)] > 0.0);
    }

    fn dummy_prospect(k: usize, m: usize) -> Prospect {
        Prospect {
            allow_mec: DMatrix::from_element(k, m, true),
            allow_cc: DMatrix::from_element(k, m, true),
            tau_mec: DMatrix::zeros(k, m),
            tau_cc: DMatrix::zeros(k, m),
            theta_cc: vec![0.0; k],
            mec_freq: DMatrix::zeros(k, m),
            fronthaul: DMatrix::zeros(k, m),
            cc_freq: vec![0.0; k],
            recv: DMatrix::zeros(k, m),
        }
    }

    fn mixed() -> (Instance, BeamformerSet, OffloadMatrix, ResourcePlan) {
        let (inst, beams) =
            instance(DMatrix::from_row_slice(3, 2, &[100.0, 50.0, 80.0, 60.0, 30.0, 90.0]), TaskParams::default());
        let mut o = OffloadMatrix::zeros(3, 2);
        o.mec[(0, 0)] = 0.6;
        o.mec[(0, 1)] = 0.4;
        o.cc[(1, 0)] = 0.5;
        o.cc[(1, 1)] = 0.5;
        o.mec[(2, 1)] = 0.7;
        let plan = fit_plan_to_pattern(&inst, &beams, &fair_share_plan(&inst, &beams), &dummy_prospect(3, 2), &o).unwrap();
        (inst, beams, o, plan)
    }

    #[test]
    fn optimal_plan_is_a_fixed_point() {
        let (inst, beams, o, plan) = mixed();
        let s = ResourceSettings::default();
        let first = solve_resources(&inst, &beams, &o, &plan, &s).unwrap();
        assert!(first.objective <= inst.objective(&Allocation { offload: o.clone(), beams: beams.clone(), plan }));
        let second = solve_resources(&inst, &beams, &o, &first.plan, &s).unwrap();
        assert!((second.objective - first.objective).abs() <= 1e-8 * first.objective.max(1.0) + 1e-7 * first.objective);
        let a = Allocation { offload: o, beams, plan: first.plan };
        assert!(check_budgets(&inst, &a, 1e-6).is_empty(), "{:?}", check_budgets(&inst, &a, 1e-6));
    }

    #[test]
    fn larger_budgets_never_hurt() {
        let (inst, beams, o, plan) = mixed();
        let s = ResourceSettings::default();
        let base = solve_resources(&inst, &beams, &o, &plan, &s).unwrap().objective;
        for scale in [
            |t: &mut TaskParams| t.cc_freq_max *= 2.0,
            |t: &mut TaskParams| t.mec_freq_max *= 2.0,
            |t: &mut TaskParams| t.fronthaul_max *= 2.0,
        ] {
            let mut bigger = inst.clone();
            scale(&mut bigger.task);
            let out = solve_resources(&bigger, &beams, &o, &plan, &s).unwrap().objective;
            assert!(out <= base * (1.0 + 1e-6), "{out} > {base}");
        }
    }

    #[test]
    fn pinned_local_keeps_incoming_frequency() {
        let (inst, beams) = instance(DMatrix::from_element(1, 1, 1.0), TaskParams::default());
        let mut plan = fair_share_plan(&inst, &beams);
        plan.local[0] = 2e8;
        let s = ResourceSettings { pin_local: true, ..ResourceSettings::default() };
        let out = solve_resources(&inst, &beams, &OffloadMatrix::zeros(1, 1), &plan, &s).unwrap();
        assert_eq!(out.plan.local[0], 2e8);
    }

    #[test]
    fn fitted_plan_splits_residual_among_newcomers() {
        let (inst, beams) = instance(DMatrix::from_element(3, 1, 100.0), TaskParams::default());
        let mut plan = ResourcePlan::zeros(3, 1);
        plan.local = vec![3e8; 3];
        plan.mec[(0, 0)] = 1e9;
        let o = OffloadMatrix { mec: DMatrix::from_element(3, 1, 1.0), cc: DMatrix::zeros(3, 1) };
        let fit = fit_plan_to_pattern(&inst, &beams, &plan, &dummy_prospect(3, 1), &o).unwrap();
        assert_eq!(fit.mec[(0, 0)], 1e9);
        let used = inst.task.kappa_mec * 1e27;
        let expect = (1e9f64).min(((1.0 - used) / (2.0 * 1e-28)).cbrt());
        assert!((fit.mec[(1, 0)] - expect).abs() < 1e-3 * expect);
        assert_eq!(fit.mec[(1, 0)], fit.mec[(2, 0)]);
    }
}
