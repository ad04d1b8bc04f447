use crate::beamform::{init_beams, run_algorithm2, Alg2Settings};
use crate::error::{Error, Result};
use crate::metrics::{check_budgets, Allocation, Instance, OffloadMatrix, SlackKind};
use crate::offload::{prospect, repair_split, Frozen, Scheme, Tier};
use crate::resources::{fair_share_plan, fit_plan_to_pattern, solve_resources};

use super::{build_instance, RunConfig};

/// Offloading choice of one vehicle: local, or one tier with a split over
/// serving APs.
#[derive(Debug, Clone, PartialEq)]
pub enum VehicleChoice {
    Local,
    Mec(Vec<(usize, f64)>),
    Cc(Vec<(usize, f64)>),
}

impl VehicleChoice {
    fn tier(&self) -> Tier {
        match self {
            VehicleChoice::Local => Tier::Local,
            VehicleChoice::Mec(_) => Tier::Mec,
            VehicleChoice::Cc(_) => Tier::Cc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub latency: f64,
    pub pattern: Vec<VehicleChoice>,
    pub allocation: Option<Allocation>,
    /// Patterns that could be resourced and were optimised.
    pub evaluated: usize,
}

/// Splits of one unit over `aps` on a grid of `1 / steps`, every AP
/// getting at least one step.
fn grid_splits(aps: &[usize], steps: usize) -> Vec<Vec<(usize, f64)>> {
    fn rec(aps: &[usize], left: usize, steps: usize, cur: &mut Vec<(usize, f64)>, out: &mut Vec<Vec<(usize, f64)>>) {
        if aps.len() == 1 {
            if left > 0 {
                cur.push((aps[0], left as f64 / steps as f64));
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        for n in 1..left {
            cur.push((aps[0], n as f64 / steps as f64));
            rec(&aps[1..], left - n, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(aps, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Every non-empty subset of `aps`.
fn supports(aps: &[usize]) -> Vec<Vec<usize>> {
    (1..1usize << aps.len())
        .map(|mask| aps.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &m)| m).collect())
        .collect()
}

/// Tier and support choices of vehicle `k`: local, and per tier every
/// support within the serving set, each carrying its grid splits.
pub(crate) fn vehicle_options(inst: &Instance, k: usize, steps: usize) -> Vec<Vec<VehicleChoice>> {
    let mut out = vec![vec![VehicleChoice::Local]];
    for s in supports(&inst.channels.serving_sets[k]) {
        let grid = grid_splits(&s, steps);
        out.push(grid.iter().cloned().map(VehicleChoice::Mec).collect());
        out.push(grid.into_iter().map(VehicleChoice::Cc).collect());
    }
    out
}

fn pattern_matrix(inst: &Instance, pattern: &[VehicleChoice]) -> (OffloadMatrix, Vec<Tier>) {
    let mut o = OffloadMatrix::zeros(inst.num_vehicles(), inst.num_aps());
    for (k, c) in pattern.iter().enumerate() {
        match c {
            VehicleChoice::Local => {}
            VehicleChoice::Mec(s) => s.iter().for_each(|&(m, v)| o.mec[(k, m)] = v),
            VehicleChoice::Cc(s) => s.iter().for_each(|&(m, v)| o.cc[(k, m)] = v),
        }
    }
    (o, pattern.iter().map(VehicleChoice::tier).collect())
}

fn budgets_ok(inst: &Instance, a: &Allocation, tol: f64) -> bool {
    check_budgets(inst, a, tol).iter().all(|s| s.kind == SlackKind::Sensing)
}

/// Odometer over the cartesian product of `sizes`.
fn product(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; sizes.len()];
    if sizes.iter().any(|&n| n == 0) {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut k = 0;
        loop {
            if k == sizes.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn pattern_state(inst: &Instance, base: &Allocation, fz: &Frozen, pattern: &[VehicleChoice]) -> Option<(f64, Allocation)> {
    let (o, _) = pattern_matrix(inst, pattern);
    let plan = fit_plan_to_pattern(inst, &base.beams, &base.plan, &prospect(fz, &o), &o)?;
    let a = Allocation { offload: o, beams: base.beams.clone(), plan };
    let obj = inst.objective(&a);
    budgets_ok(inst, &a, 1e-7).then_some((obj, a))
}

fn spread(c: &VehicleChoice) -> f64 {
    match c {
        VehicleChoice::Local => 0.0,
        VehicleChoice::Mec(s) | VehicleChoice::Cc(s) => s.iter().map(|&(_, v)| (v - 1.0 / s.len() as f64).abs()).sum(),
    }
}

/// Starting states of one tier pattern under the initial beams and the
/// fair-share plan: the grid split with the lowest latency and, when some
/// support has several APs, the most balanced grid split.
fn grid_starts(inst: &Instance, base: &Allocation, groups: &[&Vec<VehicleChoice>]) -> Vec<Allocation> {
    let Ok(rates) = inst.rates(&base.beams) else { return Vec::new() };
    let fz = Frozen { inst, beams: &base.beams, plan: &base.plan, rates: &rates, scheme: Scheme::Proposed };
    let mut best: Option<(f64, Allocation, Vec<usize>)> = None;
    for idx in product(&groups.iter().map(|g| g.len()).collect::<Vec<_>>()) {
        let pattern: Vec<VehicleChoice> = idx.iter().enumerate().map(|(k, &i)| groups[k][i].clone()).collect();
        if let Some((obj, a)) = pattern_state(inst, base, &fz, &pattern) {
            if best.as_ref().map_or(true, |b| obj < b.0) {
                best = Some((obj, a, idx));
            }
        }
    }
    let Some((_, a, idx)) = best else { return Vec::new() };
    let balanced: Vec<usize> = groups
        .iter()
        .map(|g| (0..g.len()).min_by(|&i, &j| spread(&g[i]).total_cmp(&spread(&g[j]))).unwrap_or(0))
        .collect();
    let mut out = vec![a];
    if balanced != idx {
        let pattern: Vec<VehicleChoice> = balanced.iter().enumerate().map(|(k, &i)| groups[k][i].clone()).collect();
        if let Some((_, b)) = pattern_state(inst, base, &fz, &pattern) {
            out.push(b);
        }
    }
    out
}

/// Alternates beams, resources and the within-support split with the tier
/// pattern held fixed until the objective settles.
fn optimise_pattern(inst: &Instance, cfg: &RunConfig, start: Allocation, tiers: &[Tier]) -> Allocation {
    let alg2 = Alg2Settings { zeta: 1e-3, max_iter: 30, ..Alg2Settings::default() };
    let res = cfg.algorithm.resources();
    let mut a = start;
    let mut obj = inst.objective(&a);
    for _ in 0..40 {
        if let Ok(out) = run_algorithm2(inst, &a.beams, &a.offload, &a.plan, &alg2) {
            a.beams = out.beams;
        }
        if let Ok(out) = solve_resources(inst, &a.beams, &a.offload, &a.plan, &res) {
            a.plan = out.plan;
        }
        if let Ok(rates) = inst.rates(&a.beams) {
            let fz = Frozen { inst, beams: &a.beams, plan: &a.plan, rates: &rates, scheme: Scheme::Proposed };
            let p = prospect(&fz, &a.offload);
            if let Some(split) = repair_split(&p, &a.offload, tiers) {
                if let Some(plan) = fit_plan_to_pattern(inst, &a.beams, &a.plan, &p, &split) {
                    let cand = Allocation { offload: split, beams: a.beams.clone(), plan };
                    if budgets_ok(inst, &cand, 1e-7) && inst.objective(&cand) < inst.objective(&a) {
                        a = cand;
                    }
                }
            }
        }
        let next = inst.objective(&a);
        let change = (obj - next).abs() / obj.max(next);
        obj = next;
        if !(change >= 1e-4) {
            break;
        }
    }
    a
}

/// Lower envelope of the pattern-wise optimised latency over every
/// offloading pattern: per vehicle local, or MEC or CC over any subset of
/// its serving APs. Multi-AP splits start from the best point of a 0.1 grid
/// and are then re-optimised with the beams and resources. Only meant for
/// tiny networks.
pub fn brute_force_oracle(cfg: &RunConfig, seed: u64) -> Result<OracleResult> {
    if cfg.network.k > 2 || cfg.network.m > 2 {
        return Err(Error::InvalidParameter("the oracle enumerates patterns only for K <= 2 and M <= 2".into()));
    }
    let inst = build_instance(cfg, seed)?;
    let kk = inst.num_vehicles();
    let options: Vec<Vec<Vec<VehicleChoice>>> = (0..kk).map(|k| vehicle_options(&inst, k, 10)).collect();
    let (beams, _) = init_beams(&inst, &vec![inst.task.local_freq_max; kk]);
    let plan = fair_share_plan(&inst, &beams);
    let base = Allocation { offload: OffloadMatrix::zeros(kk, inst.num_aps()), beams, plan };

    let local_floor = inst.task.alpha_local * inst.task.task_bits / inst.task.local_freq_max;
    let mut best = OracleResult { latency: f64::INFINITY, pattern: vec![VehicleChoice::Local; kk], allocation: None, evaluated: 0 };
    // offloading patterns first, so local ones are usually pruned
    for idx in product(&options.iter().map(Vec::len).collect::<Vec<_>>()).into_iter().rev() {
        let groups: Vec<&Vec<VehicleChoice>> = idx.iter().enumerate().map(|(k, &i)| &options[k][i]).collect();
        // a local vehicle never beats the cap of its CPU
        if groups.iter().any(|g| g[0] == VehicleChoice::Local) && local_floor >= best.latency {
            continue;
        }
        let tiers: Vec<Tier> = groups.iter().map(|g| g[0].tier()).collect();
        let starts = grid_starts(&inst, &base, &groups);
        if starts.is_empty() {
            continue;
        }
        best.evaluated += 1;
        for start in starts {
            let a = optimise_pattern(&inst, cfg, start, &tiers);
            let lat = inst.objective(&a);
            if !(check_budgets(&inst, &a, 1e-6).is_empty() && lat < best.latency) {
                continue;
            }
            best.latency = lat;
            best.pattern = (0..kk)
                .map(|k| {
                    let split = |src: &nalgebra::DMatrix<f64>| {
                        (0..inst.num_aps()).filter(|&m| src[(k, m)] > 0.0).map(|m| (m, src[(k, m)])).collect()
                    };
                    match tiers[k] {
                        Tier::Local => VehicleChoice::Local,
                        Tier::Mec => VehicleChoice::Mec(split(&a.offload.mec)),
                        Tier::Cc => VehicleChoice::Cc(split(&a.offload.cc)),
                    }
                })
                .collect();
            best.allocation = Some(a);
        }
    }
    Ok(best)
}
