//! Alternating optimisation, single-tier benchmarks, the brute-force oracle
//! and Monte-Carlo sweeps.

mod config;
mod oracle;
mod sweep;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AlgorithmSection, Axis, NetworkSection, RunConfig, RunSection, TaskSection};
pub use oracle::{brute_force_oracle, OracleResult, VehicleChoice};
pub use sweep::{emit_csv, emit_trace_csv, mean_stderr, monte_carlo, read_csv, summarize, SweepOutput, SweepRow};

use crate::beamform::{init_beams, run_algorithm2, BeamTraceRecord};
use crate::error::{Error, Result};
use crate::metrics::{budget_slacks, Allocation, Instance, LatencyReport, OffloadMatrix, Slack, SlackKind};
use crate::offload::{init_offload, prospect, run_algorithm1, Frozen, Scheme, TraceRecord};
use crate::resources::{fair_share_plan, fit_plan_to_pattern, solve_resources};
use crate::scenario::{draw_channels, place_network};

/// Relative tolerance used when judging feasibility of a final state.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Draws the network realisation for `seed`. Every scheme sees the same
/// realisation for the same seed.
pub fn build_instance(cfg: &RunConfig, seed: u64) -> Result<Instance> {
    cfg.validate()?;
    let scenario = cfg.scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = place_network(&scenario, &mut rng);
    let channels = draw_channels(&geom, &scenario, &cfg.path_loss, &mut rng)?;
    Ok(Instance { channels, task: cfg.task.to_params(), bandwidth: scenario.bandwidth_hz })
}

/// Block traces of one outer iteration.
#[derive(Debug, Clone)]
pub struct InnerTrace {
    pub offload: Vec<TraceRecord>,
    /// Penalty iterate before rounding, with its objective.
    pub relaxed: OffloadMatrix,
    pub relaxed_objective: f64,
    /// Objective after rounding and split repair.
    pub rounded_objective: f64,
    pub beams: Vec<BeamTraceRecord>,
    /// Objective before and after the resource block.
    pub resources: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub scheme: Scheme,
    /// Name of the starting point that produced this result.
    pub start: String,
    pub converged: bool,
    /// Outer objective after each iteration; entry 0 is the starting state.
    pub trace: Vec<f64>,
    pub inner: Vec<InnerTrace>,
    pub allocation: Option<Allocation>,
    pub report: Option<LatencyReport>,
    pub slacks: Vec<Slack>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

impl TrialResult {
    fn failed_at(seed: u64, scheme: Scheme, msg: String, started: Instant) -> Self {
        Self {
            seed,
            scheme,
            start: "none".into(),
            converged: false,
            trace: Vec::new(),
            inner: Vec::new(),
            allocation: None,
            report: None,
            slacks: Vec::new(),
            wall_time_s: started.elapsed().as_secs_f64(),
            warnings: vec![msg],
        }
    }

    pub fn max_latency(&self) -> f64 {
        self.report.as_ref().map_or(f64::INFINITY, |r| r.max_latency)
    }

    /// Every budget and the sensing requirement hold within `tol` relative.
    pub fn feasible(&self, tol: f64) -> bool {
        self.allocation.is_some() && self.slacks.iter().all(|s| s.relative >= -tol)
    }

    /// Trials without a finite, feasible final state are excluded from
    /// averages.
    pub fn failed(&self) -> bool {
        !self.max_latency().is_finite() || !self.feasible(FEASIBILITY_TOL)
    }

    /// Number of outer iterations actually run.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Starting state: matched sensing beams with a share for communication,
/// the fair-share plan, and the initializer's offloading pattern.
pub fn initial_allocation(inst: &Instance, cfg: &RunConfig, scheme: Scheme) -> Result<(Allocation, Vec<String>)> {
    let kk = inst.num_vehicles();
    let mm = inst.num_aps();
    let mut warnings = Vec::new();
    let (beams, sensing_ok) = init_beams(inst, &vec![inst.task.local_freq_max; kk]);
    if !sensing_ok {
        warnings.push("initial beams miss the sensing requirement".into());
    }
    let plan0 = fair_share_plan(inst, &beams);
    let rates = inst.rates(&beams)?;
    let fz = Frozen { inst, beams: &beams, plan: &plan0, rates: &rates, scheme };
    let o = if scheme == Scheme::Local { OffloadMatrix::zeros(kk, mm) } else { init_offload(&fz, &cfg.algorithm.alg1()) };
    let fitted = fit_plan_to_pattern(inst, &beams, &plan0, &prospect(&fz, &o), &o);
    let (offload, plan) = match fitted {
        Some(plan) => (o, plan),
        None => {
            warnings.push("initial pattern could not be resourced; starting all-local".into());
            let o = OffloadMatrix::zeros(kk, mm);
            let plan = fit_plan_to_pattern(inst, &beams, &plan0, &prospect(&fz, &o), &o)
                .ok_or_else(|| Error::InfeasibleStructure("no plan for the all-local pattern".into()))?;
            (o, plan)
        }
    };
    Ok((Allocation { offload, beams, plan }, warnings))
}

/// Outer loop [offload, beams, resources] from `start`.
pub fn alternate(inst: &Instance, cfg: &RunConfig, scheme: Scheme, start: Allocation) -> (Allocation, bool, Vec<f64>, Vec<InnerTrace>, Vec<String>) {
    let alg = &cfg.algorithm;
    let (alg1, alg2, res) = (alg.alg1(), alg.alg2(), alg.resources());
    let mut a = start;
    let mut obj = inst.objective(&a);
    let mut trace = vec![obj];
    let mut inner = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = false;

    for _ in 0..alg.max_outer {
        let step = (|| -> Result<InnerTrace> {
            let rates = inst.rates(&a.beams)?;
            let fz = Frozen { inst, beams: &a.beams, plan: &a.plan, rates: &rates, scheme };
            let o1 = run_algorithm1(&fz, &a.offload, &alg1)?;
            warnings.extend(o1.warning.clone());
            a.offload = o1.offload;
            a.plan = o1.plan;

            let o2 = run_algorithm2(inst, &a.beams, &a.offload, &a.plan, &alg2)?;
            warnings.extend(o2.warning.clone());
            a.beams = o2.beams;

            let before = inst.objective(&a);
            let o3 = solve_resources(inst, &a.beams, &a.offload, &a.plan, &res)?;
            warnings.extend(o3.warning.clone());
            a.plan = o3.plan;
            Ok(InnerTrace {
                offload: o1.trace,
                relaxed: o1.relaxed,
                relaxed_objective: o1.relaxed_objective,
                rounded_objective: o1.rounded_objective,
                beams: o2.trace,
                resources: (before, inst.objective(&a)),
            })
        })();
        match step {
            Ok(t) => inner.push(t),
            Err(e) => {
                warnings.push(format!("block failure: {e}"));
                break;
            }
        }
        let next = inst.objective(&a);
        let change = (obj - next).abs() / obj.max(next).max(f64::MIN_POSITIVE);
        trace.push(next);
        obj = next;
        if change < alg.zeta_outer || !obj.is_finite() {
            converged = obj.is_finite();
            break;
        }
    }
    (a, converged, trace, inner, warnings)
}

struct Started {
    inst: Instance,
    began: Instant,
}

fn finish(
    st: &Started,
    seed: u64,
    scheme: Scheme,
    start: &str,
    run: (Allocation, bool, Vec<f64>, Vec<InnerTrace>, Vec<String>),
    mut warnings: Vec<String>,
) -> TrialResult {
    let (a, converged, trace, inner, w) = run;
    warnings.extend(w);
    let report = st.inst.evaluate(&a).ok();
    let slacks = budget_slacks(&st.inst, &a);
    TrialResult {
        seed,
        scheme,
        start: start.into(),
        converged,
        trace,
        inner,
        report,
        slacks,
        allocation: Some(a),
        wall_time_s: st.began.elapsed().as_secs_f64(),
        warnings,
    }
}

fn run_from_init(st: &Started, cfg: &RunConfig, seed: u64, scheme: Scheme) -> TrialResult {
    match initial_allocation(&st.inst, cfg, scheme) {
        Ok((a0, w)) => finish(st, seed, scheme, "init", alternate(&st.inst, cfg, scheme, a0), w),
        Err(e) => TrialResult::failed_at(seed, scheme, e.to_string(), st.began),
    }
}

/// Better of two results: feasible beats infeasible, then lower latency.
fn better(a: TrialResult, b: TrialResult) -> TrialResult {
    let key = |r: &TrialResult| (r.failed(), r.max_latency());
    let (ka, kb) = (key(&a), key(&b));
    if kb.0 < ka.0 || (kb.0 == ka.0 && kb.1 < ka.1) {
        b
    } else {
        a
    }
}

/// Runs `schemes` on the realisation of `seed`. With multi-start enabled
/// the proposed scheme is also restarted from each benchmark's final state
/// and the best run is kept; benchmarks are then shared with that search.
pub fn run_schemes(cfg: &RunConfig, seed: u64, schemes: &[Scheme]) -> Vec<TrialResult> {
    let began = Instant::now();
    let inst = match build_instance(cfg, seed) {
        Ok(i) => i,
        Err(e) => return schemes.iter().map(|&s| TrialResult::failed_at(seed, s, e.to_string(), began)).collect(),
    };
    let st = Started { inst, began };
    let wants = |s: Scheme| schemes.contains(&s);
    let multi = cfg.algorithm.multi_start && wants(Scheme::Proposed);

    let mut bench: Vec<TrialResult> = Vec::new();
    for s in [Scheme::Local, Scheme::Mec, Scheme::Cc] {
        if wants(s) || multi {
            let st_s = Started { inst: st.inst.clone(), began: Instant::now() };
            bench.push(run_from_init(&st_s, cfg, seed, s));
        }
    }

    let mut out = Vec::new();
    if wants(Scheme::Proposed) {
        let st_p = Started { inst: st.inst.clone(), began: Instant::now() };
        let mut best = run_from_init(&st_p, cfg, seed, Scheme::Proposed);
        if multi {
            for b in &bench {
                let Some(a) = b.allocation.clone() else { continue };
                let label = format!("{}-final", b.scheme.name());
                let run = if b.scheme == Scheme::Local {
                    // the local state is already a proposed state; the loop
                    // cannot leave it since its links carry no power
                    (a, true, vec![b.max_latency()], Vec::new(), Vec::new())
                } else {
                    alternate(&st_p.inst, cfg, Scheme::Proposed, a)
                };
                best = better(best, finish(&st_p, seed, Scheme::Proposed, &label, run, Vec::new()));
            }
        }
        best.wall_time_s = st_p.began.elapsed().as_secs_f64();
        out.push(best);
    }
    out.extend(bench.into_iter().filter(|b| wants(b.scheme)));
    out.sort_by_key(|r| Scheme::ALL.iter().position(|&s| s == r.scheme));
    out
}

/// Proposed scheme on the realisation of `seed`.
pub fn run_ao(cfg: &RunConfig, seed: u64) -> TrialResult {
    run_schemes(cfg, seed, &[Scheme::Proposed]).remove(0)
}

/// One benchmark scheme on the realisation of `seed`.
pub fn run_benchmark(cfg: &RunConfig, seed: u64, scheme: Scheme) -> Result<TrialResult> {
    if scheme == Scheme::Proposed {
        return Err(Error::InvalidParameter("run_benchmark takes local, mec or cc".into()));
    }
    Ok(run_schemes(cfg, seed, &[scheme]).remove(0))
}

/// Slacks of a result that are violated by more than `tol` relative,
/// split into sensing and everything else.
pub fn violations(r: &TrialResult, tol: f64) -> (Vec<Slack>, Vec<Slack>) {
    r.slacks.iter().filter(|s| s.relative < -tol).partition(|s| s.kind == SlackKind::Sensing)
}
