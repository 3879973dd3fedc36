//! Closed-loop simulation and its per-sample records.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AnchorConfig, RunConfig};
use crate::engine::{nlp_kkt_residual, rti_step, solve_ocp, EngineContext, IterationPolicy, Mode, ShiftInit, SolveStatus, TraceEntry};
use crate::error::{Error, Result};
use crate::ocp::{eval_constraints, eval_nlp_cost, OcpProblem};
use crate::trajectory::Trajectory;

/// One line of `trace.csv`. Row `iter = 0` holds the residual of the
/// initialization; row `iter = j` the state after outer iteration `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub iter: usize,
    pub kkt_stat: f64,
    pub kkt_feas: f64,
    pub kkt_comp: f64,
    pub kkt_max: f64,
    pub sched_delta: f64,
    pub step_norm: f64,
    pub qp_iters: usize,
    pub t_prep_us: f64,
    pub t_fb_us: f64,
}

impl TraceRow {
    fn from_entry(k: usize, e: &TraceEntry) -> Self {
        Self {
            k,
            iter: e.iter + 1,
            kkt_stat: e.kkt.stationarity,
            kkt_feas: e.kkt.feasibility,
            kkt_comp: e.kkt.complementarity,
            kkt_max: e.kkt.combined,
            sched_delta: e.sched_delta,
            step_norm: e.step_norm,
            qp_iters: e.qp_iters,
            t_prep_us: e.t_prep_us,
            t_fb_us: e.t_fb_us,
        }
    }
}

/// One closed-loop sample: the measured state, the applied input and the solve it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// NLP cost of the returned trajectory.
    pub cost: f64,
    /// Largest constraint violation of the returned trajectory.
    pub violation: f64,
    pub n_it: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    /// Mean outer iterations per sample.
    pub n_it: f64,
    /// Mean ratio of the residual after the first outer iteration to the one before it.
    pub delta_r_avg: f64,
    /// Mean residual after the last outer iteration of each sample.
    pub r_avg: f64,
    pub max_violation: f64,
    pub t_prep_us: f64,
    pub t_fb_us: f64,
}

impl Aggregates {
    /// Recomputes every aggregate from per-row data.
    pub fn from_rows(samples: &[SampleRecord], trace: &[TraceRow]) -> Self {
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let mut ratios = Vec::new();
        let mut finals = Vec::new();
        for s in samples {
            let rows: Vec<&TraceRow> = trace.iter().filter(|r| r.k == s.k).collect();
            let first = rows.iter().find(|r| r.iter == 0);
            let second = rows.iter().find(|r| r.iter == 1);
            if let (Some(a), Some(b)) = (first, second) {
                // a zero residual before the step leaves nothing to contract
                if a.kkt_max > 0.0 {
                    ratios.push(b.kkt_max / a.kkt_max);
                }
            }
            if let Some(last) = rows.iter().max_by_key(|r| r.iter) {
                finals.push(last.kkt_max);
            }
        }
        let steps: Vec<&TraceRow> = trace.iter().filter(|r| r.iter > 0).collect();
        Self {
            samples: samples.len(),
            n_it: mean(&samples.iter().map(|s| s.n_it as f64).collect::<Vec<_>>()),
            delta_r_avg: mean(&ratios),
            r_avg: mean(&finals),
            max_violation: samples.iter().map(|s| s.violation).fold(0.0, f64::max),
            t_prep_us: mean(&steps.iter().map(|r| r.t_prep_us).collect::<Vec<_>>()),
            t_fb_us: mean(&steps.iter().map(|r| r.t_fb_us).collect::<Vec<_>>()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Every sample ran but a lap target was not reached.
    Incomplete,
    Aborted { k: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub benchmark: String,
    pub n_x: usize,
    pub n_u: usize,
    pub samples: Vec<SampleRecord>,
    pub trace: Vec<TraceRow>,
    /// State after the last applied input.
    pub final_state: Vec<f64>,
    pub aggregates: Aggregates,
    pub status: RunStatus,
}

impl RunReport {
    pub fn empty(name: &str, benchmark: &str, n_x: usize, n_u: usize) -> Self {
        Self {
            name: name.into(),
            benchmark: benchmark.into(),
            n_x,
            n_u,
            samples: Vec::new(),
            trace: Vec::new(),
            final_state: Vec::new(),
            aggregates: Aggregates::default(),
            status: RunStatus::Completed,
        }
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    /// Rows of the first sample after each outer iteration.
    pub fn first_ocp_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.trace.iter().filter(|r| r.k == 0 && r.iter > 0)
    }
}

fn init_row(k: usize, ocp: &OcpProblem, warm: &Trajectory) -> Result<TraceRow> {
    let kkt = nlp_kkt_residual(ocp, warm)?;
    Ok(TraceRow {
        k,
        iter: 0,
        kkt_stat: kkt.stationarity,
        kkt_feas: kkt.feasibility,
        kkt_comp: kkt.complementarity,
        kkt_max: kkt.combined,
        sched_delta: 0.0,
        step_norm: 0.0,
        qp_iters: 0,
        t_prep_us: 0.0,
        t_fb_us: 0.0,
    })
}

struct SampleOutcome {
    u: DVector<f64>,
    trajectory: Trajectory,
    rows: Vec<TraceRow>,
    n_it: usize,
    failure: Option<String>,
}

/// QP tolerance of reference solves, tighter than the default so the NLP residual can reach `1e-9`.
const REFERENCE_QP_TOL: f64 = 1e-11;

fn reference_solve(ocp: &OcpProblem, init: &Trajectory, tol: f64, max_outer: usize, ctx: &EngineContext) -> Result<Trajectory> {
    let mut sqp = IterationPolicy::sqp(tol);
    sqp.max_outer = max_outer.max(100);
    sqp.qp.tol = REFERENCE_QP_TOL;
    let sol = solve_ocp(ocp, init, &sqp, ctx)?;
    match sol.status {
        SolveStatus::Converged => Ok(sol.trajectory),
        s => Err(Error::Invalid(format!("reference solve for optimal anchors did not converge: {s:?}"))),
    }
}

fn run_sample(cfg: &RunConfig, policy: &IterationPolicy, ocp: &OcpProblem, warm: &Trajectory, mut ctx: EngineContext) -> Result<SampleOutcome> {
    let k = ctx.k;
    let mut warm = warm.clone();
    warm.states[0] = ocp.x0.clone();
    if let AnchorConfig::Optimal {
        warm_from_reference,
        reference_tol,
    } = cfg.policy.anchors
    {
        let reference = reference_solve(ocp, &warm, reference_tol, cfg.policy.max_outer, &ctx)?;
        if warm_from_reference {
            warm = reference.clone();
        }
        ctx.reference = Some(Arc::new(reference));
    }
    let mut rows = vec![init_row(k, ocp, &warm)?];
    if policy.mode == Mode::Rti {
        let out = match rti_step(ocp, &warm, policy, &ctx) {
            Ok(o) => o,
            Err(Error::Aborted { reason, .. }) => {
                return Ok(SampleOutcome {
                    u: DVector::zeros(ocp.n_u()),
                    trajectory: warm,
                    rows,
                    n_it: 0,
                    failure: Some(reason),
                })
            }
            Err(e) => return Err(e),
        };
        rows.push(TraceRow::from_entry(k, &out.entry));
        return Ok(SampleOutcome {
            u: out.u_apply,
            trajectory: out.trajectory,
            rows,
            n_it: 1,
            failure: None,
        });
    }
    let sol = solve_ocp(ocp, &warm, policy, &ctx)?;
    rows.extend(sol.trace.entries.iter().map(|e| TraceRow::from_entry(k, e)));
    let failure = match &sol.status {
        SolveStatus::Aborted { iteration, reason } => Some(format!("outer iteration {iteration}: {reason}")),
        _ => None,
    };
    Ok(SampleOutcome {
        u: sol.trajectory.inputs[0].clone(),
        n_it: sol.iterations(),
        trajectory: sol.trajectory,
        rows,
        failure,
    })
}

/// Simulates the closed loop described by `cfg`.
///
/// The plant is the prediction model itself. An engine abort ends the run early
/// with [`RunStatus::Aborted`] and everything recorded up to that sample.
pub fn run_closed_loop(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let bench = cfg.build_benchmark()?;
    let base = bench.ocp;
    let policy = cfg.iteration_policy(&base)?;
    let (nx, nu) = (base.n_x(), base.n_u());
    let mut report = RunReport::empty(&cfg.name, bench.kind, nx, nu);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.plant.measurement_noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut x = base.x0.clone();
    let mut warm = match &bench.track {
        Some(_) => crate::mpcc::initial_guess(&base)?,
        None => base.cold_start(),
    };
    if cfg.policy.initial_solve {
        warm = reference_solve(&base, &warm, 1e-8, cfg.policy.max_outer, &EngineContext::default())?;
    }
    let mut u_prev: Option<DVector<f64>> = None;
    let mut reached = bench.stop_progress.is_none();
    for k in 0..cfg.steps {
        let mut ocp = base.clone();
        ocp.x0 = x.clone();
        if cfg.plant.measurement_noise > 0.0 {
            ocp.x0.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        let ctx = EngineContext {
            k,
            u_prev: u_prev.clone(),
            reference: None,
        };
        let out = match run_sample(cfg, &policy, &ocp, &warm, ctx) {
            Ok(o) => o,
            Err(e @ (Error::Config(_) | Error::Dimension { .. })) => return Err(e),
            Err(e) => {
                report.status = RunStatus::Aborted { k, reason: e.to_string() };
                break;
            }
        };
        report.trace.extend(out.rows);
        if let Some(reason) = out.failure {
            report.status = RunStatus::Aborted { k, reason };
            break;
        }
        let cost = eval_nlp_cost(&ocp, &out.trajectory.states, &out.trajectory.inputs)?;
        let (_, violation) = eval_constraints(&ocp, &out.trajectory.states, &out.trajectory.inputs)?;
        report.samples.push(SampleRecord {
            k,
            x: x.iter().copied().collect(),
            u: out.u.iter().copied().collect(),
            cost,
            violation,
            n_it: out.n_it,
        });
        x = base.model.eval(x.as_slice(), out.u.as_slice())?;
        u_prev = Some(out.u);
        warm = match policy.shift {
            ShiftInit::Duplicate => out.trajectory.shifted(),
            ShiftInit::Unshifted => out.trajectory,
        };
        if let Some((idx, target)) = bench.stop_progress {
            if x[idx] >= target {
                reached = true;
                break;
            }
        }
    }
    report.final_state = x.iter().copied().collect();
    if !reached && !report.is_aborted() {
        report.status = RunStatus::Incomplete;
    }
    report.aggregates = Aggregates::from_rows(&report.samples, &report.trace);
    Ok(report)
}

/// Reports of several runs on the same benchmark, aligned by sample index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<RunReport>,
}

/// Runs every config (concurrently) after checking they describe the same benchmark and length.
pub fn compare_policies(cfgs: &[RunConfig]) -> Result<Comparison> {
    let Some(first) = cfgs.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    for c in cfgs {
        if c.benchmark != first.benchmark || c.steps != first.steps {
            return Err(Error::Config(format!(
                "run {:?} does not share the benchmark and length of {:?}",
                c.name, first.name
            )));
        }
    }
    let mut names: Vec<&str> = cfgs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("compared runs need distinct names".into()));
    }
    let reports = cfgs.par_iter().map(run_closed_loop).collect::<Result<Vec<_>>>()?;
    Ok(Comparison { reports })
}
