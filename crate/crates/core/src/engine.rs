//! The outer iteration shared by SQP and iterative LPV-MPC.
//!
//! Which algorithm runs is decided entirely by [`IterationPolicy`]: pointwise
//! sensitivities give SQP, FTC sensitivities with fixed anchors give iterative
//! LPV-MPC (with re-simulation of the state sequence), and FTC sensitivities
//! anchored at the previous iterate reproduce SQP.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad;
use crate::error::{Error, Result};
use crate::ocp::{assemble_qp, eval_constraints, eval_nlp_cost, HessianPolicy, OcpProblem, QpData, QpStage, QpTerminal};
use crate::qp::{solve_qp, QpSolution, QpStatus, QpTolerances};
use crate::sensitivity::{select_anchors, AnchorContext, AnchorPolicy, SensitivityPolicy};
use crate::trajectory::{sequence_distance, Trajectory};

/// Largest number of step halvings tried after a failed subproblem.
pub const MAX_HALVINGS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    KktResidual(f64),
    SchedulingDelta(f64),
    FixedIterations(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FullConvergence,
    Rti,
}

/// How the next real-time iteration is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftInit {
    /// Drop the first stage and duplicate the last one.
    #[default]
    Duplicate,
    /// Reuse the optimized trajectory as is.
    Unshifted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoPropagation {
    #[default]
    LinearRollout,
    NonlinearRollout,
}

/// Splits the state into `y` (kept in the QP) and `z` (propagated outside it).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroOrderPartition {
    pub y_idx: Vec<usize>,
    pub z_idx: Vec<usize>,
    #[serde(default)]
    pub propagation: ZoPropagation,
}

impl ZeroOrderPartition {
    /// Partition with the given `z` indices and every other state in `y`.
    pub fn from_z(n_x: usize, z_idx: Vec<usize>, propagation: ZoPropagation) -> Result<Self> {
        let y_idx = (0..n_x).filter(|k| !z_idx.contains(k)).collect();
        let p = Self { y_idx, z_idx, propagation };
        p.validate(n_x)?;
        Ok(p)
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        let sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.y_idx) || !sorted(&self.z_idx) {
            return Err(Error::Invalid("partition index sets must be strictly increasing".into()));
        }
        let mut seen = vec![false; n_x];
        for &k in self.y_idx.iter().chain(&self.z_idx) {
            if k >= n_x || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Invalid(format!("partition index {k} is out of range or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("partition does not cover every state".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationPolicy {
    pub sensitivity: SensitivityPolicy,
    pub anchors: AnchorPolicy,
    pub hessian: HessianPolicy,
    pub termination: Termination,
    pub max_outer: usize,
    pub mode: Mode,
    pub zero_order: Option<ZeroOrderPartition>,
    pub qp: QpTolerances,
    pub shift: ShiftInit,
}

impl IterationPolicy {
    /// Pointwise linearization, Gauss-Newton Hessian, KKT termination.
    pub fn sqp(tol: f64) -> Self {
        Self {
            sensitivity: SensitivityPolicy::Linearize,
            anchors: AnchorPolicy::PreviousIterate,
            hessian: HessianPolicy::GaussNewton,
            termination: Termination::KktResidual(tol),
            max_outer: 50,
            mode: Mode::FullConvergence,
            zero_order: None,
            qp: QpTolerances::default(),
            shift: ShiftInit::Duplicate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.termination {
            Termination::KktResidual(e) | Termination::SchedulingDelta(e) if !(e > 0.0) => {
                return Err(Error::Invalid("termination threshold must be positive".into()));
            }
            Termination::FixedIterations(0) => {
                return Err(Error::Invalid("fixed iteration count must be at least 1".into()));
            }
            _ => {}
        }
        if self.max_outer == 0 {
            return Err(Error::Invalid("max_outer must be at least 1".into()));
        }
        self.qp.validate()
    }

    /// Whether the state sequence is re-simulated from the inputs after each step.
    pub fn resimulates(&self) -> bool {
        matches!(self.sensitivity, SensitivityPolicy::FtcQuadrature(_)) && !self.anchors.is_previous_iterate()
    }
}

/// Closed-loop information needed by the anchor policies.
#[derive(Clone, Debug, Default)]
pub struct EngineContext {
    pub k: usize,
    pub u_prev: Option<DVector<f64>>,
    pub reference: Option<Arc<Trajectory>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub combined: f64,
}

/// One outer iteration. Timing fields are the only nondeterministic ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub kkt: KktResidual,
    pub sched_delta: f64,
    /// `max(|dX|, |dU|)` of the accepted QP step.
    pub step_norm: f64,
    pub qp_iters: usize,
    pub qp_status: QpStatus,
    pub halvings: usize,
    pub dropped_rows: usize,
    pub cost: f64,
    pub violation: f64,
    pub t_prep_us: f64,
    pub t_fb_us: f64,
}

impl TraceEntry {
    /// Largest difference over the deterministic fields.
    pub fn max_deviation(&self, other: &TraceEntry) -> f64 {
        let a = self.numeric();
        let b = other.numeric();
        let d = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if self.iter != other.iter || self.qp_iters != other.qp_iters || self.halvings != other.halvings {
            f64::INFINITY
        } else {
            d
        }
    }

    fn numeric(&self) -> [f64; 8] {
        [
            self.kkt.stationarity,
            self.kkt.feasibility,
            self.kkt.complementarity,
            self.kkt.combined,
            self.sched_delta,
            self.step_norm,
            self.cost,
            self.violation,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub entries: Vec<TraceEntry>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_deviation(&self, other: &IterationTrace) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.entries.iter().zip(&other.entries).map(|(a, b)| a.max_deviation(b)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SolveStatus {
    Converged,
    MaxOuter,
    Aborted { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct OcpSolve {
    pub trajectory: Trajectory,
    pub trace: IterationTrace,
    pub status: SolveStatus,
    pub last_qp: Option<QpSolution>,
}

impl OcpSolve {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

fn amax(v: &DVector<f64>) -> f64 {
    if v.is_empty() { 0.0 } else { v.amax() }
}

/// Residuals of the NLP optimality conditions at `traj`, with the objective
/// scaled by one half so that multipliers match those of the QP subproblem.
pub fn nlp_kkt_residual(ocp: &OcpProblem, traj: &Trajectory) -> Result<KktResidual> {
    ocp.check_trajectory(traj)?;
    let n = ocp.horizon;
    let (nx, nu) = (ocp.n_x(), ocp.n_u());
    let mut r = KktResidual {
        feasibility: amax(&(&ocp.x0 - &traj.states[0])),
        ..KktResidual::default()
    };
    let ineq = |r: &mut KktResidual, mu: &DVector<f64>, h: &DVector<f64>| {
        for (&m, &v) in mu.iter().zip(h.iter()) {
            r.feasibility = r.feasibility.max(v.max(0.0)).max((-m).max(0.0));
            r.complementarity = r.complementarity.max((m * v).abs());
        }
    };
    for i in 0..n {
        let (x, u) = (&traj.states[i], &traj.inputs[i]);
        let (fx, a, b) = ad::jacobian(ocp.model.map(), x.as_slice(), u.as_slice());
        r.feasibility = r.feasibility.max(amax(&(fx - &traj.states[i + 1])));
        let mut gx = &ocp.q * x + a.transpose() * &traj.eq_mult[i + 1] - &traj.eq_mult[i];
        let mut gu = &ocp.r * u + b.transpose() * &traj.eq_mult[i + 1];
        if let Some(h) = &ocp.constraints {
            let (hv, hx, hu) = ad::jacobian(&**h, x.as_slice(), u.as_slice());
            gx += hx.transpose() * &traj.ineq_mult[i];
            gu += hu.transpose() * &traj.ineq_mult[i];
            ineq(&mut r, &traj.ineq_mult[i], &hv);
        }
        if let Some(c) = &ocp.output_cost {
            let (cv, cx, cu) = ad::jacobian(&*c.map, x.as_slice(), u.as_slice());
            let wc = &c.weight * cv;
            gx += cx.transpose() * &wc + c.linear.rows(0, nx);
            gu += cu.transpose() * &wc + c.linear.rows(nx, nu);
        }
        r.stationarity = r.stationarity.max(amax(&gx)).max(amax(&gu));
    }
    let x = &traj.states[n];
    let mut gx = &ocp.w * x - &traj.eq_mult[n];
    if let Some(h) = &ocp.terminal_constraints {
        let (hv, hx, _) = ad::jacobian(&**h, x.as_slice(), &[]);
        gx += hx.transpose() * &traj.ineq_mult[n];
        ineq(&mut r, &traj.ineq_mult[n], &hv);
    }
    if let Some(c) = ocp.output_cost.as_ref().filter(|c| c.terminal) {
        let (cv, cx, _) = ad::jacobian(&*c.map, x.as_slice(), &vec![0.0; nu]);
        gx += cx.transpose() * (&c.weight * cv);
    }
    r.stationarity = r.stationarity.max(amax(&gx));
    r.combined = r.stationarity.max(r.feasibility).max(r.complementarity);
    Ok(r)
}

/// A QP with the `z` states eliminated, and the precomputed `dz` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroOrderReduction {
    pub qp: QpData,
    /// `dz_0 .. dz_N`, `dz_0 = 0`.
    pub dz: Vec<DVector<f64>>,
    /// Kept inequality rows per stage (terminal last), as indices into the full rows.
    pub kept_rows: Vec<Vec<usize>>,
    /// Rows with no remaining dependence on the decision variables.
    pub dropped_rows: usize,
}

fn select_rows(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Removes the `z` block from the QP under `A^zy = 0`, `B^z = 0`.
///
/// `dz` is rolled out either through the QP's own `A^zz` and offsets, or through
/// the nonlinear `z` dynamics evaluated at the nominal `y` and inputs. The known
/// `dz_i` is folded into the `y` dynamics, constraint and gradient offsets.
pub fn zero_order_reduce(
    qp: &QpData,
    part: &ZeroOrderPartition,
    ocp: &OcpProblem,
    traj: &Trajectory,
) -> Result<ZeroOrderReduction> {
    qp.validate()?;
    let (n, nx, nu) = (qp.horizon(), qp.n_x(), qp.n_u());
    part.validate(nx)?;
    let all_rows = |m: usize| (0..m).collect::<Vec<_>>();
    if part.z_idx.is_empty() {
        let mut kept: Vec<Vec<usize>> = qp.stages.iter().map(|s| all_rows(s.offset_h.len())).collect();
        kept.push(all_rows(qp.terminal.offset_h.len()));
        return Ok(ZeroOrderReduction {
            qp: qp.clone(),
            dz: vec![DVector::zeros(0); n + 1],
            kept_rows: kept,
            dropped_rows: 0,
        });
    }
    let (yi, zi) = (&part.y_idx, &part.z_idx);
    let nz = zi.len();
    let ui: Vec<usize> = (nx..nx + nu).collect();
    let yu: Vec<usize> = yi.iter().copied().chain(ui.iter().copied()).collect();
    let zcols: Vec<usize> = zi.clone();

    let mut dz = vec![DVector::zeros(nz); n + 1];
    match part.propagation {
        ZoPropagation::LinearRollout => {
            for (i, s) in qp.stages.iter().enumerate() {
                let azz = select(&s.a, zi, zi);
                dz[i + 1] = azz * &dz[i] + select_rows(&s.offset_x, zi);
            }
        }
        ZoPropagation::NonlinearRollout => {
            ocp.check_trajectory(traj)?;
            let mut z = select_rows(&traj.states[0], zi);
            for i in 0..n {
                let mut x = traj.states[i].clone();
                for (r, &k) in zi.iter().enumerate() {
                    x[k] = z[r];
                }
                let next = ocp
                    .model
                    .eval(x.as_slice(), traj.inputs[i].as_slice())
                    .map_err(|e| Error::numeric(format!("zero-order rollout stage {i}: {e}")))?;
                z = select_rows(&next, zi);
                dz[i + 1] = &z - select_rows(&traj.states[i + 1], zi);
            }
        }
    }

    let mut dropped = 0;
    let mut kept_rows = Vec::with_capacity(n + 1);
    let mut keep = |hx_y: &DMatrix<f64>, hu: Option<&DMatrix<f64>>| {
        let rows: Vec<usize> = (0..hx_y.nrows())
            .filter(|&r| {
                let live = hx_y.row(r).iter().any(|&v| v != 0.0) || hu.is_some_and(|m| m.row(r).iter().any(|&v| v != 0.0));
                if !live {
                    dropped += 1;
                }
                live
            })
            .collect();
        kept_rows.push(rows.clone());
        rows
    };
    let mut stages = Vec::with_capacity(n);
    for (i, s) in qp.stages.iter().enumerate() {
        let all_h = all_rows(s.offset_h.len());
        let hx_y = select(&s.hx, &all_h, yi);
        let rows = keep(&hx_y, Some(&s.hu));
        let hz = select(&s.hx, &rows, zi);
        let cross = select(&s.hess, &yu, &zcols);
        stages.push(QpStage {
            hess: select(&s.hess, &yu, &yu),
            grad: select_rows(&s.grad, &yu) + cross * &dz[i],
            a: select(&s.a, yi, yi),
            b: select(&s.b, yi, &all_rows(nu)),
            offset_x: select_rows(&s.offset_x, yi) + select(&s.a, yi, zi) * &dz[i],
            hx: select(&s.hx, &rows, yi),
            hu: select(&s.hu, &rows, &all_rows(nu)),
            offset_h: select_rows(&s.offset_h, &rows) + hz * &dz[i],
        });
    }
    let t = &qp.terminal;
    let all_h = all_rows(t.offset_h.len());
    let rows = keep(&select(&t.hx, &all_h, yi), None);
    let terminal = QpTerminal {
        hess: select(&t.hess, yi, yi),
        grad: select_rows(&t.grad, yi) + select(&t.hess, yi, zi) * &dz[n],
        hx: select(&t.hx, &rows, yi),
        offset_h: select_rows(&t.offset_h, &rows) + select(&t.hx, &rows, zi) * &dz[n],
    };
    Ok(ZeroOrderReduction {
        qp: QpData {
            stages,
            terminal,
            initial: select_rows(&qp.initial, yi),
            regularized_blocks: qp.regularized_blocks,
        },
        dz,
        kept_rows,
        dropped_rows: dropped,
    })
}

/// Step in the full coordinates, recovered from a (possibly reduced) QP solution.
struct FullStep {
    dx: Vec<DVector<f64>>,
    du: Vec<DVector<f64>>,
    eq_mult: Vec<DVector<f64>>,
    ineq_mult: Vec<DVector<f64>>,
}

fn expand(sol: &QpSolution, red: Option<(&ZeroOrderReduction, &ZeroOrderPartition)>, ocp: &OcpProblem) -> FullStep {
    let Some((red, part)) = red.filter(|(_, p)| !p.z_idx.is_empty()) else {
        return FullStep {
            dx: sol.dx.clone(),
            du: sol.du.clone(),
            eq_mult: sol.eq_mult.clone(),
            ineq_mult: sol.ineq_mult.clone(),
        };
    };
    let n = ocp.horizon;
    let nx = ocp.n_x();
    let scatter = |y: &DVector<f64>, z: Option<&DVector<f64>>| {
        let mut x = DVector::zeros(nx);
        for (r, &k) in part.y_idx.iter().enumerate() {
            x[k] = y[r];
        }
        if let Some(z) = z {
            for (r, &k) in part.z_idx.iter().enumerate() {
                x[k] = z[r];
            }
        }
        x
    };
    let ineq_mult = (0..=n)
        .map(|i| {
            let full = if i < n { ocp.n_h() } else { ocp.n_h_terminal() };
            let mut m = DVector::zeros(full);
            for (r, &k) in red.kept_rows[i].iter().enumerate() {
                m[k] = sol.ineq_mult[i][r];
            }
            m
        })
        .collect();
    FullStep {
        dx: (0..=n).map(|i| scatter(&sol.dx[i], Some(&red.dz[i]))).collect(),
        du: sol.du.clone(),
        // the z rows carry no multiplier inside the reduced QP
        eq_mult: sol.eq_mult.iter().map(|l| scatter(l, None)).collect(),
        ineq_mult,
    }
}

/// Outcome of a single outer iteration.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub trajectory: Trajectory,
    pub entry: TraceEntry,
    pub qp: QpSolution,
}

struct Attempt {
    qp: QpSolution,
    step: FullStep,
    dropped: usize,
    t_prep: f64,
    t_fb: f64,
}

fn attempt(ocp: &OcpProblem, traj: &Trajectory, policy: &IterationPolicy, ctx: &EngineContext) -> Result<Attempt> {
    let t0 = Instant::now();
    let anchors = match policy.sensitivity {
        SensitivityPolicy::Linearize => None,
        SensitivityPolicy::FtcQuadrature(_) => {
            let actx = AnchorContext {
                k: ctx.k,
                x_meas: &ocp.x0,
                u_prev: ctx.u_prev.as_ref(),
                reference: ctx.reference.as_deref(),
            };
            Some(select_anchors(&policy.anchors, &actx, traj)?)
        }
    };
    let full = assemble_qp(ocp, traj, &policy.sensitivity, anchors.as_ref(), policy.hessian)?;
    let reduced = match &policy.zero_order {
        Some(part) => Some(zero_order_reduce(&full, part, ocp, traj)?),
        None => None,
    };
    let qp_data = reduced.as_ref().map_or(&full, |r| &r.qp);
    let t_prep = t0.elapsed().as_secs_f64() * 1e6;
    let t1 = Instant::now();
    let qp = solve_qp(qp_data, None, &policy.qp)?;
    let t_fb = t1.elapsed().as_secs_f64() * 1e6;
    let step = expand(&qp, reduced.as_ref().zip(policy.zero_order.as_ref()), ocp);
    Ok(Attempt {
        qp,
        step,
        dropped: reduced.map_or(0, |r| r.dropped_rows),
        t_prep,
        t_fb,
    })
}

fn moved(traj: &Trajectory, dx: &[DVector<f64>], du: &[DVector<f64>], alpha: f64) -> Trajectory {
    let mut t = traj.clone();
    for (x, d) in t.states.iter_mut().zip(dx) {
        *x += d * alpha;
    }
    for (u, d) in t.inputs.iter_mut().zip(du) {
        *u += d * alpha;
    }
    t
}

/// One outer iteration from `traj`. `prev_step` is the last accepted primal step,
/// used only by the step-halving fallback when the subproblem fails.
pub fn outer_step(
    ocp: &OcpProblem,
    traj: &Trajectory,
    policy: &IterationPolicy,
    ctx: &EngineContext,
    iter: usize,
    prev_step: Option<(&[DVector<f64>], &[DVector<f64>])>,
) -> Result<StepOutcome> {
    let mut base = traj.clone();
    base.states[0] = ocp.x0.clone();
    ocp.check_trajectory(&base)?;
    let p_old = base.scheduling.clone().unwrap_or_else(|| base.scheduling_from_iterate());

    let mut halvings = 0;
    let mut result = attempt(ocp, &base, policy, ctx);
    loop {
        let failure = match &result {
            Ok(a) if a.qp.status == QpStatus::Solved => None,
            Ok(a) => Some(format!("QP status {:?} after {} iterations", a.qp.status, a.qp.iterations)),
            Err(e) => Some(e.to_string()),
        };
        let Some(reason) = failure else { break };
        let Some((dx, du)) = prev_step.filter(|_| halvings < MAX_HALVINGS) else {
            return Err(Error::Aborted { iteration: iter, reason });
        };
        halvings += 1;
        // retreat from the previous full step to a fraction 2^-h of it
        let alpha = 0.5f64.powi(halvings as i32) - 1.0;
        let mut trial = moved(traj, dx, du, alpha);
        trial.states[0] = ocp.x0.clone();
        result = attempt(ocp, &trial, policy, ctx);
        base = trial;
    }
    let a = result?;
    let mut next = moved(&base, &a.step.dx, &a.step.du, 1.0);
    next.eq_mult = a.step.eq_mult;
    next.ineq_mult = a.step.ineq_mult;
    if policy.resimulates() {
        next.states = ocp.simulate(&next.inputs)?;
    }
    next.states[0] = ocp.x0.clone();
    next.refresh_scheduling();
    let sched_delta = sequence_distance(next.scheduling.as_deref().unwrap_or_default(), &p_old);
    let step_norm = a
        .step
        .dx
        .iter()
        .chain(&a.step.du)
        .map(amax)
        .fold(0.0, f64::max);
    let kkt = nlp_kkt_residual(ocp, &next)?;
    let cost = eval_nlp_cost(ocp, &next.states, &next.inputs)?;
    let (_, violation) = eval_constraints(ocp, &next.states, &next.inputs)?;
    Ok(StepOutcome {
        entry: TraceEntry {
            iter,
            kkt,
            sched_delta,
            step_norm,
            qp_iters: a.qp.iterations,
            qp_status: a.qp.status,
            halvings,
            dropped_rows: a.dropped,
            cost,
            violation,
            t_prep_us: a.t_prep,
            t_fb_us: a.t_fb,
        },
        trajectory: next,
        qp: a.qp,
    })
}

fn converged(term: Termination, entry: &TraceEntry, count: usize) -> bool {
    match term {
        Termination::KktResidual(eps) => entry.kkt.combined <= eps,
        Termination::SchedulingDelta(eps) => entry.sched_delta <= eps,
        Termination::FixedIterations(n) => count >= n,
    }
}

/// Repeats [`outer_step`] until the termination criterion holds.
///
/// Failed steps end the loop with [`SolveStatus::Aborted`] and the last good iterate.
pub fn solve_ocp(ocp: &OcpProblem, init: &Trajectory, policy: &IterationPolicy, ctx: &EngineContext) -> Result<OcpSolve> {
    policy.validate()?;
    if let Some(part) = &policy.zero_order {
        part.validate(ocp.n_x())?;
    }
    let mut traj = init.clone();
    traj.states[0] = ocp.x0.clone();
    ocp.check_trajectory(&traj)?;
    if traj.scheduling.is_none() {
        traj.refresh_scheduling();
    }
    let limit = match policy.termination {
        Termination::FixedIterations(n) => n,
        _ => policy.max_outer,
    };
    let mut trace = IterationTrace::default();
    let mut last_qp = None;
    let mut prev: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = None;
    for iter in 0..limit {
        let before = traj.clone();
        let out = match outer_step(
            ocp,
            &traj,
            policy,
            ctx,
            iter,
            prev.as_ref().map(|(x, u)| (x.as_slice(), u.as_slice())),
        ) {
            Ok(o) => o,
            Err(Error::Aborted { iteration, reason }) => {
                return Ok(OcpSolve {
                    trajectory: traj,
                    trace,
                    status: SolveStatus::Aborted { iteration, reason },
                    last_qp,
                });
            }
            Err(e) => return Err(e),
        };
        let done = converged(policy.termination, &out.entry, iter + 1);
        prev = Some((
            out.trajectory.states.iter().zip(&before.states).map(|(a, b)| a - b).collect(),
            out.trajectory.inputs.iter().zip(&before.inputs).map(|(a, b)| a - b).collect(),
        ));
        trace.entries.push(out.entry);
        traj = out.trajectory;
        last_qp = Some(out.qp);
        if done {
            return Ok(OcpSolve {
                trajectory: traj,
                trace,
                status: SolveStatus::Converged,
                last_qp,
            });
        }
    }
    Ok(OcpSolve {
        trajectory: traj,
        trace,
        status: SolveStatus::MaxOuter,
        last_qp,
    })
}

/// Result of one real-time iteration.
#[derive(Clone, Debug)]
pub struct RtiOutcome {
    pub u_apply: DVector<f64>,
    /// Initialization for the next sample.
    pub next_init: Trajectory,
    /// The optimized, unshifted trajectory.
    pub trajectory: Trajectory,
    pub entry: TraceEntry,
    /// NLP residual at the warm start, after pinning the measured state.
    pub kkt_before: KktResidual,
}

/// Exactly one outer iteration, then the input to apply and the shifted warm start.
pub fn rti_step(ocp: &OcpProblem, warm: &Trajectory, policy: &IterationPolicy, ctx: &EngineContext) -> Result<RtiOutcome> {
    policy.validate()?;
    if policy.mode != Mode::Rti {
        return Err(Error::Invalid("rti_step needs a policy in RTI mode".into()));
    }
    let mut pinned = warm.clone();
    pinned.states[0] = ocp.x0.clone();
    let kkt_before = nlp_kkt_residual(ocp, &pinned)?;
    let out = outer_step(ocp, &pinned, policy, ctx, 0, None)?;
    let next_init = match policy.shift {
        ShiftInit::Duplicate => out.trajectory.shifted(),
        ShiftInit::Unshifted => out.trajectory.clone(),
    };
    Ok(RtiOutcome {
        u_apply: out.trajectory.inputs[0].clone(),
        next_init,
        trajectory: out.trajectory,
        entry: out.entry,
        kkt_before,
    })
}

/// Stacked `[x_i; u_i]` of a trajectory, for external comparisons.
pub fn primal_vector(t: &Trajectory) -> DVector<f64> {
    let parts: Vec<DVector<f64>> = t.inputs.iter().zip(&t.states).map(|(u, x)| stack(x, u)).collect();
    let mut v: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    v.extend(t.states.last().into_iter().flat_map(|x| x.iter().copied()));
    DVector::from_vec(v)
}
