//! Optimal control problem data and assembly of the stage-wise QP subproblem.
//!
//! The NLP objective used for multipliers and Hessians is half the reported
//! cost, `1/2 sum |x_i|_Q^2 + |u_i|_R^2 + ... `, which matches the QP form
//! `1/2 d' M d + (M z^)' d` with `M = diag(Q, R)`. [`eval_nlp_cost`] reports
//! the unscaled sum.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{self, Scalar, SmoothMap, StageMap};
use crate::error::{Error, Result};
use crate::model::{hessian_lagrangian_stage, symmetrize, DynamicsModel, StageKind, TimeDomain};
use crate::sensitivity::{
    ftc_stage, linearize_stage, terminal_sensitivities, AnchorSequence, MapSensitivity, SensitivityPolicy,
    StageMaps, StageSensitivities, TerminalSensitivities,
};
use crate::trajectory::Trajectory;

/// Eigenvalue floor applied to indefinite exact Hessians.
pub const HESSIAN_EIG_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianPolicy {
    #[default]
    GaussNewton,
    ExactLagrangian,
}

/// Quadratic penalty on a smooth output `y = c(x, u)`, plus a linear term
/// and a constant per stage: `|c|_Qy^2 + 2 g'[x; u] + k`.
#[derive(Clone)]
pub struct OutputCost {
    pub map: Arc<dyn StageMap>,
    pub weight: DMatrix<f64>,
    /// `g` over `[x; u]`.
    pub linear: DVector<f64>,
    pub constant: f64,
    /// Whether `|c(x_N, 0)|_Qy^2` is added at the terminal stage.
    pub terminal: bool,
}

impl std::fmt::Debug for OutputCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OutputCost")
            .field("n_out", &self.map.n_out())
            .field("weight", &self.weight)
            .field("linear", &self.linear)
            .field("constant", &self.constant)
            .field("terminal", &self.terminal)
            .finish()
    }
}

#[derive(Clone)]
pub struct OcpProblem {
    pub model: DynamicsModel,
    pub constraints: Option<Arc<dyn StageMap>>,
    /// State-only map (`n_u == 0`).
    pub terminal_constraints: Option<Arc<dyn StageMap>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub horizon: usize,
    pub x0: DVector<f64>,
    pub output_cost: Option<OutputCost>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("model", &self.model)
            .field("n_h", &self.n_h())
            .field("n_h_terminal", &self.n_h_terminal())
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

fn check_symmetric(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Invalid(format!("{name} must be {n}x{n}, got {:?}", m.shape())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::Invalid(format!("{name} is not symmetric (asymmetry {asym:e})")));
    }
    Ok(())
}

impl OcpProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: DynamicsModel,
        constraints: Option<Arc<dyn StageMap>>,
        terminal_constraints: Option<Arc<dyn StageMap>>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        w: DMatrix<f64>,
        horizon: usize,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let ocp = Self {
            model,
            constraints,
            terminal_constraints,
            q,
            r,
            w,
            horizon,
            x0,
            output_cost: None,
        };
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn with_output_cost(mut self, cost: OutputCost) -> Result<Self> {
        self.output_cost = Some(cost);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.n_x(), self.n_u());
        if self.model.domain() != TimeDomain::Discrete {
            return Err(Error::Invalid("OCP dynamics must be discrete; discretize the model first".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        if self.x0.len() != nx {
            return Err(Error::dim("initial state", nx, self.x0.len()));
        }
        check_symmetric("Q", &self.q, nx)?;
        check_symmetric("R", &self.r, nu)?;
        check_symmetric("W", &self.w, nx)?;
        if min_eigenvalue(&self.q) < -1e-10 || min_eigenvalue(&self.w) < -1e-10 {
            return Err(Error::Invalid("Q and W must be positive semidefinite".into()));
        }
        if min_eigenvalue(&self.r) < 1e-10 {
            return Err(Error::Invalid("R must be positive definite".into()));
        }
        if let Some(h) = &self.constraints {
            if h.n_x() != nx || h.n_u() != nu {
                return Err(Error::Invalid("stage constraint map has wrong argument sizes".into()));
            }
        }
        if let Some(h) = &self.terminal_constraints {
            if h.n_x() != nx || h.n_u() != 0 {
                return Err(Error::Invalid("terminal constraint map must take the state only".into()));
            }
        }
        if let Some(c) = &self.output_cost {
            if c.map.n_x() != nx || c.map.n_u() != nu {
                return Err(Error::Invalid("output map has wrong argument sizes".into()));
            }
            check_symmetric("output weight", &c.weight, c.map.n_out())?;
            if min_eigenvalue(&c.weight) < -1e-10 {
                return Err(Error::Invalid("output weight must be positive semidefinite".into()));
            }
            if c.linear.len() != nx + nu {
                return Err(Error::dim("linear cost", nx + nu, c.linear.len()));
            }
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.model.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.model.n_u()
    }

    pub fn n_h(&self) -> usize {
        self.constraints.as_ref().map_or(0, |h| h.n_out())
    }

    pub fn n_h_terminal(&self) -> usize {
        self.terminal_constraints.as_ref().map_or(0, |h| h.n_out())
    }

    /// States held at `x0`, zero inputs and multipliers.
    pub fn cold_start(&self) -> Trajectory {
        Trajectory::constant(&self.x0, self.n_u(), self.horizon, self.n_h(), self.n_h_terminal())
    }

    pub fn check_trajectory(&self, t: &Trajectory) -> Result<()> {
        t.validate(self.n_x(), self.n_u(), self.horizon)?;
        if let Some(bad) = t.ineq_mult[..self.horizon].iter().find(|m| m.len() != self.n_h()) {
            return Err(Error::dim("stage inequality multipliers", self.n_h(), bad.len()));
        }
        if t.ineq_mult[self.horizon].len() != self.n_h_terminal() {
            return Err(Error::dim(
                "terminal inequality multipliers",
                self.n_h_terminal(),
                t.ineq_mult[self.horizon].len(),
            ));
        }
        Ok(())
    }

    pub(crate) fn stage_maps(&self) -> StageMaps<'_> {
        StageMaps {
            dynamics: &self.model,
            constraints: self.constraints.as_deref(),
            output: self.output_cost.as_ref().map(|c| &*c.map),
        }
    }

    /// Rolls the discrete model forward from `x0` with the given inputs.
    pub fn simulate(&self, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(self.x0.clone());
        for (i, u) in inputs.iter().enumerate() {
            let next = self
                .model
                .eval(states[i].as_slice(), u.as_slice())
                .map_err(|e| Error::numeric(format!("simulation stage {i}: {e}")))?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Box bounds as an affine inequality map `[x - x_ub; x_lb - x; u - u_ub; u_lb - u] <= 0`.
///
/// Infinite bounds produce no row.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxConstraints {
    n_x: usize,
    n_u: usize,
    /// `(variable index in [x; u], sign, bound)`; the row is `sign * (z_k - bound)`.
    rows: Vec<(usize, f64, f64)>,
}

impl BoxConstraints {
    pub fn new(x_lb: &[f64], x_ub: &[f64], u_lb: &[f64], u_ub: &[f64]) -> Result<Self> {
        if x_lb.len() != x_ub.len() || u_lb.len() != u_ub.len() {
            return Err(Error::Invalid("bound vectors must have equal lengths".into()));
        }
        let n_x = x_lb.len();
        let mut rows = Vec::new();
        for (off, lb, ub) in [(0, x_lb, x_ub), (n_x, u_lb, u_ub)] {
            for k in 0..lb.len() {
                if lb[k] > ub[k] || lb[k].is_nan() || ub[k].is_nan() {
                    return Err(Error::Invalid(format!("empty bound interval at index {}", off + k)));
                }
                if ub[k].is_finite() {
                    rows.push((off + k, 1.0, ub[k]));
                }
                if lb[k].is_finite() {
                    rows.push((off + k, -1.0, lb[k]));
                }
            }
        }
        Ok(Self {
            n_x,
            n_u: u_lb.len(),
            rows,
        })
    }

    /// The state rows only, as a terminal (state-only) map.
    pub fn terminal(&self) -> Self {
        Self {
            n_x: self.n_x,
            n_u: 0,
            rows: self.rows.iter().copied().filter(|&(k, _, _)| k < self.n_x).collect(),
        }
    }
}

impl SmoothMap for BoxConstraints {
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_out(&self) -> usize {
        self.rows.len()
    }
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        for (o, &(k, sign, bound)) in out.iter_mut().zip(&self.rows) {
            let z = if k < self.n_x { x[k] } else { u[k - self.n_x] };
            *o = (z - S::from_f64(bound)).scale(sign);
        }
    }
}

/// Stacks several stage maps with equal argument sizes.
pub struct StackedMaps {
    parts: Vec<Arc<dyn StageMap>>,
}

impl StackedMaps {
    pub fn new(parts: Vec<Arc<dyn StageMap>>) -> Result<Self> {
        if let Some(first) = parts.first() {
            if parts.iter().any(|p| p.n_x() != first.n_x() || p.n_u() != first.n_u()) {
                return Err(Error::Invalid("stacked maps must share argument sizes".into()));
            }
        } else {
            return Err(Error::Invalid("nothing to stack".into()));
        }
        Ok(Self { parts })
    }
}

impl SmoothMap for StackedMaps {
    fn n_x(&self) -> usize {
        self.parts[0].n_x()
    }
    fn n_u(&self) -> usize {
        self.parts[0].n_u()
    }
    fn n_out(&self) -> usize {
        self.parts.iter().map(|p| p.n_out()).sum()
    }
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let mut start = 0;
        for p in &self.parts {
            let n = p.n_out();
            S::call(&**p, x, u, &mut out[start..start + n]);
            start += n;
        }
    }
}

/// One stage of the QP: `1/2 d' H d + g' d`, `dx+ = A dx + B du + c`, `Hx dx + Hu du + e <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpStage {
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset_x: DVector<f64>,
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    pub offset_h: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpTerminal {
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub hx: DMatrix<f64>,
    pub offset_h: DVector<f64>,
}

/// Stage-structured convex QP in the step variables, with `dx_0 = initial`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpData {
    pub stages: Vec<QpStage>,
    pub terminal: QpTerminal,
    pub initial: DVector<f64>,
    /// Number of exact Hessian blocks that needed eigenvalue clipping.
    pub regularized_blocks: usize,
}

impl QpData {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn n_x(&self) -> usize {
        self.initial.len()
    }

    pub fn n_u(&self) -> usize {
        self.stages.first().map_or(0, |s| s.b.ncols())
    }

    pub fn n_ineq(&self) -> usize {
        self.stages.iter().map(|s| s.offset_h.len()).sum::<usize>() + self.terminal.offset_h.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.n_x(), self.n_u());
        for (i, s) in self.stages.iter().enumerate() {
            let ctx = |what: &str| format!("QP stage {i} {what}");
            if s.hess.shape() != (nx + nu, nx + nu) {
                return Err(Error::dim(ctx("Hessian"), nx + nu, s.hess.nrows()));
            }
            if s.grad.len() != nx + nu {
                return Err(Error::dim(ctx("gradient"), nx + nu, s.grad.len()));
            }
            if s.a.shape() != (nx, nx) || s.b.shape() != (nx, nu) || s.offset_x.len() != nx {
                return Err(Error::dim(ctx("dynamics"), nx, s.a.nrows()));
            }
            let nh = s.offset_h.len();
            if s.hx.shape() != (nh, nx) || s.hu.shape() != (nh, nu) {
                return Err(Error::dim(ctx("constraint rows"), nh, s.hx.nrows()));
            }
        }
        let t = &self.terminal;
        if t.hess.shape() != (nx, nx) || t.grad.len() != nx || t.hx.shape() != (t.offset_h.len(), nx) {
            return Err(Error::dim("QP terminal stage", nx, t.hess.nrows()));
        }
        Ok(())
    }
}

/// Projects eigenvalues below `floor` up to `floor`. Returns `None` if nothing changed.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    if m.is_empty() {
        return None;
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return None;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    Some(symmetrize(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Builds the QP subproblem at `iterate`.
///
/// `anchors` is required for the FTC policy. `A, B, Hx, Hu` and the output
/// sensitivity `C` follow the policy; offsets and gradients do not.
pub fn assemble_qp(
    ocp: &OcpProblem,
    iterate: &Trajectory,
    sens: &SensitivityPolicy,
    anchors: Option<&AnchorSequence>,
    hess: HessianPolicy,
) -> Result<QpData> {
    ocp.check_trajectory(iterate)?;
    let n = ocp.horizon;
    let ftc = match sens {
        SensitivityPolicy::Linearize => None,
        SensitivityPolicy::FtcQuadrature(rule) => {
            let a = anchors.ok_or_else(|| Error::Invalid("FTC sensitivities need an anchor sequence".into()))?;
            if a.states.len() != n + 1 || a.inputs.len() != n {
                return Err(Error::dim("anchor sequence", n, a.inputs.len()));
            }
            Some((a, rule))
        }
    };
    let maps = ocp.stage_maps();
    let stage_sens: Vec<StageSensitivities> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, u, next) = (
                iterate.states[i].as_slice(),
                iterate.inputs[i].as_slice(),
                iterate.states[i + 1].as_slice(),
            );
            let res = match ftc {
                None => linearize_stage(maps, x, u, next),
                Some((a, rule)) => ftc_stage(maps, x, u, next, a.states[i].as_slice(), a.inputs[i].as_slice(), rule),
            };
            res.map_err(|e| Error::numeric(format!("stage {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let terminal_sens = terminal_sensitivities(
        ocp.terminal_constraints.as_deref(),
        ocp.output_cost.as_ref().filter(|c| c.terminal).map(|c| &*c.map),
        iterate.states[n].as_slice(),
        ftc.map(|(a, rule)| (a.states[n].as_slice(), rule)),
    )
    .map_err(|e| Error::numeric(format!("terminal stage: {e}")))?;

    let blocks: Vec<(QpStage, bool)> = stage_sens
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| stage_qp(ocp, iterate, i, s, hess))
        .collect::<Result<_>>()?;
    let (terminal, terminal_clipped) = terminal_qp(ocp, iterate, terminal_sens, hess)?;
    let regularized_blocks = blocks.iter().filter(|(_, c)| *c).count() + usize::from(terminal_clipped);
    Ok(QpData {
        stages: blocks.into_iter().map(|(s, _)| s).collect(),
        terminal,
        initial: DVector::zeros(ocp.n_x()),
        regularized_blocks,
    })
}

fn output_terms(cost: &OutputCost, s: &MapSensitivity) -> (DMatrix<f64>, DVector<f64>) {
    let c = stack_cols(&s.jx, &s.ju);
    let wc = &cost.weight * &s.value;
    (c.transpose() * &cost.weight * &c, c.transpose() * wc)
}

fn stack_cols(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

fn stage_qp(
    ocp: &OcpProblem,
    it: &Trajectory,
    i: usize,
    s: StageSensitivities,
    policy: HessianPolicy,
) -> Result<(QpStage, bool)> {
    let (nx, nu) = (ocp.n_x(), ocp.n_u());
    let (x, u) = (&it.states[i], &it.inputs[i]);
    let mut base = DMatrix::zeros(nx + nu, nx + nu);
    base.view_mut((0, 0), (nx, nx)).copy_from(&ocp.q);
    base.view_mut((nx, nx), (nu, nu)).copy_from(&ocp.r);
    let z = DVector::from_iterator(nx + nu, x.iter().chain(u.iter()).copied());
    let mut grad = &base * &z;
    let mut hess = match policy {
        HessianPolicy::GaussNewton => base,
        HessianPolicy::ExactLagrangian => hessian_lagrangian_stage(
            &ocp.model,
            ocp.constraints.as_deref(),
            x.as_slice(),
            u.as_slice(),
            it.eq_mult[i + 1].as_slice(),
            it.ineq_mult[i].as_slice(),
            &ocp.q,
            &ocp.r,
            if i == 0 { StageKind::Initial } else { StageKind::Intermediate },
        )?,
    };
    if let (Some(cost), Some(out)) = (&ocp.output_cost, &s.output) {
        let (h, g) = output_terms(cost, out);
        hess += h;
        grad += g + &cost.linear;
        if policy == HessianPolicy::ExactLagrangian {
            let w = &cost.weight * &out.value;
            hess += ad::weighted_hessian(&*cost.map, x.as_slice(), u.as_slice(), w.as_slice());
        }
    }
    let mut clipped = false;
    if policy == HessianPolicy::ExactLagrangian {
        hess = symmetrize(hess);
        if let Some(h) = clip_eigenvalues(&hess, HESSIAN_EIG_FLOOR) {
            hess = h;
            clipped = true;
        }
    }
    Ok((
        QpStage {
            hess,
            grad,
            a: s.a,
            b: s.b,
            offset_x: s.offset_x,
            hx: s.hx,
            hu: s.hu,
            offset_h: s.offset_h,
        },
        clipped,
    ))
}

fn terminal_qp(
    ocp: &OcpProblem,
    it: &Trajectory,
    s: TerminalSensitivities,
    policy: HessianPolicy,
) -> Result<(QpTerminal, bool)> {
    let n = ocp.horizon;
    let x = &it.states[n];
    let mut grad = &ocp.w * x;
    let mut hess = match policy {
        HessianPolicy::GaussNewton => ocp.w.clone(),
        HessianPolicy::ExactLagrangian => hessian_lagrangian_stage(
            &ocp.model,
            ocp.terminal_constraints.as_deref(),
            x.as_slice(),
            &[],
            &[],
            it.ineq_mult[n].as_slice(),
            &ocp.w,
            &ocp.r,
            StageKind::Terminal,
        )?,
    };
    if let (Some(cost), Some(out)) = (&ocp.output_cost, &s.output) {
        let wc = &cost.weight * &out.value;
        hess += out.jx.transpose() * &cost.weight * &out.jx;
        grad += out.jx.transpose() * &wc;
        if policy == HessianPolicy::ExactLagrangian {
            let u0 = vec![0.0; ocp.n_u()];
            let full = ad::weighted_hessian(&*cost.map, x.as_slice(), &u0, wc.as_slice());
            hess += full.view((0, 0), (ocp.n_x(), ocp.n_x()));
        }
    }
    let mut clipped = false;
    if policy == HessianPolicy::ExactLagrangian {
        hess = symmetrize(hess);
        if let Some(h) = clip_eigenvalues(&hess, HESSIAN_EIG_FLOOR) {
            hess = h;
            clipped = true;
        }
    }
    Ok((
        QpTerminal {
            hess,
            grad,
            hx: s.hx,
            offset_h: s.offset_h,
        },
        clipped,
    ))
}

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// `sum_i |x_i|_Q^2 + |u_i|_R^2 + |x_N|_W^2`, plus the output cost terms if present.
pub fn eval_nlp_cost(ocp: &OcpProblem, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<f64> {
    let n = ocp.horizon;
    if states.len() != n + 1 || inputs.len() != n {
        return Err(Error::dim("cost trajectory", n, inputs.len()));
    }
    let mut cost = 0.0;
    for (x, u) in states.iter().zip(inputs) {
        cost += quad(&ocp.q, x) + quad(&ocp.r, u);
        if let Some(c) = &ocp.output_cost {
            let y = ad::eval(&*c.map, x.as_slice(), u.as_slice());
            let z = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
            cost += quad(&c.weight, &y) + 2.0 * c.linear.dot(&z) + c.constant;
        }
    }
    cost += quad(&ocp.w, &states[n]);
    if let Some(c) = ocp.output_cost.as_ref().filter(|c| c.terminal) {
        let y = ad::eval(&*c.map, states[n].as_slice(), &vec![0.0; ocp.n_u()]);
        cost += quad(&c.weight, &y);
    }
    Ok(cost)
}

/// Stacked `h(x_i, u_i)` over stages followed by `h_N(x_N)`, and `max(0, max entry)`.
pub fn eval_constraints(ocp: &OcpProblem, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<(DVector<f64>, f64)> {
    let n = ocp.horizon;
    if states.len() != n + 1 || inputs.len() != n {
        return Err(Error::dim("constraint trajectory", n, inputs.len()));
    }
    let mut stacked = Vec::with_capacity(n * ocp.n_h() + ocp.n_h_terminal());
    if let Some(h) = &ocp.constraints {
        for (x, u) in states.iter().zip(inputs) {
            stacked.extend(ad::eval(&**h, x.as_slice(), u.as_slice()).iter());
        }
    }
    if let Some(h) = &ocp.terminal_constraints {
        stacked.extend(ad::eval(&**h, states[n].as_slice(), &[]).iter());
    }
    let violation = stacked.iter().copied().fold(0.0, f64::max);
    Ok((DVector::from_vec(stacked), violation))
}
