//! Primal-dual interior point solver for the stage-structured QP.
//!
//! Each Newton system is an equality-constrained LQ problem; it is solved by a
//! backward Riccati recursion, so the work per iteration is linear in the horizon.
//! The Riccati factors depend only on the barrier-augmented Hessian and are reused
//! for the predictor and corrector right-hand sides.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::QpData;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpTolerances {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest inequality multiplier before the problem is declared infeasible.
    pub infeasible_mult: f64,
    /// Re-solve on the identified active set after convergence; kept only if it lowers the residuals.
    ///
    /// Off by default: with a singular Hessian the re-solve may pick another point of the
    /// solution set, which makes closed-loop runs switch between nearby trajectories.
    pub polish: bool,
}

impl Default for QpTolerances {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 4000,
            infeasible_mult: 1e10,
            polish: false,
        }
    }
}

impl QpTolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.infeasible_mult > 0.0) {
            return Err(Error::Invalid("QP tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

/// Infinity-norm residuals of the QP optimality conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QpResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl QpResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    /// `theta_0 .. theta_N`; `theta_0` is the initial-condition multiplier.
    pub eq_mult: Vec<DVector<f64>>,
    /// Stage multipliers followed by the terminal ones.
    pub ineq_mult: Vec<DVector<f64>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: QpResiduals,
}

fn stage_g(qp: &QpData, i: usize) -> DMatrix<f64> {
    let s = &qp.stages[i];
    let mut g = DMatrix::zeros(s.hx.nrows(), s.hx.ncols() + s.hu.ncols());
    g.view_mut((0, 0), s.hx.shape()).copy_from(&s.hx);
    g.view_mut((0, s.hx.ncols()), s.hu.shape()).copy_from(&s.hu);
    g
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

fn amax(v: &DVector<f64>) -> f64 {
    if v.is_empty() { 0.0 } else { v.amax() }
}

/// Residuals of the optimality conditions at `(dx, du, eq_mult, ineq_mult)`.
///
/// Stationarity of stage `i` in `x` is `H z + g + A' theta_{i+1} + Hx' mu - theta_i`.
pub fn kkt_residuals_qp(qp: &QpData, sol: &QpSolution) -> Result<QpResiduals> {
    let n = qp.horizon();
    let (nx, nu) = (qp.n_x(), qp.n_u());
    if sol.dx.len() != n + 1 || sol.du.len() != n || sol.eq_mult.len() != n + 1 || sol.ineq_mult.len() != n + 1 {
        return Err(Error::dim("QP solution horizon", n, sol.du.len()));
    }
    for i in 0..=n {
        let nh = if i < n { qp.stages[i].offset_h.len() } else { qp.terminal.offset_h.len() };
        if sol.dx[i].len() != nx || sol.eq_mult[i].len() != nx || sol.ineq_mult[i].len() != nh {
            return Err(Error::dim(format!("QP solution stage {i}"), nx, sol.dx[i].len()));
        }
        if i < n && sol.du[i].len() != nu {
            return Err(Error::dim(format!("QP solution input {i}"), nu, sol.du[i].len()));
        }
    }
    let mut r = QpResiduals {
        primal: amax(&(&sol.dx[0] - &qp.initial)),
        ..QpResiduals::default()
    };
    let absorb = |r: &mut QpResiduals, mu: &DVector<f64>, h: &DVector<f64>| {
        for (&m, &v) in mu.iter().zip(h.iter()) {
            r.primal = r.primal.max(v.max(0.0));
            r.dual = r.dual.max((-m).max(0.0));
            r.complementarity = r.complementarity.max((m * v).abs());
        }
    };
    for (i, s) in qp.stages.iter().enumerate() {
        let z = stack(&sol.dx[i], &sol.du[i]);
        let g = stage_g(qp, i);
        let mut stat = &s.hess * &z + &s.grad + g.transpose() * &sol.ineq_mult[i];
        let at = s.a.transpose() * &sol.eq_mult[i + 1];
        let bt = s.b.transpose() * &sol.eq_mult[i + 1];
        for k in 0..nx {
            stat[k] += at[k] - sol.eq_mult[i][k];
        }
        for k in 0..nu {
            stat[nx + k] += bt[k];
        }
        r.stationarity = r.stationarity.max(amax(&stat));
        let defect = &s.a * &sol.dx[i] + &s.b * &sol.du[i] + &s.offset_x - &sol.dx[i + 1];
        r.primal = r.primal.max(amax(&defect));
        let h = g * &z + &s.offset_h;
        absorb(&mut r, &sol.ineq_mult[i], &h);
    }
    let t = &qp.terminal;
    let stat = &t.hess * &sol.dx[n] + &t.grad + t.hx.transpose() * &sol.ineq_mult[n] - &sol.eq_mult[n];
    r.stationarity = r.stationarity.max(amax(&stat));
    let h = &t.hx * &sol.dx[n] + &t.offset_h;
    absorb(&mut r, &sol.ineq_mult[n], &h);
    Ok(r)
}

struct StageFactor {
    /// Cholesky of the input block of the cost-to-go Hessian.
    huu: Cholesky<f64, Dyn>,
    hux: DMatrix<f64>,
    k: DMatrix<f64>,
}

/// Cholesky factor of `m`, shifting the diagonal when rounding has made it indefinite.
///
/// Near convergence the barrier terms of strongly active rows grow without bound and
/// the cost-to-go loses its low-order digits; a shift relative to the largest diagonal
/// entry only perturbs the Newton direction, while the residuals stay exact.
fn regularized_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = scale * 1e-14;
    while shift <= scale * 1e-6 {
        let mut r = m.clone();
        for k in 0..r.nrows() {
            r[(k, k)] += shift;
        }
        if let Some(c) = Cholesky::new(r) {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

/// Riccati factorization of an LQ problem with stage Hessians `hess[i]` and terminal `hess_n`.
struct Riccati {
    stages: Vec<StageFactor>,
    /// Cost-to-go Hessians `P_0 .. P_N`.
    p: Vec<DMatrix<f64>>,
}

impl Riccati {
    fn factor(qp: &QpData, hess: &[DMatrix<f64>], hess_n: &DMatrix<f64>) -> Result<Self> {
        let n = qp.horizon();
        let nx = qp.n_x();
        let mut p = vec![DMatrix::zeros(0, 0); n + 1];
        p[n] = hess_n.clone();
        let mut stages = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let s = &qp.stages[i];
            let nu = s.b.ncols();
            let pa = &p[i + 1] * &s.a;
            let pb = &p[i + 1] * &s.b;
            let h = &hess[i];
            let hxx = h.view((0, 0), (nx, nx)) + s.a.transpose() * &pa;
            let hux = h.view((nx, 0), (nu, nx)) + s.b.transpose() * &pa;
            let mut huu = h.view((nx, nx), (nu, nu)) + s.b.transpose() * &pb;
            huu = (&huu + huu.transpose()) * 0.5;
            let chol = regularized_cholesky(huu)
                .ok_or_else(|| Error::numeric(format!("Riccati recursion: input Hessian of stage {i} is not positive definite")))?;
            let k = -chol.solve(&hux);
            let pi = &hxx + hux.transpose() * &k;
            p[i] = (&pi + pi.transpose()) * 0.5;
            stages.push(StageFactor { huu: chol, hux, k });
        }
        stages.reverse();
        Ok(Self { stages, p })
    }

    /// Solves the LQ problem with linear terms `lin`, dynamics offsets `off` and `dx_0 = x0`.
    ///
    /// Returns states, inputs and costates `P_i x_i + p_i`.
    #[allow(clippy::type_complexity)]
    fn solve(
        &self,
        qp: &QpData,
        lin: &[DVector<f64>],
        lin_n: &DVector<f64>,
        off: &[DVector<f64>],
        x0: &DVector<f64>,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = qp.horizon();
        let nx = qp.n_x();
        let mut pv = vec![DVector::zeros(0); n + 1];
        pv[n] = lin_n.clone();
        let mut kff = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let s = &qp.stages[i];
            let f = &self.stages[i];
            let nu = s.b.ncols();
            let w = &self.p[i + 1] * &off[i] + &pv[i + 1];
            let gx = lin[i].rows(0, nx) + s.a.transpose() * &w;
            let gu = lin[i].rows(nx, nu) + s.b.transpose() * &w;
            let k = -f.huu.solve(&gu);
            pv[i] = gx + f.hux.transpose() * &k;
            kff[i] = k;
        }
        let mut xs = Vec::with_capacity(n + 1);
        let mut us = Vec::with_capacity(n);
        xs.push(x0.clone());
        for i in 0..n {
            let s = &qp.stages[i];
            let u = &self.stages[i].k * &xs[i] + &kff[i];
            let next = &s.a * &xs[i] + &s.b * &u + &off[i];
            us.push(u);
            xs.push(next);
        }
        let lam = (0..=n).map(|i| &self.p[i] * &xs[i] + &pv[i]).collect();
        (xs, us, lam)
    }
}

/// Largest `a in (0, 1]` keeping `v + a dv >= 0`.
fn max_step(v: &[DVector<f64>], dv: &[DVector<f64>]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        for (&xi, &di) in x.iter().zip(d.iter()) {
            if di < 0.0 {
                a = a.min(-xi / di);
            }
        }
    }
    a
}

/// Equality-constrained re-solve with the rows where `mu > slack` held active.
///
/// The active rows enter through an augmented Lagrangian with a fixed penalty, so a
/// single Riccati factorization serves all multiplier updates. Returns `None` unless
/// the result is dual feasible and strictly improves the residuals.
fn polish(qp: &QpData, gs: &[DMatrix<f64>], sol: &QpSolution, slack: &[DVector<f64>]) -> Option<QpSolution> {
    const RHO: f64 = 1e6;
    let n = qp.horizon();
    let g_of = |i: usize| if i < n { &gs[i] } else { &qp.terminal.hx };
    let e_of = |i: usize| if i < n { &qp.stages[i].offset_h } else { &qp.terminal.offset_h };
    let active: Vec<DVector<f64>> = (0..=n)
        .map(|i| sol.ineq_mult[i].zip_map(&slack[i], |m, s| if m > s { 1.0 } else { 0.0 }))
        .collect();
    let penalised = |i: usize, h: &DMatrix<f64>| h + g_of(i).transpose() * DMatrix::from_diagonal(&(&active[i] * RHO)) * g_of(i);
    let hess: Vec<DMatrix<f64>> = (0..n).map(|i| penalised(i, &qp.stages[i].hess)).collect();
    let hn = penalised(n, &qp.terminal.hess);
    let fac = Riccati::factor(qp, &hess, &hn).ok()?;
    let offs: Vec<DVector<f64>> = qp.stages.iter().map(|s| s.offset_x.clone()).collect();

    let mut mu: Vec<DVector<f64>> = (0..=n).map(|i| sol.ineq_mult[i].component_mul(&active[i])).collect();
    let mut best: Option<QpSolution> = None;
    let mut best_res = sol.residuals.max();
    for _ in 0..8 {
        let lin: Vec<DVector<f64>> = (0..=n)
            .map(|i| {
                let grad = if i < n { &qp.stages[i].grad } else { &qp.terminal.grad };
                grad + g_of(i).transpose() * (&mu[i] + e_of(i).component_mul(&active[i]) * RHO)
            })
            .collect();
        let (xs, us, lam) = fac.solve(qp, &lin[..n], &lin[n], &offs, &qp.initial);
        for i in 0..=n {
            let z = if i < n { stack(&xs[i], &us[i]) } else { xs[n].clone() };
            let h = g_of(i) * z + e_of(i);
            mu[i] += h.component_mul(&active[i]) * RHO;
        }
        // with the updated multipliers the penalised stationarity is the plain one
        let mut cand = QpSolution {
            dx: xs,
            du: us,
            eq_mult: lam,
            ineq_mult: mu.clone(),
            status: QpStatus::Solved,
            iterations: sol.iterations,
            residuals: QpResiduals::default(),
        };
        cand.residuals = kkt_residuals_qp(qp, &cand).ok()?;
        let r = cand.residuals.max();
        if !r.is_finite() {
            return best;
        }
        if r < best_res {
            best_res = r;
            best = Some(cand);
        } else if best.is_some() {
            break;
        }
    }
    best
}

/// Solves the QP. A warm start supplies the primal point only.
pub fn solve_qp(qp: &QpData, warm: Option<&QpSolution>, tols: &QpTolerances) -> Result<QpSolution> {
    qp.validate()?;
    tols.validate()?;
    let n = qp.horizon();
    let (nx, nu) = (qp.n_x(), qp.n_u());
    let gs: Vec<DMatrix<f64>> = (0..n).map(|i| stage_g(qp, i)).collect();
    let g_of = |i: usize| if i < n { &gs[i] } else { &qp.terminal.hx };
    let e_of = |i: usize| if i < n { &qp.stages[i].offset_h } else { &qp.terminal.offset_h };
    let m_total = qp.n_ineq();

    let (mut xs, mut us) = match warm {
        Some(w) if w.dx.len() == n + 1 && w.du.len() == n && w.dx.iter().all(|x| x.len() == nx) && w.du.iter().all(|u| u.len() == nu) => {
            (w.dx.clone(), w.du.clone())
        }
        _ => (vec![DVector::zeros(nx); n + 1], vec![DVector::zeros(nu); n]),
    };
    xs[0] = qp.initial.clone();
    let zs = |xs: &[DVector<f64>], us: &[DVector<f64>], i: usize| if i < n { stack(&xs[i], &us[i]) } else { xs[n].clone() };

    let mut slack: Vec<DVector<f64>> = (0..=n)
        .map(|i| (g_of(i) * zs(&xs, &us, i) + e_of(i)).map(|v| (-v).max(1.0)))
        .collect();
    let mut mu: Vec<DVector<f64>> = (0..=n).map(|i| DVector::from_element(e_of(i).len(), 1.0)).collect();
    let mut lam = vec![DVector::zeros(nx); n + 1];

    let mut sol = QpSolution {
        dx: xs.clone(),
        du: us.clone(),
        eq_mult: lam.clone(),
        ineq_mult: mu.clone(),
        status: QpStatus::MaxIter,
        iterations: 0,
        residuals: QpResiduals::default(),
    };

    for iter in 0..=tols.max_iter {
        sol.dx.clone_from(&xs);
        sol.du.clone_from(&us);
        sol.eq_mult.clone_from(&lam);
        sol.ineq_mult.clone_from(&mu);
        sol.iterations = iter;
        // With no inequalities the first Newton step is exact; its residuals are checked below.
        sol.residuals = kkt_residuals_qp(qp, &sol)?;
        if !sol.residuals.max().is_finite() {
            return Err(Error::numeric(format!("QP iterate became non-finite at iteration {iter}")));
        }
        if sol.residuals.max() <= tols.tol && (iter > 0 || m_total == 0) {
            sol.status = QpStatus::Solved;
            if tols.polish && m_total > 0 {
                if let Some(p) = polish(qp, &gs, &sol, &slack) {
                    return Ok(p);
                }
            }
            return Ok(sol);
        }
        let big_mult = mu.iter().map(amax).fold(0.0, f64::max);
        if big_mult > tols.infeasible_mult && sol.residuals.primal > tols.tol {
            sol.status = QpStatus::Infeasible;
            return Ok(sol);
        }
        if iter == tols.max_iter {
            break;
        }

        // residuals of the slack form
        let mut r_d = Vec::with_capacity(n + 1);
        for (i, s) in qp.stages.iter().enumerate() {
            let z = stack(&xs[i], &us[i]);
            let mut rd = &s.hess * &z + &s.grad + gs[i].transpose() * &mu[i];
            let at = s.a.transpose() * &lam[i + 1];
            let bt = s.b.transpose() * &lam[i + 1];
            for k in 0..nx {
                rd[k] += at[k] - lam[i][k];
            }
            for k in 0..nu {
                rd[nx + k] += bt[k];
            }
            r_d.push(rd);
        }
        r_d.push(&qp.terminal.hess * &xs[n] + &qp.terminal.grad + qp.terminal.hx.transpose() * &mu[n] - &lam[n]);
        let r_p: Vec<DVector<f64>> = qp
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| &s.a * &xs[i] + &s.b * &us[i] + &s.offset_x - &xs[i + 1])
            .collect();
        let r_g: Vec<DVector<f64>> = (0..=n).map(|i| g_of(i) * zs(&xs, &us, i) + e_of(i) + &slack[i]).collect();
        let gap = if m_total > 0 {
            (0..=n).map(|i| slack[i].dot(&mu[i])).sum::<f64>() / m_total as f64
        } else {
            0.0
        };

        let d: Vec<DVector<f64>> = (0..=n).map(|i| mu[i].component_div(&slack[i])).collect();
        let mut hess = Vec::with_capacity(n);
        for i in 0..n {
            let gd = gs[i].transpose() * DMatrix::from_diagonal(&d[i]);
            hess.push(&qp.stages[i].hess + &gd * &gs[i]);
        }
        let hn = &qp.terminal.hess + qp.terminal.hx.transpose() * DMatrix::from_diagonal(&d[n]) * &qp.terminal.hx;
        let fac = Riccati::factor(qp, &hess, &hn)?;
        let x0_step = &qp.initial - &xs[0];

        let newton = |r_c: &[DVector<f64>]| {
            let lin: Vec<DVector<f64>> = (0..=n)
                .map(|i| {
                    let w = (mu[i].component_mul(&r_g[i]) - &r_c[i]).component_div(&slack[i]);
                    &r_d[i] + g_of(i).transpose() * w
                })
                .collect();
            let (dxs, dus, dl) = fac.solve(qp, &lin[..n], &lin[n], &r_p, &x0_step);
            let dt: Vec<DVector<f64>> = (0..=n).map(|i| -&r_g[i] - g_of(i) * zs(&dxs, &dus, i)).collect();
            let dm: Vec<DVector<f64>> = (0..=n)
                .map(|i| (-&r_c[i] - mu[i].component_mul(&dt[i])).component_div(&slack[i]))
                .collect();
            (dxs, dus, dl, dt, dm)
        };

        let rc_aff: Vec<DVector<f64>> = (0..=n).map(|i| slack[i].component_mul(&mu[i])).collect();
        let (mut dxs, mut dus, mut dl, mut dt, mut dm) = newton(&rc_aff);
        if m_total > 0 {
            let a_aff = max_step(&slack, &dt).min(max_step(&mu, &dm));
            let gap_aff = (0..=n)
                .map(|i| (&slack[i] + &dt[i] * a_aff).dot(&(&mu[i] + &dm[i] * a_aff)))
                .sum::<f64>()
                / m_total as f64;
            let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);
            let rc: Vec<DVector<f64>> = (0..=n)
                .map(|i| (&rc_aff[i] + dt[i].component_mul(&dm[i])).add_scalar(-sigma * gap))
                .collect();
            (dxs, dus, dl, dt, dm) = newton(&rc);
        }
        let alpha = if m_total > 0 {
            (0.995 * max_step(&slack, &dt).min(max_step(&mu, &dm))).min(1.0)
        } else {
            1.0
        };
        for i in 0..=n {
            xs[i] += &dxs[i] * alpha;
            lam[i] += &dl[i] * alpha;
            slack[i] += &dt[i] * alpha;
            mu[i] += &dm[i] * alpha;
            if i < n {
                us[i] += &dus[i] * alpha;
            }
        }
        // the initial condition is linear; pin it exactly
        xs[0] = qp.initial.clone();
    }
    sol.status = QpStatus::MaxIter;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{QpStage, QpTerminal};

    fn scalar_qp(h: f64, g: f64, rows: &[(f64, f64)]) -> QpData {
        // one stage, n_x = 0 is awkward, so carry a dummy state pinned at zero
        let nh = rows.len();
        QpData {
            stages: vec![QpStage {
                hess: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, h]),
                grad: DVector::from_vec(vec![0.0, g]),
                a: DMatrix::zeros(1, 1),
                b: DMatrix::zeros(1, 1),
                offset_x: DVector::zeros(1),
                hx: DMatrix::zeros(nh, 1),
                hu: DMatrix::from_iterator(nh, 1, rows.iter().map(|r| r.0)),
                offset_h: DVector::from_iterator(nh, rows.iter().map(|r| r.1)),
            }],
            terminal: QpTerminal {
                hess: DMatrix::identity(1, 1),
                grad: DVector::zeros(1),
                hx: DMatrix::zeros(0, 1),
                offset_h: DVector::zeros(0),
            },
            initial: DVector::zeros(1),
            regularized_blocks: 0,
        }
    }

    #[test]
    fn unconstrained_newton_step() {
        let qp = scalar_qp(1.0, 0.7, &[]);
        let s = solve_qp(&qp, None, &QpTolerances::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.du[0][0] + 0.7).abs() < 1e-14);
        assert_eq!(s.dx[0][0], 0.0);
    }

    #[test]
    fn scalar_bound_is_active() {
        // min 1/2 d^2 + d  s.t. -d <= 0
        let qp = scalar_qp(1.0, 1.0, &[(-1.0, 0.0)]);
        let s = solve_qp(&qp, None, &QpTolerances::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!(s.du[0][0].abs() < 1e-8);
        assert!((s.ineq_mult[0][0] - 1.0).abs() < 1e-8);
        let r = kkt_residuals_qp(&qp, &s).unwrap();
        assert!(r.max() <= 1e-8);
    }

    #[test]
    fn exact_solution_has_tiny_residuals_and_perturbation_shows() {
        let qp = scalar_qp(1.0, 1.0, &[(-1.0, 0.0)]);
        let mut s = QpSolution {
            dx: vec![DVector::zeros(1); 2],
            du: vec![DVector::zeros(1)],
            eq_mult: vec![DVector::zeros(1); 2],
            ineq_mult: vec![DVector::from_vec(vec![1.0]), DVector::zeros(0)],
            status: QpStatus::Solved,
            iterations: 0,
            residuals: QpResiduals::default(),
        };
        assert!(kkt_residuals_qp(&qp, &s).unwrap().max() <= 1e-12);
        s.du[0][0] += 1e-3;
        assert!(kkt_residuals_qp(&qp, &s).unwrap().stationarity >= 1e-4);
    }

    #[test]
    fn infeasible_rows_are_detected() {
        // d <= -1 and -d <= -1
        let qp = scalar_qp(1.0, 0.0, &[(1.0, 1.0), (-1.0, 1.0)]);
        let s = solve_qp(&qp, None, &QpTolerances::default()).unwrap();
        assert_ne!(s.status, QpStatus::Solved);
    }

    #[test]
    fn determinism() {
        let qp = scalar_qp(2.0, -3.0, &[(1.0, -1.0), (-1.0, -0.5)]);
        let a = solve_qp(&qp, None, &QpTolerances::default()).unwrap();
        let b = solve_qp(&qp, None, &QpTolerances::default()).unwrap();
        assert_eq!(a, b);
        assert!((a.du[0][0] - 1.0).abs() < 1e-8);
    }
}
