//! Reference solvers used only by tests: a dense saddle-point solve of the
//! stage QP and brute-force active-set enumeration for small instances.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use unimpc::ocp::{QpData, QpStage, QpTerminal};

pub struct DenseSolution {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub eq_mult: Vec<DVector<f64>>,
    pub ineq_mult: Vec<DVector<f64>>,
}

struct Layout {
    n: usize,
    nx: usize,
    nu: usize,
}

impl Layout {
    fn x(&self, i: usize) -> usize {
        i * (self.nx + self.nu)
    }
    fn u(&self, i: usize) -> usize {
        i * (self.nx + self.nu) + self.nx
    }
    fn len(&self) -> usize {
        self.n * (self.nx + self.nu) + self.nx
    }
}

/// Dense cost, equality rows `E w = f` (initial condition first) and inequality rows `G w + e <= 0`.
#[allow(clippy::type_complexity)]
fn dense(qp: &QpData) -> (Layout, DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let l = Layout { n: qp.horizon(), nx: qp.n_x(), nu: qp.n_u() };
    let (n, nx, nu, nw) = (l.n, l.nx, l.nu, l.len());
    let mut h = DMatrix::zeros(nw, nw);
    let mut g = DVector::zeros(nw);
    let mut e_mat = DMatrix::zeros(nx * (n + 1), nw);
    let mut f = DVector::zeros(nx * (n + 1));
    for k in 0..nx {
        e_mat[(k, l.x(0) + k)] = -1.0;
        f[k] = -qp.initial[k];
    }
    let m = qp.n_ineq();
    let mut gm = DMatrix::zeros(m, nw);
    let mut ev = DVector::zeros(m);
    let mut counts = Vec::new();
    let mut row = 0;
    for (i, s) in qp.stages.iter().enumerate() {
        h.view_mut((l.x(i), l.x(i)), (nx + nu, nx + nu)).copy_from(&s.hess);
        g.rows_mut(l.x(i), nx + nu).copy_from(&s.grad);
        let r0 = nx * (i + 1);
        e_mat.view_mut((r0, l.x(i)), (nx, nx)).copy_from(&s.a);
        e_mat.view_mut((r0, l.u(i)), (nx, nu)).copy_from(&s.b);
        for k in 0..nx {
            e_mat[(r0 + k, l.x(i + 1) + k)] = -1.0;
            f[r0 + k] = -s.offset_x[k];
        }
        let nh = s.offset_h.len();
        gm.view_mut((row, l.x(i)), (nh, nx)).copy_from(&s.hx);
        gm.view_mut((row, l.u(i)), (nh, nu)).copy_from(&s.hu);
        ev.rows_mut(row, nh).copy_from(&s.offset_h);
        counts.push(nh);
        row += nh;
    }
    let t = &qp.terminal;
    h.view_mut((l.x(n), l.x(n)), (nx, nx)).copy_from(&t.hess);
    g.rows_mut(l.x(n), nx).copy_from(&t.grad);
    let nh = t.offset_h.len();
    gm.view_mut((row, l.x(n)), (nh, nx)).copy_from(&t.hx);
    ev.rows_mut(row, nh).copy_from(&t.offset_h);
    counts.push(nh);
    (l, h, g, e_mat, f, gm, ev, counts)
}

fn split(l: &Layout, w: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>, counts: &[usize]) -> DenseSolution {
    let (n, nx, nu) = (l.n, l.nx, l.nu);
    let mut start = 0;
    let ineq_mult = counts
        .iter()
        .map(|&c| {
            let v = mu.rows(start, c).into_owned();
            start += c;
            v
        })
        .collect();
    DenseSolution {
        dx: (0..=n).map(|i| w.rows(l.x(i), nx).into_owned()).collect(),
        du: (0..n).map(|i| w.rows(l.u(i), nu).into_owned()).collect(),
        eq_mult: (0..=n).map(|i| lam.rows(i * nx, nx).into_owned()).collect(),
        ineq_mult,
    }
}

/// Solves `[H E'; E 0] [w; y] = [-g; f]`.
fn saddle(h: &DMatrix<f64>, g: &DVector<f64>, e: &DMatrix<f64>, f: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (nw, ne) = (h.nrows(), e.nrows());
    let mut k = DMatrix::zeros(nw + ne, nw + ne);
    k.view_mut((0, 0), (nw, nw)).copy_from(h);
    k.view_mut((0, nw), (nw, ne)).copy_from(&e.transpose());
    k.view_mut((nw, 0), (ne, nw)).copy_from(e);
    let mut rhs = DVector::zeros(nw + ne);
    rhs.rows_mut(0, nw).copy_from(&(-g));
    rhs.rows_mut(nw, ne).copy_from(f);
    let sol = k.full_piv_lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, nw).into_owned(), sol.rows(nw, ne).into_owned()))
}

/// Solution of the QP ignoring inequality rows.
pub fn equality_solve(qp: &QpData) -> DenseSolution {
    let (l, h, g, e, f, _, ev, counts) = dense(qp);
    let (w, y) = saddle(&h, &g, &e, &f).expect("equality KKT system is singular");
    split(&l, &w, &y, &DVector::zeros(ev.len()), &counts)
}

/// Exhaustive search over active sets; intended for at most about a dozen rows.
pub fn active_set_solve(qp: &QpData) -> Option<DenseSolution> {
    let (l, h, g, e, f, gm, ev, counts) = dense(qp);
    let m = ev.len();
    assert!(m <= 16, "active-set enumeration is exponential");
    let ne = e.nrows();
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
        let mut ea = DMatrix::zeros(ne + act.len(), e.ncols());
        ea.view_mut((0, 0), e.shape()).copy_from(&e);
        let mut fa = DVector::zeros(ne + act.len());
        fa.rows_mut(0, ne).copy_from(&f);
        for (r, &j) in act.iter().enumerate() {
            ea.row_mut(ne + r).copy_from(&gm.row(j));
            fa[ne + r] = -ev[j];
        }
        let Some((w, y)) = saddle(&h, &g, &ea, &fa) else { continue };
        // verify the saddle system actually holds (singular systems may return garbage)
        let res = (&h * &w + &g + ea.transpose() * &y).amax().max((&ea * &w - &fa).amax());
        if res > 1e-9 {
            continue;
        }
        let mut mu = DVector::zeros(m);
        for (r, &j) in act.iter().enumerate() {
            mu[j] = y[ne + r];
        }
        let feasible = (&gm * &w + &ev).iter().all(|&v| v <= 1e-10);
        if feasible && mu.iter().all(|&v| v >= -1e-10) {
            return Some(split(&l, &w, &y.rows(0, ne).into_owned(), &mu, &counts));
        }
    }
    None
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Random strictly convex stage QP whose inequalities hold strictly along a
/// simulated trajectory, so it is always feasible.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, nx: usize, nu: usize, rows_per_stage: usize, terminal_rows: usize) -> QpData {
    let mut x = DVector::from_fn(nx, |_, _| rng.random_range(-0.1..0.1));
    let initial = x.clone();
    let mut stages = Vec::new();
    for _ in 0..n {
        let a = DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.6..0.6)) + DMatrix::identity(nx, nx) * 0.5;
        let b = DMatrix::from_fn(nx, nu, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(nx, |_, _| rng.random_range(-0.5..0.5));
        let u = DVector::from_fn(nu, |_, _| rng.random_range(-0.5..0.5));
        let hx = DMatrix::from_fn(rows_per_stage, nx, |_, _| rng.random_range(-1.0..1.0));
        let hu = DMatrix::from_fn(rows_per_stage, nu, |_, _| rng.random_range(-1.0..1.0));
        let margin = DVector::from_fn(rows_per_stage, |_, _| rng.random_range(0.05..1.0));
        let e = -(&hx * &x + &hu * &u) - margin;
        let grad = DVector::from_fn(nx + nu, |_, _| rng.random_range(-2.0..2.0));
        let next = &a * &x + &b * &u + &c;
        stages.push(QpStage {
            hess: random_spd(rng, nx + nu, 0.1),
            grad,
            a,
            b,
            offset_x: c,
            hx,
            hu,
            offset_h: e,
        });
        x = next;
    }
    let hx = DMatrix::from_fn(terminal_rows, nx, |_, _| rng.random_range(-1.0..1.0));
    let margin = DVector::from_fn(terminal_rows, |_, _| rng.random_range(0.05..1.0));
    let te = -(&hx * &x) - margin;
    let tg = DVector::from_fn(nx, |_, _| rng.random_range(-2.0..2.0));
    QpData {
        stages,
        terminal: QpTerminal { hess: random_spd(rng, nx, 0.1), grad: tg, hx, offset_h: te },
        initial,
        regularized_blocks: 0,
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let fp = f(&p);
        p[k] = x[k] - h;
        let fm = f(&p);
        p[k] = x[k];
        j.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    j
}

pub fn max_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| if p.is_empty() { 0.0 } else { (p - q).amax() }).fold(0.0, f64::max)
}
