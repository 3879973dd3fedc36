//! Quick numerical self-checks behind `unimpc selftest`.
//!
//! Each check compares a library routine with a slow independent computation:
//! AD Jacobians with central differences, FTC averages with a dense midpoint sum,
//! and the Riccati-based QP solver with a dense saddle-point solve.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ad::{self, StageMap};
use crate::error::Result;
use crate::model::{CartPendulum, SingleTrack, SingleTrackParams};
use crate::ocp::{QpData, QpStage, QpTerminal};
use crate::qp::{solve_qp, QpStatus, QpTolerances};
use crate::sensitivity::{ftc_stage, QuadratureRule, StageMaps};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tol
    }
}

fn joined(jx: &DMatrix<f64>, ju: &DMatrix<f64>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(jx.nrows(), jx.ncols() + ju.ncols());
    j.columns_mut(0, jx.ncols()).copy_from(jx);
    j.columns_mut(jx.ncols(), ju.ncols()).copy_from(ju);
    j
}

fn central_jacobian(map: &dyn StageMap, x: &[f64], u: &[f64]) -> DMatrix<f64> {
    let nx = x.len();
    let mut v: Vec<f64> = x.iter().chain(u).copied().collect();
    let mut j = DMatrix::zeros(map.n_out(), v.len());
    for c in 0..v.len() {
        let h = 1e-6 * (1.0 + v[c].abs());
        let v0 = v[c];
        v[c] = v0 + h;
        let fp = ad::eval(map, &v[..nx], &v[nx..]);
        v[c] = v0 - h;
        let fm = ad::eval(map, &v[..nx], &v[nx..]);
        v[c] = v0;
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    j
}

fn ad_vs_fd(rng: &mut ChaCha8Rng) -> Result<Check> {
    let cart = CartPendulum::default().discrete_model(0.01)?;
    let car = SingleTrack::new(SingleTrackParams::default()).continuous_model()?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let xc: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let uc = [rng.random_range(-4.0..4.0)];
        let mut xs: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        xs[3] = rng.random_range(0.5..3.0);
        let us: Vec<f64> = (0..car.n_u()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (map, x, u) in [(cart.map(), &xc[..], &uc[..]), (car.map(), &xs[..], &us[..])] {
            let (_, jx, ju) = ad::jacobian(map, x, u);
            let ad_j = joined(&jx, &ju);
            worst = worst.max((&ad_j - central_jacobian(map, x, u)).amax() / ad_j.amax().max(1.0));
        }
    }
    Ok(Check {
        name: "AD Jacobians vs central differences (relative)",
        error: worst,
        tol: 1e-5,
    })
}

fn ftc_vs_midpoint(rng: &mut ChaCha8Rng) -> Result<Check> {
    const M: usize = 10_000;
    let cart = CartPendulum::default().discrete_model(0.01)?;
    let gl = QuadratureRule::gauss_legendre(30)?;
    let mut worst: f64 = 0.0;
    for _ in 0..2 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xa: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (u, ua) = ([rng.random_range(-4.0..4.0)], [rng.random_range(-4.0..4.0)]);
        let next = cart.eval(&x, &u)?;
        let maps = StageMaps { dynamics: &cart, constraints: None, output: None };
        let s = ftc_stage(maps, &x, &u, next.as_slice(), &xa, &ua, &gl)?;
        let mut oracle = DMatrix::zeros(4, 5);
        for j in 0..M {
            let l = (j as f64 + 0.5) / M as f64;
            let xs: Vec<f64> = xa.iter().zip(&x).map(|(a, b)| a + l * (b - a)).collect();
            let us = [ua[0] + l * (u[0] - ua[0])];
            let (_, jx, ju) = ad::jacobian(cart.map(), &xs, &us);
            oracle += joined(&jx, &ju);
        }
        oracle /= M as f64;
        worst = worst.max((joined(&s.a, &s.b) - oracle).amax());
    }
    Ok(Check {
        name: "FTC Gauss-Legendre(30) vs 1e4-node midpoint sum",
        error: worst,
        tol: 1e-8,
    })
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// An LQ problem without inequality rows, solved densely through its saddle-point system.
fn qp_vs_dense(rng: &mut ChaCha8Rng) -> Result<Check> {
    let (n, nx, nu) = (4, 3, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let stages: Vec<QpStage> = (0..n)
            .map(|_| QpStage {
                hess: random_spd(rng, nx + nu),
                grad: random_vector(rng, nx + nu),
                a: random_matrix(rng, nx, nx),
                b: random_matrix(rng, nx, nu),
                offset_x: random_vector(rng, nx),
                hx: DMatrix::zeros(0, nx),
                hu: DMatrix::zeros(0, nu),
                offset_h: DVector::zeros(0),
            })
            .collect();
        let qp = QpData {
            terminal: QpTerminal {
                hess: random_spd(rng, nx),
                grad: random_vector(rng, nx),
                hx: DMatrix::zeros(0, nx),
                offset_h: DVector::zeros(0),
            },
            initial: random_vector(rng, nx),
            stages,
            regularized_blocks: 0,
        };
        let sol = solve_qp(&qp, None, &QpTolerances::default())?;
        if sol.status != QpStatus::Solved {
            worst = f64::INFINITY;
            continue;
        }

        // w = (x_0, u_0, .., x_N); rows: x_0 = initial, then the dynamics
        let nw = n * (nx + nu) + nx;
        let ne = nx * (n + 1);
        let mut k = DMatrix::zeros(nw + ne, nw + ne);
        let mut rhs = DVector::zeros(nw + ne);
        let col = |i: usize| i * (nx + nu);
        for (i, s) in qp.stages.iter().enumerate() {
            k.view_mut((col(i), col(i)), (nx + nu, nx + nu)).copy_from(&s.hess);
            rhs.rows_mut(col(i), nx + nu).copy_from(&(-&s.grad));
            let r = nw + nx * (i + 1);
            k.view_mut((r, col(i)), (nx, nx)).copy_from(&s.a);
            k.view_mut((r, col(i) + nx), (nx, nu)).copy_from(&s.b);
            for j in 0..nx {
                k[(r + j, col(i + 1) + j)] = -1.0;
            }
            rhs.rows_mut(r, nx).copy_from(&(-&s.offset_x));
        }
        k.view_mut((col(n), col(n)), (nx, nx)).copy_from(&qp.terminal.hess);
        rhs.rows_mut(col(n), nx).copy_from(&(-&qp.terminal.grad));
        for j in 0..nx {
            k[(nw + j, j)] = 1.0;
        }
        rhs.rows_mut(nw, nx).copy_from(&qp.initial);
        let upper = k.view((nw, 0), (ne, nw)).transpose();
        k.view_mut((0, nw), (nw, ne)).copy_from(&upper);
        let Some(w) = k.lu().solve(&rhs) else {
            worst = f64::INFINITY;
            continue;
        };
        for i in 0..=n {
            worst = worst.max((&sol.dx[i] - w.rows(col(i), nx)).amax());
            if i < n {
                worst = worst.max((&sol.du[i] - w.rows(col(i) + nx, nu)).amax());
            }
        }
    }
    Ok(Check {
        name: "Riccati QP vs dense saddle-point solve",
        error: worst,
        tol: 1e-8,
    })
}

/// Runs every check with a seeded generator.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![ad_vs_fd(&mut rng)?, ftc_vs_midpoint(&mut rng)?, qp_vs_dense(&mut rng)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run(3).unwrap() {
            assert!(c.passed(), "{}: {:.2e} > {:.0e}", c.name, c.error, c.tol);
        }
    }
}
