use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::ad::{Scalar, SmoothMap};
use crate::error::Result;

/// Cart with a point-mass pendulum on a massless rod.
///
/// State `[p, p_dot, phi, phi_dot]`, input: horizontal force on the cart.
/// `phi = 0` is the upright equilibrium, `phi = -pi` hangs down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPendulum {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for CartPendulum {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.5,
            gravity: 9.81,
        }
    }
}

impl CartPendulum {
    pub fn continuous_model(&self) -> Result<DynamicsModel> {
        DynamicsModel::continuous("cart_pendulum", *self)
    }

    pub fn discrete_model(&self, ts: f64) -> Result<DynamicsModel> {
        self.continuous_model()?.discretize(ts, 1)
    }
}

impl SmoothMap for CartPendulum {
    fn n_x(&self) -> usize {
        4
    }

    fn n_u(&self) -> usize {
        1
    }

    fn n_out(&self) -> usize {
        4
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let (m_c, m_p, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (sin, cos) = (x[2].sin(), x[2].cos());
        let omega = x[3];
        let denom = S::from_f64(m_c + m_p) - (cos * cos).scale(m_p);
        let p_ddot = (u[0] + (omega * omega * sin).scale(m_p * l) - (sin * cos).scale(m_p * g)) / denom;
        let phi_ddot = (sin.scale(g) - p_ddot * cos).scale(1.0 / l);
        out[0] = x[1];
        out[1] = p_ddot;
        out[2] = omega;
        out[3] = phi_ddot;
    }
}
