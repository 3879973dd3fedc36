use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::ad::{Scalar, SmoothMap};
use crate::error::Result;

/// Physical parameters of a small-scale car with Pacejka lateral tires.
///
/// The defaults describe a 1/28-scale car (mass about 0.18 kg).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleTrackParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    /// Center of mass to front axle.
    pub l_front: f64,
    /// Center of mass to rear axle.
    pub l_rear: f64,
    pub b_front: f64,
    pub c_front: f64,
    pub d_front: f64,
    pub b_rear: f64,
    pub c_rear: f64,
    pub d_rear: f64,
    /// Drivetrain force `(c1 + c2 vx) T + c3 vx^2 + c4`.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Speed floor used inside the slip-angle quotient, keeps the model smooth at standstill.
    pub min_speed: f64,
}

impl Default for SingleTrackParams {
    fn default() -> Self {
        Self {
            mass: 0.181,
            yaw_inertia: 5.05e-4,
            l_front: 0.047,
            l_rear: 0.043,
            b_front: 3.0,
            c_front: 1.4,
            d_front: 0.65,
            b_rear: 4.0,
            c_rear: 1.4,
            d_rear: 0.9,
            c1: 0.98,
            c2: -0.018,
            c3: -0.0275,
            c4: -0.085,
            min_speed: 0.05,
        }
    }
}

/// Dynamic single-track car extended for contouring control.
///
/// State `[p_x, p_y, psi, v_x, v_y, omega, T, delta, theta]`, input
/// `[T_dot, delta_dot, theta_dot]`. The last three states integrate the inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SingleTrack {
    pub params: SingleTrackParams,
}

pub const IDX_T: usize = 6;
pub const IDX_DELTA: usize = 7;
pub const IDX_THETA: usize = 8;

impl SingleTrack {
    pub fn new(params: SingleTrackParams) -> Self {
        Self { params }
    }

    pub fn continuous_model(&self) -> Result<DynamicsModel> {
        DynamicsModel::continuous("single_track", *self)
    }

    /// Tire forces `(F_front, F_rear)` at the given state, for diagnostics.
    pub fn tire_forces(&self, x: &[f64]) -> (f64, f64) {
        let (ff, fr, _) = self.forces(x);
        (ff, fr)
    }

    fn forces<S: Scalar>(&self, x: &[S]) -> (S, S, S) {
        let p = &self.params;
        let (vx, vy, omega, torque, delta) = (x[3], x[4], x[5], x[6], x[7]);
        let v0 = S::from_f64(p.min_speed);
        let vx_eff = (vx + (vx * vx + v0 * v0).sqrt()).scale(0.5);
        let alpha_f = delta - ((vy + omega.scale(p.l_front)) / vx_eff).atan();
        let alpha_r = ((omega.scale(p.l_rear) - vy) / vx_eff).atan();
        let ff = (alpha_f.scale(p.b_front).atan().scale(p.c_front)).sin().scale(p.d_front);
        let fr = (alpha_r.scale(p.b_rear).atan().scale(p.c_rear)).sin().scale(p.d_rear);
        let fx = (S::from_f64(p.c1) + vx.scale(p.c2)) * torque + (vx * vx).scale(p.c3) + S::from_f64(p.c4);
        (ff, fr, fx)
    }
}

impl SmoothMap for SingleTrack {
    fn n_x(&self) -> usize {
        9
    }

    fn n_u(&self) -> usize {
        3
    }

    fn n_out(&self) -> usize {
        9
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let p = &self.params;
        let (psi, vx, vy, omega, delta) = (x[2], x[3], x[4], x[5], x[7]);
        let (ff, fr, fx) = self.forces(x);
        let (c_psi, s_psi) = (psi.cos(), psi.sin());
        let (c_d, s_d) = (delta.cos(), delta.sin());
        out[0] = vx * c_psi - vy * s_psi;
        out[1] = vx * s_psi + vy * c_psi;
        out[2] = omega;
        out[3] = (fx - ff * s_d).scale(1.0 / p.mass) + vy * omega;
        out[4] = (fr + ff * c_d).scale(1.0 / p.mass) - vx * omega;
        out[5] = (ff * c_d).scale(p.l_front / p.yaw_inertia) - fr.scale(p.l_rear / p.yaw_inertia);
        out[IDX_T] = u[0];
        out[IDX_DELTA] = u[1];
        out[IDX_THETA] = u[2];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_states_follow_inputs() {
        let m = SingleTrack::default().continuous_model().unwrap();
        let x = [0.3, -1.0, 0.7, 1.2, 0.05, -0.4, 0.3, 0.1, 2.0];
        let dx = m.eval(&x, &[0.5, -1.5, 2.5]).unwrap();
        assert_eq!(&dx.as_slice()[6..], &[0.5, -1.5, 2.5]);
    }

    #[test]
    fn straight_driving_has_no_lateral_force() {
        let st = SingleTrack::default();
        let (ff, fr) = st.tire_forces(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.0, 0.0]);
        assert_eq!((ff, fr), (0.0, 0.0));
    }

    #[test]
    fn steering_left_turns_left() {
        let m = SingleTrack::default().continuous_model().unwrap();
        let dx = m.eval(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.2, 0.0], &[0.0; 3]).unwrap();
        assert!(dx[5] > 0.0, "positive steering must create positive yaw acceleration");
        assert!(dx[4] > 0.0);
    }
}
