//! Mixed platoon model: optimal-velocity car following, equilibrium and
//! linearization, forward-Euler discretization, and the nonlinear stepper
//! used for both data collection and closed-loop simulation.
//!
//! Vehicle indexing follows the platoon layout: index 0 is the head vehicle
//! (exogenous velocity profile), index 1 the controlled CAV, indices 2..n
//! the human-driven vehicles. The deviation state stacks per-vehicle
//! `(s̃ᵢ, ṽᵢ)` pairs for vehicles 1..n.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimal velocity model parameters for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    /// Sensitivity to the gap between desired and actual velocity, 1/s.
    pub alpha: f64,
    /// Relative-velocity gain, 1/s.
    pub beta: f64,
    /// Spacing below which the desired velocity is zero, m.
    pub s_min: f64,
    /// Spacing above which the desired velocity saturates, m.
    pub s_max: f64,
    /// Maximum desired velocity, m/s.
    pub v_max: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.9,
            s_min: 5.0,
            s_max: 35.0,
            v_max: 30.0,
        }
    }
}

impl OvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min < self.s_max) || self.v_max <= 0.0 || self.alpha <= 0.0 || self.beta < 0.0
        {
            return Err(Error::InvalidParameter(format!(
                "OVM parameters out of range: {self:?}"
            )));
        }
        Ok(())
    }

    /// Spacing-dependent desired velocity: zero below `s_min`, cosine ramp,
    /// saturated at `v_max` above `s_max`.
    pub fn desired_velocity(&self, s: f64) -> f64 {
        if s <= self.s_min {
            0.0
        } else if s >= self.s_max {
            self.v_max
        } else {
            let phase = std::f64::consts::PI * (s - self.s_min) / (self.s_max - self.s_min);
            0.5 * self.v_max * (1.0 - phase.cos())
        }
    }

    /// Derivative of the desired-velocity profile with respect to spacing.
    pub fn desired_velocity_slope(&self, s: f64) -> f64 {
        if s <= self.s_min || s >= self.s_max {
            0.0
        } else {
            let width = self.s_max - self.s_min;
            let phase = std::f64::consts::PI * (s - self.s_min) / width;
            0.5 * self.v_max * std::f64::consts::PI / width * phase.sin()
        }
    }

    /// Commanded acceleration `F(s, ṡ, v) = α (V(s) − v) + β ṡ`.
    pub fn acceleration(&self, s: f64, s_dot: f64, v: f64) -> f64 {
        self.alpha * (self.desired_velocity(s) - v) + self.beta * s_dot
    }

    /// Unique spacing in `(s_min, s_max)` with `V(s*) = v*`, by inverting
    /// the cosine ramp in closed form.
    pub fn equilibrium_spacing(&self, v_star: f64) -> Result<f64> {
        if v_star <= 0.0 || v_star >= self.v_max {
            return Err(Error::NoEquilibrium {
                v_star,
                v_max: self.v_max,
            });
        }
        let arg = 1.0 - 2.0 * v_star / self.v_max;
        Ok(self.s_min + (self.s_max - self.s_min) / std::f64::consts::PI * arg.acos())
    }
}

/// Continuous-time linearization about the equilibrium `(s*, v*)` of each
/// vehicle. Returns `(A_con, B_con, H_con)` with the CAV occupying the first
/// state pair: its velocity row is pure input, the head-velocity deviation
/// enters only the first spacing row.
pub fn linearize(params: &[OvmParams], v_star: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = params.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty platoon".into()));
    }
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, 1);
    let mut h = DMatrix::zeros(2 * n, 1);
    for (idx, p) in params.iter().enumerate() {
        p.validate()?;
        let rs = 2 * idx;
        let rv = 2 * idx + 1;
        a[(rs, rv)] = -1.0;
        if idx == 0 {
            h[(rs, 0)] = 1.0;
            b[(rv, 0)] = 1.0;
        } else {
            a[(rs, 2 * idx - 1)] = 1.0;
            let s_star = p.equilibrium_spacing(v_star)?;
            let gamma1 = p.alpha * p.desired_velocity_slope(s_star);
            a[(rv, rs)] = gamma1;
            a[(rv, rv)] = -(p.alpha + p.beta);
            a[(rv, 2 * idx - 1)] = p.beta;
        }
    }
    Ok((a, b, h))
}

/// Forward-Euler discretization `A = I + dt·A_con`, `B = dt·B_con`,
/// `H = dt·H_con`.
pub fn discretize(
    a_con: &DMatrix<f64>,
    b_con: &DMatrix<f64>,
    h_con: &DMatrix<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let dim = a_con.nrows();
    (
        DMatrix::identity(dim, dim) + a_con * dt,
        b_con * dt,
        h_con * dt,
    )
}

/// Parametric mixed-platoon model: per-vehicle car-following parameters,
/// equilibrium point, and the continuous/discrete deviation-state matrices.
#[derive(Debug, Clone)]
pub struct PlatoonModel {
    params: Vec<OvmParams>,
    v_star: f64,
    s_star: Vec<f64>,
    dt: f64,
    a_con: DMatrix<f64>,
    b_con: DMatrix<f64>,
    h_con: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl PlatoonModel {
    pub fn new(params: Vec<OvmParams>, v_star: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let s_star: Vec<f64> = params
            .iter()
            .map(|p| p.equilibrium_spacing(v_star))
            .collect::<Result<_>>()?;
        for (p, &s) in params.iter().zip(&s_star) {
            let residual = p.acceleration(s, 0.0, v_star).abs();
            if residual > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "equilibrium residual {residual} exceeds 1e-9"
                )));
            }
        }
        let (a_con, b_con, h_con) = linearize(&params, v_star)?;
        let (a, b, h) = discretize(&a_con, &b_con, &h_con, dt);
        Ok(Self {
            params,
            v_star,
            s_star,
            dt,
            a_con,
            b_con,
            h_con,
            a,
            b,
            h,
        })
    }

    /// Platoon of `n` vehicles sharing one parameter set.
    pub fn homogeneous(n: usize, params: OvmParams, v_star: f64, dt: f64) -> Result<Self> {
        Self::new(vec![params; n], v_star, dt)
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.params.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn v_star(&self) -> f64 {
        self.v_star
    }

    pub fn params(&self) -> &[OvmParams] {
        &self.params
    }

    /// Equilibrium spacing of vehicle `i` (1-based platoon index).
    pub fn s_star(&self, i: usize) -> f64 {
        self.s_star[i - 1]
    }

    pub fn a_discrete(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_discrete(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn h_discrete(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn a_continuous(&self) -> &DMatrix<f64> {
        &self.a_con
    }

    pub fn b_continuous(&self) -> &DMatrix<f64> {
        &self.b_con
    }

    pub fn h_continuous(&self) -> &DMatrix<f64> {
        &self.h_con
    }

    /// Stacked `[A B H]` of the discrete model.
    pub fn abh(&self) -> DMatrix<f64> {
        let dim = self.state_dim();
        let mut abh = DMatrix::zeros(dim, dim + 2);
        abh.columns_mut(0, dim).copy_from(&self.a);
        abh.column_mut(dim).copy_from(&self.b.column(0));
        abh.column_mut(dim + 1).copy_from(&self.h.column(0));
        abh
    }

    /// One discrete-linear step of the deviation dynamics.
    pub fn step_linear(&self, x: &DVector<f64>, u: f64, eps: f64, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.h * eps + w
    }

    /// Deviation state around the model's fixed equilibrium.
    pub fn deviation_state(&self, state: &PlatoonState) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |k, _| {
            let i = k / 2 + 1;
            if k % 2 == 0 {
                state.spacing(i) - self.s_star[i - 1]
            } else {
                state.velocities[i] - self.v_star
            }
        })
    }

    /// Deviation state around a time-varying reference velocity, with the
    /// per-vehicle equilibrium spacing recomputed for that reference.
    pub fn deviation_state_tracking(&self, state: &PlatoonState, v_ref: f64) -> Result<DVector<f64>> {
        let n = self.n();
        let mut x = DVector::zeros(2 * n);
        for i in 1..=n {
            let s_star = self.params[i - 1].equilibrium_spacing(v_ref)?;
            x[2 * (i - 1)] = state.spacing(i) - s_star;
            x[2 * (i - 1) + 1] = state.velocities[i] - v_ref;
        }
        Ok(x)
    }

    /// Equilibrium platoon state with the head at position 0.
    pub fn equilibrium_state(&self) -> PlatoonState {
        let n = self.n();
        let mut positions = Vec::with_capacity(n + 1);
        positions.push(0.0);
        for i in 1..=n {
            positions.push(positions[i - 1] - self.s_star[i - 1]);
        }
        PlatoonState {
            positions,
            velocities: vec![self.v_star; n + 1],
        }
    }

    /// Convenience wrapper around [`step_nonlinear`] using the model's
    /// parameters and step size.
    pub fn step_nonlinear(
        &self,
        state: &PlatoonState,
        u_cav: f64,
        v_head_next: f64,
        noise: &DVector<f64>,
    ) -> Result<PlatoonState> {
        step_nonlinear(&self.params, state, u_cav, v_head_next, noise, self.dt)
    }
}

/// Absolute positions and velocities of the whole platoon including the
/// head vehicle at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl PlatoonState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if positions.len() != velocities.len() || positions.is_empty() {
            return Err(Error::InvalidParameter(
                "positions and velocities must have equal nonzero length".into(),
            ));
        }
        if positions.iter().chain(velocities.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite platoon state".into()));
        }
        if positions.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "positions must be strictly decreasing along the platoon".into(),
            ));
        }
        Ok(Self {
            positions,
            velocities,
        })
    }

    /// Number of controlled-platoon vehicles (head excluded).
    pub fn n(&self) -> usize {
        self.positions.len() - 1
    }

    /// Spacing of vehicle `i` to its predecessor, 1-based.
    pub fn spacing(&self, i: usize) -> f64 {
        self.positions[i - 1] - self.positions[i]
    }
}

/// Forward-Euler step of the nonlinear platoon. HDVs accelerate by their
/// car-following law, the CAV by `u_cav`, and the head vehicle follows the
/// supplied profile (noise-free). Process noise is injected additively into
/// each vehicle's spacing and velocity channel after integration.
pub fn step_nonlinear(
    params: &[OvmParams],
    state: &PlatoonState,
    u_cav: f64,
    v_head_next: f64,
    noise: &DVector<f64>,
    dt: f64,
) -> Result<PlatoonState> {
    let n = params.len();
    if state.n() != n {
        return Err(Error::DimensionMismatch {
            context: "step_nonlinear state",
            expected: n.to_string(),
            got: state.n().to_string(),
        });
    }
    if noise.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            context: "step_nonlinear noise",
            expected: (2 * n).to_string(),
            got: noise.len().to_string(),
        });
    }

    let mut accel = vec![0.0; n + 1];
    accel[1] = u_cav;
    for i in 2..=n {
        let s = state.spacing(i);
        let s_dot = state.velocities[i - 1] - state.velocities[i];
        accel[i] = params[i - 1].acceleration(s, s_dot, state.velocities[i]);
    }

    let mut positions: Vec<f64> = (0..=n)
        .map(|i| state.positions[i] + dt * state.velocities[i])
        .collect();
    let mut velocities: Vec<f64> = (0..=n)
        .map(|i| {
            if i == 0 {
                v_head_next
            } else {
                state.velocities[i] + dt * accel[i]
            }
        })
        .collect();

    // spacing-channel noise accumulates down the platoon so each vehicle's
    // own spacing receives exactly its channel value
    let mut shift = 0.0;
    for i in 1..=n {
        shift -= noise[2 * (i - 1)];
        positions[i] += shift;
        velocities[i] += noise[2 * (i - 1) + 1];
    }

    for i in 1..=n {
        let spacing = positions[i - 1] - positions[i];
        if spacing <= 0.0 {
            return Err(Error::Collision {
                step: 0,
                vehicle: i,
                spacing,
            });
        }
    }

    Ok(PlatoonState {
        positions,
        velocities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn defaults() -> OvmParams {
        OvmParams::default()
    }

    #[test]
    fn acceleration_at_equilibrium_is_zero() {
        let p = defaults();
        let s_star = p.equilibrium_spacing(15.0).unwrap();
        assert_relative_eq!(p.acceleration(s_star, 0.0, 15.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.acceleration(p.s_min - 1.0, 0.0, 0.0), 0.0);
        // cosine ramp value: f_v(15) = 7.5 with defaults
        assert_relative_eq!(p.acceleration(15.0, 0.0, 0.0), 0.6 * 7.5, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_spacing_closed_form() {
        let p = defaults();
        assert_relative_eq!(p.equilibrium_spacing(15.0).unwrap(), 20.0, epsilon = 1e-12);
        assert_relative_eq!(p.equilibrium_spacing(7.5).unwrap(), 15.0, epsilon = 1e-12);
        assert!(p.equilibrium_spacing(0.0).is_err());
        assert!(p.equilibrium_spacing(p.v_max).is_err());
    }

    #[test]
    fn equilibrium_spacing_inverts_desired_velocity() {
        let p = defaults();
        let mut rng = SmallRng::seed_from_u64(17);
        for _ in 0..100 {
            let v_star = rng.gen_range(0.05 * p.v_max..0.95 * p.v_max);
            let s_star = p.equilibrium_spacing(v_star).unwrap();
            assert!((p.desired_velocity(s_star) - v_star).abs() <= 1e-9);
        }
    }

    #[test]
    fn linearize_coefficients() {
        let params = vec![defaults(); 3];
        let (a, b, h) = linearize(&params, 15.0).unwrap();
        let gamma1 = 0.6 * std::f64::consts::FRAC_PI_2;
        // HDV rows (vehicles 2 and 3)
        assert_relative_eq!(a[(3, 2)], gamma1, epsilon = 1e-12);
        assert_relative_eq!(a[(3, 3)], -1.5, epsilon = 1e-12);
        assert_relative_eq!(a[(3, 1)], 0.9, epsilon = 1e-12);
        // CAV input row and head-disturbance row
        assert_eq!(b.column(0).iter().filter(|v| **v != 0.0).count(), 1);
        assert_relative_eq!(b[(1, 0)], 1.0);
        assert_relative_eq!(h[(0, 0)], 1.0);
        assert_eq!(h.column(0).iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn discretize_scaling_and_consistency() {
        let params = vec![defaults(); 3];
        let (a_con, b_con, h_con) = linearize(&params, 15.0).unwrap();
        let dt = 0.1;
        let (a, _b, _h) = discretize(&a_con, &b_con, &h_con, dt);
        assert_relative_eq!(a[(3, 2)], 0.1 * 0.6 * std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        // (A - I) / dt recovers A_con
        let recovered = (a.clone() - DMatrix::identity(6, 6)) / dt;
        assert_relative_eq!(recovered, a_con, epsilon = 1e-13);
        let (a0, b0, _) = discretize(&a_con, &b_con, &h_con, 1e-12);
        assert_relative_eq!(a0, DMatrix::identity(6, 6), epsilon = 1e-9);
        assert!(b0.amax() < 1e-9);
    }

    #[test]
    fn all_hdv_chain_is_schur_and_bounded() {
        // hypothetical chain where every vehicle, including the first, is an
        // HDV: replace the CAV rows by OVM rows and check stability
        let p = defaults();
        let v_star = 15.0;
        let s_star = p.equilibrium_spacing(v_star).unwrap();
        let gamma1 = p.alpha * p.desired_velocity_slope(s_star);
        let n = 3;
        let mut a_con = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let (rs, rv) = (2 * i, 2 * i + 1);
            a_con[(rs, rv)] = -1.0;
            a_con[(rv, rs)] = gamma1;
            a_con[(rv, rv)] = -(p.alpha + p.beta);
            if i > 0 {
                a_con[(rs, 2 * i - 1)] = 1.0;
                a_con[(rv, 2 * i - 1)] = p.beta;
            }
        }
        let a = DMatrix::identity(2 * n, 2 * n) + a_con * 0.1;
        let rho = a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0_f64, f64::max);
        assert!(rho < 1.0, "spectral radius {rho}");
        let mut x = DVector::from_element(2 * n, 1.0);
        for _ in 0..300 {
            x = &a * x;
            assert!(x.amax() < 10.0);
        }
    }

    #[test]
    fn nonlinear_step_fixed_point_and_zero_dt() {
        let model = PlatoonModel::homogeneous(3, defaults(), 15.0, 0.1).unwrap();
        let eq = model.equilibrium_state();
        let zero = DVector::zeros(6);
        let mut state = eq.clone();
        for _ in 0..100 {
            state = model.step_nonlinear(&state, 0.0, 15.0, &zero).unwrap();
            let dev = model.deviation_state(&state);
            assert!(dev.amax() <= 1e-12, "deviation {}", dev.amax());
        }
        let frozen = step_nonlinear(model.params(), &eq, 0.3, 15.0, &zero, 0.0).unwrap();
        assert_eq!(frozen.positions, eq.positions);
        // head velocity is replaced by the supplied profile value even at dt=0
        assert_eq!(frozen.velocities[1..], eq.velocities[1..]);
    }

    #[test]
    fn nonlinear_step_matches_hand_evaluation() {
        // one vehicle behind the head, driven by its own car-following law
        let p = defaults();
        let dt = 0.1;
        let state = PlatoonState::new(vec![0.0, -20.0], vec![15.0, 15.0]).unwrap();
        let head_next = 14.0; // head decelerates 1 m/s over this step
        let f = p.acceleration(20.0, 0.0, 15.0);
        let next = step_nonlinear(&[p], &state, f, head_next, &DVector::zeros(2), dt).unwrap();
        assert_relative_eq!(next.velocities[1], 15.0 + dt * f, epsilon = 1e-12);
        assert_relative_eq!(next.positions[1], -20.0 + dt * 15.0, epsilon = 1e-12);
        assert_relative_eq!(next.velocities[0], 14.0);
    }

    #[test]
    fn noise_channels_hit_spacing_and_velocity() {
        let model = PlatoonModel::homogeneous(3, defaults(), 15.0, 0.1).unwrap();
        let eq = model.equilibrium_state();
        let mut w = DVector::zeros(6);
        w[0] = 0.04; // spacing of vehicle 1
        w[3] = -0.02; // velocity of vehicle 2
        let next = model.step_nonlinear(&eq, 0.0, 15.0, &w).unwrap();
        let dev = model.deviation_state(&next);
        assert_relative_eq!(dev[0], 0.04, epsilon = 1e-12);
        assert_relative_eq!(dev[3], -0.02, epsilon = 1e-12);
        assert_relative_eq!(dev[2], 0.0, epsilon = 1e-12); // vehicle 2 spacing untouched
    }

    #[test]
    fn linearization_consistency_small_deviations() {
        let model = PlatoonModel::homogeneous(3, defaults(), 15.0, 0.1).unwrap();
        let mut rng = SmallRng::seed_from_u64(23);
        let x0 = DVector::from_fn(6, |_, _| rng.gen_range(-0.01..0.01));

        // nonlinear trajectory from the perturbed state
        let eq = model.equilibrium_state();
        let mut positions = eq.positions.clone();
        let mut velocities = eq.velocities.clone();
        for i in 1..=3usize {
            velocities[i] += x0[2 * (i - 1) + 1];
        }
        let mut shift = 0.0;
        for i in 1..=3usize {
            shift -= x0[2 * (i - 1)];
            positions[i] += shift;
        }
        let mut state = PlatoonState::new(positions, velocities).unwrap();
        let mut x_lin = x0.clone();
        let zero = DVector::zeros(6);
        for _ in 0..50 {
            state = model.step_nonlinear(&state, 0.0, 15.0, &zero).unwrap();
            x_lin = model.step_linear(&x_lin, 0.0, 0.0, &zero);
            let diff = (model.deviation_state(&state) - &x_lin).amax();
            assert!(diff <= 1e-3, "trajectories diverged by {diff}");
        }
    }

    #[test]
    fn collision_detected() {
        let p = defaults();
        let state = PlatoonState::new(vec![0.0, -0.05], vec![0.0, 20.0]).unwrap();
        let out = step_nonlinear(&[p], &state, 0.0, 0.0, &DVector::zeros(2), 0.1);
        assert!(matches!(out, Err(Error::Collision { vehicle: 1, .. })));
    }

    #[test]
    fn tracking_deviation_recenters() {
        let model = PlatoonModel::homogeneous(2, defaults(), 15.0, 0.1).unwrap();
        let eq = model.equilibrium_state();
        let x = model.deviation_state_tracking(&eq, 15.0).unwrap();
        assert!(x.amax() < 1e-12);
        let x2 = model.deviation_state_tracking(&eq, 10.0).unwrap();
        assert!(x2.amax() > 0.1);
        assert!(model.deviation_state_tracking(&eq, 0.0).is_err());
    }
}
