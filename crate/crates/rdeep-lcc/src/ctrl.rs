//! Online predictive control: constraint tightening against the error
//! reach tube, the data-driven quadratic programs (robust and standard
//! variants), tube-style input composition, and the model-based MPC
//! baseline.
//!
//! Both data-driven controllers solve the same stacked convex QP over
//! `(g, u_z, x_z, σ)`:
//!
//! ```text
//!   min  Σᵢ ‖x_z(k+i)‖²_Q + ‖u_z(k+i)‖²_R + λ_g‖g‖² + λ_σ‖σ‖²
//!   s.t. [X_p; U_p; E_p; X_f; U_f; E_f] g = [x_ini+σ; u_ini; ε_ini; x_z; u_z; 0]
//!        x_z, u_z within their (possibly tightened) boxes
//! ```
//!
//! The robust variant tightens the boxes by the reach-tube hulls and feeds
//! back `K (x − x_z)` on top of the nominal input; the standard variant uses
//! the original boxes and applies the nominal input directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::datagen::HankelBlocks;
use crate::error::{Error, Result};
use crate::platoon::PlatoonModel;
use crate::qp::{BoxQp, QpWorkspace};
use crate::sysid::ReachTube;

/// Controller family tags, also used in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hdv,
    Mpc,
    Deepc,
    Rdeep,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Hdv => "hdv",
            Method::Mpc => "mpc",
            Method::Deepc => "deepc",
            Method::Rdeep => "rdeep",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdv" => Ok(Method::Hdv),
            "mpc" => Ok(Method::Mpc),
            "deepc" => Ok(Method::Deepc),
            "rdeep" => Ok(Method::Rdeep),
            other => Err(Error::InvalidParameter(format!("unknown method '{other}'"))),
        }
    }
}

/// Horizons, weights, and constraint limits shared by the predictive
/// controllers.
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub t_ini: usize,
    pub horizon: usize,
    /// State penalty diagonal, `(ρ_s, ρ_v)` per vehicle.
    pub q_diag: DVector<f64>,
    pub r_weight: f64,
    pub lambda_g: f64,
    pub lambda_sigma: f64,
    /// Symmetric state limits per coordinate, `(s̃_max, ṽ_max)` pattern.
    pub x_bound: DVector<f64>,
    pub u_bound: f64,
}

impl ControllerSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.t_ini < dim {
            return Err(Error::InvalidParameter(format!(
                "T_ini = {} must be at least the state dimension {dim} for a unique predictor",
                self.t_ini
            )));
        }
        if self.q_diag.len() != dim || self.x_bound.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "ControllerSpec",
                expected: dim.to_string(),
                got: format!("q {}, x_bound {}", self.q_diag.len(), self.x_bound.len()),
            });
        }
        let positive = self.q_diag.iter().all(|&v| v > 0.0)
            && self.r_weight > 0.0
            && self.lambda_g > 0.0
            && self.lambda_sigma > 0.0;
        if !positive || self.x_bound.iter().any(|&v| v <= 0.0) || self.u_bound <= 0.0 {
            return Err(Error::InvalidParameter(
                "controller weights and limits must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step state/input boxes after subtracting the reach tube.
#[derive(Debug, Clone)]
pub struct TightenedBoxes {
    pub x_lower: Vec<DVector<f64>>,
    pub x_upper: Vec<DVector<f64>>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

/// Minkowski-difference tightening of the symmetric constraint boxes by the
/// tube hulls: `X_z(k+i) = X − R̂ᵉ_i`, `U_z(k+i) = U − K R̂ᵉ_i`.
pub fn tighten_constraints(
    x_bound: &DVector<f64>,
    u_bound: f64,
    tube: &ReachTube,
) -> Result<TightenedBoxes> {
    let mut boxes = TightenedBoxes {
        x_lower: Vec::with_capacity(tube.len()),
        x_upper: Vec::with_capacity(tube.len()),
        u_lower: Vec::with_capacity(tube.len()),
        u_upper: Vec::with_capacity(tube.len()),
    };
    for (i, (set, input)) in tube.sets.iter().zip(&tube.input_images).enumerate() {
        let hull = set.interval_hull();
        let lower = -x_bound - &hull.lower;
        let upper = x_bound - &hull.upper;
        if let Some(coord) = (0..x_bound.len()).find(|&j| lower[j] > upper[j]) {
            return Err(Error::TubeExceedsConstraints { step: i + 1, coord });
        }
        let input_hull = input.interval_hull();
        let u_lo = -u_bound - input_hull.lower[0];
        let u_hi = u_bound - input_hull.upper[0];
        if u_lo > u_hi {
            return Err(Error::TubeExceedsConstraints {
                step: i + 1,
                coord: x_bound.len(),
            });
        }
        boxes.x_lower.push(lower);
        boxes.x_upper.push(upper);
        boxes.u_lower.push(u_lo);
        boxes.u_upper.push(u_hi);
    }
    Ok(boxes)
}

/// Sliding window of the most recent `T_ini` measurements.
#[derive(Debug, Clone)]
pub struct RecentWindow {
    t_ini: usize,
    dim: usize,
    x: VecDeque<DVector<f64>>,
    u: VecDeque<f64>,
    eps: VecDeque<f64>,
}

impl RecentWindow {
    pub fn new(t_ini: usize, dim: usize) -> Self {
        Self {
            t_ini,
            dim,
            x: VecDeque::with_capacity(t_ini),
            u: VecDeque::with_capacity(t_ini),
            eps: VecDeque::with_capacity(t_ini),
        }
    }

    pub fn push(&mut self, x: DVector<f64>, u: f64, eps: f64) {
        debug_assert_eq!(x.len(), self.dim);
        if self.x.len() == self.t_ini {
            self.x.pop_front();
            self.u.pop_front();
            self.eps.pop_front();
        }
        self.x.push_back(x);
        self.u.push_back(u);
        self.eps.push_back(eps);
    }

    pub fn is_full(&self) -> bool {
        self.x.len() == self.t_ini
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_ini(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim * self.t_ini);
        for (i, x) in self.x.iter().enumerate() {
            v.rows_mut(self.dim * i, self.dim).copy_from(x);
        }
        v
    }

    pub fn u_ini(&self) -> DVector<f64> {
        DVector::from_iterator(self.u.len(), self.u.iter().copied())
    }

    pub fn eps_ini(&self) -> DVector<f64> {
        DVector::from_iterator(self.eps.len(), self.eps.iter().copied())
    }
}

/// Minimizer of one predictive QP.
#[derive(Debug, Clone)]
pub struct Solution {
    pub g: DVector<f64>,
    pub u_z: DVector<f64>,
    pub x_z: DVector<f64>,
    pub sigma: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Data-driven predictive controller over pre-collected Hankel blocks.
/// With tightened boxes it is the robust variant; with the original boxes
/// the standard one.
pub struct DataDrivenController {
    spec: ControllerSpec,
    dim: usize,
    n_g: usize,
    workspace: QpWorkspace,
    b_template: DVector<f64>,
}

impl DataDrivenController {
    /// Robust controller: boxes tightened by the reach tube.
    pub fn robust(
        blocks: &HankelBlocks,
        spec: ControllerSpec,
        tube: &ReachTube,
    ) -> Result<Self> {
        if tube.len() != spec.horizon {
            return Err(Error::DimensionMismatch {
                context: "DataDrivenController::robust",
                expected: format!("tube of length {}", spec.horizon),
                got: tube.len().to_string(),
            });
        }
        let tightened = tighten_constraints(&spec.x_bound, spec.u_bound, tube)?;
        Self::build(blocks, spec, Some(tightened))
    }

    /// Standard controller: original constraint boxes, no tube.
    pub fn standard(blocks: &HankelBlocks, spec: ControllerSpec) -> Result<Self> {
        Self::build(blocks, spec, None)
    }

    fn build(
        blocks: &HankelBlocks,
        spec: ControllerSpec,
        tightened: Option<TightenedBoxes>,
    ) -> Result<Self> {
        if blocks.t_ini != spec.t_ini || blocks.horizon != spec.horizon {
            return Err(Error::DimensionMismatch {
                context: "DataDrivenController horizons",
                expected: format!("T_ini {}, N {}", spec.t_ini, spec.horizon),
                got: format!("blocks T_ini {}, N {}", blocks.t_ini, blocks.horizon),
            });
        }
        let t_ini = spec.t_ini;
        let horizon = spec.horizon;
        let dim = blocks.x_p.nrows() / t_ini;
        spec.validate(dim)?;

        let n_g = blocks.cols();
        let n_vars = n_g + horizon + dim * horizon + dim * t_ini;
        let off_u = n_g;
        let off_x = off_u + horizon;
        let off_sigma = off_x + dim * horizon;

        let mut p_diag = DVector::zeros(n_vars);
        for i in 0..n_g {
            p_diag[i] = 2.0 * spec.lambda_g;
        }
        for i in 0..horizon {
            p_diag[off_u + i] = 2.0 * spec.r_weight;
        }
        for i in 0..horizon {
            for j in 0..dim {
                p_diag[off_x + dim * i + j] = 2.0 * spec.q_diag[j];
            }
        }
        for i in 0..dim * t_ini {
            p_diag[off_sigma + i] = 2.0 * spec.lambda_sigma;
        }

        // equality rows: X_p g − σ = x_ini; U_p g = u_ini; E_p g = ε_ini;
        // X_f g − x_z = 0; U_f g − u_z = 0; E_f g = 0
        let rows_xp = dim * t_ini;
        let rows_xf = dim * horizon;
        let m = rows_xp + 2 * t_ini + rows_xf + 2 * horizon;
        let mut a_eq = DMatrix::zeros(m, n_vars);
        let mut r = 0;
        a_eq.view_mut((r, 0), (rows_xp, n_g)).copy_from(&blocks.x_p);
        for i in 0..rows_xp {
            a_eq[(r + i, off_sigma + i)] = -1.0;
        }
        r += rows_xp;
        a_eq.view_mut((r, 0), (t_ini, n_g)).copy_from(&blocks.u_p);
        r += t_ini;
        a_eq.view_mut((r, 0), (t_ini, n_g)).copy_from(&blocks.e_p);
        r += t_ini;
        a_eq.view_mut((r, 0), (rows_xf, n_g)).copy_from(&blocks.x_f);
        for i in 0..rows_xf {
            a_eq[(r + i, off_x + i)] = -1.0;
        }
        r += rows_xf;
        a_eq.view_mut((r, 0), (horizon, n_g)).copy_from(&blocks.u_f);
        for i in 0..horizon {
            a_eq[(r + i, off_u + i)] = -1.0;
        }
        r += horizon;
        a_eq.view_mut((r, 0), (horizon, n_g)).copy_from(&blocks.e_f);

        let mut lb = DVector::from_element(n_vars, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(n_vars, f64::INFINITY);
        for i in 0..horizon {
            let (u_lo, u_hi, x_lo, x_hi) = match &tightened {
                Some(t) => (
                    t.u_lower[i],
                    t.u_upper[i],
                    t.x_lower[i].clone(),
                    t.x_upper[i].clone(),
                ),
                None => (
                    -spec.u_bound,
                    spec.u_bound,
                    -spec.x_bound.clone(),
                    spec.x_bound.clone(),
                ),
            };
            lb[off_u + i] = u_lo;
            ub[off_u + i] = u_hi;
            for j in 0..dim {
                lb[off_x + dim * i + j] = x_lo[j];
                ub[off_x + dim * i + j] = x_hi[j];
            }
        }

        let workspace = QpWorkspace::new(BoxQp {
            p_diag,
            a_eq,
            lb,
            ub,
        })?;
        Ok(Self {
            spec,
            dim,
            n_g,
            workspace,
            b_template: DVector::zeros(m),
        })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    /// Solve the predictive QP for the current measurement window.
    pub fn solve(&mut self, window: &RecentWindow) -> Result<Solution> {
        let t_ini = self.spec.t_ini;
        let horizon = self.spec.horizon;
        let dim = self.dim;
        if !window.is_full() {
            return Err(Error::WindowNotFilled {
                have: window.len(),
                need: t_ini,
            });
        }
        let mut b = self.b_template.clone();
        b.rows_mut(0, dim * t_ini).copy_from(&window.x_ini());
        b.rows_mut(dim * t_ini, t_ini).copy_from(&window.u_ini());
        b.rows_mut(dim * t_ini + t_ini, t_ini)
            .copy_from(&window.eps_ini());

        let n_vars = self.workspace.problem().p_diag.len();
        let q = DVector::zeros(n_vars);
        let sol = self.workspace.solve(&q, &b)?;

        let off_u = self.n_g;
        let off_x = off_u + horizon;
        let off_sigma = off_x + dim * horizon;
        Ok(Solution {
            g: sol.z.rows(0, self.n_g).into_owned(),
            u_z: sol.z.rows(off_u, horizon).into_owned(),
            x_z: sol.z.rows(off_x, dim * horizon).into_owned(),
            sigma: sol.z.rows(off_sigma, dim * t_ini).into_owned(),
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
        })
    }
}

/// Tube-style input composition `u = u_z + K (x − x_z)`, saturated at the
/// physical input limit as a final guard.
pub fn compose_input(
    u_z_first: f64,
    k_gain: &DMatrix<f64>,
    x_measured: &DVector<f64>,
    x_z_first: &DVector<f64>,
    u_max: f64,
) -> f64 {
    let feedback = (k_gain * (x_measured - x_z_first))[(0, 0)];
    (u_z_first + feedback).clamp(-u_max, u_max)
}

/// Finite-horizon regulator on the known discrete model with the same cost
/// and constraints as the data-driven controllers and no future disturbance.
pub struct MpcController {
    horizon: usize,
    dim: usize,
    a: DMatrix<f64>,
    workspace: QpWorkspace,
}

impl MpcController {
    pub fn new(model: &PlatoonModel, spec: &ControllerSpec) -> Result<Self> {
        let dim = model.state_dim();
        spec.validate(dim)?;
        let horizon = spec.horizon;
        let n_vars = horizon + dim * horizon;
        let off_x = horizon;

        let mut p_diag = DVector::zeros(n_vars);
        for i in 0..horizon {
            p_diag[i] = 2.0 * spec.r_weight;
        }
        for i in 0..horizon {
            for j in 0..dim {
                p_diag[off_x + dim * i + j] = 2.0 * spec.q_diag[j];
            }
        }

        // x(k+1) = A x_meas + B u(k);  x(k+i+1) = A x(k+i) + B u(k+i)
        let m = dim * horizon;
        let mut a_eq = DMatrix::zeros(m, n_vars);
        for i in 0..horizon {
            let row = dim * i;
            a_eq.view_mut((row, off_x + dim * i), (dim, dim))
                .copy_from(&(-DMatrix::<f64>::identity(dim, dim)));
            a_eq.view_mut((row, i), (dim, 1)).copy_from(model.b_discrete());
            if i > 0 {
                a_eq.view_mut((row, off_x + dim * (i - 1)), (dim, dim))
                    .copy_from(model.a_discrete());
            }
        }

        let mut lb = DVector::from_element(n_vars, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(n_vars, f64::INFINITY);
        for i in 0..horizon {
            lb[i] = -spec.u_bound;
            ub[i] = spec.u_bound;
            for j in 0..dim {
                lb[off_x + dim * i + j] = -spec.x_bound[j];
                ub[off_x + dim * i + j] = spec.x_bound[j];
            }
        }

        let workspace = QpWorkspace::new(BoxQp {
            p_diag,
            a_eq,
            lb,
            ub,
        })?;
        Ok(Self {
            horizon,
            dim,
            a: model.a_discrete().clone(),
            workspace,
        })
    }

    /// Receding-horizon solve from the measured state; the first input is
    /// the one to apply.
    pub fn solve(&mut self, x_measured: &DVector<f64>) -> Result<Solution> {
        if x_measured.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "MpcController::solve",
                expected: self.dim.to_string(),
                got: x_measured.len().to_string(),
            });
        }
        let m = self.dim * self.horizon;
        let mut b = DVector::zeros(m);
        b.rows_mut(0, self.dim).copy_from(&(-(&self.a * x_measured)));
        let q = DVector::zeros(self.horizon + m);
        let sol = self.workspace.solve(&q, &b)?;
        Ok(Solution {
            g: DVector::zeros(0),
            u_z: sol.z.rows(0, self.horizon).into_owned(),
            x_z: sol.z.rows(self.horizon, m).into_owned(),
            sigma: DVector::zeros(0),
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
        })
    }
}
