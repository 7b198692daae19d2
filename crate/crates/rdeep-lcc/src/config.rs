//! Structured configuration with the simulation-campaign defaults baked in.
//! A single JSON file drives the whole pipeline; every field falls back to
//! its default when omitted.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ctrl::{ControllerSpec, Method};
use crate::error::{Error, Result};
use crate::platoon::{OvmParams, PlatoonModel};
use crate::sysid::NoiseSpec;

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub platoon: PlatoonConfig,
    pub collection: CollectionConfig,
    pub controller: ControllerConfig,
    pub gain: GainConfig,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonConfig {
    /// Vehicles in the platoon: the leading CAV plus n−1 human-driven ones.
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub v_max: f64,
    /// Equilibrium velocity, m/s.
    pub v_star: f64,
    /// Sampling interval, s.
    pub dt: f64,
    /// Optional per-vehicle parameter overrides (heterogeneous platoons).
    pub vehicles: Option<Vec<OvmParams>>,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self {
            n: 3,
            alpha: 0.6,
            beta: 0.9,
            s_min: 5.0,
            s_max: 35.0,
            v_max: 30.0,
            v_star: 15.0,
            dt: 0.1,
            vehicles: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    /// Trajectory length T (the archive holds T+1 samples).
    pub t_samples: usize,
    /// Excitation bound on the CAV input, m/s².
    pub u_bound: f64,
    /// Excitation bound on the head-velocity disturbance, m/s.
    pub eps_bound: f64,
    /// Process-noise bound per state channel.
    pub noise_bound: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            t_samples: 1000,
            u_bound: 0.2,
            eps_bound: 0.5,
            noise_bound: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub t_ini: usize,
    /// Prediction horizon of the robust controller and the MPC baseline.
    pub horizon: usize,
    /// Prediction horizon of the standard data-driven baseline.
    pub deepc_horizon: usize,
    pub rho_s: f64,
    pub rho_v: f64,
    pub r_weight: f64,
    pub lambda_g: f64,
    pub lambda_sigma: f64,
    pub s_tilde_max: f64,
    pub v_tilde_max: f64,
    pub u_max: f64,
    /// Online bound on the head-velocity deviation entering the reach tube.
    pub eps_set_bound: f64,
    /// Generator budget of the tube recursion; default 5× state dimension.
    pub reduction_budget: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            t_ini: 20,
            horizon: 5,
            deepc_horizon: 20,
            rho_s: 0.5,
            rho_v: 1.0,
            r_weight: 0.1,
            lambda_g: 10.0,
            lambda_sigma: 10.0,
            s_tilde_max: 7.0,
            v_tilde_max: 7.0,
            u_max: 5.0,
            eps_set_bound: 0.5,
            reduction_budget: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Required Schur margin: every validated sample must satisfy
    /// `ρ(A+BK) ≤ 1 − margin`.
    pub margin: f64,
    pub retune_budget: usize,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            delta: 0.001,
            margin: 1e-6,
            retune_budget: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Sinusoid,
    DriveCycle,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumPolicy {
    /// Deviations measured from the fixed configured equilibrium.
    Fixed,
    /// The head vehicle's real-time velocity serves as the reference.
    Tracking,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Sinusoid amplitude, m/s.
    pub amplitude: f64,
    /// Sinusoid period, s.
    pub period: f64,
    /// Total simulated time, s; defaults to 30 for the sinusoid and to the
    /// cycle duration for drive-cycle runs.
    pub total_time: Option<f64>,
    pub equilibrium: EquilibriumPolicy,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub dataset_count: usize,
    /// Breakpoint table for `kind = custom` (CSV: time_s, speed_kmh).
    pub profile_file: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Sinusoid,
            amplitude: 4.0,
            period: 10.0,
            total_time: None,
            equilibrium: EquilibriumPolicy::Fixed,
            seed: 42,
            methods: vec![Method::Hdv, Method::Mpc, Method::Deepc, Method::Rdeep],
            dataset_count: 20,
            profile_file: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Config = serde_json::from_reader(std::fs::File::open(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.amplitude < 0.0 || s.period <= 0.0 || s.total_time.is_some_and(|t| t <= 0.0) {
            return Err(Error::InvalidParameter(
                "scenario requires amplitude ≥ 0, period > 0, total_time > 0".into(),
            ));
        }
        if s.dataset_count == 0 || s.methods.is_empty() {
            return Err(Error::InvalidParameter(
                "scenario needs at least one dataset and one method".into(),
            ));
        }
        if let Some(v) = &self.platoon.vehicles {
            if v.len() != self.platoon.n {
                return Err(Error::InvalidParameter(format!(
                    "vehicles list has {} entries for n = {}",
                    v.len(),
                    self.platoon.n
                )));
            }
        }
        self.vehicle_params().iter().try_for_each(OvmParams::validate)?;
        Ok(())
    }

    pub fn vehicle_params(&self) -> Vec<OvmParams> {
        self.platoon.vehicles.clone().unwrap_or_else(|| {
            vec![
                OvmParams {
                    alpha: self.platoon.alpha,
                    beta: self.platoon.beta,
                    s_min: self.platoon.s_min,
                    s_max: self.platoon.s_max,
                    v_max: self.platoon.v_max,
                };
                self.platoon.n
            ]
        })
    }

    pub fn build_model(&self) -> Result<PlatoonModel> {
        PlatoonModel::new(self.vehicle_params(), self.platoon.v_star, self.platoon.dt)
    }

    pub fn q_diag(&self) -> DVector<f64> {
        let n = self.platoon.n;
        DVector::from_fn(2 * n, |k, _| {
            if k % 2 == 0 {
                self.controller.rho_s
            } else {
                self.controller.rho_v
            }
        })
    }

    pub fn x_bound(&self) -> DVector<f64> {
        let n = self.platoon.n;
        DVector::from_fn(2 * n, |k, _| {
            if k % 2 == 0 {
                self.controller.s_tilde_max
            } else {
                self.controller.v_tilde_max
            }
        })
    }

    /// Controller parameters for one method; the standard data-driven
    /// baseline runs its own longer horizon.
    pub fn controller_spec(&self, method: Method) -> ControllerSpec {
        let horizon = match method {
            Method::Deepc => self.controller.deepc_horizon,
            _ => self.controller.horizon,
        };
        ControllerSpec {
            t_ini: self.controller.t_ini,
            horizon,
            q_diag: self.q_diag(),
            r_weight: self.controller.r_weight,
            lambda_g: self.controller.lambda_g,
            lambda_sigma: self.controller.lambda_sigma,
            x_bound: self.x_bound(),
            u_bound: self.controller.u_max,
        }
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::uniform(
            self.platoon.n,
            self.collection.noise_bound,
            self.controller.eps_set_bound,
        )
    }

    pub fn reduction_budget(&self) -> usize {
        self.controller
            .reduction_budget
            .unwrap_or(5 * 2 * self.platoon.n)
    }
}
