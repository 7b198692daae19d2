//! Scenario orchestration: head-vehicle profiles, closed-loop simulation of
//! every control method against the nonlinear platoon, campaign metrics,
//! and CSV persistence.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::config::{Config, EquilibriumPolicy, ScenarioKind};
use crate::ctrl::{
    compose_input, ControllerSpec, DataDrivenController, Method, MpcController, RecentWindow,
};
use crate::datagen::{
    collect_archive, derive_rng, generate_excitation, mix_seed, partition_hankels, DataArchive,
    HankelBlocks,
};
use crate::error::{Error, Result};
use crate::gainsynth::{synthesize_gain, GainResult};
use crate::platoon::{PlatoonModel, PlatoonState};
use crate::sysid::{error_reach_tube, estimate_system_set, ReachTube, SystemSet};
use crate::zonoset::Zonotope;
use rand::Rng;

const STREAM_EXCITATION: u64 = 1;
const STREAM_GAIN: u64 = 2;
const STREAM_SIM: u64 = 3;

/// Deterministic per-dataset seed.
pub fn dataset_seed(base: u64, dataset: usize) -> u64 {
    mix_seed(base, 0xD5E7 + dataset as u64)
}

// ---------------------------------------------------------------------------
// head-vehicle velocity profiles

/// Sinusoidal perturbation around the equilibrium velocity.
pub fn head_profile_sinusoid(t: f64, v_star: f64, amplitude: f64, period: f64) -> f64 {
    v_star + amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
}

/// Piecewise-linear velocity table, clamped at both ends.
#[derive(Debug, Clone)]
pub struct CycleTable {
    times: Vec<f64>,
    /// Velocities in m/s.
    speeds: Vec<f64>,
}

const ECE_ELEMENTARY_CYCLE: &str = include_str!("../data/ece_elementary_cycle.csv");

impl CycleTable {
    /// The bundled ECE elementary urban cycle (first 195 s segment of the
    /// urban driving cycle).
    pub fn ece_elementary() -> Self {
        Self::from_csv_str(ECE_ELEMENTARY_CYCLE).expect("bundled cycle table is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Parse `time_s,speed_kmh` rows (header optional).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut speeds = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let mut parts = line.split(',');
            let (t, v) = (parts.next(), parts.next());
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                    Error::InvalidProfile(format!("bad row {} in cycle table: '{line}'", lineno + 1))
                })
            };
            times.push(parse(t)?);
            speeds.push(parse(v)? / 3.6);
        }
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProfile(
                "cycle table needs at least two strictly increasing breakpoints".into(),
            ));
        }
        Ok(Self { times, speeds })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation between breakpoints, clamped at the ends.
    pub fn velocity_at(&self, t: f64) -> f64 {
        if t <= self.times[0] {
            return self.speeds[0];
        }
        if t >= *self.times.last().unwrap() {
            return *self.speeds.last().unwrap();
        }
        let idx = self.times.partition_point(|&bt| bt <= t) - 1;
        let (t0, t1) = (self.times[idx], self.times[idx + 1]);
        let (v0, v1) = (self.speeds[idx], self.speeds[idx + 1]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Commanded head-vehicle velocity over time.
#[derive(Debug, Clone)]
pub enum HeadProfile {
    Sinusoid {
        v_star: f64,
        amplitude: f64,
        period: f64,
    },
    Cycle(CycleTable),
}

impl HeadProfile {
    pub fn from_config(config: &Config) -> Result<Self> {
        Ok(match config.scenario.kind {
            ScenarioKind::Sinusoid => HeadProfile::Sinusoid {
                v_star: config.platoon.v_star,
                amplitude: config.scenario.amplitude,
                period: config.scenario.period,
            },
            ScenarioKind::DriveCycle => HeadProfile::Cycle(CycleTable::ece_elementary()),
            ScenarioKind::Custom => {
                let path = config.scenario.profile_file.as_ref().ok_or_else(|| {
                    Error::InvalidProfile("custom scenario needs a profile_file".into())
                })?;
                HeadProfile::Cycle(CycleTable::from_file(path)?)
            }
        })
    }

    pub fn velocity(&self, t: f64) -> f64 {
        match self {
            HeadProfile::Sinusoid {
                v_star,
                amplitude,
                period,
            } => head_profile_sinusoid(t, *v_star, *amplitude, *period),
            HeadProfile::Cycle(table) => table.velocity_at(t),
        }
    }

    pub fn default_duration(&self) -> f64 {
        match self {
            HeadProfile::Sinusoid { .. } => 30.0,
            HeadProfile::Cycle(table) => table.duration(),
        }
    }
}

// ---------------------------------------------------------------------------
// trajectory logs and metrics

/// One recorded simulation step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    /// Positions including the head vehicle at index 0.
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Applied CAV acceleration.
    pub u_cav: f64,
    /// Metric reference velocity at this step.
    pub v_ref: f64,
}

/// Full per-method simulation record.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub method: Method,
    pub dataset: usize,
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Append rows `(t, vehicle, p, v, s, u, method, dataset)`; the spacing
    /// and input columns are empty where undefined (head vehicle, HDVs).
    pub fn write_csv<W: Write>(&self, out: &mut W, with_header: bool) -> Result<()> {
        if with_header {
            writeln!(out, "t,vehicle,p,v,s,u,method,dataset")?;
        }
        for rec in &self.records {
            for vehicle in 0..rec.positions.len() {
                let spacing = if vehicle == 0 {
                    String::new()
                } else {
                    format!("{}", rec.positions[vehicle - 1] - rec.positions[vehicle])
                };
                let input = if vehicle == 1 {
                    format!("{}", rec.u_cav)
                } else {
                    String::new()
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    rec.t,
                    vehicle,
                    rec.positions[vehicle],
                    rec.velocities[vehicle],
                    spacing,
                    input,
                    self.method.as_str(),
                    self.dataset
                )?;
            }
        }
        Ok(())
    }
}

/// Velocity mean absolute deviation over vehicles 1..n (head excluded).
pub fn metric_rm(log: &TrajectoryLog) -> Result<f64> {
    accumulate_metric(log, |d| d.abs()).map(|(sum, count)| sum / count)
}

/// Velocity root-mean-square deviation over vehicles 1..n.
pub fn metric_rs(log: &TrajectoryLog) -> Result<f64> {
    accumulate_metric(log, |d| d * d).map(|(sum, count)| (sum / count).sqrt())
}

fn accumulate_metric(log: &TrajectoryLog, f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if log.records.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory log".into()));
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for rec in &log.records {
        for vehicle in 1..rec.velocities.len() {
            sum += f(rec.velocities[vehicle] - rec.v_ref);
            count += 1.0;
        }
    }
    Ok((sum, count))
}

/// Per-solve diagnostics appended to the run's solver log.
#[derive(Debug, Clone)]
pub struct SolveRecord {
    pub k: usize,
    pub method: Method,
    pub u_z_first: f64,
    pub u_applied: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sigma_norm: f64,
    pub solve_time_s: f64,
}

pub fn write_solve_records<W: Write>(out: &mut W, records: &[SolveRecord]) -> Result<()> {
    writeln!(
        out,
        "k,method,u_z_first,u_applied,objective,kkt_residual,sigma_norm,solve_time_s"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            r.method.as_str(),
            r.u_z_first,
            r.u_applied,
            r.objective,
            r.kkt_residual,
            r.sigma_norm,
            r.solve_time_s
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset preparation

/// Everything the data-driven controllers need from one offline dataset.
pub struct DatasetArtifacts {
    pub archive: DataArchive,
    pub system: SystemSet,
    pub gain: GainResult,
    pub tube: ReachTube,
    pub blocks_robust: HankelBlocks,
    pub blocks_standard: HankelBlocks,
}

/// Collect, estimate, synthesize, and tube one dataset.
pub fn prepare_dataset(config: &Config, model: &PlatoonModel, dataset: usize) -> Result<DatasetArtifacts> {
    let seed = dataset_seed(config.scenario.seed, dataset);
    let mut rng = derive_rng(seed, STREAM_EXCITATION);
    let (u, e) = generate_excitation(
        config.collection.t_samples,
        config.collection.u_bound,
        config.collection.eps_bound,
        &mut rng,
    )?;
    let archive = collect_archive(
        model,
        &u,
        &e,
        config.collection.noise_bound,
        config.controller.t_ini,
        config.controller.horizon.max(config.controller.deepc_horizon),
        seed,
    )?;
    let noise = config.noise_spec()?;
    let system = estimate_system_set(&archive, &noise)?;
    let gain = synthesize_gain(
        &system.m_ab,
        &config.q_diag(),
        config.controller.r_weight,
        config.gain.epsilon,
        config.gain.delta,
        config.gain.margin,
        mix_seed(seed, STREAM_GAIN),
        config.gain.retune_budget,
    )?;
    let r0 = Zonotope::point(DVector::zeros(model.state_dim()));
    let tube = error_reach_tube(
        &system,
        &gain.k_matrix(),
        &noise,
        &r0,
        config.controller.horizon,
        config.reduction_budget(),
    )?;
    let blocks_robust = partition_hankels(&archive, config.controller.t_ini, config.controller.horizon)?;
    let blocks_standard =
        partition_hankels(&archive, config.controller.t_ini, config.controller.deepc_horizon)?;
    Ok(DatasetArtifacts {
        archive,
        system,
        gain,
        tube,
        blocks_robust,
        blocks_standard,
    })
}

/// Reconstruct the system set and reach tube for a stored archive + gain
/// (the set is a deterministic function of the archive).
pub fn rebuild_tube(
    config: &Config,
    archive: &DataArchive,
    gain: &GainResult,
) -> Result<(SystemSet, ReachTube)> {
    let noise = config.noise_spec()?;
    let system = estimate_system_set(archive, &noise)?;
    let r0 = Zonotope::point(DVector::zeros(2 * archive.header.n));
    let tube = error_reach_tube(
        &system,
        &gain.k_matrix(),
        &noise,
        &r0,
        config.controller.horizon,
        config.reduction_budget(),
    )?;
    Ok((system, tube))
}

// ---------------------------------------------------------------------------
// closed-loop simulation

/// The shared per-step process noise of one scenario run, identical across
/// methods for paired comparison.
pub fn scenario_noise(config: &Config, dataset: usize, steps: usize, dim: usize) -> Vec<DVector<f64>> {
    let mut rng = derive_rng(dataset_seed(config.scenario.seed, dataset), STREAM_SIM);
    let bound = config.collection.noise_bound;
    (0..steps)
        .map(|_| {
            DVector::from_fn(dim, |_, _| {
                if bound > 0.0 {
                    rng.gen_range(-bound..=bound)
                } else {
                    0.0
                }
            })
        })
        .collect()
}

enum ControllerInstance {
    None,
    Mpc(MpcController),
    DataDriven {
        controller: DataDrivenController,
        gain: Option<DMatrix<f64>>,
    },
}

fn clamp_reference(v: f64, v_max: f64) -> f64 {
    v.clamp(0.05 * v_max, 0.95 * v_max)
}

fn initial_state(model: &PlatoonModel, policy: EquilibriumPolicy, v0: f64) -> Result<PlatoonState> {
    match policy {
        EquilibriumPolicy::Fixed => {
            let mut state = model.equilibrium_state();
            state.velocities[0] = v0;
            Ok(state)
        }
        EquilibriumPolicy::Tracking => {
            let n = model.n();
            let mut positions = vec![0.0];
            for i in 1..=n {
                let p = &model.params()[i - 1];
                let spacing = if v0 <= 0.0 {
                    p.s_min
                } else if v0 >= p.v_max {
                    p.s_max
                } else {
                    p.equilibrium_spacing(v0)?
                };
                positions.push(positions[i - 1] - spacing);
            }
            PlatoonState::new(positions, vec![v0.max(0.0); n + 1])
        }
    }
}

/// Simulate one method over the scenario with a pre-drawn noise sequence.
/// Data-driven methods solve on the window ending one step back and act
/// through the current measurement; all controlled methods coast for the
/// first `T_ini` steps to fill the window.
pub fn run_scenario(
    config: &Config,
    model: &PlatoonModel,
    method: Method,
    artifacts: Option<&DatasetArtifacts>,
    profile: &HeadProfile,
    noise_seq: &[DVector<f64>],
    dataset: usize,
) -> Result<(TrajectoryLog, Vec<SolveRecord>)> {
    let dt = model.dt();
    let steps = noise_seq.len();
    let dim = model.state_dim();
    let policy = config.scenario.equilibrium;
    let v_max = model.params()[0].v_max;

    let mut controller = match method {
        Method::Hdv => ControllerInstance::None,
        Method::Mpc => ControllerInstance::Mpc(MpcController::new(
            model,
            &config.controller_spec(Method::Mpc),
        )?),
        Method::Deepc | Method::Rdeep => {
            let art = artifacts.ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "method '{}' needs dataset artifacts",
                    method.as_str()
                ))
            })?;
            let spec: ControllerSpec = config.controller_spec(method);
            if method == Method::Rdeep {
                ControllerInstance::DataDriven {
                    controller: DataDrivenController::robust(&art.blocks_robust, spec, &art.tube)?,
                    gain: Some(art.gain.k_matrix()),
                }
            } else {
                ControllerInstance::DataDriven {
                    controller: DataDrivenController::standard(&art.blocks_standard, spec)?,
                    gain: None,
                }
            }
        }
    };

    let mut state = initial_state(model, policy, profile.velocity(0.0))?;
    let mut window = RecentWindow::new(config.controller.t_ini, dim);
    let mut prev_solution: Option<crate::ctrl::Solution> = None;
    let mut log = TrajectoryLog {
        method,
        dataset,
        dt,
        records: Vec::with_capacity(steps),
    };
    let mut solves = Vec::new();

    for k in 0..steps {
        let t_k = k as f64 * dt;
        let v_head = state.velocities[0];
        let (v_ref, v_ctrl_ref) = match policy {
            EquilibriumPolicy::Fixed => (model.v_star(), model.v_star()),
            EquilibriumPolicy::Tracking => {
                (profile.velocity(t_k), clamp_reference(profile.velocity(t_k), v_max))
            }
        };
        let x_k = match policy {
            EquilibriumPolicy::Fixed => model.deviation_state(&state),
            EquilibriumPolicy::Tracking => model.deviation_state_tracking(&state, v_ctrl_ref)?,
        };
        let eps_k = v_head - v_ctrl_ref;

        let u_cav = match &mut controller {
            ControllerInstance::None => {
                let s = state.spacing(1);
                let s_dot = state.velocities[0] - state.velocities[1];
                model.params()[0].acceleration(s, s_dot, state.velocities[1])
            }
            ControllerInstance::Mpc(mpc) => {
                if window.is_full() {
                    let start = Instant::now();
                    let sol = mpc.solve(&x_k)?;
                    let u = sol.u_z[0].clamp(-config.controller.u_max, config.controller.u_max);
                    solves.push(SolveRecord {
                        k,
                        method,
                        u_z_first: sol.u_z[0],
                        u_applied: u,
                        objective: sol.objective,
                        kkt_residual: sol.kkt_residual,
                        sigma_norm: 0.0,
                        solve_time_s: start.elapsed().as_secs_f64(),
                    });
                    u
                } else {
                    0.0
                }
            }
            ControllerInstance::DataDriven { gain, .. } => match &prev_solution {
                Some(sol) => {
                    let u = match gain {
                        Some(k_gain) => compose_input(
                            sol.u_z[0],
                            k_gain,
                            &x_k,
                            &sol.x_z.rows(0, dim).into_owned(),
                            config.controller.u_max,
                        ),
                        None => sol.u_z[0].clamp(-config.controller.u_max, config.controller.u_max),
                    };
                    if let Some(last) = solves.last_mut() {
                        if last.k == k {
                            last.u_applied = u;
                        }
                    }
                    u
                }
                None => 0.0,
            },
        };

        log.records.push(StepRecord {
            t: t_k,
            positions: state.positions.clone(),
            velocities: state.velocities.clone(),
            u_cav,
            v_ref,
        });

        let v_head_next = profile.velocity((k + 1) as f64 * dt);
        state = model
            .step_nonlinear(&state, u_cav, v_head_next, &noise_seq[k])
            .map_err(|err| match err {
                Error::Collision {
                    vehicle, spacing, ..
                } => Error::Collision {
                    step: k,
                    vehicle,
                    spacing,
                },
                other => other,
            })?;

        window.push(x_k, u_cav, eps_k);
        if let ControllerInstance::DataDriven { controller, .. } = &mut controller {
            if window.is_full() && k + 1 < steps {
                let start = Instant::now();
                let sol = controller.solve(&window)?;
                solves.push(SolveRecord {
                    k: k + 1,
                    method,
                    u_z_first: sol.u_z[0],
                    u_applied: f64::NAN,
                    objective: sol.objective,
                    kkt_residual: sol.kkt_residual,
                    sigma_norm: sol.sigma.norm(),
                    solve_time_s: start.elapsed().as_secs_f64(),
                });
                prev_solution = Some(sol);
            }
        }
    }

    Ok((log, solves))
}

// ---------------------------------------------------------------------------
// campaign comparison

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: Method,
    pub dataset: usize,
    pub r_m: f64,
    pub r_s: f64,
    /// Percent change vs the all-HDV run of the same dataset (negative is
    /// an improvement).
    pub pct_rm: Option<f64>,
    pub pct_rs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub method: Method,
    pub datasets: usize,
    pub mean_rm: f64,
    pub mean_rs: f64,
    pub pct_rm: Option<f64>,
    pub pct_rs: Option<f64>,
}

/// Campaign results across datasets and methods.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Per-dataset failures (collisions, solver failures); partial results
    /// remain valid.
    pub failures: Vec<(usize, Method, String)>,
}

impl MetricsReport {
    pub fn aggregate(&self, method: Method) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "method,dataset,R_m,R_s,pct_Rm,pct_Rs")?;
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method.as_str(),
                r.dataset,
                r.r_m,
                r.r_s,
                fmt(r.pct_rm),
                fmt(r.pct_rs)
            )?;
        }
        Ok(())
    }

    pub fn format_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "method", "datasets", "R_m", "R_s", "dRm(%)", "dRs(%)"
        ));
        for a in &self.aggregates {
            let fmt = |v: Option<f64>| v.map_or("--".to_string(), |x| format!("{x:+.1}"));
            s.push_str(&format!(
                "{:<10} {:>9} {:>9.3} {:>9.3} {:>9} {:>9}\n",
                a.method.as_str(),
                a.datasets,
                a.mean_rm,
                a.mean_rs,
                fmt(a.pct_rm),
                fmt(a.pct_rs)
            ));
        }
        for (dataset, method, err) in &self.failures {
            s.push_str(&format!("failed: dataset {dataset} {}: {err}\n", method.as_str()));
        }
        s
    }
}

/// Run the full campaign: per dataset, collect data, synthesize artifacts,
/// simulate every configured method under one shared noise realization, and
/// aggregate the velocity-deviation metrics.
pub fn compare_datasets(config: &Config) -> Result<MetricsReport> {
    let model = config.build_model()?;
    let profile = HeadProfile::from_config(config)?;
    let total_time = config
        .scenario
        .total_time
        .unwrap_or_else(|| profile.default_duration());
    let steps = (total_time / model.dt()).round() as usize;
    let methods = &config.scenario.methods;
    let needs_data = methods
        .iter()
        .any(|m| matches!(m, Method::Deepc | Method::Rdeep));

    let outcomes: Vec<(usize, Vec<(Method, Result<(f64, f64)>)>)> = (0..config.scenario.dataset_count)
        .into_par_iter()
        .map(|dataset| {
            let noise_seq = scenario_noise(config, dataset, steps, model.state_dim());
            let artifacts = if needs_data {
                match prepare_dataset(config, &model, dataset) {
                    Ok(a) => Some(a),
                    Err(err) => {
                        // every data-driven method fails for this dataset
                        let mut rows = Vec::new();
                        for &method in methods {
                            if matches!(method, Method::Deepc | Method::Rdeep) {
                                rows.push((method, Err(clone_error(&err))));
                            } else {
                                rows.push((
                                    method,
                                    run_metrics(config, &model, method, None, &profile, &noise_seq, dataset),
                                ));
                            }
                        }
                        return (dataset, rows);
                    }
                }
            } else {
                None
            };
            let rows = methods
                .iter()
                .map(|&method| {
                    (
                        method,
                        run_metrics(
                            config,
                            &model,
                            method,
                            artifacts.as_ref(),
                            &profile,
                            &noise_seq,
                            dataset,
                        ),
                    )
                })
                .collect();
            (dataset, rows)
        })
        .collect();

    let mut report = MetricsReport::default();
    for (dataset, rows) in outcomes {
        let hdv = rows.iter().find_map(|(m, r)| match (m, r) {
            (Method::Hdv, Ok(v)) => Some(*v),
            _ => None,
        });
        for (method, result) in rows {
            match result {
                Ok((r_m, r_s)) => {
                    let pct = |ours: f64, base: Option<(f64, f64)>, pick: fn((f64, f64)) -> f64| {
                        base.filter(|_| method != Method::Hdv)
                            .map(|b| (ours / pick(b) - 1.0) * 100.0)
                    };
                    report.rows.push(MetricsRow {
                        method,
                        dataset,
                        r_m,
                        r_s,
                        pct_rm: pct(r_m, hdv, |b| b.0),
                        pct_rs: pct(r_s, hdv, |b| b.1),
                    });
                }
                Err(err) => report.failures.push((dataset, method, err.to_string())),
            }
        }
    }

    for &method in methods {
        let rows: Vec<&MetricsRow> = report.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            continue;
        }
        let mean_rm = rows.iter().map(|r| r.r_m).sum::<f64>() / rows.len() as f64;
        let mean_rs = rows.iter().map(|r| r.r_s).sum::<f64>() / rows.len() as f64;
        report.aggregates.push(AggregateRow {
            method,
            datasets: rows.len(),
            mean_rm,
            mean_rs,
            pct_rm: None,
            pct_rs: None,
        });
    }
    if let Some(hdv) = report.aggregate(Method::Hdv).cloned() {
        for a in &mut report.aggregates {
            if a.method != Method::Hdv {
                a.pct_rm = Some((a.mean_rm / hdv.mean_rm - 1.0) * 100.0);
                a.pct_rs = Some((a.mean_rs / hdv.mean_rs - 1.0) * 100.0);
            }
        }
    }
    Ok(report)
}

fn run_metrics(
    config: &Config,
    model: &PlatoonModel,
    method: Method,
    artifacts: Option<&DatasetArtifacts>,
    profile: &HeadProfile,
    noise_seq: &[DVector<f64>],
    dataset: usize,
) -> Result<(f64, f64)> {
    let (log, _) = run_scenario(config, model, method, artifacts, profile, noise_seq, dataset)?;
    Ok((metric_rm(&log)?, metric_rs(&log)?))
}

fn clone_error(err: &Error) -> Error {
    Error::InvalidParameter(err.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sinusoid_profile_values() {
        assert_relative_eq!(head_profile_sinusoid(0.0, 15.0, 4.0, 10.0), 15.0);
        assert_relative_eq!(head_profile_sinusoid(2.5, 15.0, 4.0, 10.0), 19.0);
        assert_relative_eq!(head_profile_sinusoid(5.0, 15.0, 4.0, 10.0), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn cycle_table_interpolation() {
        let table = CycleTable::ece_elementary();
        assert_relative_eq!(table.duration(), 195.0);
        assert_relative_eq!(table.velocity_at(-5.0), 0.0);
        assert_relative_eq!(table.velocity_at(300.0), 0.0);
        assert_relative_eq!(table.velocity_at(23.0), 15.0 / 3.6, epsilon = 1e-12);
        // midpoint of the 11 s → 15 s ramp from 0 to 15 km/h
        assert_relative_eq!(table.velocity_at(13.0), 0.5 * 15.0 / 3.6, epsilon = 1e-12);
        assert_relative_eq!(table.velocity_at(150.0), 50.0 / 3.6, epsilon = 1e-12);

        assert!(CycleTable::from_csv_str("time_s,speed_kmh\n0,0").is_err());
        assert!(CycleTable::from_csv_str("time_s,speed_kmh\n0,0\n0,5").is_err());
        assert!(CycleTable::from_csv_str("garbage\n0,zero\n1,1").is_err());
    }

    #[test]
    fn metrics_definitions() {
        let mk = |velocities: Vec<Vec<f64>>, v_ref: f64| TrajectoryLog {
            method: Method::Hdv,
            dataset: 0,
            dt: 0.1,
            records: velocities
                .into_iter()
                .enumerate()
                .map(|(k, v)| StepRecord {
                    t: k as f64 * 0.1,
                    positions: vec![0.0; v.len()],
                    velocities: v,
                    u_cav: 0.0,
                    v_ref,
                })
                .collect(),
        };
        // head excluded, constant reference
        let log = mk(vec![vec![9.0, 15.0], vec![3.0, 15.0]], 15.0);
        assert_relative_eq!(metric_rm(&log).unwrap(), 0.0);
        assert_relative_eq!(metric_rs(&log).unwrap(), 0.0);

        let log = mk(vec![vec![0.0, 16.0], vec![0.0, 16.0]], 15.0);
        assert_relative_eq!(metric_rm(&log).unwrap(), 1.0);
        assert_relative_eq!(metric_rs(&log).unwrap(), 1.0);

        // deviations {0, 2} → mean 1, RMS √2
        let log = mk(vec![vec![0.0, 15.0], vec![0.0, 17.0]], 15.0);
        assert_relative_eq!(metric_rm(&log).unwrap(), 1.0);
        assert_relative_eq!(metric_rs(&log).unwrap(), 2.0_f64.sqrt());
    }

    #[test]
    fn quiet_scenario_keeps_equilibrium() {
        let mut config = Config::default();
        config.scenario.amplitude = 0.0;
        config.collection.noise_bound = 0.0;
        config.scenario.methods = vec![Method::Hdv, Method::Mpc];
        let model = config.build_model().unwrap();
        let profile = HeadProfile::from_config(&config).unwrap();
        let noise = scenario_noise(&config, 0, 100, 6);
        for method in [Method::Hdv, Method::Mpc] {
            let (log, _) = run_scenario(&config, &model, method, None, &profile, &noise, 0).unwrap();
            let rm = metric_rm(&log).unwrap();
            assert!(rm < 1e-9, "{method:?} drifted: {rm}");
        }
    }

    #[test]
    fn paired_runs_are_deterministic() {
        let mut config = Config::default();
        config.scenario.methods = vec![Method::Hdv];
        let model = config.build_model().unwrap();
        let profile = HeadProfile::from_config(&config).unwrap();
        let noise = scenario_noise(&config, 3, 50, 6);
        let (log1, _) = run_scenario(&config, &model, Method::Hdv, None, &profile, &noise, 3).unwrap();
        let noise2 = scenario_noise(&config, 3, 50, 6);
        let (log2, _) = run_scenario(&config, &model, Method::Hdv, None, &profile, &noise2, 3).unwrap();
        for (a, b) in log1.records.iter().zip(&log2.records) {
            assert_eq!(a.velocities, b.velocities);
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn hdv_amplifies_the_wave() {
        let config = Config::default();
        let model = config.build_model().unwrap();
        let profile = HeadProfile::from_config(&config).unwrap();
        let noise = scenario_noise(&config, 0, 300, 6);
        let (log, _) = run_scenario(&config, &model, Method::Hdv, None, &profile, &noise, 0).unwrap();
        let rm = metric_rm(&log).unwrap();
        // the uncontrolled platoon amplifies a 4 m/s wave noticeably
        assert!(rm > 1.5, "R_m = {rm}");
        // downstream vehicles see larger swings than the head
        let max_v3 = log
            .records
            .iter()
            .map(|r| (r.velocities[3] - 15.0).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_v3 > 4.0, "vehicle 3 peak deviation {max_v3}");
    }

    #[test]
    fn trajectory_csv_schema() {
        let log = TrajectoryLog {
            method: Method::Rdeep,
            dataset: 7,
            dt: 0.1,
            records: vec![StepRecord {
                t: 0.0,
                positions: vec![0.0, -20.0],
                velocities: vec![15.0, 15.0],
                u_cav: 0.25,
                v_ref: 15.0,
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,vehicle,p,v,s,u,method,dataset");
        assert_eq!(lines.next().unwrap(), "0,0,0,15,,,rdeep,7");
        assert_eq!(lines.next().unwrap(), "0,1,-20,15,20,0.25,rdeep,7");
    }
}
