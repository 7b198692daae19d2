//! Offline data collection: excitation design, trajectory recording,
//! Hankel-matrix construction and partitioning, and validity checks.

use nalgebra::{DMatrix, DVector};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::platoon::PlatoonModel;

/// Mix a base seed with a stream index into an independent sub-seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for a named stream of a base seed, so independent
/// purposes (collection noise, gain sampling, simulation noise, ...) never
/// share draws and runs regenerate identically from `(seed, config)`.
pub fn derive_rng(seed: u64, stream: u64) -> SmallRng {
    SmallRng::seed_from_u64(mix_seed(seed, stream))
}

/// Metadata recorded with every archive so reruns are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub n: usize,
    pub t: usize,
    pub dt: f64,
    pub t_ini: usize,
    pub horizon: usize,
    pub seed: u64,
    pub noise_bound: f64,
    pub v_star: f64,
    /// Singular-value cutoff used for all rank decisions on this data.
    pub rank_tolerance: f64,
}

/// Recorded excitation/disturbance/state sequences plus the shifted blocks
/// used by the reachability pipeline. `W₋` is intentionally absent: process
/// noise is not measurable.
#[derive(Debug, Clone)]
pub struct DataArchive {
    pub header: ArchiveHeader,
    /// Input sequence, 1×(T+1).
    u: DVector<f64>,
    /// Head-disturbance sequence, 1×(T+1).
    e: DVector<f64>,
    /// Deviation-state sequence, 2n×(T+1).
    x: DMatrix<f64>,
}

impl DataArchive {
    /// Assemble an archive from externally recorded sequences.
    pub fn from_parts(
        header: ArchiveHeader,
        u: DVector<f64>,
        e: DVector<f64>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let cols = header.t + 1;
        if u.len() != cols || e.len() != cols || x.shape() != (2 * header.n, cols) {
            return Err(Error::InvalidParameter(
                "archive sequences inconsistent with header".into(),
            ));
        }
        Ok(Self { header, u, e, x })
    }

    pub fn t(&self) -> usize {
        self.header.t
    }

    pub fn u_full(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn e_full(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn x_full(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `U₋ = [u(1) … u(T)]` as a 1×T matrix.
    pub fn u_minus(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.t(), &self.u.as_slice()[..self.t()])
    }

    /// `E₋ = [ε(1) … ε(T)]` as a 1×T matrix.
    pub fn e_minus(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.t(), &self.e.as_slice()[..self.t()])
    }

    /// `X₋ = [x(1) … x(T)]`.
    pub fn x_minus(&self) -> DMatrix<f64> {
        self.x.columns(0, self.t()).into_owned()
    }

    /// `X₊ = [x(2) … x(T+1)]`.
    pub fn x_plus(&self) -> DMatrix<f64> {
        self.x.columns(1, self.t()).into_owned()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ArchiveFile {
            header: self.header.clone(),
            u: self.u.as_slice().to_vec(),
            e: self.e.as_slice().to_vec(),
            x: self.x.as_slice().to_vec(),
        };
        let mut out = std::fs::File::create(path)?;
        serde_json::to_writer(&mut out, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ArchiveFile = serde_json::from_reader(std::fs::File::open(path)?)?;
        let cols = file.header.t + 1;
        let dim = 2 * file.header.n;
        if file.u.len() != cols || file.e.len() != cols || file.x.len() != dim * cols {
            return Err(Error::InvalidParameter(
                "archive payload inconsistent with header".into(),
            ));
        }
        Ok(Self {
            header: file.header,
            u: DVector::from_vec(file.u),
            e: DVector::from_vec(file.e),
            x: DMatrix::from_vec(dim, cols, file.x),
        })
    }

    /// Human-readable dump: one row per sample with the deviation state.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let n = self.header.n;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "k,u,eps")?;
        for i in 1..=n {
            write!(out, ",s_tilde_{i}")?;
        }
        for i in 1..=n {
            write!(out, ",v_tilde_{i}")?;
        }
        writeln!(out)?;
        for k in 0..=self.t() {
            write!(out, "{k},{},{}", self.u[k], self.e[k])?;
            for i in 0..n {
                write!(out, ",{}", self.x[(2 * i, k)])?;
            }
            for i in 0..n {
                write!(out, ",{}", self.x[(2 * i + 1, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ArchiveFile {
    header: ArchiveHeader,
    u: Vec<f64>,
    e: Vec<f64>,
    x: Vec<f64>,
}

/// I.i.d. uniform excitation sequences of length `T+1` within the given
/// bounds: control input for the CAV and velocity disturbance for the head.
pub fn generate_excitation<R: Rng + ?Sized>(
    t: usize,
    u_bound: f64,
    e_bound: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if t == 0 || u_bound < 0.0 || e_bound < 0.0 {
        return Err(Error::InvalidParameter(
            "excitation needs T ≥ 1 and nonnegative bounds".into(),
        ));
    }
    let u = DVector::from_fn(t + 1, |_, _| rng.gen_range(-u_bound..=u_bound));
    let e = DVector::from_fn(t + 1, |_, _| rng.gen_range(-e_bound..=e_bound));
    Ok((u, e))
}

/// Block-Hankel matrix of order `L` for a `d×T` column signal: `L` block
/// rows, `T−L+1` columns, block entry `(i, j) = ω(i+j−1)`.
pub fn build_hankel(signal: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    let (d, t) = signal.shape();
    if order == 0 || order > t {
        return Err(Error::InvalidParameter(format!(
            "Hankel order {order} invalid for signal length {t}"
        )));
    }
    let cols = t - order + 1;
    let mut h = DMatrix::zeros(d * order, cols);
    for i in 0..order {
        for j in 0..cols {
            h.view_mut((d * i, j), (d, 1))
                .copy_from(&signal.column(i + j));
        }
    }
    Ok(h)
}

/// Singular-value cutoff for rank decisions on `m`.
pub fn rank_tolerance(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    s_max * m.nrows().max(m.ncols()) as f64 * f64::EPSILON * 4.0
}

/// Numerical rank with the standard cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let tol = rank_tolerance(m);
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Persistent excitation of the given order: the order-`L` block Hankel of
/// the signal has full row rank.
pub fn check_persistent_excitation(signal: &DMatrix<f64>, order: usize) -> Result<bool> {
    let h = build_hankel(signal, order)?;
    Ok(numerical_rank(&h) == h.nrows())
}

/// Minimum-length condition `T ≥ 2(T_ini + N + 2n) − 1` for persistent
/// excitation of order `T_ini + N` on the platoon data.
pub fn check_data_length(t: usize, t_ini: usize, horizon: usize, n: usize) -> bool {
    t >= 2 * (t_ini + horizon + 2 * n) - 1
}

fn validate_lengths(
    model: &PlatoonModel,
    u_seq: &DVector<f64>,
    e_seq: &DVector<f64>,
    t_ini: usize,
    horizon: usize,
) -> Result<()> {
    if u_seq.len() != e_seq.len() || u_seq.len() < 2 {
        return Err(Error::InvalidParameter(
            "excitation sequences must share length T+1 ≥ 2".into(),
        ));
    }
    let t = u_seq.len() - 1;
    let n = model.n();
    if !check_data_length(t, t_ini, horizon, n) {
        return Err(Error::DataTooShort {
            t,
            required: 2 * (t_ini + horizon + 2 * n) - 1,
            t_ini,
            horizon,
            n,
        });
    }
    Ok(())
}

/// The combined recorded (u, ε) input must be persistently exciting of
/// order `T_ini + N + 2n` for the fundamental lemma to apply.
fn check_archive_excitation(archive: &DataArchive) -> Result<()> {
    let pe_order = archive.header.t_ini + archive.header.horizon + 2 * archive.header.n;
    let mut joint = DMatrix::zeros(2, archive.t());
    joint.row_mut(0).copy_from(&archive.u_minus().row(0));
    joint.row_mut(1).copy_from(&archive.e_minus().row(0));
    if !check_persistent_excitation(&joint, pe_order)? {
        return Err(Error::NotPersistentlyExciting { order: pe_order });
    }
    Ok(())
}

fn collect_impl(
    model: &PlatoonModel,
    u_seq: &DVector<f64>,
    e_seq: &DVector<f64>,
    noise_bound: f64,
    t_ini: usize,
    horizon: usize,
    seed: u64,
    linear_plant: bool,
) -> Result<DataArchive> {
    let t = u_seq.len() - 1;
    let n = model.n();
    let mut noise_rng = derive_rng(seed, 0x11);
    let dim = 2 * n;
    let mut x = DMatrix::zeros(dim, t + 1);
    let mut u_rec = u_seq.clone();

    if linear_plant {
        let mut xk = DVector::zeros(dim);
        for k in 0..=t {
            x.column_mut(k).copy_from(&xk);
            if k < t {
                let w = DVector::from_fn(dim, |_, _| {
                    if noise_bound > 0.0 {
                        noise_rng.gen_range(-noise_bound..=noise_bound)
                    } else {
                        0.0
                    }
                });
                xk = model.step_linear(&xk, u_seq[k], e_seq[k], &w);
            }
        }
    } else {
        // the CAV is a double integrator, so purely random acceleration
        // drifts it into a collision over long experiments; excite it around
        // its own car-following law instead and record the realized total
        // input, which is the model's input channel
        let mut state = model.equilibrium_state();
        state.velocities[0] = model.v_star() + e_seq[0];
        for k in 0..=t {
            x.column_mut(k).copy_from(&model.deviation_state(&state));
            let s = state.spacing(1);
            let s_dot = state.velocities[0] - state.velocities[1];
            u_rec[k] = model.params()[0].acceleration(s, s_dot, state.velocities[1]) + u_seq[k];
            if k < t {
                let w = DVector::from_fn(dim, |_, _| {
                    if noise_bound > 0.0 {
                        noise_rng.gen_range(-noise_bound..=noise_bound)
                    } else {
                        0.0
                    }
                });
                let v_head_next = model.v_star() + e_seq[k + 1];
                state = model
                    .step_nonlinear(&state, u_rec[k], v_head_next, &w)
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
            }
        }
    }

    let mut regressor = DMatrix::zeros(dim + 2, t);
    regressor.rows_mut(0, dim).copy_from(&x.columns(0, t));
    for k in 0..t {
        regressor[(dim, k)] = u_rec[k];
        regressor[(dim + 1, k)] = e_seq[k];
    }
    let tol = rank_tolerance(&regressor);

    Ok(DataArchive {
        header: ArchiveHeader {
            n,
            t,
            dt: model.dt(),
            t_ini,
            horizon,
            seed,
            noise_bound,
            v_star: model.v_star(),
            rank_tolerance: tol,
        },
        u: u_rec,
        e: e_seq.clone(),
        x,
    })
}

/// Record an excitation experiment on the nonlinear platoon near its
/// equilibrium, with uniformly distributed process noise injected each step.
/// The CAV tracks its car-following law plus the random excitation; the
/// archive stores the realized total input and is rejected if that input is
/// not persistently exciting.
pub fn collect_archive(
    model: &PlatoonModel,
    u_seq: &DVector<f64>,
    e_seq: &DVector<f64>,
    noise_bound: f64,
    t_ini: usize,
    horizon: usize,
    seed: u64,
) -> Result<DataArchive> {
    validate_lengths(model, u_seq, e_seq, t_ini, horizon)?;
    let archive = collect_impl(model, u_seq, e_seq, noise_bound, t_ini, horizon, seed, false)?;
    check_archive_excitation(&archive)?;
    Ok(archive)
}

/// Same experiment on the discrete-linear deviation model; the workhorse for
/// exact-recovery and fundamental-lemma checks.
pub fn collect_archive_linear(
    model: &PlatoonModel,
    u_seq: &DVector<f64>,
    e_seq: &DVector<f64>,
    noise_bound: f64,
    t_ini: usize,
    horizon: usize,
    seed: u64,
) -> Result<DataArchive> {
    validate_lengths(model, u_seq, e_seq, t_ini, horizon)?;
    let archive = collect_impl(model, u_seq, e_seq, noise_bound, t_ini, horizon, seed, true)?;
    check_archive_excitation(&archive)?;
    Ok(archive)
}

/// Hankel matrices of the archive partitioned into past (`T_ini` block rows)
/// and future (`N` block rows) trajectory data.
#[derive(Debug, Clone)]
pub struct HankelBlocks {
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub e_p: DMatrix<f64>,
    pub e_f: DMatrix<f64>,
    pub x_p: DMatrix<f64>,
    pub x_f: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
}

impl HankelBlocks {
    pub fn cols(&self) -> usize {
        self.u_p.ncols()
    }

    /// Stacked `[X_p; U_p; E_p; X_f; U_f; E_f]` in the order used by the
    /// predictive-control equality constraint.
    pub fn stacked(&self) -> DMatrix<f64> {
        let cols = self.cols();
        let rows = self.x_p.nrows()
            + self.u_p.nrows()
            + self.e_p.nrows()
            + self.x_f.nrows()
            + self.u_f.nrows()
            + self.e_f.nrows();
        let mut m = DMatrix::zeros(rows, cols);
        let mut offset = 0;
        for block in [&self.x_p, &self.u_p, &self.e_p, &self.x_f, &self.u_f, &self.e_f] {
            m.rows_mut(offset, block.nrows()).copy_from(block);
            offset += block.nrows();
        }
        m
    }
}

/// Build order-`T_ini+N` Hankels of the compact data and split them into
/// past/future blocks.
pub fn partition_hankels(archive: &DataArchive, t_ini: usize, horizon: usize) -> Result<HankelBlocks> {
    let n = archive.header.n;
    if !check_data_length(archive.t(), t_ini, horizon, n) {
        return Err(Error::DataTooShort {
            t: archive.t(),
            required: 2 * (t_ini + horizon + 2 * n) - 1,
            t_ini,
            horizon,
            n,
        });
    }
    let order = t_ini + horizon;
    let hu = build_hankel(&archive.u_minus(), order)?;
    let he = build_hankel(&archive.e_minus(), order)?;
    let hx = build_hankel(&archive.x_minus(), order)?;
    let dim = 2 * n;
    Ok(HankelBlocks {
        u_p: hu.rows(0, t_ini).into_owned(),
        u_f: hu.rows(t_ini, horizon).into_owned(),
        e_p: he.rows(0, t_ini).into_owned(),
        e_f: he.rows(t_ini, horizon).into_owned(),
        x_p: hx.rows(0, dim * t_ini).into_owned(),
        x_f: hx.rows(dim * t_ini, dim * horizon).into_owned(),
        t_ini,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platoon::OvmParams;
    use approx::assert_relative_eq;

    fn model() -> PlatoonModel {
        PlatoonModel::homogeneous(3, OvmParams::default(), 15.0, 0.1).unwrap()
    }

    #[test]
    fn excitation_bounds_and_determinism() {
        let mut rng = derive_rng(7, 1);
        let (u, e) = generate_excitation(100, 0.2, 0.5, &mut rng).unwrap();
        assert_eq!(u.len(), 101);
        assert!(u.iter().all(|v| v.abs() <= 0.2));
        assert!(e.iter().all(|v| v.abs() <= 0.5));

        let mut rng2 = derive_rng(7, 1);
        let (u2, e2) = generate_excitation(100, 0.2, 0.5, &mut rng2).unwrap();
        assert_eq!(u, u2);
        assert_eq!(e, e2);

        let (uz, _) = generate_excitation(10, 0.0, 0.0, &mut rng).unwrap();
        assert!(uz.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hankel_construction() {
        let seq = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let h = build_hankel(&seq, 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        let h1 = build_hankel(&seq, 1).unwrap();
        assert_eq!(h1, seq);
        assert!(build_hankel(&seq, 5).is_err());

        let sig = DMatrix::from_fn(2, 10, |i, j| (i + 2 * j) as f64);
        let h = build_hankel(&sig, 3).unwrap();
        assert_eq!(h.shape(), (6, 8));
        // block shift structure H[i+1, j] = H[i, j+1]
        for i in 0..2 {
            for j in 0..7 {
                assert_eq!(
                    h.view((2 * (i + 1), j), (2, 1)),
                    h.view((2 * i, j + 1), (2, 1))
                );
            }
        }
    }

    #[test]
    fn persistent_excitation_checks() {
        let constant = DMatrix::from_element(1, 30, 3.0);
        assert!(!check_persistent_excitation(&constant, 2).unwrap());
        assert!(check_persistent_excitation(&constant, 1).unwrap());

        let zero = DMatrix::zeros(1, 10);
        assert!(!check_persistent_excitation(&zero, 1).unwrap());

        let mut rng = derive_rng(1, 2);
        let (u, _) = generate_excitation(60, 1.0, 1.0, &mut rng).unwrap();
        let sig = DMatrix::from_row_slice(1, 61, u.as_slice());
        assert!(check_persistent_excitation(&sig, 25).unwrap());
    }

    #[test]
    fn data_length_condition() {
        assert!(check_data_length(1000, 20, 5, 3));
        assert!(check_data_length(61, 20, 5, 3));
        assert!(!check_data_length(60, 20, 5, 3));
    }

    #[test]
    fn zero_excitation_keeps_equilibrium() {
        let m = model();
        let u = DVector::zeros(201);
        let e = DVector::zeros(201);
        // zero excitation fails the PE precondition of the public collector
        let err = collect_archive(&m, &u, &e, 0.0, 20, 5, 0);
        assert!(matches!(err, Err(Error::NotPersistentlyExciting { .. })));
        // the recording itself stays at equilibrium: X ≡ 0
        let archive = collect_impl(&m, &u, &e, 0.0, 20, 5, 0, false).unwrap();
        assert!(archive.x_full().amax() <= 1e-12);
    }

    #[test]
    fn archive_shift_structure_and_replay() {
        let m = model();
        let mut rng = derive_rng(11, 5);
        let (u, e) = generate_excitation(200, 0.2, 0.5, &mut rng).unwrap();
        let archive = collect_archive_linear(&m, &u, &e, 0.0, 20, 5, 11).unwrap();
        let xm = archive.x_minus();
        let xp = archive.x_plus();
        for j in 0..archive.t() - 1 {
            assert_eq!(xp.column(j), xm.column(j + 1));
        }
        // noise-free linear data replays exactly through the true model
        let predicted = m.a_discrete() * &xm + m.b_discrete() * archive.u_minus()
            + m.h_discrete() * archive.e_minus();
        assert!((&xp - &predicted).amax() < 1e-10);
    }

    #[test]
    fn nonlinear_collection_is_deterministic() {
        let m = model();
        let mut rng = derive_rng(42, 6);
        let (u, e) = generate_excitation(200, 0.2, 0.5, &mut rng).unwrap();
        let a1 = collect_archive(&m, &u, &e, 0.05, 20, 5, 42).unwrap();
        let a2 = collect_archive(&m, &u, &e, 0.05, 20, 5, 42).unwrap();
        assert_eq!(a1.x_full(), a2.x_full());
        // near-equilibrium excitation keeps deviations moderate
        assert!(a1.x_full().amax() < 5.0);
    }

    #[test]
    fn partition_shapes_and_window_reproduction() {
        let m = model();
        let mut rng = derive_rng(9, 7);
        let (u, e) = generate_excitation(1000, 0.2, 0.5, &mut rng).unwrap();
        let archive = collect_archive_linear(&m, &u, &e, 0.0, 20, 5, 9).unwrap();
        let blocks = partition_hankels(&archive, 20, 5).unwrap();
        assert_eq!(blocks.x_p.shape(), (120, 976));
        assert_eq!(blocks.x_f.shape(), (30, 976));
        assert_eq!(blocks.u_p.shape(), (20, 976));
        assert_eq!(blocks.u_f.shape(), (5, 976));

        // stacking past over future reproduces the unpartitioned Hankel
        let hu = build_hankel(&archive.u_minus(), 25).unwrap();
        let mut stacked = DMatrix::zeros(25, blocks.cols());
        stacked.rows_mut(0, 20).copy_from(&blocks.u_p);
        stacked.rows_mut(20, 5).copy_from(&blocks.u_f);
        assert_eq!(stacked, hu);

        // a unit-vector g selects the corresponding recorded window
        let full = blocks.stacked();
        let mut g = DVector::zeros(blocks.cols());
        g[37] = 1.0;
        let window = &full * &g;
        let x_m = archive.x_minus();
        for i in 0..20 {
            let expected = x_m.column(37 + i);
            let got = window.rows(6 * i, 6);
            assert_relative_eq!(DVector::from(got), DVector::from(expected), epsilon = 1e-12);
        }
    }

    #[test]
    fn fundamental_lemma_span_consistency() {
        let m = model();
        let mut rng = derive_rng(77, 8);
        let (u, e) = generate_excitation(400, 0.2, 0.5, &mut rng).unwrap();
        let archive = collect_archive_linear(&m, &u, &e, 0.0, 20, 5, 77).unwrap();
        let blocks = partition_hankels(&archive, 20, 5).unwrap();
        let stacked = blocks.stacked();
        let svd = stacked.clone().svd(true, true);

        // a fresh noise-free trajectory of the same plant
        let (u2, e2) = generate_excitation(150, 0.2, 0.5, &mut rng).unwrap();
        let fresh = collect_archive_linear(&m, &u2, &e2, 0.0, 20, 5, 78).unwrap();
        let fx = fresh.x_minus();
        let fu = fresh.u_minus();
        let fe = fresh.e_minus();
        // row layout of the stack: X_p 0..120, U_p 120..140, E_p 140..160,
        // X_f 160..190, U_f 190..195, E_f 195..200
        for start in [0usize, 13, 40] {
            let mut window = DVector::zeros(stacked.nrows());
            for i in 0..25 {
                let x_row = if i < 20 { 6 * i } else { 160 + 6 * (i - 20) };
                window.rows_mut(x_row, 6).copy_from(&fx.column(start + i));
                let (u_row, e_row) = if i < 20 {
                    (120 + i, 140 + i)
                } else {
                    (190 + (i - 20), 195 + (i - 20))
                };
                window[u_row] = fu[(0, start + i)];
                window[e_row] = fe[(0, start + i)];
            }
            let g = svd.solve(&window, 1e-10).unwrap();
            let residual = (&stacked * g - &window).amax();
            assert!(residual <= 1e-8, "span residual {residual}");
        }
    }

    #[test]
    fn archive_roundtrip_and_csv() {
        let m = model();
        let mut rng = derive_rng(5, 9);
        let (u, e) = generate_excitation(100, 0.2, 0.5, &mut rng).unwrap();
        let archive = collect_archive(&m, &u, &e, 0.05, 10, 5, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.json");
        archive.save(&path).unwrap();
        let loaded = DataArchive::load(&path).unwrap();
        assert_eq!(loaded.header, archive.header);
        assert_eq!(loaded.x_full(), archive.x_full());

        let csv_path = dir.path().join("archive.csv");
        archive.export_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,u,eps,s_tilde_1,s_tilde_2,s_tilde_3,v_tilde_1,v_tilde_2,v_tilde_3"
        );
        assert_eq!(text.lines().count(), 102);
    }
}
