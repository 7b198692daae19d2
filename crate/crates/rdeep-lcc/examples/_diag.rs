use nalgebra::DMatrix;
use rdeep_lcc::config::Config;
use rdeep_lcc::datagen::*;
use rdeep_lcc::gainsynth::*;
use rdeep_lcc::harness::dataset_seed;
use rdeep_lcc::sysid::*;

fn main() {
    let config = Config::default();
    let model = config.build_model().unwrap();
    let noise = config.noise_spec().unwrap();
    let q_diag = config.q_diag();
    for d in 0..20usize {
        let seed = dataset_seed(42, d);
        let mut rng = derive_rng(seed, 1);
        let (u, e) = generate_excitation(1000, 0.2, 0.5, &mut rng).unwrap();
        let archive = collect_archive_linear(&model, &u, &e, 0.05, 20, 20, seed).unwrap();
        let sys = estimate_system_set(&archive, &noise).unwrap();
        let a_c = sys.m_ab.center().columns(0, 6).into_owned();
        let b_c = sys.m_ab.center().columns(6, 1).into_owned();
        let mut line = format!("d={d:<2}");
        for scale in [1.0, 4.0, 16.0, 64.0] {
            let q = DMatrix::from_diagonal(&(&q_diag * scale));
            match dare_gain(&a_c, &b_c, &q, 0.1) {
                Ok(k) => {
                    let rep = validate_gain(&k, &sys.m_ab, 30000, 1e-6, 7).unwrap();
                    line += &format!("  s{scale}: {:.4}({})", rep.worst_spectral_radius, rep.failures);
                }
                Err(_) => line += &format!("  s{scale}: DARE-fail"),
            }
        }
        println!("{line}");
    }
}
