//! One-dataset comparison of all four methods under the sinusoidal head
//! disturbance, printing wave-dampening metrics per method.
//!
//! Run with `cargo run --release --example sinusoid_comparison`.

use rdeep_lcc::config::Config;
use rdeep_lcc::ctrl::Method;
use rdeep_lcc::harness::{
    metric_rm, metric_rs, prepare_dataset, run_scenario, scenario_noise, HeadProfile,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = Config::default();
    // one dataset and a lighter gain certificate keep this example quick;
    // the campaign defaults validate ~5.2e5 samples
    config.scenario.dataset_count = 1;
    config.gain.epsilon = 0.05;
    config.gain.delta = 0.01;

    let model = config.build_model()?;
    let profile = HeadProfile::from_config(&config)?;
    let steps = (30.0 / model.dt()).round() as usize;

    println!("collecting data and synthesizing the robust controller...");
    let artifacts = prepare_dataset(&config, &model, 0)?;
    println!(
        "  gain validated on {} samples, worst spectral radius {:.6}",
        artifacts.gain.samples_checked, artifacts.gain.worst_spectral_radius
    );
    for (i, set) in artifacts.tube.sets.iter().enumerate() {
        println!(
            "  tube step {}: max state hull radius {:.4}",
            i + 1,
            set.radius().max()
        );
    }

    let noise = scenario_noise(&config, 0, steps, model.state_dim());
    println!("\n{:<8} {:>8} {:>8}", "method", "R_m", "R_s");
    for method in [Method::Hdv, Method::Mpc, Method::Deepc, Method::Rdeep] {
        let (log, _) = run_scenario(
            &config,
            &model,
            method,
            Some(&artifacts),
            &profile,
            &noise,
            0,
        )?;
        println!(
            "{:<8} {:>8.3} {:>8.3}",
            method.as_str(),
            metric_rm(&log)?,
            metric_rs(&log)?
        );
    }
    Ok(())
}
