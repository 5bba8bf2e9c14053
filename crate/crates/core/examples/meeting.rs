//! Fits the synthetic meeting task and compares coordinated generation with
//! the uncoordinated baseline.
//!
//!     cargo run --release --example meeting -- [2|3] [seed]

use bicoord::pipeline::{endpoint_gap, generate_synergistic, CoordinationSite, GenerationConfig};
use bicoord::synth::{make_meeting_demos, MeetingTaskSpec};
use bicoord::{fit_arms, EmConfig, KmeansInit, MeetingScenario, ModelSpec};

fn main() -> bicoord::Result<()> {
    let mut args = std::env::args().skip(1);
    let dims: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let (spec, meeting, reg) = match dims {
        2 => (MeetingTaskSpec::planar(seed), vec![5.0, 5.0], 1e-5),
        _ => (MeetingTaskSpec::spatial(seed), vec![5.0, 8.0, 5.0], 1e-4),
    };
    let demos = make_meeting_demos(&spec)?;
    let model = ModelSpec {
        em: EmConfig { k: 6, cov_regularization: reg, init: KmeansInit::FirstColumn, ..Default::default() },
        ..Default::default()
    };
    let fitted = fit_arms(&demos, &model)?;
    for ((_, hist), name) in fitted.iter().zip(&demos.arm_names) {
        println!("{name}: {} EM iterations, objective {:.4}", hist.len(), hist.last().unwrap());
    }

    let scenario = MeetingScenario {
        starts: spec.start_regions.iter().map(|r| r.center()).collect(),
        meeting,
        end_offset: 0.75,
    };
    let task = scenario.task(&model.frames)?.instance()?;
    let cfg = GenerationConfig {
        t_out: spec.samples,
        dt: spec.dt,
        coordination_site: CoordinationSite::Control,
        ..Default::default()
    };
    let models = [&fitted[0].0, &fitted[1].0];
    let baseline = generate_synergistic(models, &task, &GenerationConfig { synergy_iters: 1, ..cfg.clone() })?;
    let coordinated = generate_synergistic(models, &task, &cfg)?;

    for rec in &coordinated.log {
        println!("iteration {}: displacement {:.4}, gap {:.4}", rec.iteration, rec.max_displacement, rec.endpoint_gap);
    }
    let gap = |r: &bicoord::pipeline::SynergyResult<f64>| endpoint_gap(&r.arms[0].trajectory, &r.arms[1].trajectory);
    println!("baseline gap {:.4}, coordinated gap {:.4}", gap(&baseline), gap(&coordinated));
    Ok(())
}
