//! Residual emulator for the parametric Lorenz system, rolled out
//! autoregressively from exact seed states and compared with RK4.
//!
//! The dataset and training run are a fraction of the defaults so the
//! example takes about a minute.
//!
//! ```text
//! cargo run --release --example lorenz_rollout
//! ```

use invaert::harness::pipeline;
use invaert::harness::ExperimentConfig;
use invaert::physics::{Experiment, System};

fn main() -> invaert::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Experiment::Lorenz);
    cfg.data.n_sims = 200;
    cfg.emulator.width = 32;
    cfg.emulator.hidden_layers = 4;
    cfg.emulator.train.epochs = 60;
    cfg.emulator.train.gamma = 0.95;
    let System::Lorenz(sys) = cfg.physics.clone() else {
        unreachable!()
    };

    let data = pipeline::generate(&cfg)?;
    let mut model = invaert::harness::InVAErtModel::empty(cfg.clone());
    pipeline::train_emulator_stage(&cfg, &data, &mut model)?;
    let emulator = model.emulator()?;
    println!(
        "{} records, held-out loss {:.3e}",
        data.len(),
        model.log.emulator_held_out.last().unwrap()
    );

    let (pr, ra, b) = (10.0, 28.0, 8.0 / 3.0);
    let lags = emulator.layout().lags;
    let steps = sys.steps();
    let exact = sys.trajectory(pr, ra, b, steps)?;
    let seeds: Vec<Vec<f64>> = exact[..lags].iter().map(|s| s.to_vec()).collect();
    let roll = emulator.rollout(&seeds, steps + 1 - lags, |n| {
        vec![pr, ra, b, n as f64 * sys.dt]
    })?;
    println!("{:>6} {:>28} {:>28}", "t", "RK4", "emulator");
    for n in (0..roll.states.len()).step_by(steps / 8) {
        let (e, m) = (exact[n], &roll.states[n]);
        println!(
            "{:>6.2} [{:>7.3} {:>7.3} {:>7.3}] [{:>7.3} {:>7.3} {:>7.3}]",
            n as f64 * sys.dt,
            e[0],
            e[1],
            e[2],
            m[0],
            m[1],
            m[2]
        );
    }
    if let Some(at) = roll.diverged_at {
        println!(
            "rollout left the training range at t = {:.3}",
            at as f64 * sys.dt
        );
    }
    Ok(())
}
