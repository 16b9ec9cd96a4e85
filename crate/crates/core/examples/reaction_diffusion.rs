//! Two-species reaction-diffusion on a periodic grid: mass conservation
//! without the reaction term, and a one-step emulator trained on a small
//! cell/time subsample.
//!
//! ```text
//! cargo run --release --example reaction_diffusion
//! ```

use invaert::harness::{pipeline, ExperimentConfig, InVAErtModel};
use invaert::physics::rd::{RdParams, RdSystem};
use invaert::physics::{Experiment, SubsampleRule, System};
use invaert::rng::Rng;

fn main() -> invaert::Result<()> {
    let p = RdParams {
        d1: 4e-3,
        d2: 3e-3,
        kappa: 3e-3,
    };
    for reaction in [false, true] {
        let sys = RdSystem {
            grid: 16,
            reaction,
            ..RdSystem::default()
        };
        let nn = sys.grid * sys.grid;
        let states = sys.simulate(p, sys.initial_condition(&mut Rng::new(0)), 200)?;
        let mass = |c: &[f64]| (c[..nn].iter().sum::<f64>(), c[nn..].iter().sum::<f64>());
        let (a0, b0) = mass(&states[0]);
        let (a1, b1) = mass(&states[200]);
        println!(
            "reaction {reaction:>5}: species mass {a0:.6} → {a1:.6}, {b0:.6} → {b1:.6} after t = 1"
        );
    }

    let mut cfg = ExperimentConfig::default_for(Experiment::ReactionDiffusion);
    cfg.data.n_sims = 60;
    cfg.data.rule = SubsampleRule::CellsTimes {
        cells: 10,
        times: 5,
        lags: 1,
    };
    cfg.emulator.width = 48;
    cfg.emulator.hidden_layers = 4;
    cfg.emulator.train.epochs = 40;
    cfg.emulator.train.batch_size = 128;
    cfg.emulator.train.gamma = 0.95;
    let System::ReactionDiffusion(sys) = &cfg.physics else {
        unreachable!()
    };
    println!(
        "grid {}², {} simulations to t = {}",
        sys.grid, cfg.data.n_sims, sys.t_final
    );

    let data = pipeline::generate(&cfg)?;
    let mut model = InVAErtModel::empty(cfg.clone());
    pipeline::train_emulator_stage(&cfg, &data, &mut model)?;
    let (eval, _, _) = pipeline::eval_emulator(&cfg, &model, 0)?;
    println!(
        "{} records; held-out one-step relative error {:.3e} over {} fresh records",
        data.len(),
        eval.one_step_relative_error,
        eval.records
    );
    Ok(())
}
