//! Latent sampling strategies on the periodic sine map `y = sin(k·x)`.
//!
//! Decodes the same target with prior, predictor-corrector, high-density
//! and flow-based latents and reports how many decoded `(k, x)` miss the
//! level set. Training is shortened from the defaults so the example
//! finishes in a few minutes; pass `full` to use the default epochs.
//!
//! ```text
//! cargo run --release --example sine_sampling [full]
//! ```

use invaert::harness::pipeline::{self, InversionRequest};
use invaert::harness::{covariance_trace, ExperimentConfig};
use invaert::physics::Experiment;
use invaert::sampling::Strategy;

fn main() -> invaert::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Experiment::SinePeriodic);
    if std::env::args().nth(1).as_deref() != Some("full") {
        for train in [
            &mut cfg.emulator.train,
            &mut cfg.flow.train,
            &mut cfg.vae.train,
        ] {
            train.epochs = 200;
            train.gamma = train.gamma.powi(10);
        }
        cfg.sampling.latent_flow.train.epochs = 100;
    }
    let data = pipeline::generate(&cfg)?;
    let model = pipeline::train_all(&cfg, &data)?;
    let y_star = cfg.sampling.y_star.clone().unwrap()[0];
    println!("y* = {y_star}");

    for (strategy, r) in [
        (Strategy::Prior, 0),
        (Strategy::Pc, 2),
        (Strategy::Pc, 50),
        (Strategy::Hd, 0),
        (Strategy::Nf, 0),
        (Strategy::NfPc, 2),
    ] {
        let mut req = InversionRequest::from_config(&cfg);
        req.strategy = strategy;
        req.r = r;
        req.n = 400;
        let mut m = model.clone();
        let inv = pipeline::invert_stage(&mut m, Some(&data), &req, cfg.seed)?;
        let misses = inv
            .v_hat
            .iter_rows()
            .filter(|v| ((v[0] * v[1]).sin() - y_star).abs() > 0.1)
            .count();
        println!(
            "{:>6} R={r:<3} {:>3}/{} outliers, covariance trace {:.4}",
            strategy.to_string(),
            misses,
            inv.v_hat.rows(),
            covariance_trace(&inv.v_hat)
        );
    }
    Ok(())
}
