//! End-to-end inversion of the rank-deficient linear map: every stage of
//! the pipeline, then a line fit through the decoded inputs, compared with
//! the kernel of the map.
//!
//! ```text
//! cargo run --release --example linear_inversion
//! ```

use invaert::harness::pipeline::{self, InversionRequest};
use invaert::harness::{
    abs_cosine, fit_line_direction, verify_inversion, ExperimentConfig, Verifier,
};
use invaert::physics::{linear, Experiment};

fn main() -> invaert::Result<()> {
    let cfg = ExperimentConfig::default_for(Experiment::Linear);
    let data = pipeline::generate(&cfg)?;
    println!("{} records", data.len());

    let mut model = pipeline::train_all(&cfg, &data)?;
    println!(
        "final losses: emulator {:.2e}, flow NLL {:.3}, vae {:.3e}",
        model.log.emulator.last().unwrap(),
        model.log.flow.last().unwrap(),
        model.log.vae.total.last().unwrap()
    );

    let req = InversionRequest::from_config(&cfg);
    let inv = pipeline::invert_stage(&mut model, Some(&data), &req, cfg.seed)?;
    let report = verify_inversion(
        &Verifier::Exact(&cfg.physics),
        &inv.v_hat,
        &inv.y_star,
        None,
        None,
        None,
    )?;
    println!(
        "y* = {:?}, median ζ = {:.3e}",
        inv.y_star,
        report.summary.median.unwrap()
    );

    let dir = fit_line_direction(&inv.v_hat)?;
    let k = linear::kernel();
    println!("fitted direction {:.3?}", dir);
    println!("kernel           {:.3?}", k);
    println!("|cos| = {:.4}", abs_cosine(&dir, &k));
    Ok(())
}
