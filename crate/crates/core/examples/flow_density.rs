//! Fits a RealNVP flow to samples from a noisy ring and compares the
//! learned log-density on and off the ring.
//!
//! ```text
//! cargo run --release --example flow_density
//! ```

use std::f64::consts::PI;

use invaert::emulator::TrainConfig;
use invaert::flow::{train_flow, FlowSpec};
use invaert::rng::Rng;
use invaert::tensor::Tensor;

fn main() -> invaert::Result<()> {
    let mut rng = Rng::new(7);
    let rows: Vec<Vec<f64>> = (0..4000)
        .map(|_| {
            let a = rng.uniform_in(0.0, 2.0 * PI);
            let r = 2.0 + 0.15 * rng.normal();
            vec![r * a.cos(), r * a.sin()]
        })
        .collect();
    let samples = Tensor::from_rows(&rows, 2)?;

    let spec = FlowSpec::new(16, 2, 6);
    let cfg = TrainConfig::new(150, 256, 5e-3, 0.99, 0.0);
    let trained = train_flow(&samples, &spec, 0, &cfg, &mut rng)?;
    let h = &trained.loss_history;
    println!(
        "NLL: epoch 1 {:.3}, epoch {} {:.3}",
        h[0],
        h.len(),
        h[h.len() - 1]
    );

    let probes = Tensor::from_rows(
        &[
            vec![2.0, 0.0],
            vec![0.0, -2.0],
            vec![-1.41, 1.41],
            vec![0.0, 0.0],
            vec![3.5, 3.5],
        ],
        2,
    )?;
    // The flow lives in standardized coordinates; undo the scaling to get
    // the density of the data.
    let stats = trained.flow.stats();
    let jac: f64 = stats.std().iter().map(|s| s.ln()).sum();
    let logp = trained.flow.log_density(&stats.standardize(&probes)?)?;
    for (p, l) in probes.iter_rows().zip(&logp) {
        println!("log p({:>5.2}, {:>5.2}) = {:>8.3}", p[0], p[1], l - jac);
    }

    let draws = trained.flow.sample(2000, &mut rng)?;
    let radii: Vec<f64> = draws.iter_rows().map(|r| r[0].hypot(r[1])).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    let sd = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / radii.len() as f64).sqrt();
    println!("radius of flow samples: mean {mean:.3}, sd {sd:.3} (data: 2.0, 0.15)");
    Ok(())
}
