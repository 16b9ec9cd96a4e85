//! Three-element Windkessel: simulate one parameter set, then invert the
//! systolic/diastolic pressures and re-simulate the decoded parameters.
//!
//! ```text
//! cargo run --release --example rcr_windkessel
//! ```

use invaert::harness::pipeline::{self, InversionRequest};
use invaert::harness::ExperimentConfig;
use invaert::physics::rcr::BARYE_PER_MMHG;
use invaert::physics::{Experiment, System};

fn main() -> invaert::Result<()> {
    let cfg = ExperimentConfig::default_for(Experiment::Rcr);
    let System::Rcr(sys) = &cfg.physics else {
        unreachable!()
    };

    let sol = sys.solve(1000.0, 1000.0, 5e-5)?;
    println!(
        "R_p = R_d = 1000, C = 5e-5: P_max {:.2} mmHg, P_min {:.2} mmHg, mean {:.2} (P_d + Q̄·R = {:.2})",
        sol.p_max,
        sol.p_min,
        sol.mean_last_cycle(),
        sys.distal_pressure_mmhg + sys.inflow.mean() * 2000.0 / BARYE_PER_MMHG
    );

    let data = pipeline::generate(&cfg)?;
    let mut model = pipeline::train_all(&cfg, &data)?;
    let inv = pipeline::invert_stage(
        &mut model,
        Some(&data),
        &InversionRequest::from_config(&cfg),
        cfg.seed,
    )?;
    println!(
        "target drawn from the output flow: P_max {:.2}, P_min {:.2}",
        inv.y_star[0], inv.y_star[1]
    );
    println!(
        "{:>8} {:>8} {:>10} {:>8} {:>8}",
        "R_p", "R_d", "C", "P_max", "P_min"
    );
    for v in inv.v_hat.iter_rows().take(10) {
        let [hi, lo] = sys.extrema(v[0], v[1], v[2])?;
        println!(
            "{:>8.1} {:>8.1} {:>10.3e} {:>8.2} {:>8.2}",
            v[0], v[1], v[2], hi, lo
        );
    }
    Ok(())
}
