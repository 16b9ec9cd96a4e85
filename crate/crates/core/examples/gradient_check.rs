//! Compares reverse-mode gradients with central differences for a small
//! SiLU network under a mean-squared loss.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use invaert::autodiff::Tape;
use invaert::nn::{Activation, DenseNet, DenseNetSpec};
use invaert::rng::Rng;

fn main() -> invaert::Result<()> {
    let mut rng = Rng::new(1);
    let net = DenseNet::new(DenseNetSpec::new(3, 5, 2, Activation::Silu, 2), &mut rng)?;
    let x = rng.gaussian_matrix(4, 3);
    let target = rng.gaussian_matrix(4, 2);

    let loss = |params: &[invaert::tensor::Tensor]| -> invaert::Result<(f64, Vec<invaert::tensor::Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let input = tape.constant(x.clone());
        let t = tape.constant(target.clone());
        let out = net.forward_tape(&mut tape, &vars, input);
        let l = tape.mse_rows(out, t);
        let grads = tape.backward(l)?;
        let g = vars
            .iter()
            .zip(params)
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| invaert::tensor::Tensor::zeros(p.shape())))
            .collect();
        Ok((tape.value(l).data()[0], g))
    };

    let params: Vec<_> = net.params().into_iter().cloned().collect();
    let (value, analytic) = loss(&params)?;
    println!("loss = {value:.6}");

    let h = 1e-6;
    let mut work = params.clone();
    for (k, p) in params.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..p.numel() {
            let x0 = p.data()[i];
            work[k].data_mut()[i] = x0 + h;
            let up = loss(&work)?.0;
            work[k].data_mut()[i] = x0 - h;
            let down = loss(&work)?.0;
            work[k].data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            worst = worst.max((fd - a).abs() / a.abs().max(fd.abs()).max(1e-8));
        }
        let kind = if k % 2 == 0 { "weight" } else { "bias" };
        println!(
            "{kind:>6} {:>2} {:?}: worst relative error {worst:.2e}",
            k / 2,
            p.shape()
        );
    }
    Ok(())
}
