//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the indices of its parents. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single sweep from the output back to the leaves.
//!
//! Operations never fail eagerly. Shape errors are programming errors and
//! panic; the first non-finite value is remembered and reported by
//! `backward` together with the name of the op that produced it.
//!
//! ```
//! use invaert::autodiff::Tape;
//! use invaert::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softplus(Var),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ClampMin(Var, f64),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    Sum(Var),
    SumCols(Var),
    MeanRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::Silu(..) => "silu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::ClampMin(..) => "clamp_min",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sum(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::MeanRows(..) => "mean_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the output (or is a constant).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(idx)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: gradients are computed for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a + r` with the `1 × m` row `r` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!(rv.numel(), av.cols(), "add_row width");
        let c = av.cols();
        let mut out = av.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += rv.data()[i % c];
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(out, Op::AddRow(a, r), ng)
    }

    /// `a ⊙ r` with the `1 × m` row `r` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!(rv.numel(), av.cols(), "mul_row width");
        let c = av.cols();
        let mut out = av.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= rv.data()[i % c];
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(out, Op::MulRow(a, r), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(value, Op::Silu(a), ng)
    }

    /// `log(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(value, Op::Softplus(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// `max(a, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let value = self.value(a).map(|x| x.max(lo));
        let ng = self.ng(a);
        self.push(value, Op::ClampMin(a, lo), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start, end), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).concat_cols(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::ConcatCols(a, b), ng)
    }

    /// Sum of all entries, as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Mean of all entries, as a `1 × 1` scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `n × m → n × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.iter_rows().map(|r| r.iter().sum()).collect();
        let value = Tensor::matrix(av.rows(), 1, data).expect("sized");
        let ng = self.ng(a);
        self.push(value, Op::SumCols(a), ng)
    }

    /// Column means: `n × m → 1 × m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        let ng = self.ng(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    /// Mean over rows of the squared row norm: `(1/n) Σᵢ ‖aᵢ − bᵢ‖²`.
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Var {
        let n = self.value(a).rows().max(1) as f64;
        let d = self.sub(a, b);
        let sq = self.square(d);
        let s = self.sum(sq);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from the scalar `output`.
    ///
    /// Fails when `output` is not a single value or when any recorded
    /// value is non-finite.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if let Some((node, op)) = self.first_non_finite {
            return Err(Error::NonFinite {
                op: op.to_string(),
                node: Some(node),
            });
        }
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // constant leaves never receive gradients
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(
                        false,
                        true,
                        m,
                        n,
                        k,
                        g.data(),
                        bv.data(),
                        da.data_mut(),
                        0.0,
                    );
                    acc(grads, a, da);
                }
                if self.ng(b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    gemm(
                        true,
                        false,
                        k,
                        m,
                        n,
                        av.data(),
                        g.data(),
                        db.data_mut(),
                        0.0,
                    );
                    acc(grads, b, db);
                }
            }
            Op::AddRow(a, r) => {
                acc(grads, a, g.clone());
                if self.ng(r) {
                    let mut dr = g.mean_rows();
                    let n = g.rows() as f64;
                    dr.data_mut().iter_mut().for_each(|x| *x *= n);
                    let dr = dr.reshape(self.value(r).shape()).expect("same numel");
                    acc(grads, r, dr);
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(a), self.value(r));
                let c = av.cols();
                if self.ng(a) {
                    let mut da = g.clone();
                    for (i, x) in da.data_mut().iter_mut().enumerate() {
                        *x *= rv.data()[i % c];
                    }
                    acc(grads, a, da);
                }
                if self.ng(r) {
                    let mut dr = vec![0.0; c];
                    for (i, (gx, ax)) in g.data().iter().zip(av.data()).enumerate() {
                        dr[i % c] += gx * ax;
                    }
                    acc(
                        grads,
                        r,
                        Tensor::new(rv.shape().to_vec(), dr).expect("sized"),
                    );
                }
            }
            Op::Add(a, b) => {
                acc(grads, a, g.clone());
                acc(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, a, g.clone());
                if self.ng(b) {
                    acc(grads, b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(a) {
                    acc(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.ng(b) {
                    acc(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => acc(grads, a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(grads, a, g.clone()),
            Op::Softplus(a) => acc(grads, a, g.zip_map(self.value(a), |gx, x| gx * sigmoid(x))),
            Op::Relu(a) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gx, x| if x > 0.0 { gx } else { 0.0 }),
            ),
            Op::Silu(a) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gx, x| {
                    let s = sigmoid(x);
                    gx * s * (1.0 + x * (1.0 - s))
                }),
            ),
            Op::Tanh(a) => acc(grads, a, g.zip_map(&node.value, |gx, y| gx * (1.0 - y * y))),
            Op::Exp(a) => acc(grads, a, g.zip_map(&node.value, |gx, y| gx * y)),
            Op::Log(a) => acc(grads, a, g.zip_map(self.value(a), |gx, x| gx / x)),
            Op::Square(a) => acc(grads, a, g.zip_map(self.value(a), |gx, x| 2.0 * gx * x)),
            Op::ClampMin(a, lo) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gx, x| if x > lo { gx } else { 0.0 }),
            ),
            Op::SliceCols(a, start, end) => {
                let av = self.value(a);
                let (r, c) = (av.rows(), av.cols());
                let w = end - start;
                let mut da = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    da.data_mut()[i * c + start..i * c + end]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(grads, a, da);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                if self.ng(a) {
                    acc(grads, a, g.slice_cols(0, ca));
                }
                if self.ng(b) {
                    acc(grads, b, g.slice_cols(ca, ca + cb));
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                acc(grads, a, Tensor::full(self.value(a).shape(), gv));
            }
            Op::SumCols(a) => {
                let av = self.value(a);
                let c = av.cols();
                let data = (0..av.numel()).map(|i| g.data()[i / c]).collect();
                acc(
                    grads,
                    a,
                    Tensor::new(av.shape().to_vec(), data).expect("sized"),
                );
            }
            Op::MeanRows(a) => {
                let av = self.value(a);
                let (r, c) = (av.rows(), av.cols());
                let inv = 1.0 / r.max(1) as f64;
                let data = (0..r * c).map(|i| g.data()[i % c] * inv).collect();
                acc(grads, a, Tensor::new(vec![r, c], data).expect("sized"));
            }
        }
    }
}

/// Gradient of a tape-built scalar function with respect to `params`.
///
/// `f` receives a fresh tape and one leaf per parameter and returns the
/// output node. Every call uses a new tape, so accumulators never leak
/// between calls.
pub fn grad<F>(f: F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference<F>(f: &F, params: &[Tensor], h: f64) -> Vec<Tensor>
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let eval = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
            let out = f(&mut t, &vs);
            t.value(out).data()[0]
        };
        let mut out = Vec::new();
        for (pi, p) in params.iter().enumerate() {
            let mut g = Tensor::zeros(p.shape());
            for k in 0..p.numel() {
                let mut plus = params.to_vec();
                plus[pi].data_mut()[k] += h;
                let mut minus = params.to_vec();
                minus[pi].data_mut()[k] -= h;
                g.data_mut()[k] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()).max(1e-3)))
            .fold(0.0, f64::max)
    }

    fn lcg_tensor(shape: &[usize], seed: &mut u64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                *seed = seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn square_at_three_is_six() {
        let g = grad(|t, p| t.square(p[0]), &[Tensor::scalar(3.0)]).unwrap();
        assert_eq!(g[0].data(), &[6.0]);
    }

    #[test]
    fn sum_gives_ones_for_any_shape() {
        let x = Tensor::new(vec![2, 3, 4], vec![0.5; 24]).unwrap();
        let g = grad(|t, p| t.sum(p[0]), &[x]).unwrap();
        assert_eq!(g[0].shape(), &[2, 3, 4]);
        assert!(g[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let r = grad(|t, p| t.square(p[0]), &[Tensor::zeros(&[2, 2])]);
        assert!(matches!(r, Err(Error::NotScalar(_))));
    }

    #[test]
    fn nan_in_forward_names_the_op() {
        let r = grad(
            |t, p| {
                let l = t.log(p[0]);
                t.sum(l)
            },
            &[Tensor::scalar(-1.0)],
        );
        match r {
            Err(Error::NonFinite { op, .. }) => assert_eq!(op, "log"),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn two_layer_silu_matches_finite_differences() {
        let mut seed = 17u64;
        let x = lcg_tensor(&[4, 3], &mut seed);
        let params = vec![
            lcg_tensor(&[3, 5], &mut seed),
            lcg_tensor(&[1, 5], &mut seed),
            lcg_tensor(&[5, 2], &mut seed),
            lcg_tensor(&[1, 2], &mut seed),
        ];
        let f = move |t: &mut Tape, p: &[Var]| {
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, p[0]);
            let h = t.add_row(h, p[1]);
            let h = t.silu(h);
            let o = t.matmul(h, p[2]);
            let o = t.add_row(o, p[3]);
            let o = t.square(o);
            t.sum(o)
        };
        let analytic = grad(f.clone(), &params).unwrap();
        let numeric = central_difference(&f, &params, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_err(a, n) < 1e-5, "rel err {}", rel_err(a, n));
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut seed = 5u64;
        let a = lcg_tensor(&[3, 4], &mut seed).map(|v| v + 1.5); // positive for log
        let b = lcg_tensor(&[3, 4], &mut seed);
        let r = lcg_tensor(&[1, 4], &mut seed);
        let f = |t: &mut Tape, p: &[Var]| {
            let (a, b, r) = (p[0], p[1], p[2]);
            let x1 = t.mul(a, b);
            let x2 = t.sub(x1, b);
            let x3 = t.mul_row(x2, r);
            let x4 = t.tanh(x3);
            let x5 = t.exp(x4);
            let x6 = t.log(a);
            let x7 = t.add(x5, x6);
            let x8 = t.relu(x7);
            let x9 = t.scale(x8, 0.7);
            let x10 = t.add_scalar(x9, -0.3);
            let x11 = t.clamp_min(x10, -0.1);
            let l = t.slice_cols(x11, 1, 3);
            let rr = t.slice_cols(x2, 0, 2);
            let c = t.concat_cols(l, rr);
            let s = t.sum_cols(c);
            let m = t.mean_rows(x4);
            let sp = t.softplus(m);
            let mm = t.sum(sp);
            let ss = t.square(s);
            let tot = t.sum(ss);
            t.add(tot, mm)
        };
        let params = vec![a, b, r];
        let analytic = grad(f, &params).unwrap();
        let numeric = central_difference(&f, &params, 1e-6);
        for (an, nu) in analytic.iter().zip(&numeric) {
            assert!(rel_err(an, nu) < 1e-5, "rel err {}", rel_err(an, nu));
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let p = t.param(Tensor::scalar(3.0));
        let y = t.mul(c, p);
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[2.0]);
    }

    #[test]
    fn silu_identities() {
        assert_eq!(0.0 * sigmoid(0.0), 0.0);
        for &x in &[-3.0, -0.5, 0.0, 0.25, 4.0] {
            let mut t = Tape::new();
            let v = t.constant(Tensor::scalar(x));
            let s = t.silu(v);
            assert!((t.value(s).data()[0] - x * sigmoid(x)).abs() < 1e-15);
            let r1 = t.relu(v);
            let r2 = t.relu(r1);
            assert_eq!(t.value(r1), t.value(r2));
        }
    }
}
