use rand::Rng;
use vis_autodiff::{Expr, Shape};

use crate::samplers::normal_draws;
use crate::vis::{Bound, ParamStore};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

/// Fully connected network with a linear output layer.
///
/// The first layer accepts several input blocks, each with its own weight
/// matrix, which is the same as concatenating them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub name: String,
    pub inputs: Vec<usize>,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(name: &str, inputs: Vec<usize>, hidden: Vec<usize>, output: usize) -> Self {
        Mlp { name: name.into(), inputs, hidden, output, activation: Activation::Tanh }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = self.hidden.clone();
        w.push(self.output);
        w
    }

    /// Adds `N(0, 1/fan_in)` weights and zero biases to `store`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let widths = self.widths();
        let fan_in: usize = self.inputs.iter().sum();
        for (i, &n_in) in self.inputs.iter().enumerate() {
            let sd = 1.0 / (fan_in as f64).sqrt();
            let w = normal_draws(rng, n_in * widths[0]).into_iter().map(|e| e * sd).collect();
            store.insert(&format!("{}.in{i}.w", self.name), w, Shape::matrix(n_in, widths[0]));
        }
        store.insert(&format!("{}.0.b", self.name), vec![0.0; widths[0]], Shape::vector(widths[0]));
        for l in 1..widths.len() {
            let (a, b) = (widths[l - 1], widths[l]);
            let sd = 1.0 / (a as f64).sqrt();
            let w = normal_draws(rng, a * b).into_iter().map(|e| e * sd).collect();
            store.insert(&format!("{}.{l}.w", self.name), w, Shape::matrix(a, b));
            store.insert(&format!("{}.{l}.b", self.name), vec![0.0; b], Shape::vector(b));
        }
    }

    fn act<'t>(&self, h: Expr<'t>) -> Expr<'t> {
        match self.activation {
            Activation::Tanh => h.tanh(),
            Activation::Softplus => h.softplus(),
        }
    }

    /// `[B, in_i]` blocks to `[B, output]`.
    pub fn forward<'t>(&self, params: &Bound<'t>, inputs: &[Expr<'t>]) -> Result<Expr<'t>> {
        assert_eq!(inputs.len(), self.inputs.len(), "input block count");
        let rows = inputs[0].shape().dims()[0];
        let mut h: Option<Expr<'t>> = None;
        for (i, x) in inputs.iter().enumerate() {
            let t = x.matmul(params.get(&format!("{}.in{i}.w", self.name))?);
            h = Some(match h {
                Some(acc) => acc + t,
                None => t,
            });
        }
        let mut h = h.expect("at least one input") + params.get(&format!("{}.0.b", self.name))?.expand(0, rows);
        for l in 1..=self.hidden.len() {
            h = self.act(h);
            let w = params.get(&format!("{}.{l}.w", self.name))?;
            let b = params.get(&format!("{}.{l}.b", self.name))?;
            h = h.matmul(w) + b.expand(0, rows);
        }
        Ok(h)
    }
}
