use rand::Rng;

use super::{Graph, ParamId, ParamStore, Real, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Applied after the last layer; `Identity` for a plain affine output.
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// Stack of affine layers registered in a [`ParamStore`] as `{prefix}.{k}.w` (in x out)
/// and `{prefix}.{k}.b` (1 x out).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: MlpSpec,
        rng: &mut R,
    ) -> Self {
        let widths = spec.widths();
        assert!(widths.iter().all(|&w| w > 0), "MLP widths must be positive: {widths:?}");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let wid = store.add_uniform(format!("{prefix}.{k}.w"), &[w[0], w[1]], w[0], rng);
                let bid = store.add_uniform(format!("{prefix}.{k}.b"), &[1, w[1]], w[0], rng);
                (wid, bid)
            })
            .collect();
        Mlp { spec, layers }
    }

    /// Re-binds an MLP to parameters already present in `store` under `prefix`.
    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, spec: MlpSpec) -> Result<Self> {
        let widths = spec.widths();
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            let lookup = |suffix: &str, shape: [usize; 2]| {
                let name = format!("{prefix}.{k}.{suffix}");
                let id = store
                    .get(&name)
                    .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
                if store.tensor(id).shape() != shape {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        store.tensor(id).shape()
                    )));
                }
                Ok(id)
            };
            layers.push((lookup("w", [w[0], w[1]])?, lookup("b", [1, w[1]])?));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let width = g.value(x).cols();
        if width != self.spec.input {
            return Err(Error::shape(
                "mlp",
                format!("input width {width}, expected {}", self.spec.input),
            ));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let z = g.matmul(h, wv)?;
            h = g.add(z, bv)?;
            let act = if k == last {
                self.spec.output_activation
            } else {
                self.spec.activation
            };
            h = act.apply(g, h);
        }
        Ok(h)
    }
}
