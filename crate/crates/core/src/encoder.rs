//! Multi-context gating encoder.
//!
//! Each block gates per-region embeddings by a transform of a single pooled
//! context vector, so every region sees the whole scene at linear cost.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Graph, Mlp, MlpSpec, ParamStore, Real, Tensor, Var};
use crate::vectorize::{col, FEATURE_WIDTH};

/// Per-column multipliers applied to raw feature rows before the input projection.
pub fn feature_scale() -> [f64; FEATURE_WIDTH] {
    let mut s = [1.0; FEATURE_WIDTH];
    for c in col::START..col::LANE_TYPE {
        s[c] = 1.0 / 20.0;
    }
    s[col::POS] = 1.0 / 5.0;
    s[col::POS + 1] = 1.0 / 5.0;
    s[col::SPEED] = 1.0 / 10.0;
    s[col::SIZE] = 1.0 / 5.0;
    s[col::SIZE + 1] = 1.0 / 2.0;
    s
}

/// Scaled features saturate at this magnitude.
pub const FEATURE_LIMIT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub width: usize,
    pub blocks: usize,
    /// Hidden widths of the element and context MLPs inside each block.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McgBlock {
    pub element: Mlp,
    pub context: Mlp,
}

impl McgBlock {
    /// `v' = element(v) * context(c) + v`, `c' = max over rows of v'`.
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, v: Var, c: Var) -> Result<(Var, Var)> {
        let s = self.element.apply(g, store, v)?;
        let gate = self.context.apply(g, store, c)?;
        let gated = g.mul(s, gate)?;
        let v_next = g.add(gated, v)?;
        let c_next = g.max_pool(v_next)?;
        Ok((v_next, c_next))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input: Mlp,
    pub blocks: Vec<McgBlock>,
}

impl Encoder {
    fn specs(cfg: &EncoderConfig) -> (MlpSpec, MlpSpec) {
        let d = cfg.width;
        let input = MlpSpec::new(FEATURE_WIDTH, &[d], d);
        let block = MlpSpec::new(d, &cfg.hidden, d).with_activation(Activation::Relu);
        (input, block)
    }

    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: EncoderConfig, rng: &mut R) -> Self {
        assert!(cfg.blocks >= 1, "encoder needs at least one block");
        let (input_spec, block_spec) = Self::specs(&cfg);
        let input = Mlp::new(store, &format!("{prefix}.input"), input_spec, rng);
        let blocks = (0..cfg.blocks)
            .map(|b| McgBlock {
                element: Mlp::new(store, &format!("{prefix}.block{b}.element"), block_spec.clone(), rng),
                context: Mlp::new(store, &format!("{prefix}.block{b}.context"), block_spec.clone(), rng),
            })
            .collect();
        Encoder { config: cfg, input, blocks }
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        let (input_spec, block_spec) = Self::specs(&cfg);
        let input = Mlp::bind(store, &format!("{prefix}.input"), input_spec)?;
        let blocks = (0..cfg.blocks)
            .map(|b| {
                Ok(McgBlock {
                    element: Mlp::bind(store, &format!("{prefix}.block{b}.element"), block_spec.clone())?,
                    context: Mlp::bind(store, &format!("{prefix}.block{b}.context"), block_spec.clone())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { config: cfg, input, blocks })
    }

    /// Encodes raw `I x 19` feature rows into region embeddings `I x D` and a `1 x D` context.
    /// Rows are scaled by [`feature_scale`] and clipped to `±FEATURE_LIMIT`.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<(Var, Var)> {
        let m = g.value(features);
        if m.cols() != FEATURE_WIDTH || m.rows() == 0 {
            return Err(Error::shape(
                "encode",
                format!("expected I x {FEATURE_WIDTH} with I >= 1, got {:?}", m.shape()),
            ));
        }
        let scale = g.input(Tensor::from_f64(&[1, FEATURE_WIDTH], &feature_scale()));
        let x = g.mul(features, scale)?;
        let x = g.clamp(x, -FEATURE_LIMIT, FEATURE_LIMIT);
        let mut v = self.input.apply(g, store, x)?;
        let mut c = g.input(Tensor::ones(&[1, self.config.width]));
        for block in &self.blocks {
            (v, c) = block.apply(g, store, v, c)?;
        }
        Ok((v, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f32>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = Encoder::new(
            &mut store,
            "enc",
            EncoderConfig {
                width: 8,
                blocks: 5,
                hidden: vec![],
            },
            &mut rng,
        );
        (store, enc)
    }

    #[test]
    fn single_region_context_is_its_embedding() {
        let (store, enc) = setup();
        let mut g = Graph::new();
        let m = g.input(Tensor::from_f64(&[1, FEATURE_WIDTH], &[0.3; FEATURE_WIDTH]));
        let (v, c) = enc.encode(&mut g, &store, m).unwrap();
        assert_eq!(g.value(v).shape(), &[1, 8]);
        assert_eq!(g.value(c).shape(), &[1, 8]);
        assert_eq!(g.value(v).data(), g.value(c).data());
    }

    #[test]
    fn zero_gate_passes_residual() {
        let (mut store, enc) = setup();
        let block = &enc.blocks[0];
        for id in block.context.params().collect::<Vec<_>>() {
            store.tensor_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let v = g.input(Tensor::from_f64(&[2, 8], &(0..16).map(|x| x as f64).collect::<Vec<_>>()));
        let c = g.input(Tensor::ones(&[1, 8]));
        let (v2, _) = block.apply(&mut g, &store, v, c).unwrap();
        assert_eq!(g.value(v2).data(), g.value(v).data());
    }

    #[test]
    fn duplicated_rows_match() {
        let (store, enc) = setup();
        let row: Vec<f64> = (0..FEATURE_WIDTH).map(|i| i as f64 * 0.1).collect();
        let other: Vec<f64> = (0..FEATURE_WIDTH).map(|i| 1.0 - i as f64 * 0.05).collect();
        let data = [row.clone(), other, row].concat();
        let mut g = Graph::new();
        let m = g.input(Tensor::from_f64(&[3, FEATURE_WIDTH], &data));
        let (v, _) = enc.encode(&mut g, &store, m).unwrap();
        assert_eq!(g.value(v).row_slice(0), g.value(v).row_slice(2));
    }

    #[test]
    fn empty_input_rejected() {
        let (store, enc) = setup();
        let mut g = Graph::new();
        let m = g.input(Tensor::zeros(&[0, FEATURE_WIDTH]));
        assert!(enc.encode(&mut g, &store, m).is_err());
    }
}
