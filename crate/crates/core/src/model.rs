//! Encoder, cross-instance attention and the two projection heads.
//!
//! The forward pipeline maps a batch of `2N` raw vectors to
//! `Z` (`2N x M`, feature space) and `P` (`2N x K`, row-stochastic cluster
//! assignments):
//!
//! ```text
//! x -> [affine -> act]* -> hidden -> hidden + Attn(hidden) -> refined
//! refined -> affine -> act -> affine                  -> Z
//! refined -> affine -> row softmax                    -> P
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, ParamSet, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Softplus => g.softplus(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Feature dimension `M`.
    pub feature_dim: usize,
    /// Number of clusters `K`.
    pub cluster_count: usize,
    pub attention_enabled: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, cluster_count: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![32],
            feature_dim: 16,
            cluster_count,
            attention_enabled: true,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden_dims must be nonempty and positive".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig("feature_dim must be at least 2".into()));
        }
        if self.cluster_count < 2 {
            return Err(Error::InvalidConfig("cluster_count must be at least 2".into()));
        }
        Ok(())
    }

    fn width(&self) -> usize {
        *self.hidden_dims.last().expect("validated nonempty")
    }
}

/// Nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub hidden: Var,
    pub refined: Var,
    pub z: Var,
    pub p: Var,
}

#[derive(Clone, Debug)]
struct Layout {
    hidden: Vec<(usize, usize)>,
    attention: Option<[usize; 3]>,
    feature: [(usize, usize); 2],
    cluster: (usize, usize),
}

/// MLP encoder with optional attention and the feature/cluster heads.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamSet,
    layout: Layout,
}

fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

impl Encoder {
    /// Fresh parameters drawn uniformly in `±1/sqrt(fan_in)`; biases start at zero.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        let mut hidden = Vec::new();
        let mut fan_in = config.input_dim;
        for (l, &width) in config.hidden_dims.iter().enumerate() {
            let w = params.push(format!("encoder.{l}.weight"), uniform_init(&mut rng, fan_in, width));
            let b = params.push(format!("encoder.{l}.bias"), Matrix::zeros(1, width));
            hidden.push((w, b));
            fan_in = width;
        }
        let d = config.width();

        let attention = config.attention_enabled.then(|| {
            [
                params.push("attention.query", uniform_init(&mut rng, d, d)),
                params.push("attention.key", uniform_init(&mut rng, d, d)),
                params.push("attention.value", uniform_init(&mut rng, d, d)),
            ]
        });

        let f0w = params.push("feature.0.weight", uniform_init(&mut rng, d, d));
        let f0b = params.push("feature.0.bias", Matrix::zeros(1, d));
        let f1w = params.push("feature.1.weight", uniform_init(&mut rng, d, config.feature_dim));
        let f1b = params.push("feature.1.bias", Matrix::zeros(1, config.feature_dim));
        let cw = params.push("cluster.weight", uniform_init(&mut rng, d, config.cluster_count));
        let cb = params.push("cluster.bias", Matrix::zeros(1, config.cluster_count));

        Ok(Self {
            config,
            params,
            layout: Layout {
                hidden,
                attention,
                feature: [(f0w, f0b), (f1w, f1b)],
                cluster: (cw, cb),
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encode",
                expected: format!("{} input columns", self.config.input_dim),
                got: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    /// MLP forward: affine followed by the activation, once per hidden layer.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], input: Var) -> Result<Var> {
        self.check_input(g.value(input))?;
        let mut h = input;
        for &(w, b) in &self.layout.hidden {
            let a = g.matmul(h, vars[w])?;
            let a = g.add_bias(a, vars[b])?;
            h = self.config.activation.apply(g, a)?;
        }
        Ok(h)
    }

    /// Single-head scaled dot-product attention across the rows of the
    /// batch with a residual connection. Identity when attention is disabled.
    pub fn cross_instance_attention(&self, g: &mut Graph, vars: &[Var], hidden: Var) -> Result<Var> {
        let Some([q, k, v]) = self.layout.attention else {
            return Ok(hidden);
        };
        let rows = g.value(hidden).rows();
        if rows < 2 {
            return Err(Error::DimensionMismatch {
                context: "cross_instance_attention",
                expected: "at least 2 rows".into(),
                got: format!("{rows} rows"),
            });
        }
        let scale = 1.0 / (self.config.width() as f64).sqrt();
        let queries = g.matmul(hidden, vars[q])?;
        let keys = g.matmul(hidden, vars[k])?;
        let values = g.matmul(hidden, vars[v])?;
        let logits = g.matmul_nt(queries, keys)?;
        let logits = g.scale(logits, scale)?;
        let weights = g.row_softmax(logits)?;
        let attended = g.matmul(weights, values)?;
        g.add(hidden, attended)
    }

    /// Affine, activation, affine. Rows are left unnormalized.
    pub fn project_feature(&self, g: &mut Graph, vars: &[Var], refined: Var) -> Result<Var> {
        let [(w0, b0), (w1, b1)] = self.layout.feature;
        let h = g.matmul(refined, vars[w0])?;
        let h = g.add_bias(h, vars[b0])?;
        let h = self.config.activation.apply(g, h)?;
        let z = g.matmul(h, vars[w1])?;
        g.add_bias(z, vars[b1])
    }

    /// Affine followed by a row softmax; every output row sums to one.
    pub fn project_cluster(&self, g: &mut Graph, vars: &[Var], refined: Var) -> Result<Var> {
        let (w, b) = self.layout.cluster;
        let logits = g.matmul(refined, vars[w])?;
        let logits = g.add_bias(logits, vars[b])?;
        g.row_softmax(logits)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], input: Var) -> Result<ForwardVars> {
        let hidden = self.encode(g, vars, input)?;
        let refined = self.cross_instance_attention(g, vars, hidden)?;
        let z = self.project_feature(g, vars, refined)?;
        let p = self.project_cluster(g, vars, refined)?;
        Ok(ForwardVars { hidden, refined, z, p })
    }

    /// Forward pass on plain matrices, returning `(Z, P)`.
    pub fn forward_matrix(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let input = g.leaf(x.clone());
        let out = self.forward(&mut g, &vars, input)?;
        Ok((g.value(out.z).clone(), g.value(out.p).clone()))
    }

    /// Hard assignments for a whole dataset, evaluated in chunks of `chunk`
    /// rows (attention only sees rows of the same chunk).
    pub fn assign(&self, x: &Matrix, chunk: usize) -> Result<(Vec<usize>, Matrix)> {
        let mut labels = Vec::with_capacity(x.rows());
        let mut features: Option<Matrix> = None;
        let chunk = chunk.max(2);
        let mut start = 0;
        while start < x.rows() {
            let mut end = (start + chunk).min(x.rows());
            // attention needs two rows; fold a trailing singleton into the previous chunk
            if x.rows() - end == 1 {
                end = x.rows();
            }
            let part = x.slice_rows(start, end);
            let (z, p) = if part.rows() == 1 && self.config.attention_enabled {
                let doubled = part.vstack(&part)?;
                let (z, p) = self.forward_matrix(&doubled)?;
                (z.slice_rows(0, 1), p.slice_rows(0, 1))
            } else {
                self.forward_matrix(&part)?
            };
            labels.extend(p.row_argmax());
            features = Some(match features {
                None => z,
                Some(f) => f.vstack(&z)?,
            });
            start = end;
        }
        Ok((
            labels,
            features.unwrap_or_else(|| Matrix::zeros(0, self.config.feature_dim)),
        ))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: Checkpoint::VERSION,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != Checkpoint::VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {} (expected {})",
                ckpt.version,
                Checkpoint::VERSION
            )));
        }
        let mut enc = Encoder::new(ckpt.config.clone(), 0)?;
        if ckpt.params.len() != enc.params.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} arrays, model expects {}",
                ckpt.params.len(),
                enc.params.len()
            )));
        }
        for arr in &ckpt.params {
            let m = Matrix::from_vec(arr.rows, arr.cols, arr.data.clone())?;
            enc.params.set(&arr.name, m)?;
        }
        Ok(enc)
    }
}

/// A flat named array inside a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Versioned JSON container for encoder parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: EncoderConfig,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn run<F: FnOnce(&Encoder, &mut Graph, &[Var], Var) -> Result<Var>>(enc: &Encoder, x: &Matrix, f: F) -> Matrix {
        let mut g = Graph::new();
        let vars = enc.params().bind(&mut g);
        let input = g.leaf(x.clone());
        let out = f(enc, &mut g, &vars, input).unwrap();
        g.value(out).clone()
    }

    // Scalar reference implementations, written independently of Graph.
    fn ref_affine(x: &Matrix, w: &Matrix, b: &Matrix, act: Activation) -> Matrix {
        Matrix::from_fn(x.rows(), w.cols(), |i, j| {
            let mut s = b[(0, j)];
            for k in 0..x.cols() {
                s += x[(i, k)] * w[(k, j)];
            }
            act.eval(s)
        })
    }

    fn ref_softmax_rows(m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            let total: f64 = (0..m.cols()).map(|k| m[(i, k)].exp()).sum();
            m[(i, j)].exp() / total
        })
    }

    fn ref_attention(h: &Matrix, q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let d = h.cols();
        let zero = Matrix::zeros(1, d);
        let qs = ref_affine(h, q, &zero, Activation::Identity);
        let ks = ref_affine(h, k, &zero, Activation::Identity);
        let vs = ref_affine(h, v, &zero, Activation::Identity);
        let n = h.rows();
        let logits = Matrix::from_fn(n, n, |i, j| {
            (0..d).map(|c| qs[(i, c)] * ks[(j, c)]).sum::<f64>() / (d as f64).sqrt()
        });
        let a = ref_softmax_rows(&logits);
        Matrix::from_fn(n, d, |i, c| {
            h[(i, c)] + (0..n).map(|j| a[(i, j)] * vs[(j, c)]).sum::<f64>()
        })
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn small_config(attention: bool) -> EncoderConfig {
        EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![5, 4],
            feature_dim: 3,
            cluster_count: 2,
            attention_enabled: attention,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_weights_give_activation_of_zero() {
        let mut enc = Encoder::new(small_config(false), 1).unwrap();
        for name in ["encoder.0.weight", "encoder.1.weight"] {
            let shape = enc.params().value(name).unwrap().shape();
            enc.params_mut().set(name, Matrix::zeros(shape.0, shape.1)).unwrap();
        }
        let x = random_matrix(4, 3, 2);
        let h = run(&enc, &x, |e, g, v, i| e.encode(g, v, i));
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let cfg = EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![3],
            feature_dim: 3,
            cluster_count: 2,
            attention_enabled: false,
            activation: Activation::Identity,
        };
        let mut enc = Encoder::new(cfg, 0).unwrap();
        for name in ["encoder.0.weight", "feature.0.weight", "feature.1.weight"] {
            enc.params_mut().set(name, Matrix::identity(3)).unwrap();
        }
        let x = random_matrix(4, 3, 3);
        let h = run(&enc, &x, |e, g, v, i| e.encode(g, v, i));
        assert!(max_abs_diff(&h, &x) == 0.0);
        let z = run(&enc, &x, |e, g, v, i| e.project_feature(g, v, i));
        assert!(max_abs_diff(&z, &x) == 0.0);
    }

    #[test]
    fn encode_matches_scalar_reference() {
        let enc = Encoder::new(small_config(false), 11).unwrap();
        let x = random_matrix(6, 3, 12);
        let got = run(&enc, &x, |e, g, v, i| e.encode(g, v, i));
        let p = enc.params();
        let h = ref_affine(
            &x,
            p.value("encoder.0.weight").unwrap(),
            p.value("encoder.0.bias").unwrap(),
            Activation::Relu,
        );
        let h = ref_affine(
            &h,
            p.value("encoder.1.weight").unwrap(),
            p.value("encoder.1.bias").unwrap(),
            Activation::Relu,
        );
        assert!(max_abs_diff(&got, &h) < 1e-10);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let enc = Encoder::new(small_config(false), 0).unwrap();
        assert!(enc.forward_matrix(&Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn zero_value_map_leaves_input() {
        let mut enc = Encoder::new(small_config(true), 5).unwrap();
        enc.params_mut().set("attention.value", Matrix::zeros(4, 4)).unwrap();
        let h = random_matrix(4, 4, 6);
        let out = run(&enc, &h, |e, g, v, i| e.cross_instance_attention(g, v, i));
        assert_eq!(out, h);
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let enc = Encoder::new(small_config(true), 5).unwrap();
        let row = [0.3, -1.2, 0.7, 2.0];
        let h = Matrix::from_rows(&[row; 3]).unwrap();
        let out = run(&enc, &h, |e, g, v, i| e.cross_instance_attention(g, v, i));
        let v = enc.params().value("attention.value").unwrap();
        for i in 0..3 {
            for c in 0..4 {
                let vrow: f64 = (0..4).map(|k| row[k] * v[(k, c)]).sum();
                assert!((out[(i, c)] - (row[c] + vrow)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_scalar_reference() {
        let enc = Encoder::new(small_config(true), 21).unwrap();
        let h = random_matrix(4, 4, 22);
        let got = run(&enc, &h, |e, g, v, i| e.cross_instance_attention(g, v, i));
        let p = enc.params();
        let want = ref_attention(
            &h,
            p.value("attention.query").unwrap(),
            p.value("attention.key").unwrap(),
            p.value("attention.value").unwrap(),
        );
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }

    #[test]
    fn feature_head_zero_and_reference() {
        let mut enc = Encoder::new(small_config(false), 31).unwrap();
        let h = random_matrix(5, 4, 32);
        let got = run(&enc, &h, |e, g, v, i| e.project_feature(g, v, i));
        let p = enc.params();
        let want = ref_affine(
            &ref_affine(
                &h,
                p.value("feature.0.weight").unwrap(),
                p.value("feature.0.bias").unwrap(),
                Activation::Relu,
            ),
            p.value("feature.1.weight").unwrap(),
            p.value("feature.1.bias").unwrap(),
            Activation::Identity,
        );
        assert!(max_abs_diff(&got, &want) < 1e-10);

        enc.params_mut().set("feature.1.weight", Matrix::zeros(4, 3)).unwrap();
        let z = run(&enc, &h, |e, g, v, i| e.project_feature(g, v, i));
        assert!(z.data().iter().all(|&v| v == 0.0));
        let mut g = Graph::new();
        let zv = g.leaf(z);
        assert!(matches!(g.row_normalize(zv), Err(Error::DegenerateVector { .. })));
    }

    #[test]
    fn cluster_head_cases() {
        let mut enc = Encoder::new(small_config(false), 41).unwrap();
        let h = random_matrix(5, 4, 42);
        let got = run(&enc, &h, |e, g, v, i| e.project_cluster(g, v, i));
        let p = enc.params();
        let want = ref_softmax_rows(&ref_affine(
            &h,
            p.value("cluster.weight").unwrap(),
            p.value("cluster.bias").unwrap(),
            Activation::Identity,
        ));
        assert!(max_abs_diff(&got, &want) < 1e-10);

        enc.params_mut().set("cluster.weight", Matrix::zeros(4, 2)).unwrap();
        let uniform = run(&enc, &h, |e, g, v, i| e.project_cluster(g, v, i));
        assert!(uniform.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        enc.params_mut()
            .set("cluster.bias", Matrix::from_rows(&[[500.0, 0.0]]).unwrap())
            .unwrap();
        let saturated = run(&enc, &h, |e, g, v, i| e.project_cluster(g, v, i));
        for r in saturated.iter_rows() {
            assert!(r[0] > 1.0 - 1e-12 && r[1] < 1e-12);
        }
    }

    #[test]
    fn disabled_attention_is_plain_mlp() {
        let with = Encoder::new(small_config(true), 7).unwrap();
        let mut without = Encoder::new(small_config(false), 7).unwrap();
        // copy shared parameters so only the attention block differs
        for p in with.params().iter() {
            if without.params().index_of(&p.name).is_some() {
                without.params_mut().set(&p.name, p.value.clone()).unwrap();
            }
        }
        let mut zeroed = with.clone();
        zeroed.params_mut().set("attention.value", Matrix::zeros(4, 4)).unwrap();
        let x = random_matrix(6, 3, 8);
        assert_eq!(zeroed.forward_matrix(&x).unwrap(), without.forward_matrix(&x).unwrap());
    }

    #[test]
    fn forward_is_deterministic_and_simplex() {
        let enc = Encoder::new(small_config(true), 9).unwrap();
        let x = random_matrix(8, 3, 10);
        let (z1, p1) = enc.forward_matrix(&x).unwrap();
        let (z2, p2) = enc.forward_matrix(&x).unwrap();
        assert_eq!((z1, &p1), (z2, &p2));
        for r in p1.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let enc = Encoder::new(small_config(true), 13).unwrap();
        let json = enc.to_checkpoint().to_json().unwrap();
        let back = Encoder::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
        for (a, b) in enc.params().iter().zip(back.params().iter()) {
            let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let mut bad = enc.to_checkpoint();
        bad.version = 99;
        assert!(Encoder::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn assign_covers_every_row() {
        let enc = Encoder::new(small_config(true), 3).unwrap();
        let x = random_matrix(11, 3, 4);
        let (labels, z) = enc.assign(&x, 4).unwrap();
        assert_eq!(labels.len(), 11);
        assert_eq!(z.rows(), 11);
    }
}
