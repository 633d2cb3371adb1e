//! Forward inference of the scheduling and RIS graph networks.
//!
//! One node stands for the RIS and one for each user. Every per-node function is a
//! two-layer ReLU perceptron shared across users and rounds:
//!
//! ```text
//! v_k   = g_w(pi_k)
//! v_0   = g_theta(mean_k v_k)
//! v_0'  = f1([f2(v_0); mean_k f3(v_k)])
//! v_k'  = f4([v_k; f2(v_0); max_{j != k} f5(v_j)])
//! out_0 = l_2n(v_0),  out_k = l_2m(v_k)
//! ```
//!
//! Weights are stored as `f32` and evaluated in `f64`.

mod format;
mod forward;

pub use format::{read_model, write_model, FORMAT_VERSION};
pub use forward::{build_features, decode_outputs, gnn_forward, raw_features, GnnOutput, NodeFeatures};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RVec = DVector<f64>;
pub type RMat = DMatrix<f64>;

/// Widths of the hidden representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Node embedding width.
    pub hidden: usize,
    /// Inner width of `g_w` and `g_theta`.
    pub embed_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "N")]
    pub elements: usize,
    /// Pilot sub-frames per node feature.
    #[serde(rename = "D")]
    pub depth: usize,
    /// Message-passing rounds.
    #[serde(rename = "Z")]
    pub rounds: usize,
    pub widths: Widths,
}

impl Arch {
    pub fn feature_len(&self) -> usize {
        1 + 2 * self.antennas * self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas < 1 || self.elements < 1 || self.depth < 1 {
            return Err(Error::ModelFormat("M, N and D must be >= 1".into()));
        }
        if self.rounds < 1 {
            return Err(Error::ModelFormat("Z must be >= 1".into()));
        }
        if self.widths.hidden < 1 || self.widths.embed_hidden < 1 {
            return Err(Error::ModelFormat("widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(name, [out, in])` of every dense layer in storage order.
    pub fn layer_shapes(&self) -> Vec<(String, [usize; 2])> {
        let (h, e) = (self.widths.hidden, self.widths.embed_hidden);
        let mut out = vec![
            ("g_w.0".to_string(), [e, self.feature_len()]),
            ("g_w.1".to_string(), [h, e]),
            ("g_theta.0".to_string(), [e, h]),
            ("g_theta.1".to_string(), [h, e]),
        ];
        for (f, fan_in) in [("f1", 2 * h), ("f2", h), ("f3", h), ("f4", 3 * h), ("f5", h)] {
            out.push((format!("{f}.0"), [h, fan_in]));
            out.push((format!("{f}.1"), [h, h]));
        }
        out.push(("l_2n".to_string(), [2 * self.elements, h]));
        out.push(("l_2m".to_string(), [2 * self.antennas, h]));
        out
    }

    /// `(tensor name, shape)` in storage order: each layer's weight, then its bias.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layer_shapes()
            .into_iter()
            .flat_map(|(name, [o, i])| {
                [
                    (format!("{name}.weight"), vec![o, i]),
                    (format!("{name}.bias"), vec![o]),
                ]
            })
            .collect()
    }
}

/// Per-coordinate standardization `(x - mean) / scale` of node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            scale: vec![1.0; len],
        }
    }

    /// Coordinate-wise mean and standard deviation; constant coordinates get scale 1.
    pub fn fit(samples: &[RVec]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("feature samples"))?;
        let len = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; len];
        for s in samples {
            if s.len() != len {
                return Err(Error::arg("feature samples of different lengths"));
            }
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; len];
        for s in samples {
            for ((sc, v), m) in scale.iter_mut().zip(s.iter()).zip(&mean) {
                *sc += (v - m).powi(2) / n;
            }
        }
        for sc in &mut scale {
            *sc = if *sc > 0.0 { sc.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.mean.len() != len || self.scale.len() != len {
            return Err(Error::ModelFormat(format!(
                "normalization constants have lengths {}/{}, features have {len}",
                self.mean.len(),
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s != 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::ModelFormat(
                "normalization constants must be finite with non-zero scale".into(),
            ));
        }
        Ok(())
    }
}

/// Raw tensor as stored in the weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: RMat,
    b: RVec,
}

impl Dense {
    fn apply(&self, x: &RVec) -> RVec {
        &self.w * x + &self.b
    }
}

/// Two dense layers, ReLU after each.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: [Dense; 2],
}

impl Mlp {
    fn apply(&self, x: &RVec) -> RVec {
        let relu = |v: RVec| v.map(|z| z.max(0.0));
        relu(self.layers[1].apply(&relu(self.layers[0].apply(x))))
    }
}

/// Architecture, normalization constants and weights of one graph network.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    arch: Arch,
    norm: FeatureNorm,
    tensors: Vec<Tensor>,
    g_w: Mlp,
    g_theta: Mlp,
    f: [Mlp; 5],
    l_2n: Dense,
    l_2m: Dense,
}

impl GnnModel {
    /// Checks every tensor against the architecture and builds the evaluator.
    pub fn from_tensors(arch: Arch, norm: FeatureNorm, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        norm.validate(arch.feature_len())?;
        let expected = arch.tensor_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if &t.name != name || &t.shape != shape {
                return Err(Error::ModelFormat(format!(
                    "expected tensor {name} {shape:?}, found {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ModelFormat(format!("tensor {name} has {} values", t.data.len())));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::ModelFormat(format!("tensor {name} holds non-finite values")));
            }
        }
        let mut dense = tensors.chunks(2).map(|pair| {
            let (w, b) = (&pair[0], &pair[1]);
            Dense {
                w: RMat::from_row_iterator(w.shape[0], w.shape[1], w.data.iter().map(|&v| f64::from(v))),
                b: RVec::from_iterator(b.shape[0], b.data.iter().map(|&v| f64::from(v))),
            }
        });
        let mut mlp = || Mlp {
            layers: [dense.next().unwrap(), dense.next().unwrap()],
        };
        let g_w = mlp();
        let g_theta = mlp();
        let f = [mlp(), mlp(), mlp(), mlp(), mlp()];
        let l_2n = dense.next().unwrap();
        let l_2m = dense.next().unwrap();
        Ok(Self {
            arch,
            norm,
            tensors,
            g_w,
            g_theta,
            f,
            l_2n,
            l_2m,
        })
    }

    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn random<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..limit) as f32).collect()
                } else {
                    vec![0.0; n]
                };
                Tensor { name, shape, data }
            })
            .collect();
        Self::from_tensors(arch, FeatureNorm::identity(arch.feature_len()), tensors)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.norm
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Same weights with different normalization constants.
    pub fn with_norm(self, norm: FeatureNorm) -> Result<Self> {
        Self::from_tensors(self.arch, norm, self.tensors)
    }

    /// Trainable scalar count; independent of the number of users.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}
