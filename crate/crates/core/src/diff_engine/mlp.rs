use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::Var;
use crate::{Error, Result, Vec3};

/// Layer widths of the radius network: direction in, radius out.
pub const DEFAULT_LAYERS: [usize; 4] = [3, 64, 64, 1];

/// Output bias at initialization; keeps initial radii positive.
pub const INIT_OUTPUT_BIAS: f64 = 0.3;

const FORWARD_CHUNK: usize = 4096;

/// Parameters of a ReLU multilayer perceptron `R^3 -> R`.
///
/// Stored flat: for every layer, the weight matrix (column-major,
/// `out x in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    pub fn zeros(layers: &[usize]) -> Result<Self> {
        if layers.len() < 2 || layers[0] != 3 || *layers.last().unwrap() != 1 || layers.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must run 3 -> ... -> 1, got {layers:?}"
            )));
        }
        Ok(Self {
            layers: layers.to_vec(),
            params: vec![0.0; param_count(layers)],
        })
    }

    /// Glorot-uniform weights, zero hidden biases, output bias
    /// [`INIT_OUTPUT_BIAS`].
    pub fn init(layers: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = mlp.spans();
        for s in &spans {
            let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for w in &mut mlp.params[s.w..s.w + s.rows * s.cols] {
                *w = rng.random_range(-limit..limit);
            }
        }
        let last = spans.last().unwrap();
        mlp.params[last.b] = INIT_OUTPUT_BIAS;
        Ok(mlp)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = param_count(&self.layers);
        if self.params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        Ok(())
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut off = 0;
        self.layers
            .windows(2)
            .map(|w| {
                let s = LayerSpan {
                    w: off,
                    b: off + w[0] * w[1],
                    rows: w[1],
                    cols: w[0],
                };
                off = s.b + s.rows;
                s
            })
            .collect()
    }

    fn weight(&self, s: &LayerSpan) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[s.w..s.w + s.rows * s.cols], s.rows, s.cols)
    }

    /// Single forward pass. Hidden layers use ReLU, the output is linear.
    pub fn forward(&self, input: &Vec3) -> Result<f64> {
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mlp input".into()));
        }
        Ok(self.forward_batch(std::slice::from_ref(input))[0])
    }

    fn activations(&self, inputs: &[Vec3]) -> Vec<DMatrix<f64>> {
        let spans = self.spans();
        let mut acts = Vec::with_capacity(spans.len() + 1);
        acts.push(DMatrix::from_fn(3, inputs.len(), |r, c| inputs[c][r]));
        for (li, s) in spans.iter().enumerate() {
            let mut z = self.weight(s) * acts.last().unwrap();
            let b = &self.params[s.b..s.b + s.rows];
            let hidden = li + 1 < spans.len();
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                    if hidden && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Forward pass over a batch of inputs.
    pub fn forward_batch(&self, inputs: &[Vec3]) -> Vec<f64> {
        // Chunked so hidden activations stay cache- and memory-friendly.
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(FORWARD_CHUNK) {
            let acts = self.activations(chunk);
            out.extend(acts.last().unwrap().iter().copied());
        }
        out
    }

    /// Reverse pass. Accumulates `sum_k upstream[k] * d out_k / d params`
    /// into `grad` and, when given, writes `upstream[k] * d out_k / d input_k`
    /// into `input_grad`. Returns the forward outputs.
    pub fn backward_batch(
        &self,
        inputs: &[Vec3],
        upstream: &[f64],
        grad: &mut [f64],
        mut input_grad: Option<&mut [Vec3]>,
    ) -> Vec<f64> {
        assert_eq!(inputs.len(), upstream.len());
        assert_eq!(grad.len(), self.params.len());
        if inputs.is_empty() {
            return Vec::new();
        }
        let acts = self.activations(inputs);
        let outputs: Vec<f64> = acts.last().unwrap().iter().copied().collect();
        let spans = self.spans();
        let mut delta = DMatrix::from_row_slice(1, upstream.len(), upstream);
        for li in (0..spans.len()).rev() {
            let s = &spans[li];
            let prev = &acts[li];
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[s.w..s.w + s.rows * s.cols], s.rows, s.cols);
                gw.gemm(1.0, &delta, &prev.transpose(), 1.0);
            }
            for (r, g) in grad[s.b..s.b + s.rows].iter_mut().enumerate() {
                *g += delta.row(r).sum();
            }
            if li > 0 {
                let mut next = self.weight(s).transpose() * &delta;
                next.zip_apply(prev, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = next;
            } else if let Some(out) = input_grad.as_deref_mut() {
                let dx = self.weight(s).transpose() * &delta;
                for (k, g) in out.iter_mut().enumerate() {
                    *g = Vec3::new(dx[(0, k)], dx[(1, k)], dx[(2, k)]);
                }
            }
        }
        outputs
    }

    /// Records the forward pass on a scalar tape. Slow; used as an
    /// independent reverse-mode route for checking the batched backward.
    pub fn forward_on_tape<'t>(&self, params: &[Var<'t>], input: [Var<'t>; 3]) -> Var<'t> {
        assert_eq!(params.len(), self.params.len());
        let spans = self.spans();
        let mut act: Vec<Var<'t>> = input.to_vec();
        for (li, s) in spans.iter().enumerate() {
            let hidden = li + 1 < spans.len();
            let mut next = Vec::with_capacity(s.rows);
            for r in 0..s.rows {
                let mut z = params[s.b + r];
                for (c, a) in act.iter().enumerate() {
                    z = z + params[s.w + c * s.rows + r] * *a;
                }
                next.push(if hidden { z.relu() } else { z });
            }
            act = next;
        }
        act[0]
    }
}
