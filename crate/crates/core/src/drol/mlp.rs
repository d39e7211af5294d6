//! Fully connected policy network with leaky-rectifier hidden layers and a
//! logistic output, trained with binary cross-entropy and ADAM.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside the loss.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }

    fn slices(&self) -> [&[f64]; 2] {
        [self.w.as_slice(), self.b.as_slice()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub slope: f64,
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<Layer>;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Weights and biases drawn from `U(±1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], slope: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(IsacError::InvalidArgument(format!("layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(p[1], p[0], |_, _| rng.random_range(-bound..bound)),
                    b: DVector::from_fn(p[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self { layers, slope })
    }

    pub fn zeros(sizes: &[usize], slope: f64) -> Self {
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                w: DMatrix::zeros(p[1], p[0]),
                b: DVector::zeros(p[1]),
            })
            .collect();
        Self { layers, slope }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.slope * z
        }
    }

    /// Pre-activations of every layer.
    pub fn forward_pre(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if x.len() != self.input_dim() {
            return Err(IsacError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = &l.w * &a + &l.b;
            if i + 1 < self.layers.len() {
                a = z.map(|v| self.leaky(v));
            }
            pre.push(z);
        }
        Ok(pre)
    }

    /// Signs of every hidden pre-activation, the piecewise-linear region of
    /// the network at `x`.
    pub fn activation_pattern(&self, x: &DVector<f64>) -> Result<Vec<bool>> {
        let pre = self.forward_pre(x)?;
        Ok(pre[..pre.len() - 1]
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .collect())
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let pre = self.forward_pre(x)?;
        Ok(pre.last().expect("at least one layer").map(sigmoid))
    }

    /// Product of layer spectral norms times the logistic slope bound 1/4.
    pub fn lipschitz_bound(&self) -> f64 {
        let act = self.slope.abs().max(1.0);
        let hidden = self.layers.len().saturating_sub(1) as i32;
        0.25 * act.powi(hidden)
            * self
                .layers
                .iter()
                .map(|l| l.w.clone().svd(false, false).singular_values.max())
                .product::<f64>()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers.iter().map(Layer::zeros_like).collect()
    }

    /// Mean over the batch of the summed binary cross-entropy, with
    /// gradients.
    pub fn bce_loss_and_grad(
        &self,
        inputs: &[&DVector<f64>],
        targets: &[&DVector<f64>],
    ) -> Result<(f64, Gradients)> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(IsacError::InvalidArgument(
                "empty or misaligned batch".into(),
            ));
        }
        let scale = 1.0 / inputs.len() as f64;
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        for (x, a) in inputs.iter().zip(targets) {
            if a.len() != self.output_dim() {
                return Err(IsacError::DimensionMismatch {
                    expected: self.output_dim(),
                    got: a.len(),
                });
            }
            let pre = self.forward_pre(x)?;
            let out = pre.last().expect("at least one layer").map(sigmoid);
            for (p, t) in out.iter().zip(a.iter()) {
                let p = p.clamp(CLAMP, 1.0 - CLAMP);
                loss -= scale * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            }
            // Logistic plus cross-entropy gives `π − a` at the output.
            let mut delta = (out - *a) * scale;
            for i in (0..self.layers.len()).rev() {
                let input = if i == 0 {
                    (*x).clone()
                } else {
                    pre[i - 1].map(|v| self.leaky(v))
                };
                grads[i].w += &delta * input.transpose();
                grads[i].b += &delta;
                if i > 0 {
                    let back = self.layers[i].w.transpose() * &delta;
                    delta =
                        back.zip_map(&pre[i - 1], |g, z| if z > 0.0 { g } else { self.slope * g });
                }
            }
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(mlp: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: mlp.zero_gradients(),
            v: mlp.zero_gradients(),
        }
    }

    /// Bias-corrected ADAM update of every parameter.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.len() != mlp.layers.len()
            || grads
                .iter()
                .zip(&mlp.layers)
                .any(|(g, l)| g.w.shape() != l.w.shape() || g.b.len() != l.b.len())
        {
            return Err(IsacError::InvalidArgument("gradient shape mismatch".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((layer, g), m), v) in mlp
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((p, g), m), v) in layer
                .slices_mut()
                .into_iter()
                .zip(g.slices())
                .zip(m.slices_mut())
                .zip(v.slices_mut())
            {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
