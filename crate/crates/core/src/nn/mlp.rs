use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Matrix, Tensor};

/// Slope used by every leaky-ReLU in the crate's networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Result<Tensor> {
        match self {
            Activation::LeakyRelu => t.leaky_relu(LEAKY_SLOPE),
            Activation::Sigmoid => t.sigmoid(),
            Activation::Identity => Ok(t.clone()),
        }
    }
}

/// Layer widths (input first, output last) and one activation per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// `input -> hidden... -> output`, leaky-ReLU on hidden layers.
    pub fn new(input: usize, hidden: &[usize], output: usize, output_activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![Activation::LeakyRelu; hidden.len()];
        activations.push(output_activation);
        MlpSpec {
            widths,
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output width"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be >= 1"));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::invalid("need exactly one activation per layer"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }
}

/// `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

impl Mlp {
    /// He-style uniform init: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Linear {
                    weight: Matrix::new(fan_in, fan_out, data).expect("shape"),
                    bias: Matrix::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.widths.len() - 1 {
            return Err(Error::invalid("layer count does not match spec"));
        }
        for (l, w) in layers.iter().zip(spec.widths.windows(2)) {
            if l.weight.shape() != (w[0], w[1]) || l.bias.shape() != (1, w[1]) {
                return Err(Error::invalid("layer shape does not match spec"));
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Places the parameters in `g`, trainable or frozen.
    pub fn bind(&self, g: &Graph, trainable: bool) -> Result<BoundMlp<'_>> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                Ok((
                    g.leaf(l.weight.clone(), trainable)?,
                    g.leaf(l.bias.clone(), trainable)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundMlp { mlp: self, params })
    }

    /// Inference on plain values.
    pub fn forward_values(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.pop().expect("at least one layer"))
    }

    /// Post-activation output of every layer.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.cols() != self.spec.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                left: x.shape(),
                right: (self.spec.input_width(), self.spec.output_width()),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, act) in self.layers.iter().zip(&self.spec.activations) {
            let mut z = h.matmul(&l.weight)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(l.bias.data()) {
                    *v += b;
                }
            }
            let a = match act {
                Activation::LeakyRelu => z.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
                Activation::Sigmoid => z.map(crate::tensor::sigmoid),
                Activation::Identity => z,
            };
            if !a.is_finite() {
                return Err(Error::NonFinite("mlp_forward"));
            }
            out.push(a.clone());
            h = a;
        }
        Ok(out)
    }

    /// Clamps every weight and bias into `[-c, c]`.
    pub fn clip_weights(&mut self, c: f64) {
        for p in self.params_mut() {
            for v in p.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }
}

/// An [`Mlp`] whose parameters live in a particular graph.
pub struct BoundMlp<'a> {
    mlp: &'a Mlp,
    params: Vec<(Tensor, Tensor)>,
}

impl BoundMlp<'_> {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let spec = &self.mlp.spec;
        if x.cols() != spec.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                left: x.shape(),
                right: (spec.input_width(), spec.output_width()),
            });
        }
        let mut h = x.clone();
        for ((w, b), act) in self.params.iter().zip(&spec.activations) {
            h = act.apply(&h.matmul(w)?.add_row(b)?)?;
        }
        Ok(h)
    }

    /// Parameter tensors, same order as [`Mlp::params`].
    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear_net() {
        let spec = MlpSpec::new(3, &[], 3, Activation::Identity);
        let net = Mlp::from_layers(
            spec,
            vec![Linear {
                weight: Matrix::identity(3),
                bias: Matrix::zeros(1, 3),
            }],
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.1, -2.0, 3.5], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(net.forward_values(&x).unwrap(), x);
    }

    #[test]
    fn zero_net_with_sigmoid_outputs_half() {
        let spec = MlpSpec::new(2, &[4], 3, Activation::Sigmoid);
        let mut net = Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in net.params_mut() {
            p.data_mut().fill(0.0);
        }
        let y = net.forward_values(&Matrix::filled(5, 2, 0.7)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_straight_line_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = MlpSpec::new(3, &[5, 4], 2, Activation::Sigmoid);
        let net = Mlp::init(spec, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.2, -0.4, 0.9], [1.0, 0.0, -1.0]]).unwrap();
        let got = net.forward_values(&x).unwrap();
        let g = Graph::new();
        let bound = net.bind(&g, false).unwrap();
        let via_graph = bound.forward(&g.constant(x.clone()).unwrap()).unwrap();

        // oracle: explicit loops
        for r in 0..x.rows() {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for (li, l) in net.layers().iter().enumerate() {
                let mut z = vec![0.0; l.weight.cols()];
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = l.bias.get(0, j);
                    for (i, hi) in h.iter().enumerate() {
                        *zj += hi * l.weight.get(i, j);
                    }
                }
                h = if li + 1 == net.layers().len() {
                    z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
                } else {
                    z.iter().map(|&v| if v > 0.0 { v } else { 0.2 * v }).collect()
                };
            }
            for (j, v) in h.iter().enumerate() {
                assert!((got.get(r, j) - v).abs() < 1e-12);
                assert!((via_graph.value().get(r, j) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let net = Mlp::init(MlpSpec::new(3, &[2], 1, Activation::Identity), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.forward_values(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = MlpSpec::new(3, &[6, 5], 2, Activation::Sigmoid);
        let net = Mlp::init(spec, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.1, 0.8], [-0.6, 0.5, 0.2], [0.05, 0.9, -0.7]]).unwrap();
        let loss = |m: &Mlp| -> f64 {
            m.forward_values(&x).unwrap().data().iter().map(|v| v * v).sum()
        };
        let g = Graph::new();
        let bound = net.bind(&g, true).unwrap();
        let root = bound
            .forward(&g.constant(x.clone()).unwrap())
            .unwrap()
            .square()
            .unwrap()
            .sum()
            .unwrap();
        let grads = backward(&root).unwrap();
        let h = 1e-5;
        for (pi, t) in bound.param_tensors().iter().enumerate() {
            let analytic = grads.get(t);
            for k in 0..analytic.len() {
                let mut plus = net.clone();
                plus.params_mut()[pi].data_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[pi].data_mut()[k] -= h;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.data()[k];
                assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-4) < 1e-4, "param {pi}[{k}]: {a} vs {num}");
            }
        }
    }
}
