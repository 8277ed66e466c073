use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{softmax_posterior, Activation, Adam, AdamConfig, DifferentiableClassifier, Mlp, MlpSpec};
use crate::tensor::{backward, Graph, Matrix, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpClassifierConfig {
    pub hidden: Vec<usize>,
    /// Optional linear layer inserted right before the output layer.
    pub bottleneck: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for MlpClassifierConfig {
    fn default() -> Self {
        MlpClassifierConfig {
            hidden: vec![100],
            bottleneck: None,
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::classifier(),
        }
    }
}

impl MlpClassifierConfig {
    pub fn with_hidden(hidden: Vec<usize>, epochs: usize) -> Self {
        MlpClassifierConfig {
            hidden,
            epochs,
            ..Self::default()
        }
    }

    fn spec(&self, d: usize, k: usize) -> MlpSpec {
        let mut widths = vec![d];
        widths.extend(&self.hidden);
        let mut activations = vec![Activation::LeakyRelu; self.hidden.len()];
        if let Some(b) = self.bottleneck {
            widths.push(b);
            activations.push(Activation::Identity);
        }
        widths.push(k);
        activations.push(Activation::Identity);
        MlpSpec { widths, activations }
    }
}

/// Feed-forward network producing logits, trained with cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    net: Mlp,
}

/// `-mean_i log softmax(logits_i)[y_i]`.
pub(crate) fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let g = logits.graph();
    let one_hot = g.constant(Matrix::one_hot(labels, logits.cols())?)?;
    let picked = logits.log_softmax_rows()?.mul(&one_hot)?.sum()?;
    picked.scale(-1.0 / labels.len() as f64)
}

impl MlpClassifier {
    pub fn fit(data: &Dataset, cfg: &MlpClassifierConfig, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyData("mlp training"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::init(cfg.spec(data.n_features(), data.n_classes()), &mut rng)?;
        let mut adam = Adam::new(cfg.adam, &net.params());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
                let g = Graph::new();
                let bound = net.bind(&g, true)?;
                let x = g.constant(data.features().select_rows(batch))?;
                let loss = cross_entropy(&bound.forward(&x)?, &labels).map_err(|e| Error::Training {
                    step,
                    detail: e.to_string(),
                })?;
                let grads = backward(&loss)?;
                let gs: Vec<Matrix> = bound.param_tensors().iter().map(|t| grads.get(t)).collect();
                adam.step(&mut net.params_mut(), &gs)?;
                step += 1;
            }
        }
        Ok(MlpClassifier { net })
    }

    pub fn from_net(net: Mlp) -> Self {
        MlpClassifier { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Activations of the layer before the output, e.g. the 2-unit
    /// bottleneck of a projection classifier.
    pub fn penultimate(&self, x: &Matrix) -> Result<Matrix> {
        let mut trace = self.net.forward_trace(x)?;
        if trace.len() < 2 {
            return Err(Error::invalid("network has no hidden layer"));
        }
        trace.pop();
        Ok(trace.pop().expect("checked length"))
    }
}

impl DifferentiableClassifier for MlpClassifier {
    fn n_classes(&self) -> usize {
        self.net.spec().output_width()
    }

    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.net.forward_values(x)
    }

    fn logits_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.net.bind(x.graph(), false)?.forward(x)
    }
}

impl Classifier for MlpClassifier {
    fn n_classes(&self) -> usize {
        self.net.spec().output_width()
    }

    fn n_features(&self) -> usize {
        self.net.spec().input_width()
    }

    fn posterior(&self, x: &Matrix) -> Result<Matrix> {
        super::check_input(x, self.n_features())?;
        Ok(softmax_posterior(&self.net.forward_values(x)?)?.into_matrix())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy2d_generate, ToyKind};

    #[test]
    fn zero_epochs_is_the_initialization() {
        let d = toy2d_generate(ToyKind::TwoGaussians, 50, 0.06, 0).unwrap();
        let cfg = MlpClassifierConfig::with_hidden(vec![8], 0);
        let m = MlpClassifier::fit(&d, &cfg, 4).unwrap();
        let init = Mlp::init(cfg.spec(2, 2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(m.net(), &init);
    }

    #[test]
    fn learns_two_gaussians() {
        let train = toy2d_generate(ToyKind::TwoGaussians, 400, 0.06, 1).unwrap();
        let test = toy2d_generate(ToyKind::TwoGaussians, 400, 0.06, 2).unwrap();
        let m = MlpClassifier::fit(&train, &MlpClassifierConfig::with_hidden(vec![100], 200), 0).unwrap();
        let p = m.predict(test.features()).unwrap();
        let acc = p.iter().zip(test.labels()).filter(|(a, b)| a == b).count() as f64 / 400.0;
        assert!(acc >= 0.95, "{acc}");
        for r in m.posterior(test.features()).unwrap().iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_matches_hand_value() {
        let g = Graph::new();
        let logits = g.constant(Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap()).unwrap();
        let v = cross_entropy(&logits, &[0, 1]).unwrap().scalar();
        let e = std::f64::consts::E;
        let expect = -0.5 * ((0.5f64).ln() + (e / (1.0 + e)).ln());
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn bottleneck_exposes_two_columns() {
        let d = toy2d_generate(ToyKind::ThreeGaussians, 60, 0.06, 0).unwrap();
        let cfg = MlpClassifierConfig {
            hidden: vec![16],
            bottleneck: Some(2),
            epochs: 1,
            ..Default::default()
        };
        let m = MlpClassifier::fit(&d, &cfg, 0).unwrap();
        assert_eq!(m.penultimate(d.features()).unwrap().shape(), (60, 2));
    }
}
