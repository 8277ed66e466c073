//! Conditional GAN trainers (WGAN-GP, a feature-space MMD-GAN and ACGAN)
//! with the optional boundary-calibration term, plus conditional sampling.

mod losses;
mod train;

pub use losses::{critic_loss, generate_tensor, generator_loss, CriticLoss, CriticNoise, GeneratorLoss};
pub use train::{history_to_csv, train, write_history, HistoryRow, HISTORY_HEADER};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{class_prior, ClassPrior, Dataset, Schema};
use crate::error::{Error, Result};
use crate::mmd::KernelConfig;
use crate::nn::{checkpoint, check_labels, condition_values, Activation, Adam, AdamConfig, ClassEmbedding, Mlp, MlpSpec};
use crate::tensor::Matrix;

pub const GAN_FORMAT: &str = "bcgan-gan/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WganGp,
    MmdGan,
    Acgan,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wgan_gp" => Ok(Variant::WganGp),
            "mmd_gan" => Ok(Variant::MmdGan),
            "acgan" => Ok(Variant::Acgan),
            other => Err(Error::invalid(format!("unknown GAN variant {other:?}"))),
        }
    }
}

/// How the critic is kept Lipschitz (WGAN-GP and MMD-GAN only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lipschitz {
    GradientPenalty,
    WeightClip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub variant: Variant,
    pub lambda_bc: f64,
    pub lambda_gp: f64,
    pub critic_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Generator steps per epoch; `None` means `ceil(n / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub noise_dim: usize,
    pub embedding_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub lipschitz: Lipschitz,
    pub clip_value: f64,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    /// Output width of the MMD-GAN critic feature map.
    pub mmd_feature_dim: usize,
    /// Kernel on critic features for MMD-GAN; the bandwidth is held
    /// constant within a step.
    pub mmd_kernel: KernelConfig,
    /// Weight of the ACGAN auxiliary cross-entropy.
    pub acgan_aux_weight: f64,
    pub bc_kernel: KernelConfig,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            variant: Variant::WganGp,
            lambda_bc: 0.0,
            lambda_gp: 10.0,
            critic_steps: 5,
            batch_size: 64,
            epochs: 100,
            steps_per_epoch: None,
            noise_dim: 32,
            embedding_dim: 8,
            generator_hidden: vec![128, 128, 128],
            critic_hidden: vec![128, 128, 128],
            lipschitz: Lipschitz::GradientPenalty,
            clip_value: 0.01,
            generator_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
            mmd_feature_dim: 16,
            mmd_kernel: KernelConfig::MedianHeuristic,
            acgan_aux_weight: 1.0,
            bc_kernel: KernelConfig::MedianHeuristic,
            seed: 0,
        }
    }
}

impl GanConfig {
    /// Small networks and a higher learning rate for 2-D toy tasks.
    pub fn toy() -> Self {
        let adam = AdamConfig {
            lr: 5e-4,
            ..AdamConfig::default()
        };
        GanConfig {
            epochs: 20,
            steps_per_epoch: Some(100),
            noise_dim: 8,
            embedding_dim: 4,
            generator_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            generator_adam: adam,
            critic_adam: adam,
            ..GanConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.lambda_bc >= 0.0 && self.lambda_bc.is_finite()) {
            return bad("lambda_bc must be a finite value >= 0");
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return bad("lambda_gp must be a finite value >= 0");
        }
        if self.critic_steps == 0 {
            return bad("critic_steps must be >= 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.noise_dim == 0 || self.mmd_feature_dim == 0 {
            return bad("noise_dim and mmd_feature_dim must be >= 1");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be >= 1");
        }
        if !(self.clip_value > 0.0) {
            return bad("clip_value must be > 0");
        }
        for k in [self.bc_kernel, self.mmd_kernel] {
            if let KernelConfig::Fixed { sigma } = k {
                KernelConfig::fixed(sigma)?;
            }
        }
        Ok(())
    }
}

/// Everything needed to resume training or sample: networks, embeddings,
/// optimizer state, class prior and RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanBundle {
    pub config: GanConfig,
    pub schema: Schema,
    pub prior: ClassPrior,
    pub generator: Mlp,
    pub generator_embedding: ClassEmbedding,
    pub critic: Mlp,
    pub critic_embedding: ClassEmbedding,
    pub generator_adam: Adam,
    pub critic_adam: Adam,
    pub generator_steps: usize,
    pub(crate) rng: ChaCha8Rng,
}

impl GanBundle {
    /// Fresh networks sized for `data`; the prior is counted from its labels.
    pub fn new(config: GanConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let prior = class_prior(data)?;
        let (d, k) = (data.n_features(), data.n_classes());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let e = config.embedding_dim;
        let generator = Mlp::init(
            MlpSpec::new(config.noise_dim + e, &config.generator_hidden, d, Activation::Sigmoid),
            &mut rng,
        )?;
        let generator_embedding = ClassEmbedding::init(k, e, &mut rng)?;
        let (critic_in, critic_out, critic_e) = match config.variant {
            Variant::WganGp => (d + e, 1, e),
            Variant::MmdGan => (d + e, config.mmd_feature_dim, e),
            Variant::Acgan => (d, 1 + k, 0),
        };
        let critic = Mlp::init(
            MlpSpec::new(critic_in, &config.critic_hidden, critic_out, Activation::Identity),
            &mut rng,
        )?;
        let critic_embedding = ClassEmbedding::init(k, critic_e, &mut rng)?;
        Self::assemble(config, data.schema().clone(), prior, generator, generator_embedding, critic, critic_embedding, rng)
    }

    /// Builds a bundle from explicit networks, with fresh optimizer state.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        config: GanConfig,
        schema: Schema,
        prior: ClassPrior,
        generator: Mlp,
        generator_embedding: ClassEmbedding,
        critic: Mlp,
        critic_embedding: ClassEmbedding,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if generator.spec().output_width() != schema.width() {
            return Err(Error::invalid("generator output width must equal the feature dimension"));
        }
        if prior.n_classes() != schema.n_classes() {
            return Err(Error::invalid("class prior and schema disagree on the class count"));
        }
        let mut b = GanBundle {
            generator_adam: Adam::new(config.generator_adam, &[]),
            critic_adam: Adam::new(config.critic_adam, &[]),
            config,
            schema,
            prior,
            generator,
            generator_embedding,
            critic,
            critic_embedding,
            generator_steps: 0,
            rng,
        };
        b.generator_adam = Adam::new(b.config.generator_adam, &b.generator_params());
        b.critic_adam = Adam::new(b.config.critic_adam, &b.critic_params());
        Ok(b)
    }

    pub fn n_classes(&self) -> usize {
        self.prior.n_classes()
    }

    pub fn n_features(&self) -> usize {
        self.schema.width()
    }

    /// Generator weights followed by its embedding table (if non-empty).
    pub fn generator_params(&self) -> Vec<&Matrix> {
        let mut p = self.generator.params();
        if self.generator_embedding.dim() > 0 {
            p.push(self.generator_embedding.table());
        }
        p
    }

    pub fn critic_params(&self) -> Vec<&Matrix> {
        let mut p = self.critic.params();
        if self.critic_embedding.dim() > 0 {
            p.push(self.critic_embedding.table());
        }
        p
    }

    pub(crate) fn step_generator(&mut self, grads: &[Matrix]) -> Result<()> {
        let mut p = self.generator.params_mut();
        if self.generator_embedding.dim() > 0 {
            p.push(self.generator_embedding.table_mut());
        }
        self.generator_adam.step(&mut p, grads)
    }

    pub(crate) fn step_critic(&mut self, grads: &[Matrix]) -> Result<()> {
        let mut p = self.critic.params_mut();
        if self.critic_embedding.dim() > 0 {
            p.push(self.critic_embedding.table_mut());
        }
        self.critic_adam.step(&mut p, grads)?;
        if self.config.variant != Variant::Acgan && self.config.lipschitz == Lipschitz::WeightClip {
            self.critic.clip_weights(self.config.clip_value);
        }
        Ok(())
    }

    /// `G(z, y)` on plain values.
    pub fn generate_values(&self, z: &Matrix, labels: &[usize]) -> Result<Matrix> {
        self.generator
            .forward_values(&condition_values(z, labels, &self.generator_embedding)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, GAN_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path, GAN_FORMAT)
    }
}

pub(crate) fn gaussian_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(rows, cols, data).expect("shape")
}

/// `n` synthetic rows: labels drawn from the class prior unless given,
/// features `G(z, y)` with `z ~ N(0, I)`. Uses its own RNG seeded by `seed`,
/// so sampling leaves the bundle untouched.
pub fn sample_conditional(b: &GanBundle, n: usize, labels: Option<&[usize]>, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = match labels {
        Some(l) => {
            if l.len() != n {
                return Err(Error::invalid(format!("{} labels given for n = {n}", l.len())));
            }
            check_labels(l, b.n_classes())?;
            l.to_vec()
        }
        None => {
            let w = WeightedIndex::new(b.prior.probabilities()).map_err(|e| Error::invalid(e.to_string()))?;
            (0..n).map(|_| w.sample(&mut rng)).collect()
        }
    };
    let z = gaussian_noise(&mut rng, n, b.config.noise_dim);
    let x = b.generate_values(&z, &labels)?;
    Dataset::new(x, labels, b.schema.clone())
}
