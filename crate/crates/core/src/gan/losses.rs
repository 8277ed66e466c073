use rand::Rng;
use rand_distr::StandardNormal;

use super::{GanBundle, Lipschitz, Variant};
use crate::classifiers::cross_entropy;
use crate::error::{Error, Result};
use crate::mmd::{bc_loss, mmd2_unbiased_tensor};
use crate::nn::{condition_input, BoundMlp, DifferentiableClassifier};
use crate::tensor::{input_gradient_node, Graph, Matrix, Tensor};

/// Random draws consumed by one critic evaluation: interpolation weights
/// for the gradient penalty and, for MMD-GAN, the unit direction used to
/// reduce the feature map to a scalar before penalizing its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNoise {
    pub eps: Vec<f64>,
    pub projection: Option<Vec<f64>>,
}

impl CriticNoise {
    /// Draws from the bundle's RNG whatever the variant's penalty needs.
    pub(crate) fn draw(b: &mut GanBundle, n: usize) -> Self {
        if !uses_penalty(b) {
            return CriticNoise {
                eps: Vec::new(),
                projection: None,
            };
        }
        let dim = (b.config.variant == Variant::MmdGan).then_some(b.config.mmd_feature_dim);
        let rng = &mut b.rng;
        let eps = (0..n).map(|_| rng.random::<f64>()).collect();
        let projection = dim.map(|f| {
            let mut u: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            u
        });
        CriticNoise { eps, projection }
    }
}

fn uses_penalty(b: &GanBundle) -> bool {
    b.config.variant != Variant::Acgan && b.config.lipschitz == Lipschitz::GradientPenalty && b.config.lambda_gp > 0.0
}

pub struct CriticLoss {
    pub loss: Tensor,
    /// Trainable tensors in the order of [`GanBundle::critic_params`].
    pub params: Vec<Tensor>,
    pub penalty: f64,
}

pub struct GeneratorLoss {
    pub total: Tensor,
    pub base: Tensor,
    /// `None` when the boundary-calibration weight is zero.
    pub bc: Option<Tensor>,
}

struct BoundCritic<'a> {
    net: BoundMlp<'a>,
    emb: Option<Tensor>,
}

impl BoundCritic<'_> {
    fn bind<'a>(b: &'a GanBundle, g: &Graph, trainable: bool) -> Result<BoundCritic<'a>> {
        Ok(BoundCritic {
            net: b.critic.bind(g, trainable)?,
            emb: b.critic_embedding.bind(g, trainable)?,
        })
    }

    fn forward(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.net.forward(&condition_input(x, labels, self.emb.as_ref())?)
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.net.param_tensors();
        p.extend(self.emb.clone());
        p
    }
}

/// Columns `[log σ(-t), log σ(t)]` for an `n x 1` logit column, computed
/// stably as a two-way log-softmax against zero.
fn log_sigmoid_pair(t: &Tensor) -> Result<Tensor> {
    let zeros = t.graph().constant(Matrix::zeros(t.rows(), 1))?;
    zeros.concat_cols(t)?.log_softmax_rows()
}

fn feature_sigma(bundle: &GanBundle, a: &Tensor, b: &Tensor) -> Result<f64> {
    bundle.config.mmd_kernel.resolve(&a.value(), &b.value())
}

/// Critic objective to minimize for the bundle's variant:
///
/// * WGAN-GP: `mean D(fake) - mean D(real) + λ_gp mean (||∇D(x̂)|| - 1)²`
/// * MMD-GAN: `-MMD²(h(real), h(fake))` plus the same penalty on `u·h`
/// * ACGAN: binary cross-entropy of the adversarial logit plus the
///   auxiliary class cross-entropy on both batches
pub fn critic_loss(b: &GanBundle, real: &Matrix, fake: &Matrix, labels: &[usize], noise: &CriticNoise) -> Result<CriticLoss> {
    if real.shape() != fake.shape() {
        return Err(Error::ShapeMismatch {
            op: "critic_loss",
            left: real.shape(),
            right: fake.shape(),
        });
    }
    let g = Graph::new();
    let critic = BoundCritic::bind(b, &g, true)?;
    let real_t = g.constant(real.clone())?;
    let fake_t = g.constant(fake.clone())?;
    let out_real = critic.forward(&real_t, labels)?;
    let out_fake = critic.forward(&fake_t, labels)?;
    let base = match b.config.variant {
        Variant::WganGp => out_fake.mean()?.sub(&out_real.mean()?)?,
        Variant::MmdGan => {
            let sigma = feature_sigma(b, &out_real, &out_fake)?;
            mmd2_unbiased_tensor(&out_real, &out_fake, sigma)?.neg()?
        }
        Variant::Acgan => {
            let k = b.n_classes();
            let adv_real = log_sigmoid_pair(&out_real.slice_cols(0, 1)?)?.slice_cols(1, 2)?.mean()?;
            let adv_fake = log_sigmoid_pair(&out_fake.slice_cols(0, 1)?)?.slice_cols(0, 1)?.mean()?;
            let aux = cross_entropy(&out_real.slice_cols(1, 1 + k)?, labels)?
                .add(&cross_entropy(&out_fake.slice_cols(1, 1 + k)?, labels)?)?
                .scale(b.config.acgan_aux_weight)?;
            adv_real.add(&adv_fake)?.neg()?.add(&aux)?
        }
    };
    let (loss, penalty) = if uses_penalty(b) {
        let p = gradient_penalty(b, &critic, real, fake, labels, noise)?;
        let v = p.scalar();
        (base.add(&p)?, v)
    } else {
        (base, 0.0)
    };
    Ok(CriticLoss {
        loss,
        params: critic.params(),
        penalty,
    })
}

fn gradient_penalty(
    b: &GanBundle,
    critic: &BoundCritic,
    real: &Matrix,
    fake: &Matrix,
    labels: &[usize],
    noise: &CriticNoise,
) -> Result<Tensor> {
    if noise.eps.len() != real.rows() {
        return Err(Error::invalid("one interpolation weight per row required"));
    }
    let g = critic.net.param_tensors()[0].graph().clone();
    let mut xhat = Matrix::zeros(real.rows(), real.cols());
    for (i, &e) in noise.eps.iter().enumerate() {
        for (j, v) in xhat.row_mut(i).iter_mut().enumerate() {
            *v = e * real.get(i, j) + (1.0 - e) * fake.get(i, j);
        }
    }
    let xhat = g.leaf(xhat, true)?;
    let mut out = critic.forward(&xhat, labels)?;
    if let Some(u) = &noise.projection {
        out = out.matmul(&g.constant(Matrix::column_vector(u.clone()))?)?;
    }
    let grad = input_gradient_node(&out.sum()?, &xhat)?;
    grad.square()?
        .sum_cols()?
        .sqrt()?
        .add_scalar(-1.0)?
        .square()?
        .mean()?
        .scale(b.config.lambda_gp)
}

/// `G(z, y)` as a graph node, plus the generator's trainable tensors in the
/// order of [`GanBundle::generator_params`].
pub fn generate_tensor(b: &GanBundle, g: &Graph, z: &Matrix, labels: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
    let net = b.generator.bind(g, true)?;
    let emb = b.generator_embedding.bind(g, true)?;
    let input = condition_input(&g.constant(z.clone())?, labels, emb.as_ref())?;
    let fake = net.forward(&input)?;
    let mut params = net.param_tensors();
    params.extend(emb);
    Ok((fake, params))
}

/// Base generator loss of the variant plus `λ_bc · bc_loss`. With
/// `λ_bc = 0` the classifiers are never touched and `total` is `base`.
pub fn generator_loss(
    b: &GanBundle,
    fake: &Tensor,
    labels: &[usize],
    real: &Matrix,
    classifiers: &[&dyn DifferentiableClassifier],
) -> Result<GeneratorLoss> {
    let g = fake.graph().clone();
    let critic = BoundCritic::bind(b, &g, false)?;
    let out_fake = critic.forward(fake, labels)?;
    let base = match b.config.variant {
        Variant::WganGp => out_fake.mean()?.neg()?,
        Variant::MmdGan => {
            let out_real = critic.forward(&g.constant(real.clone())?, labels)?;
            let sigma = feature_sigma(b, &out_real, &out_fake)?;
            mmd2_unbiased_tensor(&out_real, &out_fake, sigma)?
        }
        Variant::Acgan => {
            let k = b.n_classes();
            let adv = log_sigmoid_pair(&out_fake.slice_cols(0, 1)?)?.slice_cols(1, 2)?.mean()?.neg()?;
            let aux = cross_entropy(&out_fake.slice_cols(1, 1 + k)?, labels)?.scale(b.config.acgan_aux_weight)?;
            adv.add(&aux)?
        }
    };
    if b.config.lambda_bc == 0.0 {
        return Ok(GeneratorLoss {
            total: base.clone(),
            base,
            bc: None,
        });
    }
    if classifiers.is_empty() {
        return Err(Error::invalid("lambda_bc > 0 requires at least one pre-trained classifier"));
    }
    let bc = bc_loss(real, fake, classifiers, &b.config.bc_kernel)?;
    let total = base.add(&bc.scale(b.config.lambda_bc)?)?;
    Ok(GeneratorLoss {
        total,
        base,
        bc: Some(bc),
    })
}
