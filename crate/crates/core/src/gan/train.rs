use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;

use super::losses::{critic_loss, generate_tensor, generator_loss, CriticNoise};
use super::{gaussian_noise, GanBundle};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::DifferentiableClassifier;
use crate::tensor::{backward, Matrix};

pub const HISTORY_HEADER: [&str; 5] = ["step", "critic_loss", "gen_base_loss", "bc_loss", "total"];

/// Losses after one generator step; `critic_loss` is the last critic
/// update before it, `bc_loss` is 0 when the term is disabled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub critic_loss: f64,
    pub gen_base_loss: f64,
    pub bc_loss: f64,
    pub total: f64,
}

fn at_step<'a>(step: usize, parts: &'a [(&'a str, f64)]) -> impl Fn(Error) -> Error + 'a {
    move |e| match e {
        Error::NonFinite(_) | Error::Training { .. } => {
            let mut detail = e.to_string();
            for (name, v) in parts {
                let _ = write!(detail, "; {name}={v}");
            }
            Error::Training { step, detail }
        }
        other => other,
    }
}

/// Alternates `critic_steps` critic updates with one generator update.
/// Every batch takes distinct random rows of `data`; the fake batch reuses
/// the real batch's labels. All randomness comes from the bundle's RNG.
pub fn train(
    b: &mut GanBundle,
    data: &Dataset,
    classifiers: &[&dyn DifferentiableClassifier],
) -> Result<Vec<HistoryRow>> {
    b.config.validate()?;
    if data.n_features() != b.n_features() || data.n_classes() != b.n_classes() {
        return Err(Error::Schema("training data does not match the bundle's schema".into()));
    }
    if b.config.lambda_bc > 0.0 && classifiers.is_empty() {
        return Err(Error::invalid("lambda_bc > 0 requires at least one pre-trained classifier"));
    }
    let n = data.len();
    let batch = b.config.batch_size.min(n);
    if batch < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let steps_per_epoch = b.config.steps_per_epoch.unwrap_or(n.div_ceil(batch));
    let mut history = Vec::with_capacity(b.config.epochs * steps_per_epoch);
    let draw = |b: &mut GanBundle| -> (Matrix, Vec<usize>, Matrix) {
        let idx = sample(&mut b.rng, n, batch).into_vec();
        let real = data.features().select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let z = gaussian_noise(&mut b.rng, batch, b.config.noise_dim);
        (real, labels, z)
    };
    for _ in 0..b.config.epochs {
        for _ in 0..steps_per_epoch {
            let step = b.generator_steps;
            let mut critic_value = 0.0;
            for _ in 0..b.config.critic_steps {
                let (real, labels, z) = draw(b);
                let fake = b.generate_values(&z, &labels).map_err(at_step(step, &[]))?;
                let noise = CriticNoise::draw(b, batch);
                let cl = critic_loss(b, &real, &fake, &labels, &noise).map_err(at_step(step, &[]))?;
                critic_value = cl.loss.scalar();
                let grads = backward(&cl.loss).map_err(at_step(step, &[("critic_loss", critic_value)]))?;
                let gs: Vec<Matrix> = cl.params.iter().map(|t| grads.get(t)).collect();
                b.step_critic(&gs).map_err(at_step(step, &[("critic_loss", critic_value)]))?;
            }
            let (real, labels, z) = draw(b);
            let g = crate::tensor::Graph::new();
            let parts = [("critic_loss", critic_value)];
            let (fake, params) = generate_tensor(b, &g, &z, &labels).map_err(at_step(step, &parts))?;
            let gl = generator_loss(b, &fake, &labels, &real, classifiers).map_err(at_step(step, &parts))?;
            let row = HistoryRow {
                step,
                critic_loss: critic_value,
                gen_base_loss: gl.base.scalar(),
                bc_loss: gl.bc.as_ref().map_or(0.0, |t| t.scalar()),
                total: gl.total.scalar(),
            };
            let parts = [
                ("critic_loss", row.critic_loss),
                ("gen_base_loss", row.gen_base_loss),
                ("bc_loss", row.bc_loss),
            ];
            let grads = backward(&gl.total).map_err(at_step(step, &parts))?;
            let gs: Vec<Matrix> = params.iter().map(|t| grads.get(t)).collect();
            b.step_generator(&gs).map_err(at_step(step, &parts))?;
            b.generator_steps += 1;
            history.push(row);
        }
    }
    Ok(history)
}

/// CSV text with [`HISTORY_HEADER`]; floats in shortest round-trip form.
pub fn history_to_csv(rows: &[HistoryRow]) -> String {
    let mut s = HISTORY_HEADER.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.critic_loss, r.gen_base_loss, r.bc_loss, r.total);
    }
    s
}

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    std::fs::write(path, history_to_csv(rows))?;
    Ok(())
}
