use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Schema};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Synthetic 2-D tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Two isotropic Gaussians centred at (0.35, 0.5) and (0.65, 0.5).
    TwoGaussians,
    /// Interleaved half circles rescaled into the unit square.
    TwoMoons,
    /// Three isotropic Gaussians at the corners of a triangle.
    ThreeGaussians,
}

impl ToyKind {
    pub fn n_classes(self) -> usize {
        match self {
            ToyKind::ThreeGaussians => 3,
            _ => 2,
        }
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(ToyKind::TwoGaussians),
            "two_moons" => Ok(ToyKind::TwoMoons),
            "three_gaussians" => Ok(ToyKind::ThreeGaussians),
            other => Err(Error::invalid(format!("unknown toy dataset kind {other:?}"))),
        }
    }
}

const GAUSSIAN_MEANS_2: [[f64; 2]; 2] = [[0.35, 0.5], [0.65, 0.5]];
const GAUSSIAN_MEANS_3: [[f64; 2]; 3] = [[0.3, 0.35], [0.7, 0.35], [0.5, 0.7]];

/// Balanced 2-D dataset with isotropic noise of standard deviation `noise`,
/// clipped to the unit square and shuffled. With an odd split the lower
/// classes get the extra points.
pub fn toy2d_generate(kind: ToyKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise must be a finite value >= 0"));
    }
    let k = kind.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for class in 0..k {
        let count = n / k + usize::from(class < n % k);
        for _ in 0..count {
            let centre = match kind {
                ToyKind::TwoGaussians => GAUSSIAN_MEANS_2[class],
                ToyKind::ThreeGaussians => GAUSSIAN_MEANS_3[class],
                ToyKind::TwoMoons => moon_point(class, rng.random::<f64>()),
            };
            let mut p = [0.0; 2];
            for (pj, cj) in p.iter_mut().zip(centre) {
                let z: f64 = rng.sample(StandardNormal);
                *pj = (cj + noise * z).clamp(0.0, 1.0);
            }
            rows.push((p, class));
        }
    }
    rows.shuffle(&mut rng);
    let features = Matrix::new(n, 2, rows.iter().flat_map(|(p, _)| *p).collect())?;
    let labels = rows.iter().map(|&(_, y)| y).collect();
    Dataset::new(features, labels, Schema::unit_continuous(2, k))
}

/// Point on the upper (class 0) or lower (class 1) moon at parameter `t`.
fn moon_point(class: usize, t: f64) -> [f64; 2] {
    let a = PI * t;
    let (x, y) = if class == 0 {
        (a.cos(), a.sin())
    } else {
        (1.0 - a.cos(), 0.5 - a.sin())
    };
    // raw moons live in [-1, 2] x [-0.5, 1]
    [0.1 + 0.8 * (x + 1.0) / 3.0, 0.1 + 0.8 * (y + 0.5) / 1.5]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_gaussians_are_point_masses() {
        let d = toy2d_generate(ToyKind::TwoGaussians, 50, 0.0, 1).unwrap();
        for (row, &y) in d.features().iter_rows().zip(d.labels()) {
            assert_eq!(row, &GAUSSIAN_MEANS_2[y]);
        }
    }

    #[test]
    fn balanced_classes() {
        for kind in [ToyKind::TwoGaussians, ToyKind::TwoMoons] {
            assert_eq!(toy2d_generate(kind, 1000, 0.06, 2).unwrap().class_counts(), vec![500, 500]);
        }
        assert_eq!(toy2d_generate(ToyKind::TwoGaussians, 7, 0.06, 2).unwrap().class_counts(), vec![4, 3]);
        assert_eq!(toy2d_generate(ToyKind::ThreeGaussians, 10, 0.06, 2).unwrap().class_counts(), vec![4, 3, 3]);
    }

    #[test]
    fn deterministic_and_in_unit_square() {
        let a = toy2d_generate(ToyKind::TwoMoons, 300, 0.2, 11).unwrap();
        assert_eq!(a, toy2d_generate(ToyKind::TwoMoons, 300, 0.2, 11).unwrap());
        assert_ne!(a, toy2d_generate(ToyKind::TwoMoons, 300, 0.2, 12).unwrap());
        assert!(a.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn argument_errors() {
        assert!("spiral".parse::<ToyKind>().is_err());
        assert_eq!("two_moons".parse::<ToyKind>().unwrap(), ToyKind::TwoMoons);
        assert!(toy2d_generate(ToyKind::TwoGaussians, 1, 0.1, 0).is_err());
        assert!(toy2d_generate(ToyKind::TwoGaussians, 10, -0.1, 0).is_err());
    }
}
