//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! Every [`Tensor`] is a handle into a [`Graph`]. Forward ops append nodes;
//! [`backward`] walks them in reverse and returns numeric gradients, while
//! [`input_gradient_node`] builds the gradient as new graph nodes so that
//! functions of it (the critic's gradient penalty) stay differentiable.
//!
//! Scalars are `1 x 1`. Values are checked after every op: a NaN or infinity
//! is reported as [`crate::Error::NonFinite`] instead of propagating.

mod backward;
mod graph;
mod matrix;

pub use backward::{backward, input_gradient_node, Gradients};
pub use graph::{Graph, Tensor};
pub use matrix::Matrix;

pub(crate) use graph::{sigmoid, softmax_rows};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Build = dyn Fn(&Graph, &[Tensor]) -> crate::Result<Tensor>;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        let data = (0..r * c).map(|_| rng.random_range(lo..hi)).collect();
        Matrix::new(r, c, data).unwrap()
    }

    fn eval(f: &Build, inputs: &[Matrix]) -> f64 {
        let g = Graph::new();
        let ts: Vec<Tensor> = inputs.iter().map(|m| g.param(m.clone()).unwrap()).collect();
        f(&g, &ts).unwrap().scalar()
    }

    /// Max relative error between analytic gradients and central differences.
    fn grad_error(f: &Build, inputs: &[Matrix]) -> f64 {
        let g = Graph::new();
        let ts: Vec<Tensor> = inputs.iter().map(|m| g.param(m.clone()).unwrap()).collect();
        let root = f(&g, &ts).unwrap();
        let grads = backward(&root).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in ts.iter().enumerate() {
            let analytic = grads.get(t);
            let mut numeric = Vec::new();
            for i in 0..inputs[k].len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                numeric.push((eval(f, &plus) - eval(f, &minus)) / (2.0 * h));
            }
            let diff: f64 = analytic
                .data()
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt()
                .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
                .max(1e-3);
            worst = worst.max(diff / scale);
        }
        worst
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::new();
        let x = g.param(Matrix::row_vector(vec![1., 2., 3.])).unwrap();
        let root = x.square().unwrap().sum().unwrap();
        let grads = backward(&root).unwrap();
        assert_eq!(grads.get(&x).data(), &[2., 4., 6.]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let g = Graph::new();
        let x = g.param(Matrix::scalar(0.0)).unwrap();
        let root = x.sigmoid().unwrap();
        assert_eq!(backward(&root).unwrap().get(&x).data(), &[0.25]);
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let g = Graph::new();
        let x = g.param(Matrix::scalar(2.0)).unwrap();
        let y = g.param(Matrix::row_vector(vec![1., 1.])).unwrap();
        let root = x.square().unwrap();
        let grads = backward(&root).unwrap();
        assert_eq!(grads.get(&y).data(), &[0., 0.]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let g = Graph::new();
        let x = g.param(Matrix::row_vector(vec![1., 2.])).unwrap();
        assert!(matches!(backward(&x), Err(Error::NonScalarRoot((1, 2)))));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases: Vec<(&str, Box<Build>, Vec<(usize, usize, f64, f64)>)> = vec![
            ("matmul", Box::new(|_, t| t[0].matmul(&t[1])?.square()?.sum()), vec![(3, 4, -1., 1.), (4, 2, -1., 1.)]),
            ("add", Box::new(|_, t| t[0].add(&t[1])?.square()?.sum()), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
            ("sub", Box::new(|_, t| t[0].sub(&t[1])?.square()?.sum()), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
            ("mul", Box::new(|_, t| t[0].mul(&t[1])?.sum()), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
            ("add_row", Box::new(|_, t| t[0].add_row(&t[1])?.square()?.sum()), vec![(3, 2, -1., 1.), (1, 2, -1., 1.)]),
            ("scale", Box::new(|_, t| t[0].scale(-1.7)?.square()?.mean()), vec![(2, 2, -1., 1.)]),
            ("leaky_relu", Box::new(|_, t| t[0].leaky_relu(0.2)?.square()?.sum()), vec![(3, 3, 0.05, 1.)]),
            ("leaky_relu_neg", Box::new(|_, t| t[0].leaky_relu(0.2)?.square()?.sum()), vec![(3, 3, -1., -0.05)]),
            ("sigmoid", Box::new(|_, t| t[0].sigmoid()?.square()?.sum()), vec![(2, 3, -3., 3.)]),
            ("softmax_rows", Box::new(|g, t| {
                let w = g.constant(Matrix::new(2, 3, vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4])?)?;
                t[0].softmax_rows()?.mul(&w)?.sum()
            }), vec![(2, 3, -2., 2.)]),
            ("log_softmax_rows", Box::new(|g, t| {
                let w = g.constant(Matrix::new(2, 3, vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4])?)?;
                t[0].log_softmax_rows()?.mul(&w)?.sum()
            }), vec![(2, 3, -2., 2.)]),
            ("exp", Box::new(|_, t| t[0].exp()?.sum()), vec![(2, 2, -1., 1.)]),
            ("log", Box::new(|_, t| t[0].log()?.sum()), vec![(2, 2, 0.5, 2.)]),
            ("square", Box::new(|_, t| t[0].square()?.sum()), vec![(2, 2, -1., 1.)]),
            ("sqrt", Box::new(|_, t| t[0].sqrt()?.sum()), vec![(2, 2, 0.5, 2.)]),
            ("recip", Box::new(|_, t| t[0].recip()?.sum()), vec![(2, 2, 0.5, 2.)]),
            ("sum", Box::new(|_, t| t[0].sum()?.square()), vec![(2, 3, -1., 1.)]),
            ("mean", Box::new(|_, t| t[0].mean()?.square()), vec![(2, 3, -1., 1.)]),
            ("sum_rows", Box::new(|_, t| t[0].sum_rows()?.square()?.sum()), vec![(3, 2, -1., 1.)]),
            ("sum_cols", Box::new(|_, t| t[0].sum_cols()?.square()?.sum()), vec![(3, 2, -1., 1.)]),
            ("concat_cols", Box::new(|_, t| {
                let c = t[0].concat_cols(&t[1])?;
                c.mul(&c.sigmoid()?)?.sum()
            }), vec![(2, 2, -1., 1.), (2, 3, -1., 1.)]),
            ("slice_cols", Box::new(|_, t| t[0].slice_cols(1, 3)?.square()?.sum()), vec![(2, 4, -1., 1.)]),
            ("transpose", Box::new(|g, t| {
                let w = g.constant(Matrix::new(2, 1, vec![0.5, -2.0])?)?;
                t[0].transpose()?.matmul(&w)?.square()?.sum()
            }), vec![(2, 3, -1., 1.)]),
            ("broadcast_rows", Box::new(|_, t| t[0].broadcast_rows(3)?.sigmoid()?.sum()), vec![(1, 2, -1., 1.)]),
            ("broadcast_cols", Box::new(|_, t| t[0].broadcast_cols(3)?.sigmoid()?.sum()), vec![(2, 1, -1., 1.)]),
            ("broadcast_scalar", Box::new(|_, t| t[0].broadcast_scalar(2, 2)?.sigmoid()?.sum()), vec![(1, 1, -1., 1.)]),
            ("pairwise_sq_dists", Box::new(|_, t| t[0].pairwise_sq_dists(&t[1])?.scale(-0.5)?.exp()?.sum()), vec![(3, 2, -1., 1.), (4, 2, -1., 1.)]),
            ("pairwise_self", Box::new(|_, t| t[0].pairwise_sq_dists(&t[0])?.scale(-0.5)?.exp()?.sum()), vec![(3, 2, -1., 1.)]),
        ];
        for (name, f, shapes) in &cases {
            for _ in 0..100 {
                let inputs: Vec<Matrix> = shapes
                    .iter()
                    .map(|&(r, c, lo, hi)| random(&mut rng, r, c, lo, hi))
                    .collect();
                let err = grad_error(f.as_ref(), &inputs);
                assert!(err < 1e-4, "{name}: relative error {err}");
            }
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 3, -1., 1.);
        let w = random(&mut rng, 3, 2, -1., 1.);
        let run = || {
            let g = Graph::new();
            let x = g.param(a.clone()).unwrap();
            let wt = g.param(w.clone()).unwrap();
            let root = x.matmul(&wt).unwrap().leaky_relu(0.2).unwrap().sum().unwrap();
            let gr = backward(&root).unwrap();
            (gr.get(&x), gr.get(&wt))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn input_gradient_of_sum_of_squares() {
        let g = Graph::new();
        let x = g.param(Matrix::scalar(3.0)).unwrap();
        let root = x.square().unwrap().sum().unwrap();
        let dx = input_gradient_node(&root, &x).unwrap();
        assert_eq!(dx.value().data(), &[6.0]);
        let outer = dx.square().unwrap().sum().unwrap();
        assert_eq!(backward(&outer).unwrap().get(&x).data(), &[24.0]);
    }

    #[test]
    fn linear_critic_input_gradient_is_weight() {
        let g = Graph::new();
        let w = g.param(Matrix::column_vector(vec![0.6, -0.8])).unwrap();
        for x in [[0.1, 0.2], [5.0, -3.0]] {
            let xt = g.param(Matrix::row_vector(x.to_vec())).unwrap();
            let root = xt.matmul(&w).unwrap().sum().unwrap();
            let dx = input_gradient_node(&root, &xt).unwrap();
            assert_eq!(dx.value().data(), &[0.6, -0.8]);
        }
    }

    #[test]
    fn softmax_path_rejected_for_input_gradient() {
        let g = Graph::new();
        let x = g.param(Matrix::row_vector(vec![0.1, 0.2])).unwrap();
        let root = x.softmax_rows().unwrap().square().unwrap().sum().unwrap();
        assert!(matches!(
            input_gradient_node(&root, &x),
            Err(Error::UnsupportedSecondOrder("softmax_rows"))
        ));
    }

    #[test]
    fn hessian_vector_products_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = 4;
            let a = random(&mut rng, n, n, -1., 1.);
            let x0 = random(&mut rng, 1, n, -1., 1.);
            let v = random(&mut rng, 1, n, -1., 1.);
            // f(x) = x A x^T + sum(x^2) ; H v computed through the gradient node
            let g = Graph::new();
            let x = g.param(x0.clone()).unwrap();
            let at = g.constant(a.clone()).unwrap();
            let f = x
                .matmul(&at)
                .unwrap()
                .mul(&x)
                .unwrap()
                .sum()
                .unwrap()
                .add(&x.square().unwrap().sum().unwrap())
                .unwrap();
            let gx = input_gradient_node(&f, &x).unwrap();
            let vt = g.constant(v.clone()).unwrap();
            let gv = gx.mul(&vt).unwrap().sum().unwrap();
            let hv = backward(&gv).unwrap().get(&x);

            // oracle: analytic gradient (A + A^T) x + 2x differenced along each axis
            let grad_at = |p: &Matrix| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        let mut s = 2.0 * p.data()[i];
                        for j in 0..n {
                            s += (a.get(i, j) + a.get(j, i)) * p.data()[j];
                        }
                        s
                    })
                    .collect()
            };
            let h = 1e-5;
            let mut num = vec![0.0; n];
            for i in 0..n {
                let mut p = x0.clone();
                p.data_mut()[i] += h;
                let mut m = x0.clone();
                m.data_mut()[i] -= h;
                let gp = grad_at(&p);
                let gm = grad_at(&m);
                // column i of the Hessian
                let col: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                for (r, cv) in col.iter().enumerate() {
                    num[r] += cv * v.data()[i];
                }
            }
            let diff: f64 = hv.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-6);
            assert!(diff / scale < 1e-3, "hvp relative error {}", diff / scale);
        }
    }
}
