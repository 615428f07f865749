//! Per-region scaling factors drawn with the reparameterization trick, and
//! the Gaussian KL regularizer that keeps them near a standard normal.
//!
//! The second encoder output is read as a log-variance, so the sampled
//! standard deviation is `exp(0.5 * logvar)` and always positive.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Encoder outputs for one image's N regions (each N x 1).
#[derive(Clone, Copy, Debug)]
pub struct RegionPosterior {
    pub mu: Var,
    pub logvar: Var,
}

/// `z_mu = X · w_mu`, `z_logvar = X · w_logvar`.
pub fn encode(g: &mut Graph, regions: Var, w_mu: Var, w_logvar: Var) -> Result<RegionPosterior> {
    let mu = g.matmul(regions, w_mu)?;
    let logvar = g.matmul(regions, w_logvar)?;
    Ok(RegionPosterior { mu, logvar })
}

/// `z = mu + exp(0.5 * logvar) ⊙ epsilon`. `epsilon` is a constant N x 1
/// column supplied by the caller.
pub fn sample_z(g: &mut Graph, post: RegionPosterior, epsilon: &Tensor) -> Result<Var> {
    let shape = g.shape(post.mu);
    if epsilon.shape() != shape {
        return Err(Error::Shape {
            op: "sample_z",
            left: shape,
            right: epsilon.shape(),
        });
    }
    let half = g.scale(post.logvar, 0.5);
    let sigma = g.exp(half);
    let eps = g.constant(epsilon.clone());
    let noise = g.hadamard(sigma, eps)?;
    g.add(post.mu, noise)
}

/// Row i of the result is `z[i] * X[i]`.
pub fn weight_regions(g: &mut Graph, regions: Var, z: Var) -> Result<Var> {
    g.scale_rows(regions, z)
}

/// `(1/N) Σ 0.5 (mu² + exp(logvar) - logvar - 1)`, the mean KL divergence
/// of N(mu, exp(logvar)) from N(0, 1).
pub fn kl_loss(g: &mut Graph, post: RegionPosterior) -> Result<Var> {
    let mu_sq = g.hadamard(post.mu, post.mu)?;
    let var = g.exp(post.logvar);
    let t = g.add(mu_sq, var)?;
    let t = g.sub(t, post.logvar)?;
    let t = g.add_scalar(t, -1.0);
    let t = g.scale(t, 0.5);
    g.mean(t)
}

/// Draws an N x 1 column of standard normal noise.
pub fn draw_epsilon<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Tensor {
    Tensor::column((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn kl_value(mu: &[f64], logvar: &[f64]) -> f64 {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::column(mu.to_vec()));
        let logvar = g.constant(Tensor::column(logvar.to_vec()));
        let k = kl_loss(&mut g, RegionPosterior { mu, logvar }).unwrap();
        g.value(k).item().unwrap()
    }

    /// KL(N(mu, s²) || N(0, 1)) by trapezoidal quadrature of p·ln(p/q).
    fn kl_quadrature(mu: f64, logvar: f64) -> f64 {
        let s = (0.5 * logvar).exp();
        let (lo, hi) = (mu - 12.0 * s, mu + 12.0 * s);
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let integrand = |x: f64| {
            let log_p = -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * ln_2pi;
            let log_q = -0.5 * x * x - 0.5 * ln_2pi;
            log_p.exp() * (log_p - log_q)
        };
        let mut acc = 0.5 * (integrand(lo) + integrand(hi));
        for k in 1..steps {
            acc += integrand(lo + k as f64 * h);
        }
        acc * h
    }

    #[test]
    fn encode_zero_and_selector() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::eye(3));
        let w = g.param(Tensor::column(vec![0.5, -1.0, 2.0]));
        let z0 = g.param(Tensor::zeros(3, 1));
        let post = encode(&mut g, x, w, z0).unwrap();
        assert_eq!(g.value(post.mu).data(), &[0.5, -1.0, 2.0]);
        assert_eq!(g.value(post.logvar).data(), &[0.0, 0.0, 0.0]);

        let bad = g.param(Tensor::zeros(2, 1));
        assert!(encode(&mut g, x, bad, z0).is_err());
    }

    #[test]
    fn sample_z_modes() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::column(vec![0.3, -0.7]));
        let logvar = g.constant(Tensor::column(vec![1.2, -0.4]));
        let post = RegionPosterior { mu, logvar };
        let z = sample_z(&mut g, post, &Tensor::zeros(2, 1)).unwrap();
        assert_eq!(g.value(z), g.value(mu));

        let unit = g.constant(Tensor::zeros(2, 1));
        let post = RegionPosterior { mu, logvar: unit };
        let e = Tensor::column(vec![0.25, -1.5]);
        let z = sample_z(&mut g, post, &e).unwrap();
        assert_eq!(g.value(z).data(), &[0.3 + 0.25, -0.7 - 1.5]);

        assert!(sample_z(&mut g, post, &Tensor::zeros(3, 1)).is_err());
    }

    #[test]
    fn sample_z_gradients() {
        let eps = Tensor::column(vec![0.4, -1.1, 0.9]);
        let logvar = Tensor::column(vec![0.2, -0.3, 0.5]);
        let mu = Tensor::column(vec![0.1, 0.5, -0.2]);
        let r = grad_check(
            |g, v| {
                let lv = g.constant(logvar.clone());
                let z = sample_z(g, RegionPosterior { mu: v, logvar: lv }, &eps)?;
                let sq = g.hadamard(z, z)?;
                Ok(g.sum(sq))
            },
            &mu,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
        let r = grad_check(
            |g, v| {
                let m = g.constant(mu.clone());
                let z = sample_z(g, RegionPosterior { mu: m, logvar: v }, &eps)?;
                let sq = g.hadamard(z, z)?;
                Ok(g.sum(sq))
            },
            &logvar,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
    }

    #[test]
    fn weight_regions_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 1.0], [3.0, 4.0]]).unwrap());
        let z = g.constant(Tensor::column(vec![2.0, 0.0]));
        let w = weight_regions(&mut g, x, z).unwrap();
        assert_eq!(g.value(w).data(), &[2.0, 2.0, 0.0, 0.0]);

        let ones = g.constant(Tensor::ones(2, 1));
        let w = weight_regions(&mut g, x, ones).unwrap();
        assert_eq!(g.value(w), g.value(x));

        let bad = g.constant(Tensor::ones(3, 1));
        assert!(weight_regions(&mut g, x, bad).is_err());
    }

    #[test]
    fn weight_regions_gradients() {
        let x = Tensor::from_rows(&[[0.3, -1.2, 0.5], [2.0, 0.1, -0.4]]).unwrap();
        let z = Tensor::column(vec![0.7, -1.3]);
        let target = Tensor::from_rows(&[[1.0, 2.0, -1.0], [0.5, -0.5, 3.0]]).unwrap();
        let loss = |g: &mut Graph, xv: Var, zv: Var| -> Result<Var> {
            let w = weight_regions(g, xv, zv)?;
            let t = g.constant(target.clone());
            let p = g.hadamard(w, t)?;
            let s = g.sigmoid(p);
            Ok(g.sum(s))
        };
        let r = grad_check(
            |g, v| {
                let zv = g.constant(z.clone());
                loss(g, v, zv)
            },
            &x,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
        let r = grad_check(
            |g, v| {
                let xv = g.constant(x.clone());
                loss(g, xv, v)
            },
            &z,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
    }

    #[test]
    fn kl_closed_form_points() {
        assert_eq!(kl_value(&[0.0], &[0.0]), 0.0);
        assert_eq!(kl_value(&[1.0], &[0.0]), 0.5);
        assert_eq!(kl_value(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn kl_matches_quadrature() {
        let cases = [
            (0.3, 0.2),
            (-1.1, -0.7),
            (0.8, 1.1),
            (2.0, -1.5),
            (0.0, 0.9),
        ];
        for (mu, lv) in cases {
            let k = kl_value(&[mu], &[lv]);
            let q = kl_quadrature(mu, lv);
            assert!((k - q).abs() < 1e-3, "mu={mu} lv={lv}: {k} vs {q}");
        }
        let mus = [0.3, -1.1, 0.8];
        let lvs = [0.2, -0.7, 1.1];
        let mean_q = mus
            .iter()
            .zip(&lvs)
            .map(|(&m, &l)| kl_quadrature(m, l))
            .sum::<f64>()
            / 3.0;
        assert!((kl_value(&mus, &lvs) - mean_q).abs() < 1e-3);
    }

    #[test]
    fn kl_gradients() {
        let mu = Tensor::column(vec![0.4, -0.9, 1.3]);
        let lv = Tensor::column(vec![-0.2, 0.6, 0.1]);
        let r = grad_check(
            |g, v| {
                let logvar = g.constant(lv.clone());
                kl_loss(g, RegionPosterior { mu: v, logvar })
            },
            &mu,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed);
        let r = grad_check(
            |g, v| {
                let m = g.constant(mu.clone());
                kl_loss(g, RegionPosterior { mu: m, logvar: v })
            },
            &lv,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8)
        ) {
            let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(kl_value(&mu, &lv) >= 0.0);
        }
    }
}
