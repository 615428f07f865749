use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all entries.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    g.value(out).item()
}

/// Checks the gradient of a scalar function `f` at `x` against the
/// fourth-order central difference
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h` with `h = eps`. `passed` is set when the worst relative error
/// is below `tol`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!(
            "grad_check eps must be in (0, 1e-2], got {eps}"
        )));
    }

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let first = g.value(out).item()?;
    g.backward(out)?;
    let analytic = g.grad(v);

    let second = evaluate(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut numeric = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let mut at = |k: f64| {
            probe.data_mut()[i] = orig + k * eps;
            evaluate(&f, &probe)
        };
        let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
    }

    let (worst_index, max_rel_err) = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );

    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_err,
        worst_index,
        passed: max_rel_err < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::from_rows(&[[0.5, -1.0], [2.0, 3.0]]).unwrap();
        // a power-of-two step keeps every shifted sum representable
        let r = grad_check(|g, v| Ok(g.sum(v)), &x, 1.0 / 1024.0, 1e-12).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn sigmoid_sum_matches_analytic_derivative() {
        let x = Tensor::row(vec![-2.0, -0.3, 0.0, 0.7, 3.1]);
        let r = grad_check(
            |g, v| {
                let s = g.sigmoid(v);
                Ok(g.sum(s))
            },
            &x,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{}", r.max_rel_err);
        for (&xi, &a) in x.data().iter().zip(r.analytic.data()) {
            let s = 1.0 / (1.0 + (-xi).exp());
            assert!((a - s * (1.0 - s)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, 0.0, 1e-4).is_err());
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, 0.1, 1e-4).is_err());
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0.0);
        let x = Tensor::scalar(1.0);
        let r = grad_check(
            |g, v| {
                calls.set(calls.get() + 1.0);
                let s = g.add_scalar(v, calls.get());
                Ok(g.sum(s))
            },
            &x,
            1e-4,
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonDeterministic { .. })));
    }
}
