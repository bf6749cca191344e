//! Central-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{ensure, DmnError, Result};

/// Smallest denominator in the relative error of [`grad_check`].
pub const FLOOR: f64 = 1e-6;

/// Maximum over all leaf elements of `|a - n| / max(FLOOR, |a| + |n|)`, where
/// `a` is the reverse-mode gradient and `n` the central difference
/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
///
/// The floor keeps round-off in the difference quotient (about
/// `1e-16 * |f| / eps`, so ~1e-11 at eps = 1e-5) from dominating on gradients
/// that are themselves near zero.
///
/// `f` receives a fresh graph and one handle per leaf (in order) and must
/// return a scalar node. It is re-run twice per leaf element, so it has to be
/// deterministic.
pub fn grad_check<F>(f: F, leaves: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    ensure!(eps > 0.0, "grad_check step must be positive");
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; leaf.len()]);
        for e in 0..leaf.len() {
            let orig = leaf.data()[e];
            probe[li].data_mut()[e] = orig + eps;
            let plus = eval(&probe)?;
            probe[li].data_mut()[e] = orig - eps;
            let minus = eval(&probe)?;
            probe[li].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[e];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(DmnError::NonFinite(format!(
                    "leaf {li} element {e}: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    ensure!(t.len() == 1, "grad_check function must return a scalar, got {:?}", t.shape());
    let x = t.item();
    if !x.is_finite() {
        return Err(DmnError::NonFinite(format!("function value {x}")));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_has_exact_gradient() {
        let x = Tensor::vector(&[0.3, -1.2, 4.0]);
        let err = grad_check(|g, v| Ok(g.sum(v[0])), &[x], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_sum_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::new(&[10], (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let err = grad_check(
            |g, v| {
                let s = g.sigmoid(v[0]);
                Ok(g.sum(s))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn non_finite_values_are_reported() {
        let x = Tensor::vector(&[f64::NAN]);
        let r = grad_check(|g, v| Ok(g.sum(v[0])), &[x], 1e-5);
        assert!(matches!(r, Err(DmnError::NonFinite(_))));
    }
}
