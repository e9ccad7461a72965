//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest relative error `||a - n|| / max(||a|| + ||n||, floor)` between the
/// analytic and numeric gradient of each input (Euclidean norms over the whole
/// tensor). Norm-wise comparison keeps elements whose true gradient sits near
/// the round-off level of the difference quotient from dominating. `build`
/// records a scalar loss from the given leaves.
pub fn max_relative_error(
    inputs: &[Tensor],
    eps: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = vals
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut vals = inputs.to_vec();
    for i in 0..inputs.len() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in 0..inputs[i].numel() {
            let orig = vals[i].data()[j];
            vals[i].data_mut()[j] = orig + eps;
            let up = eval(&vals)?;
            vals[i].data_mut()[j] = orig - eps;
            let down = eval(&vals)?;
            vals[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].data()[j];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of input {i} element {j}"
                )));
            }
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let denom = (na.sqrt() + nn.sqrt()).max(1e-7);
        worst = worst.max(diff.sqrt() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let ok = max_relative_error(std::slice::from_ref(&x), 1e-6, |g, v| {
            let s = g.square(v[0])?;
            g.sum(s)
        })
        .unwrap();
        assert!(ok < 1e-8, "{ok}");
        // A loss whose recorded graph differs from its value path is caught.
        let bad = max_relative_error(&[x], 1e-6, |g, v| {
            let s = g.square(v[0])?;
            let detached = g.value(s).clone();
            let d = g.input(detached)?;
            let t = g.add(s, d)?;
            g.sum(t)
        })
        .unwrap();
        assert!(bad > 0.1, "{bad}");
    }

    #[test]
    fn one_wrong_element_is_visible() {
        // Gradient of x0 * x1 recorded without the x1 branch: only one element is off.
        let x = Tensor::new(vec![2], vec![1.5, 0.5]).unwrap();
        let bad = max_relative_error(&[x], 1e-6, |g, v| {
            let t = g.square(v[0])?;
            let c = Tensor::new(vec![2], vec![0.0, 1.0])?;
            let scaled = g.mul_const(v[0], &c)?;
            let frozen = g.input(g.value(scaled).clone())?;
            let u = g.mul(t, frozen)?;
            g.sum(u)
        })
        .unwrap();
        assert!(bad > 1e-3, "{bad}");
    }
}
