use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

/// First/second moment accumulators of the adaptive-moment method.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.map(|v| v * k);
        }
    }
}

/// One bias-corrected adaptive-moment update.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim("adam_step", &[params.len()], &[grads.len()]));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                params.names()[i]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = &params.tensors()[i];
        let mut next = p.to_vec();
        for k in 0..next.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            next[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        let shape = p.shape().to_vec();
        params.set(i, Tensor::new(shape, next)?)?;
    }
    Ok(())
}

/// Sums gradient lists in iteration order and scales the result.
pub(crate) fn sum_grads(parts: impl Iterator<Item = Vec<Tensor>>, scale: f64) -> Vec<Tensor> {
    let mut acc: Option<Vec<Vec<f64>>> = None;
    let mut shapes = Vec::new();
    for g in parts {
        match &mut acc {
            None => {
                shapes = g.iter().map(|t| t.shape().to_vec()).collect();
                acc = Some(g.iter().map(Tensor::to_vec).collect());
            }
            Some(a) => {
                for (x, t) in a.iter_mut().zip(&g) {
                    for (xi, ti) in x.iter_mut().zip(t.data()) {
                        *xi += ti;
                    }
                }
            }
        }
    }
    acc.unwrap_or_default()
        .into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::from_parts(s, d.into_iter().map(|v| v * scale).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(vals: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::vector(vals).unwrap());
        p
    }

    #[test]
    fn zero_gradient_is_noop_but_counts() {
        let mut p = one_param(vec![1.0, -2.0]);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(vec![0.0, 0.0, 0.0]);
        let mut s = OptimizerState::new(&p);
        let g = Tensor::vector(vec![3.0, -0.5, 1e-3]).unwrap();
        adam_step(&mut p, &[g.clone()], &mut s, 0.01).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for (x, gk) in p.tensors()[0].data().iter().zip(g.data()) {
            let want = -0.01 * gk / (gk.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = one_param(vec![0.0]);
        let mut s = OptimizerState::new(&p);
        let err = adam_step(&mut p, &[Tensor::vector(vec![f64::NAN]).unwrap()], &mut s, 0.1)
            .unwrap_err();
        assert!(err.to_string().contains('w'));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0]).unwrap()];
        clip_gradients(&mut g, 1.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
        clip_gradients(&mut g, 5.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
    }
}
