use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked elements.
    pub max_rel_error: f64,
    /// Largest relative error per input tensor, in input order.
    pub per_tensor: Vec<f64>,
}

/// Compares tape gradients of `loss_fn` with central finite differences.
///
/// Each element error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut per_tensor = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut worst: f64 = 0.0;
        for i in 0..params[pi].len() {
            let x = params[pi].data()[i];
            work[pi] = params[pi].with_element(i, x + eps);
            let plus = eval(&work)?;
            work[pi] = params[pi].with_element(i, x - eps);
            let minus = eval(&work)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        work[pi] = params[pi].clone();
        per_tensor.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_tensor.iter().copied().fold(0.0, f64::max),
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_sum_has_unit_gradient() {
        let p = Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap();
        let report = grad_check(|t, v| t.sum(v[0]), &[p], 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn quadratic_at_three() {
        let p = Tensor::vector(vec![3.0]).unwrap();
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let p = Tensor::vector(vec![1.0]).unwrap();
        assert!(grad_check(|t, v| t.sum(v[0]), &[p], 0.0).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = Tensor::vector(vec![1.0]).unwrap();
        let r = grad_check(|t, v| t.scale(v[0], f64::INFINITY), &[p], 1e-5);
        assert!(r.is_err());
    }

    /// Every primitive, on random small tensors.
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let m = Tensor::uniform(&[3, 4], 1.0, &mut rng);
            let m2 = Tensor::uniform(&[4, 2], 1.0, &mut rng);
            let x = Tensor::uniform(&[4], 1.0, &mut rng);
            let y = Tensor::uniform(&[3], 1.0, &mut rng);
            let labels = Tensor::vector(vec![1.0, 0.0, 1.0]).unwrap();
            let w = Tensor::uniform(&[2], 1.0, &mut rng);
            let report = grad_check(
                |t, v| {
                    let (m, m2, x, y, w) = (v[0], v[1], v[2], v[3], v[4]);
                    let mx = t.matmul(m, x)?;
                    let a = t.add(mx, y)?;
                    let th = t.tanh(a)?;
                    let sg = t.sigmoid(a)?;
                    let prod = t.mul(th, sg)?;
                    let mm = t.matmul(m, m2)?;
                    let bc = t.add(mm, w)?;
                    let mmv = t.matmul(bc, w)?;
                    let cat = t.concat(&[prod, mmv, x])?;
                    let sl = t.slice(cat, 2, 5)?;
                    let r = t.row(m, 1)?;
                    let r2 = t.slice(r, 0, 3)?;
                    let sl3 = t.slice(sl, 0, 3)?;
                    let s = t.add_n(&[sl3, r2, y])?;
                    let p = t.softmax(s)?;
                    let ce = t.cross_entropy(p, 2)?;
                    let bce = t.sigmoid_bce(s, labels.clone())?;
                    let sc = t.scale(bce, 0.3)?;
                    let total = t.add(ce, sc)?;
                    let extra = t.sum(prod)?;
                    t.add(total, extra)
                },
                &[m, m2, x, y, w],
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
