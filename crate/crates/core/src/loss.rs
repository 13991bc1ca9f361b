//! Mean softmax cross-entropy over the rows of a logit tensor, with its
//! logit-space gradient and Hessian-vector product.
//!
//! Every leading axis is a prediction position; the last axis indexes
//! classes. `n` below is the number of positions.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn rows<T: Real>(logits: &Tensor<T>) -> Result<(usize, usize)> {
    let k = logits.last_dim();
    if logits.shape().is_empty() || k == 0 {
        return Err(Error::shape("cross-entropy logits", &[1, 1], logits.shape()));
    }
    Ok((logits.len() / k, k))
}

fn check_targets(targets: &[usize], n: usize, k: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::shape("cross-entropy targets", &[n], &[targets.len()]));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::TargetOutOfRange { target: t, classes: k });
    }
    Ok(())
}

/// Softmax of one row, in f64.
fn probabilities<T: Real>(row: &[T], out: &mut [f64]) {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v.as_f64() - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `-(1/n) sum_i log p_i[y_i]`, via log-sum-exp in f64.
pub fn ce_loss<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let (n, k) = rows(logits)?;
    check_targets(targets, n, k)?;
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(targets) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[y].as_f64();
    }
    Ok(total / n as f64)
}

/// `(1/n)(p_i - e_{y_i})` per position. Each row sums to zero.
pub fn ce_logit_grad<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = rows(logits)?;
    check_targets(targets, n, k)?;
    let inv_n = 1.0 / n as f64;
    let mut p = vec![0.0; k];
    let mut out = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks(k).zip(targets) {
        probabilities(row, &mut p);
        p[y] -= 1.0;
        out.extend(p.iter().map(|&v| T::of(v * inv_n)));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `(1/n)(diag(p) - p p^T) t` per position: the logit-space Hessian of
/// [`ce_loss`] applied to `tangent`. Independent of the targets.
pub fn ce_logit_hvp<T: Real>(logits: &Tensor<T>, tangent: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = rows(logits)?;
    if tangent.shape() != logits.shape() {
        return Err(Error::shape("logit tangent", logits.shape(), tangent.shape()));
    }
    let inv_n = 1.0 / n as f64;
    let mut p = vec![0.0; k];
    let mut out = Vec::with_capacity(logits.len());
    for (row, t) in logits.data().chunks(k).zip(tangent.data().chunks(k)) {
        probabilities(row, &mut p);
        let pt: f64 = p.iter().zip(t).map(|(&a, b)| a * b.as_f64()).sum();
        out.extend(p.iter().zip(t).map(|(&a, b)| T::of(inv_n * a * (b.as_f64() - pt))));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, UnaryFn};
    use crate::tensor::ParamVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Tensor<f64> {
        t64(&[n, k], (0..n * k).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    #[test]
    fn uniform_two_class_loss_is_ln2() {
        let l = ce_loss(&Tensor::<f64>::zeros(&[1, 2]), &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_margin_loss_vanishes() {
        let logits = t64(&[1, 3], vec![30.0, 0.0, 0.0]);
        assert!(ce_loss(&logits, &[0]).unwrap() < 1e-12);
    }

    #[test]
    fn loss_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = random_logits(&mut rng, 7, 5, 3.0);
        let targets = [0, 4, 2, 2, 1, 3, 0];
        let mut naive = 0.0;
        for (row, &y) in logits.data().chunks(5).zip(&targets) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            naive -= (row[y].exp() / z).ln();
        }
        naive /= 7.0;
        assert!((ce_loss(&logits, &targets).unwrap() - naive).abs() < 1e-6);
    }

    #[test]
    fn target_out_of_range_is_rejected() {
        let err = ce_loss(&Tensor::<f64>::zeros(&[2, 3]), &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::TargetOutOfRange { target: 3, classes: 3 }));
        assert!(ce_logit_grad(&Tensor::<f64>::zeros(&[1, 3]), &[7]).is_err());
    }

    #[test]
    fn uniform_two_class_gradient() {
        let g = ce_logit_grad(&Tensor::<f64>::zeros(&[1, 2]), &[0]).unwrap();
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    /// Cross-entropy composed from primitive ops, as an independent
    /// reverse-mode reference.
    fn composed_ce(g: &mut Graph<f64>, targets: &[usize], k: usize) -> crate::autodiff::Var {
        let x = g.param("logits").unwrap();
        let n = targets.len();
        let e = g.unary(x, UnaryFn::Exp);
        let z = g.row_sum(e);
        let lse = g.unary(z, UnaryFn::Log);
        let mut onehot = vec![0.0; n * k];
        for (i, &y) in targets.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let mask = g.constant(t64(&[n, k], onehot));
        let picked = g.mul(x, mask).unwrap();
        let picked = g.row_sum(picked);
        let neg = g.scale(picked, -1.0);
        let per = g.add(lse, neg).unwrap();
        let total = g.sum_all(per);
        g.scale(total, 1.0 / n as f64)
    }

    #[test]
    fn gradient_matches_autodiff_of_composed_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_logits(&mut rng, 6, 4, 2.0);
        let targets = [1, 0, 3, 3, 2, 1];
        let params: ParamVector<f64> = [("logits".to_string(), logits.clone())].into_iter().collect();
        let mut g = Graph::new(&params);
        let loss = composed_ce(&mut g, &targets, 4);
        assert!((g.value(loss).data()[0] - ce_loss(&logits, &targets).unwrap()).abs() < 1e-12);
        let reference = g.gradient(loss).unwrap();
        let closed = ce_logit_grad(&logits, &targets).unwrap();
        for (a, b) in reference.get("logits").unwrap().data().iter().zip(closed.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_four_class_hvp() {
        let mut t = Tensor::<f64>::zeros(&[1, 4]);
        t.data_mut()[0] = 1.0;
        let h = ce_logit_hvp(&Tensor::zeros(&[1, 4]), &t).unwrap();
        let expected = [0.25 - 1.0 / 16.0, -1.0 / 16.0, -1.0 / 16.0, -1.0 / 16.0];
        for (a, b) in h.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hvp_matches_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random_logits(&mut rng, 5, 6, 2.0);
        let t = random_logits(&mut rng, 5, 6, 1.0);
        let targets = [0, 1, 2, 3, 4];
        let h = 1e-3;
        let mut plus = logits.clone();
        plus.axpy(h, &t);
        let mut minus = logits.clone();
        minus.axpy(-h, &t);
        let gp = ce_logit_grad(&plus, &targets).unwrap();
        let gm = ce_logit_grad(&minus, &targets).unwrap();
        let fd: Vec<f64> = gp.data().iter().zip(gm.data()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let exact = ce_logit_hvp(&logits, &t).unwrap();
        let err: f64 = fd.iter().zip(exact.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * exact.norm());
    }

    #[test]
    fn hessian_vanishes_at_large_margin() {
        let logits = t64(&[1, 3], vec![30.0, 0.0, 0.0]);
        // Operator norm of diag(p) - pp^T bounded by its Frobenius norm.
        let mut frob = 0.0;
        for j in 0..3 {
            let mut e = Tensor::<f64>::zeros(&[1, 3]);
            e.data_mut()[j] = 1.0;
            frob += ce_logit_hvp(&logits, &e).unwrap().norm().powi(2);
        }
        assert!(frob.sqrt() <= 1e-8, "{}", frob.sqrt());
    }

    fn logits_and_tangent() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
        (1usize..4, 2usize..6).prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(-8.0f64..8.0, n * k),
                prop::collection::vec(-2.0f64..2.0, n * k),
            )
                .prop_map(move |(x, t)| (t64(&[n, k], x), t64(&[n, k], t)))
        })
    }

    proptest! {
        #[test]
        fn gradient_rows_sum_to_zero(x in prop::collection::vec(-10.0f64..10.0, 12), y in prop::collection::vec(0usize..4, 3)) {
            let g = ce_logit_grad(&t64(&[3, 4], x), &y).unwrap();
            for row in g.data().chunks(4) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }

        #[test]
        fn logit_hessian_is_psd_with_zero_row_sums((logits, t) in logits_and_tangent()) {
            let k = logits.last_dim();
            let h = ce_logit_hvp(&logits, &t).unwrap();
            prop_assert!(h.dot(&t) >= -1e-12);
            for row in h.data().chunks(k) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }
}
