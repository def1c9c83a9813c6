//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` must reconstruct the same deterministic computation on any tape
/// and return a scalar (`1 x 1`) loss node; its inputs arrive as leaves in
/// the order of `params`. Every parameter entry is perturbed by `+/- eps`
/// and the worst relative error `|ad - fd| / max(|ad|, |fd|, 1e-3)` is
/// returned.
pub fn grad_check<F>(params: &[Tensor], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract(format!("grad_check eps {eps} must be positive")));
    }

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if tape.value(loss).shape() != (1, 1) {
            return Err(Error::shape("grad_check loss", tape.value(loss).shape(), (1, 1)));
        }
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("grad_check loss evaluated to {value}")));
        }
        Ok(value)
    };

    // Analytic gradients from one reverse pass.
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if tape.value(loss).shape() != (1, 1) {
            return Err(Error::shape("grad_check loss", tape.value(loss).shape(), (1, 1)));
        }
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("grad_check loss evaluated to {value}")));
        }
        tape.backward(loss)?;
        ids.iter().map(|&id| tape.grad(id).clone()).collect()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let f_plus = eval(&work)?;
            work[p].data_mut()[k] = orig - eps;
            let f_minus = eval(&work)?;
            work[p].data_mut()[k] = orig;

            let fd = (f_plus - f_minus) / (2.0 * eps);
            let ad = analytic[p].data()[k];
            let denom = ad.abs().max(fd.abs()).max(1e-3);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn quadratic_loss_checks_out() {
        // f(theta) = theta^2 at theta = 3: analytic gradient 6.
        let theta = Tensor::from_vec(1, 1, vec![3.0]).unwrap();
        let err = grad_check(&[theta], 1e-6, |tape, ids| tape.matmul(ids[0], ids[0])).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let theta = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = grad_check(&[theta], 1e-6, |tape, ids| {
            let zeros = tape.leaf(Tensor::zeros(2, 2));
            let z = tape.mul_elem(ids[0], zeros)?;
            Ok(tape.sum(z))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn random_matmul_gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from(23);
        let a = Tensor::from_vec(3, 4, (0..12).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let b = Tensor::from_vec(4, 2, (0..8).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let weights = Tensor::from_vec(3, 2, (0..6).map(|_| rng.random::<f64>() + 0.5).collect()).unwrap();
        let err = grad_check(&[a, b], 1e-6, move |tape, ids| {
            let prod = tape.matmul(ids[0], ids[1])?;
            let w = tape.leaf(weights.clone());
            let weighted = tape.mul_elem(prod, w)?;
            Ok(tape.sum(weighted))
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn segment_softmax_and_cross_entropy_gradients() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from(31);
        let logits =
            Tensor::column((0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        let segments = Arc::new(vec![0usize, 0, 1, 1, 1, 2]);
        let weights = Tensor::column((0..6).map(|_| rng.random::<f64>() + 0.25).collect());
        let err = grad_check(&[logits], 1e-6, move |tape, ids| {
            let soft = tape.segment_softmax(ids[0], segments.clone(), 3)?;
            let w = tape.leaf(weights.clone());
            let weighted = tape.mul_elem(soft, w)?;
            Ok(tape.sum(weighted))
        })
        .unwrap();
        assert!(err < 1e-4, "segment softmax relative error {err}");

        let raw = Tensor::from_vec(3, 4, (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .unwrap();
        let labels = Arc::new(vec![1usize, 3, 0]);
        let mask = Arc::new(vec![true, false, true]);
        let err = grad_check(&[raw], 1e-6, move |tape, ids| {
            tape.cross_entropy(ids[0], labels.clone(), mask.clone())
        })
        .unwrap();
        assert!(err < 1e-4, "cross entropy relative error {err}");
    }

    #[test]
    fn activations_and_fused_edge_ops_gradients() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from(47);
        // A miniature message-passing step exercising every fused op.
        let feats = Tensor::from_vec(4, 3, (0..12).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let proj = Tensor::from_vec(3, 2, (0..6).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let src = Arc::new(vec![0usize, 1, 2, 3, 1, 0, 2, 3]);
        let tgt = Arc::new(vec![1usize, 0, 3, 2, 2, 3, 0, 1]);
        let attrs = Tensor::column((0..8).map(|_| rng.random::<f64>() * 2.0).collect());
        let err = grad_check(&[feats, proj], 1e-6, move |tape, ids| {
            let h = tape.matmul(ids[0], ids[1])?;
            let act = tape.leaky_relu(h, 0.2)?;
            let ones = tape.leaf(Tensor::filled(2, 1, 1.0));
            let per_node = tape.matmul(act, ones)?;
            let e = tape.leaf(attrs.clone());
            let logits = tape.edge_logits(per_node, per_node, e, src.clone(), tgt.clone())?;
            let alpha = tape.segment_softmax(logits, Arc::new(tgt.to_vec()), 4)?;
            let agg = tape.attn_aggregate(act, alpha, src.clone(), tgt.clone())?;
            let out = tape.elu(agg);
            Ok(tape.sum(out))
        })
        .unwrap();
        assert!(err < 1e-4, "fused op relative error {err}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let theta = Tensor::from_vec(1, 1, vec![1e308]).unwrap();
        let res = grad_check(&[theta], 1e-6, |tape, ids| {
            let sq = tape.matmul(ids[0], ids[0])?;
            tape.matmul(sq, sq)
        });
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
