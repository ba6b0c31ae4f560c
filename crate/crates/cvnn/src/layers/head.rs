//! Real-valued head: the amplitude evaluation layer converts complex logits
//! to real values by element-wise modulus (gradient convention 0 at z = 0),
//! and softmax cross-entropy closes the graph with a scalar loss.

use std::sync::Arc;

use crate::error::Result;
use crate::graph::{CVar, Graph, RVar};
use crate::scalar::Scalar;

/// `|z|` per element; `[N, K]` complex logits become `[N, K]` real logits.
pub fn amplitude_layer<P: Scalar>(g: &mut Graph<P>, logits: CVar) -> Result<RVar> {
    g.modulus(logits)
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed with max
/// subtraction for stability.
pub fn softmax_cross_entropy<P: Scalar>(
    g: &mut Graph<P>,
    logits: RVar,
    labels: &[usize],
) -> Result<RVar> {
    g.softmax_cross_entropy(logits, Arc::new(labels.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Parameter;
    use crate::tensor::{ComplexTensor, RealTensor};

    #[test]
    fn amplitude_of_fixed_row() {
        let x = ComplexTensor::from_planes(
            vec![1, 3],
            vec![1.0, 0.0, -3.0],
            vec![0.0, 2.0, -4.0],
        )
        .unwrap();
        let mut g = Graph::new();
        let xv = g.complex_constant(&x);
        let a = amplitude_layer(&mut g, xv).unwrap();
        assert_eq!(g.value(a).data(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn amplitude_at_origin_has_zero_gradient() {
        let p = Parameter::complex(
            "z",
            ComplexTensor::from_planes(vec![2], vec![0.0, 3.0], vec![0.0, 4.0]).unwrap(),
            true,
        );
        let mut g = Graph::new();
        let z = g.complex_param(&p);
        let a = amplitude_layer(&mut g, z).unwrap();
        assert_eq!(g.value(a).data(), &[0.0, 5.0]);
        let loss = g.sum(a).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(p.grad_plane(0), vec![0.0, 0.6]);
        assert_eq!(p.grad_plane(1), vec![0.0, 0.8]);
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(RealTensor::zeros(&[2, 5]));
        let loss = softmax_cross_entropy(&mut g, logits, &[0, 3]).unwrap();
        assert!((g.value(loss).item().unwrap() - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(RealTensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap());
        let loss = softmax_cross_entropy(&mut g, logits, &[0]).unwrap();
        let v = g.value(loss).item().unwrap();
        assert!(v.is_finite());
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn three_logit_case_matches_direct_evaluation() {
        // -log(e^3 / (e^1 + e^2 + e^3)) = 0.40760596444438...
        let mut g = Graph::<f64>::new();
        let logits = g.constant(RealTensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = softmax_cross_entropy(&mut g, logits, &[2]).unwrap();
        assert!((g.value(loss).item().unwrap() - 0.407_605_964_444_380_3).abs() < 1e-13);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(RealTensor::zeros(&[1, 3]));
        assert!(softmax_cross_entropy(&mut g, logits, &[3]).is_err());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        use crate::graph::grad_check;
        use rand::{Rng, SeedableRng};
        use std::rc::Rc;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        // Keep |z| comfortably away from the modulus kink at the origin.
        let re: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.5).collect();
        let im: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.5).collect();
        let input = Parameter::complex(
            "logits",
            ComplexTensor::from_planes(vec![2, 3], re, im).unwrap(),
            true,
        );
        let params = vec![Rc::clone(&input)];
        let report = grad_check(
            move |g| {
                let z = g.complex_param(&input);
                let a = amplitude_layer(g, z)?;
                softmax_cross_entropy(g, a, &[1, 2])
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }
}
