use proptest::prelude::*;
use triplet_tagger::verify::{op_check, GRAD_CHECK_TOLERANCE};
use triplet_tagger::{Graph, OpKind, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_passes_grad_check(point in any::<u64>()) {
        for kind in OpKind::ALL {
            let c = op_check(kind, point, None).unwrap();
            prop_assert!(c.max_rel_error <= GRAD_CHECK_TOLERANCE, "{}: {}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn softmax_rows_normalize_and_ignore_shifts(
        rows in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 5), 1..6),
        c in -50.0f64..50.0,
    ) {
        let x = Tensor::from_rows(&rows).unwrap();
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + c).collect()).unwrap();
        let mut g = Graph::new();
        let a = g.constant(x).unwrap();
        let b = g.constant(shifted).unwrap();
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        for r in 0..rows.len() {
            let row = g.value(sa).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for (p, q) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn fan_out_gradient_is_the_sum_of_uses(vals in prop::collection::vec(-3.0f64..3.0, 6)) {
        // f(x) = sum(gelu(x)) + sum(x * x): x feeds three uses
        let x = Tensor::new(vec![2, 3], vals.clone()).unwrap();
        let mut g = Graph::new();
        let v = g.param(x.clone()).unwrap();
        let a = g.gelu(v).unwrap();
        let sa = g.sum(a).unwrap();
        let sq = g.mul(v, v).unwrap();
        let sb = g.sum(sq).unwrap();
        let y = g.add(sa, sb).unwrap();
        let joint = g.backward(y).unwrap().get(v).unwrap().clone();

        let mut g1 = Graph::new();
        let v1 = g1.param(x.clone()).unwrap();
        let a1 = g1.gelu(v1).unwrap();
        let s1 = g1.sum(a1).unwrap();
        let part1 = g1.backward(s1).unwrap().get(v1).unwrap().clone();
        for ((j, p), xi) in joint.data().iter().zip(part1.data()).zip(&vals) {
            prop_assert!((j - (p + 2.0 * xi)).abs() <= 1e-12);
        }
    }

    #[test]
    fn op_sequences_are_bit_reproducible(vals in prop::collection::vec(-2.0f64..2.0, 12)) {
        let run = || {
            let mut g = Graph::new();
            let x = g.param(Tensor::new(vec![3, 4], vals.clone()).unwrap()).unwrap();
            let w = g.param(Tensor::new(vec![4, 3], vals.iter().rev().copied().collect()).unwrap()).unwrap();
            let y = g.matmul(x, w).unwrap();
            let y = g.softmax_rows(y).unwrap();
            let y = g.gelu(y).unwrap();
            let s = g.mean(y).unwrap();
            let grads = g.backward(s).unwrap();
            (g.value(s).clone(), grads.get(x).unwrap().clone(), grads.get(w).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn corrupted_backward_rules_are_detected() {
    for kind in OpKind::ALL {
        let c = op_check(kind, 1, Some(kind)).unwrap();
        assert!(c.max_rel_error > GRAD_CHECK_TOLERANCE, "{kind}: fault not detected");
    }
}
