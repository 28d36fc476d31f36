use firecast_tensor::gradcheck::{op_gradient_suite, second_order_kinds};
use firecast_tensor::{OpKind, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_op_matches_central_differences() {
    let results = op_gradient_suite(20_240_611, 20).unwrap();
    assert_eq!(results.len(), OpKind::ALL.len() + second_order_kinds().len());
    for r in results {
        assert!(r.instances >= 20);
        assert!(
            r.max_error <= 1e-4,
            "{} (second order: {}) error {:.3e}",
            r.kind,
            r.second_order,
            r.max_error
        );
    }
}

fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_is_bit_identical(x in small_vec(2 * 3 * 5 * 5), w in small_vec(4 * 3 * 3 * 3)) {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(vec![2, 3, 5, 5], x.iter().map(|&v| v as f32).collect()).unwrap());
        let w = tape.leaf(Tensor::new(vec![4, 3, 3, 3], w.iter().map(|&v| v as f32).collect()).unwrap());
        let y = tape.conv2d(x, w, 2, 1).unwrap();
        let y = tape.leaky_relu(y, 0.2).unwrap();
        let y = tape.upsample_nearest(y, 2).unwrap();
        let y = tape.sigmoid(y).unwrap();
        let m = tape.mean(y).unwrap();
        let replayed = tape.replay().unwrap();
        prop_assert_eq!(replayed.len(), tape.len());
        for id in [y, m] {
            let v = &replayed[id.index()];
            let recorded = tape.value(id);
            prop_assert_eq!(
                v.data().iter().map(|a| a.to_bits()).collect::<Vec<_>>(),
                recorded.data().iter().map(|a| a.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn unreachable_leaf_gradient_is_exact_zero(x in small_vec(6), w in small_vec(4)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], x).unwrap());
        let w = tape.leaf(Tensor::new(vec![4], w).unwrap());
        let sq = tape.square(x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss, &[w, x]).unwrap();
        prop_assert!(g[0].data().iter().all(|&v| v == 0.0));
        prop_assert_eq!(g[0].shape(), &[4]);
    }

    #[test]
    fn broadcast_add_gradient_counts_copies(x in small_vec(12), b in small_vec(4)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3, 4], x).unwrap());
        let b = tape.leaf(Tensor::new(vec![4], b).unwrap());
        let y = tape.add(x, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss, &[b]).unwrap();
        prop_assert_eq!(g[0].data(), &[3.0, 3.0, 3.0, 3.0]);
    }
}
