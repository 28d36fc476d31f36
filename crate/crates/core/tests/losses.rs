mod common;

use firecast_core::losses::{self, LossWeights, DICE_EPS};
use firecast_tensor::{Tape, Tensor};
use proptest::prelude::*;

#[test]
fn penalty_parameter_gradients_match_differences() {
    let (params, worst) = common::penalty_gradient_error(11, 4);
    assert!(params <= 500, "{params} parameters");
    assert!(worst <= 1e-3, "worst relative error {worst:.3e}");
}

#[test]
fn paper_fixtures() {
    let mut t = Tape::<f64>::new();
    let adv = t.leaf(Tensor::scalar(-1.0));
    let l1 = t.leaf(Tensor::scalar(0.1));
    let dice = t.leaf(Tensor::scalar(0.2));
    let g = losses::generator_loss(&mut t, adv, l1, dice, &LossWeights::default()).unwrap();
    assert!((t.value(g).item() - 1.06).abs() <= 1e-9);
    let wgan = t.leaf(Tensor::scalar(-2.0));
    let gp = t.leaf(Tensor::scalar(0.5));
    let d = losses::discriminator_loss(&mut t, wgan, gp, 10.0).unwrap();
    assert!((t.value(d).item() - 3.0).abs() <= 1e-12);
}

fn binary(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_of_a_binary_mask_with_itself_is_zero(mut x in binary(36)) {
        x[0] = 1.0;
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::new(vec![1, 1, 6, 6], x).unwrap());
        let d = losses::dice_loss(&mut t, a, a, DICE_EPS).unwrap();
        prop_assert!(t.value(d).item().abs() <= 1e-6);
    }

    #[test]
    fn disjoint_masks_give_the_eps_closed_form(x in binary(36)) {
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::new(vec![36], x).unwrap());
        let b = t.leaf(Tensor::new(vec![36], y).unwrap());
        let d = losses::dice_loss(&mut t, a, b, DICE_EPS).unwrap();
        let want = 1.0 - DICE_EPS / (sx + sy + DICE_EPS);
        prop_assert!((t.value(d).item() - want).abs() <= 1e-6);
    }

    #[test]
    fn l1_is_the_mean_absolute_difference(x in prop::collection::vec(-3.0f64..3.0, 12), y in prop::collection::vec(-3.0f64..3.0, 12)) {
        let want = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 12.0;
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::new(vec![3, 4], x).unwrap());
        let b = t.leaf(Tensor::new(vec![3, 4], y).unwrap());
        let l = losses::l1_loss(&mut t, a, b).unwrap();
        prop_assert!((t.value(l).item() - want).abs() <= 1e-12);
    }

    #[test]
    fn penalty_of_a_linear_critic_is_its_norm_defect(w in prop::collection::vec(-2.0f64..2.0, 5)) {
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let mut t = Tape::<f64>::new();
        let wn = t.leaf(Tensor::new(vec![5, 1], w).unwrap());
        let x = t.leaf(Tensor::new(vec![3, 5], vec![0.25; 15]).unwrap());
        let gp = losses::gradient_penalty(&mut t, x, |t, x| {
            let s = t.matmul(x, wn)?;
            Ok(t.reshape(s, &[3])?)
        }).unwrap();
        let want = (norm - 1.0).powi(2);
        prop_assert!((t.value(gp).item() - want).abs() <= 1e-8 * want.max(1.0));
    }
}
