//! Objective terms for the generator and the critic.
//!
//! Every loss is built on a tape so that it can be differentiated; the
//! gradient penalty additionally records the critic's input gradient so
//! that its own parameter gradient is available.

use firecast_tensor::{NodeId, Real, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DICE_EPS: f64 = 1e-7;
/// Added under the square root of the penalty's gradient norm so that its
/// derivative stays finite at a zero gradient.
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_adv: f64,
    pub w_l1: f64,
    pub w_dice: f64,
    pub w_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_adv: 1.0,
            w_l1: 20.0,
            w_dice: 0.3,
            w_gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_adv, self.w_l1, self.w_dice, self.w_gp];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(t: &Tape<T>, a: NodeId, b: NodeId, what: &str) -> Result<()> {
    if t.shape(a) != t.shape(b) {
        return Err(CoreError::Config(format!("{what}: shapes {:?} and {:?} differ", t.shape(a), t.shape(b))));
    }
    Ok(())
}

fn nonempty<T: Real>(t: &Tape<T>, x: NodeId, what: &str) -> Result<()> {
    if t.value(x).numel() == 0 {
        return Err(CoreError::Config(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `−mean(scores)` over the generated batch.
pub fn adversarial_loss<T: Real>(t: &mut Tape<T>, fake_scores: NodeId) -> Result<NodeId> {
    nonempty(t, fake_scores, "adversarial loss")?;
    let m = t.mean(fake_scores)?;
    Ok(t.scale(m, -1.0)?)
}

/// Mean absolute difference over every element.
pub fn l1_loss<T: Real>(t: &mut Tape<T>, x: NodeId, x_hat: NodeId) -> Result<NodeId> {
    same_shape(t, x, x_hat, "l1 loss")?;
    let d = t.sub(x, x_hat)?;
    let a = t.abs(d)?;
    Ok(t.mean(a)?)
}

/// Soft Dice on raw intensities: `1 − (2Σx·x̂ + ε) / (Σx + Σx̂ + ε)`.
pub fn dice_loss<T: Real>(t: &mut Tape<T>, x: NodeId, x_hat: NodeId, eps: f64) -> Result<NodeId> {
    same_shape(t, x, x_hat, "dice loss")?;
    let prod = t.mul(x, x_hat)?;
    let inter = t.sum(prod)?;
    let num = t.scale(inter, 2.0)?;
    let num = t.add_scalar(num, eps)?;
    let sx = t.sum(x)?;
    let sy = t.sum(x_hat)?;
    let den = t.add(sx, sy)?;
    let den = t.add_scalar(den, eps)?;
    let ratio = t.div(num, den)?;
    let neg = t.scale(ratio, -1.0)?;
    Ok(t.add_scalar(neg, 1.0)?)
}

/// `mean(fake) − mean(real)`.
pub fn wasserstein_loss<T: Real>(t: &mut Tape<T>, fake_scores: NodeId, real_scores: NodeId) -> Result<NodeId> {
    nonempty(t, fake_scores, "wasserstein loss")?;
    nonempty(t, real_scores, "wasserstein loss")?;
    let f = t.mean(fake_scores)?;
    let r = t.mean(real_scores)?;
    Ok(t.sub(f, r)?)
}

/// `w_adv·adv + w_L1·l1 + w_Dice·dice`.
pub fn generator_loss<T: Real>(t: &mut Tape<T>, adv: NodeId, l1: NodeId, dice: NodeId, w: &LossWeights) -> Result<NodeId> {
    let a = t.scale(adv, w.w_adv)?;
    let b = t.scale(l1, w.w_l1)?;
    let c = t.scale(dice, w.w_dice)?;
    let ab = t.add(a, b)?;
    Ok(t.add(ab, c)?)
}

/// `wgan + w_GP·gp`.
pub fn discriminator_loss<T: Real>(t: &mut Tape<T>, wgan: NodeId, gp: NodeId, w_gp: f64) -> Result<NodeId> {
    let g = t.scale(gp, w_gp)?;
    Ok(t.add(wgan, g)?)
}

/// One `u ~ U(0, 1)` per sample.
pub fn interpolation_weights(rng: &mut ChaCha8Rng, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| rng.random::<f64>()).collect()
}

/// `u_n·real_n + (1 − u_n)·fake_n` per sample, as a fresh tensor with no
/// history.
pub fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, u: &[f64]) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() || real.shape().first() != Some(&u.len()) {
        return Err(CoreError::Config(format!(
            "interpolate: real {:?}, fake {:?}, {} weights",
            real.shape(),
            fake.shape(),
            u.len()
        )));
    }
    let per = real.numel() / u.len().max(1);
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let w = T::lit(u[i / per]);
            w * r + (T::one() - w) * f
        })
        .collect();
    Ok(Tensor::new(real.shape().to_vec(), data)?)
}

/// `mean_n (‖∇_{x_int} D(x_int)_n‖₂ − 1)²`.
///
/// `x_int` must be a leaf holding the interpolates; `critic` maps it to one
/// score per sample. Samples must not interact inside the critic, so the
/// gradient of the summed scores splits into per-sample gradients.
pub fn gradient_penalty<T, F>(t: &mut Tape<T>, x_int: NodeId, critic: F) -> Result<NodeId>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    let scores = critic(t, x_int)?;
    let b = t.shape(x_int)[0];
    if t.value(scores).numel() != b {
        return Err(CoreError::Config(format!(
            "gradient penalty: {} scores for a batch of {b}",
            t.value(scores).numel()
        )));
    }
    let g = t.grad_wrt_input_differentiable(scores, x_int)?;
    let g = t.reshape(g, &[b, t.value(x_int).numel() / b])?;
    let sq = t.square(g)?;
    let ss = t.sum_to(sq, &[b, 1])?;
    let ss = t.add_scalar(ss, NORM_EPS)?;
    let norm = t.sqrt(ss)?;
    let dev = t.add_scalar(norm, -1.0)?;
    let pen = t.square(dev)?;
    Ok(t.mean(pen)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape<f64>, shape: Vec<usize>, v: Vec<f64>) -> NodeId {
        t.leaf(Tensor::new(shape, v).unwrap())
    }

    fn val(t: &Tape<f64>, n: NodeId) -> f64 {
        t.value(n).item()
    }

    #[test]
    fn adversarial_cases() {
        let mut t = Tape::new();
        for (s, want) in [(vec![5.0], -5.0), (vec![1.0, -1.0], 0.0), (vec![2.0, 4.0, 6.0], -4.0)] {
            let n = s.len();
            let x = leaf(&mut t, vec![n], s);
            let l = adversarial_loss(&mut t, x).unwrap();
            assert_eq!(val(&t, l), want);
        }
    }

    #[test]
    fn l1_cases() {
        let mut t = Tape::new();
        let a = leaf(&mut t, vec![2], vec![0.0, 0.5]);
        let b = leaf(&mut t, vec![2], vec![1.0, 0.5]);
        let l = l1_loss(&mut t, a, b).unwrap();
        assert_eq!(val(&t, l), 0.5);
        let l = l1_loss(&mut t, a, a).unwrap();
        assert_eq!(val(&t, l), 0.0);
        let c = leaf(&mut t, vec![3], vec![0.0; 3]);
        assert!(l1_loss(&mut t, a, c).is_err());
    }

    #[test]
    fn dice_cases() {
        let mut t = Tape::new();
        let x = leaf(&mut t, vec![4], vec![1.0, 0.0, 0.0, 0.0]);
        let y = leaf(&mut t, vec![4], vec![0.0, 1.0, 0.0, 0.0]);
        let z = leaf(&mut t, vec![4], vec![0.0; 4]);
        let same = dice_loss(&mut t, x, x, DICE_EPS).unwrap();
        assert!(val(&t, same).abs() < 1e-12);
        let disjoint = dice_loss(&mut t, x, y, DICE_EPS).unwrap();
        assert!((val(&t, disjoint) - (1.0 - DICE_EPS / (2.0 + DICE_EPS))).abs() < 1e-12);
        let empty = dice_loss(&mut t, z, z, DICE_EPS).unwrap();
        assert_eq!(val(&t, empty), 0.0);
    }

    #[test]
    fn composites() {
        let mut t = Tape::new();
        let adv = leaf(&mut t, vec![], vec![-1.0]);
        let l1 = leaf(&mut t, vec![], vec![0.1]);
        let dice = leaf(&mut t, vec![], vec![0.2]);
        let g = generator_loss(&mut t, adv, l1, dice, &LossWeights::default()).unwrap();
        assert!((val(&t, g) - 1.06).abs() < 1e-9);
        let zero = LossWeights {
            w_adv: 0.0,
            w_l1: 0.0,
            w_dice: 0.0,
            w_gp: 0.0,
        };
        let g = generator_loss(&mut t, adv, l1, dice, &zero).unwrap();
        assert_eq!(val(&t, g), 0.0);

        let wgan = leaf(&mut t, vec![], vec![-2.0]);
        let gp = leaf(&mut t, vec![], vec![0.5]);
        let d = discriminator_loss(&mut t, wgan, gp, 10.0).unwrap();
        assert_eq!(val(&t, d), 3.0);
        let d = discriminator_loss(&mut t, wgan, gp, 0.0).unwrap();
        assert_eq!(val(&t, d), -2.0);

        let f = leaf(&mut t, vec![2], vec![1.0, 1.0]);
        let r = leaf(&mut t, vec![2], vec![3.0, 3.0]);
        let w = wasserstein_loss(&mut t, f, r).unwrap();
        assert_eq!(val(&t, w), -2.0);
        let w = wasserstein_loss(&mut t, r, f).unwrap();
        assert_eq!(val(&t, w), 2.0);
    }

    #[test]
    fn interpolation_is_per_sample() {
        let real = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let fake = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let x = interpolate(&real, &fake, &[0.25, 0.75]).unwrap();
        assert_eq!(x.data(), &[0.25, 0.25, 0.75, 0.75]);
        assert!(interpolate(&real, &fake, &[0.5]).is_err());
    }

    fn linear_gp(w: Vec<f64>) -> f64 {
        let mut t = Tape::new();
        let n = w.len();
        let x = leaf(&mut t, vec![3, n], (0..3 * n).map(|i| i as f64 * 0.1).collect());
        let wn = leaf(&mut t, vec![n, 1], w);
        let gp = gradient_penalty(&mut t, x, |t, x| {
            let s = t.matmul(x, wn)?;
            Ok(t.reshape(s, &[3])?)
        })
        .unwrap();
        val(&t, gp)
    }

    #[test]
    fn penalty_closed_forms() {
        assert!(linear_gp(vec![0.6, 0.8]).abs() < 1e-8);
        assert!((linear_gp(vec![1.0, 2.0, 2.0]) - 4.0).abs() < 1e-8);
        let mut t = Tape::new();
        let x = leaf(&mut t, vec![2, 3], vec![0.5; 6]);
        let c = leaf(&mut t, vec![2], vec![7.0, 7.0]);
        let gp = gradient_penalty(&mut t, x, |_, _| Ok(c)).unwrap();
        assert!((val(&t, gp) - 1.0).abs() < 1e-5);
    }
}
