//! Randomised finite-difference sweep over every [`OpKind`], at first
//! order and, for ops on the critic path, at second order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check::{max_relative_error, numeric_gradient};
use crate::error::Result;
use crate::tape::{Attrs, NodeId, OpKind, Tape};
use crate::tensor::{numel, Tensor};

/// Outcome for one op kind over all of its random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub kind: OpKind,
    pub second_order: bool,
    pub instances: usize,
    pub max_error: f64,
}

/// Compares tape gradients of a scalar function of several inputs with
/// central differences, returning the worst relative error over every
/// coordinate of every input.
pub fn check_inputs<F>(f: &F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = f(&mut tape, &leaves)?;
    let analytic = tape.backward(y, &leaves)?;
    worst_error(inputs, &analytic, h, |xs| {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        f(&mut tape, &leaves).map(|y| tape.value(y).item())
    })
}

/// Second-order variant: differentiates `q(x) = Σ_i <r_i, ∂f/∂x_i>` where
/// the inner gradient is built with `create_graph`, and compares against
/// central differences of `q` evaluated through first-order gradients.
pub fn check_inputs_second_order<F>(f: &F, inputs: &[Tensor<f64>], probes: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let q = |tape: &mut Tape<f64>, leaves: &[NodeId]| -> Result<NodeId> {
        let y = f(tape, leaves)?;
        let grads = tape.gradients(y, leaves, true)?;
        let mut acc: Option<NodeId> = None;
        for (g, r) in grads.iter().zip(probes) {
            let r = tape.leaf(r.clone());
            let p = tape.mul(*g, r)?;
            let s = tape.sum(p)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        Ok(acc.expect("at least one input"))
    };
    check_inputs(&q, inputs, h)
}

fn worst_error(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
    eval: impl Fn(&[Tensor<f64>]) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let numeric = numeric_gradient(
            |v| {
                let mut xs = inputs.to_vec();
                xs[k] = Tensor::from_parts(inputs[k].shape().to_vec(), v.to_vec());
                eval(&xs).unwrap_or(f64::NAN)
            },
            inputs[k].data(),
            h,
        );
        let err = max_relative_error(analytic[k].data(), &numeric);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(worst)
}

/// Test case: inputs plus attributes for one random instance.
struct Case {
    inputs: Vec<Tensor<f64>>,
    attrs: Attrs,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[lo, hi]` and random sign, keeping clear of
/// the kink at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Random shape of rank 1 to `max_rank` with extents up to `max`.
fn dims(rng: &mut ChaCha8Rng, max_rank: usize, max: usize) -> Vec<usize> {
    let rank = rng.random_range(1..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

fn case(kind: OpKind, rng: &mut ChaCha8Rng) -> Case {
    let mut attrs = Attrs::default();
    let inputs = match kind {
        OpKind::Conv2d => {
            let (n, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
            let k = [1, 3, 4][rng.random_range(0..3)];
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=k / 2);
            let hw = rng.random_range(k.max(3)..=6);
            attrs.stride = Some(stride);
            attrs.pad = Some(pad);
            vec![
                uniform(rng, &[n, ci, hw, hw + 1], -1.0, 1.0),
                uniform(rng, &[co, ci, k, k], -1.0, 1.0),
            ]
        }
        OpKind::Conv2dTransposeOrUpsample => {
            let (n, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3));
            attrs.factor = Some(2);
            attrs.pad = Some(1);
            let x = uniform(rng, &[n, ci, 3, 2], -1.0, 1.0);
            if rng.random_bool(0.5) {
                vec![x, uniform(rng, &[co, ci, 3, 3], -1.0, 1.0)]
            } else {
                vec![x]
            }
        }
        OpKind::Dense => {
            let (b, i, o) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
            let mut v = vec![uniform(rng, &[b, i], -1.0, 1.0), uniform(rng, &[i, o], -1.0, 1.0)];
            if rng.random_bool(0.5) {
                v.push(uniform(rng, &[o], -1.0, 1.0));
            }
            v
        }
        OpKind::LeakyRelu | OpKind::Relu | OpKind::Abs => {
            let s = dims(rng, 4, 4);
            vec![away_from_zero(rng, &s, 0.05, 1.5)]
        }
        OpKind::Tanh | OpKind::Sigmoid | OpKind::Square => {
            let s = dims(rng, 4, 4);
            vec![uniform(rng, &s, -2.0, 2.0)]
        }
        OpKind::Sqrt => {
            let s = dims(rng, 4, 4);
            vec![uniform(rng, &s, 0.2, 3.0)]
        }
        OpKind::Clamp => {
            let s = dims(rng, 4, 4);
            attrs.lo = Some(-0.5);
            attrs.hi = Some(0.5);
            // Keep clear of both clamp corners.
            let x = Tensor::from_fn(s.clone(), |_| {
                let base = [-1.0, -0.2, 0.0, 0.2, 1.0][rng.random_range(0..5)];
                base + rng.random_range(-0.15..0.15)
            });
            vec![x]
        }
        OpKind::BatchNorm => {
            let n = rng.random_range(2..=3);
            let c = rng.random_range(1..=3);
            vec![uniform(rng, &[n, c, 3, 3], -1.0, 1.0)]
        }
        OpKind::Add | OpKind::Mul => {
            let full = dims(rng, 4, 4);
            // Second operand: a random right-aligned suffix with some axes
            // collapsed to one, to exercise broadcasting.
            let keep = rng.random_range(1..=full.len());
            let other: Vec<usize> = full[full.len() - keep..]
                .iter()
                .map(|&d| if rng.random_bool(0.3) { 1 } else { d })
                .collect();
            if rng.random_bool(0.5) {
                vec![uniform(rng, &full, -1.0, 1.0), uniform(rng, &other, -1.0, 1.0)]
            } else {
                vec![uniform(rng, &other, -1.0, 1.0), uniform(rng, &full, -1.0, 1.0)]
            }
        }
        OpKind::Concat => {
            let base = dims(rng, 4, 3);
            let axis = rng.random_range(0..base.len());
            attrs.axis = Some(axis);
            (0..rng.random_range(1..=3))
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.random_range(1..=3);
                    uniform(rng, &s, -1.0, 1.0)
                })
                .collect()
        }
        OpKind::Reshape => {
            let s = dims(rng, 4, 4);
            let mut t = vec![numel(&s)];
            if t[0] % 2 == 0 {
                t = vec![2, t[0] / 2];
            }
            attrs.shape = Some(t);
            vec![uniform(rng, &s, -1.0, 1.0)]
        }
        OpKind::Mean | OpKind::Sum => {
            let s = dims(rng, 4, 4);
            if rng.random_bool(0.5) {
                let axes: Vec<usize> = (0..s.len()).filter(|_| rng.random_bool(0.5)).collect();
                attrs.axes = Some(axes);
            }
            vec![uniform(rng, &s, -1.0, 1.0)]
        }
    };
    Case { inputs, attrs }
}

/// Scalarises `op(inputs)` with a fixed random weighting so that every
/// output coordinate contributes a distinct gradient.
fn weighted<'a>(kind: OpKind, attrs: &'a Attrs, weights: &'a Tensor<f64>) -> impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> + 'a {
    move |tape, leaves| {
        let y = tape.record(kind, leaves, attrs)?;
        let w = tape.leaf(weights.clone());
        let p = tape.mul(y, w)?;
        tape.sum(p)
    }
}

/// Kinds whose adjoints must themselves be differentiable: everything the
/// critic uses, plus the smooth activations.
pub fn second_order_kinds() -> Vec<OpKind> {
    OpKind::ALL
        .into_iter()
        .filter(|k| !matches!(k, OpKind::BatchNorm))
        .collect()
}

/// Runs `instances` random cases for every op kind at first order and for
/// [`second_order_kinds`] at second order.
pub fn op_gradient_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut out = Vec::new();
    for second_order in [false, true] {
        for kind in OpKind::ALL {
            if second_order && !second_order_kinds().contains(&kind) {
                continue;
            }
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let c = case(kind, &mut rng);
                let mut probe_tape = Tape::new();
                let leaves: Vec<NodeId> = c.inputs.iter().map(|x| probe_tape.leaf(x.clone())).collect();
                let y = probe_tape.record(kind, &leaves, &c.attrs)?;
                let weights = uniform(&mut rng, probe_tape.shape(y), -1.0, 1.0);
                let f = weighted(kind, &c.attrs, &weights);
                let err = if second_order {
                    let probes: Vec<Tensor<f64>> =
                        c.inputs.iter().map(|x| uniform(&mut rng, x.shape(), -1.0, 1.0)).collect();
                    check_inputs_second_order(&f, &c.inputs, &probes, h)?
                } else {
                    check_inputs(&f, &c.inputs, h)?
                };
                worst = worst.max(err);
            }
            out.push(OpCheck {
                kind,
                second_order,
                instances,
                max_error: worst,
            });
        }
    }
    Ok(out)
}
