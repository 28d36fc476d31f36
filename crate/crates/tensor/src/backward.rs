//! Reverse pass. Adjoints are themselves recorded as tape ops, so with
//! `create_graph` the resulting gradient nodes can be differentiated again
//! (needed for the gradient penalty). Without it the adjoint nodes are
//! discarded once the leaf gradients have been read.

use crate::error::{Result, TensorError};
use crate::tape::{NodeId, Op, Tape};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// Gradients of the scalar `output` with respect to each node in `wrt`,
    /// returned as tape nodes. Nodes in `wrt` that `output` does not depend
    /// on get an exact zero gradient.
    ///
    /// With `create_graph` every op on the differentiated path must itself
    /// support differentiation; batch normalisation does not.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId], create_graph: bool) -> Result<Vec<NodeId>> {
        let out_shape = self.shape(output).to_vec();
        if self.value(output).numel() != 1 {
            return Err(TensorError::NonScalarLoss(out_shape));
        }
        let end = output.0 + 1;
        let mut needed = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                needed[w.0] = true;
            }
        }
        let start = wrt.iter().map(|w| w.0).min().unwrap_or(end);
        for i in start..end {
            if !needed[i] {
                needed[i] = self.nodes[i].inputs.iter().any(|j| needed[j.0]);
            }
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; end];
        if needed[output.0] {
            adj[output.0] = Some(self.leaf(Tensor::ones(out_shape)));
        }
        for i in (start..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !needed[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            if create_graph && matches!(self.nodes[i].op, Op::BatchNorm { .. } | Op::BatchNormGrad { .. }) {
                return Err(TensorError::DoubleBackpropUnsupported(self.nodes[i].op.name()));
            }
            let inputs = self.nodes[i].inputs.clone();
            for (slot, &inp) in inputs.iter().enumerate() {
                if !needed[inp.0] {
                    continue;
                }
                let contrib = self.vjp(NodeId(i), slot, g)?;
                adj[inp.0] = Some(match adj[inp.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w).to_vec());
                    Ok(self.leaf(zeros))
                }
            })
            .collect()
    }

    /// First-order gradients of a scalar loss as plain tensors. The tape is
    /// left exactly as it was before the call.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor<T>>> {
        let mark = self.len();
        let result = self.gradients(loss, wrt, false).and_then(|ids| {
            ids.into_iter()
                .map(|id| {
                    let g = self.value(id).clone();
                    if g.is_finite() {
                        Ok(g)
                    } else {
                        Err(TensorError::NonFinite("backward".into()))
                    }
                })
                .collect()
        });
        self.truncate(mark);
        result
    }

    /// Gradient of `output` (summed over its elements if it holds one score
    /// per sample) with respect to `input`, recorded so that it can be
    /// differentiated again.
    pub fn grad_wrt_input_differentiable(&mut self, output: NodeId, input: NodeId) -> Result<NodeId> {
        let scalar = if self.value(output).numel() == 1 {
            output
        } else {
            self.sum(output)?
        };
        Ok(self.gradients(scalar, &[input], true)?[0])
    }

    /// Adjoint contribution of `node` to its input `slot`, given the
    /// node's output adjoint `g`.
    fn vjp(&mut self, node: NodeId, slot: usize, g: NodeId) -> Result<NodeId> {
        let op = self.nodes[node.0].op.clone();
        let inputs = self.nodes[node.0].inputs.clone();
        let in_shape = |tape: &Self, k: usize| tape.shape(inputs[k]).to_vec();
        match op {
            Op::Leaf => unreachable!("leaves have no inputs"),
            Op::Conv2d { stride, pad } => {
                let (x, w) = (inputs[0], inputs[1]);
                if slot == 0 {
                    let input_shape = in_shape(self, 0);
                    self.apply(Op::Conv2dInputGrad { stride, pad, input_shape }, vec![g, w])
                } else {
                    let weight_shape = in_shape(self, 1);
                    self.apply(Op::Conv2dWeightGrad { stride, pad, weight_shape }, vec![x, g])
                }
            }
            Op::Conv2dInputGrad { stride, pad, .. } => {
                let (gy, w) = (inputs[0], inputs[1]);
                if slot == 0 {
                    self.apply(Op::Conv2d { stride, pad }, vec![g, w])
                } else {
                    let weight_shape = in_shape(self, 1);
                    self.apply(Op::Conv2dWeightGrad { stride, pad, weight_shape }, vec![g, gy])
                }
            }
            Op::Conv2dWeightGrad { stride, pad, .. } => {
                let (x, gy) = (inputs[0], inputs[1]);
                if slot == 0 {
                    let input_shape = in_shape(self, 0);
                    self.apply(Op::Conv2dInputGrad { stride, pad, input_shape }, vec![gy, g])
                } else {
                    self.apply(Op::Conv2d { stride, pad }, vec![x, g])
                }
            }
            Op::MatMul { ta, tb } => {
                let (a, b) = (inputs[0], inputs[1]);
                match (slot, ta, tb) {
                    (0, false, _) => self.matmul_t(g, b, false, !tb),
                    (0, true, _) => self.matmul_t(b, g, tb, true),
                    (_, _, false) => self.matmul_t(a, g, !ta, false),
                    (_, _, true) => self.matmul_t(g, a, true, ta),
                }
            }
            Op::Add => {
                let s = in_shape(self, slot);
                self.sum_to(g, &s)
            }
            Op::Mul => {
                let other = inputs[1 - slot];
                let p = self.mul(g, other)?;
                let s = in_shape(self, slot);
                self.sum_to(p, &s)
            }
            Op::Scale(c) => self.apply(Op::Scale(c), vec![g]),
            Op::AddScalar(_) => Ok(g),
            Op::LeakyRelu(s) => {
                let mask = self.value(inputs[0]).map(|v| if v > T::zero() { T::one() } else { s });
                let m = self.leaf(mask);
                self.mul(g, m)
            }
            Op::Abs => {
                let sign = self.value(inputs[0]).map(|v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                let m = self.leaf(sign);
                self.mul(g, m)
            }
            Op::Clamp { lo, hi } => {
                let mask = self
                    .value(inputs[0])
                    .map(|v| if v > lo && v < hi { T::one() } else { T::zero() });
                let m = self.leaf(mask);
                self.mul(g, m)
            }
            Op::Tanh => {
                let y2 = self.square(node)?;
                let neg = self.scale(y2, -1.0)?;
                let d = self.add_scalar(neg, 1.0)?;
                self.mul(g, d)
            }
            Op::Sigmoid => {
                let neg = self.scale(node, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let d = self.mul(node, one_minus)?;
                self.mul(g, d)
            }
            Op::Square => {
                let two_x = self.scale(inputs[0], 2.0)?;
                self.mul(g, two_x)
            }
            Op::Sqrt => {
                let r = self.recip(node)?;
                let half_r = self.scale(r, 0.5)?;
                self.mul(g, half_r)
            }
            Op::Recip => {
                let y2 = self.square(node)?;
                let d = self.scale(y2, -1.0)?;
                self.mul(g, d)
            }
            Op::BatchNorm { inv_std, .. } => self.apply(Op::BatchNormGrad { inv_std }, vec![g, node]),
            Op::BatchNormGrad { .. } => Err(TensorError::DoubleBackpropUnsupported("batch_norm_grad")),
            Op::Concat { axis } => {
                let start: usize = inputs[..slot].iter().map(|&i| self.shape(i)[axis]).sum();
                let len = self.shape(inputs[slot])[axis];
                self.slice(g, axis, start, len)
            }
            Op::Slice { axis, start, .. } => {
                let full = self.shape(inputs[0])[axis];
                self.apply(Op::Embed { axis, start, full }, vec![g])
            }
            Op::Embed { axis, start, .. } => {
                let len = self.shape(inputs[0])[axis];
                self.slice(g, axis, start, len)
            }
            Op::Reshape { .. } => {
                let s = in_shape(self, 0);
                self.reshape(g, &s)
            }
            Op::SumTo { .. } => {
                let s = in_shape(self, 0);
                self.broadcast_to(g, &s)
            }
            Op::BroadcastTo { .. } => {
                let s = in_shape(self, 0);
                self.sum_to(g, &s)
            }
            Op::Upsample { factor } => self.apply(Op::SumPool { factor }, vec![g]),
            Op::SumPool { factor } => self.apply(Op::Upsample { factor }, vec![g]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[4.0, -1.0, 2.5]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s, &[x]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.square(x).unwrap();
        let m = tape.mean(sq).unwrap();
        let g = tape.backward(m, &[x]).unwrap();
        let expect = [2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in g[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unreached_leaf_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s, &[x, w]).unwrap();
        assert_eq!(g[1], Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn backward_restores_tape_length() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.square(x).unwrap();
        let s = tape.sum(y).unwrap();
        let before = tape.len();
        tape.backward(s, &[x]).unwrap();
        assert_eq!(tape.len(), before);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x, &[x]), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn linear_critic_input_gradient() {
        // D(x) = w · x with w = (3, 4)
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.3, -0.7]));
        let w = tape.leaf(t(&[2, 1], &[3.0, 4.0]));
        let d = tape.matmul(x, w).unwrap();
        let gx = tape.grad_wrt_input_differentiable(d, x).unwrap();
        assert_eq!(tape.value(gx).data(), &[3.0, 4.0]);
        assert_eq!(tape.value(gx).norm(), 5.0);
    }

    #[test]
    fn constant_critic_has_zero_input_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.3, -0.7]));
        let c = tape.leaf(Tensor::scalar(2.5));
        let gx = tape.grad_wrt_input_differentiable(c, x).unwrap();
        assert_eq!(tape.value(gx), &Tensor::zeros(vec![1, 2]));
    }

    #[test]
    fn batch_norm_blocks_double_backprop() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 2, 2, 2], |i| i as f64 * 0.3));
        let (y, _) = tape.batch_norm(x, 1e-5).unwrap();
        let sq = tape.square(y).unwrap();
        let s = tape.sum(sq).unwrap();
        assert!(matches!(
            tape.grad_wrt_input_differentiable(s, x),
            Err(TensorError::DoubleBackpropUnsupported("batch_norm"))
        ));
        // First-order differentiation through it is fine.
        assert!(tape.backward(s, &[x]).is_ok());
    }

    #[test]
    fn second_order_through_square() {
        // f(x) = x^3 via x * x^2; f'' = 6x.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5f64));
        let x2 = tape.square(x).unwrap();
        let x3 = tape.mul(x, x2).unwrap();
        let d1 = tape.gradients(x3, &[x], true).unwrap()[0];
        assert!((tape.value(d1).item() - 3.0 * 2.25).abs() < 1e-12);
        let d2 = tape.backward(d1, &[x]).unwrap();
        assert!((d2[0].item() - 9.0).abs() < 1e-12);
    }
}
