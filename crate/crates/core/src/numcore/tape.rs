//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use crate::error::{Error, Result};

use super::ops;
use super::Tensor;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, padding: usize },
    AddBias { x: Var, bias: Var },
    Relu(Var),
    Add(Var, Var),
    Sum(Var),
    Mse { pred: Var, target: Var, value: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    /// Leaf flag for leaves, "depends on a trainable leaf" otherwise.
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of every node that requires them, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::invalid(format!("variable {} is not on this tape", v.0)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Loss value at full accumulation precision when `v` is an MSE node.
    pub fn scalar(&self, v: Var) -> f64 {
        match self.nodes[v.0].op {
            Op::Mse { value, .. } => value,
            _ => f64::from(self.nodes[v.0].value.data()[0]),
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        let rg = value.requires_grad();
        self.push(value, Op::Leaf, rg)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (ni, nk) = (self.node(input)?, self.node(kernel)?);
        let out = ops::conv2d(&ni.value, &nk.value, padding)?;
        let rg = ni.requires_grad || nk.requires_grad;
        Ok(self.push(out, Op::Conv2d { input, kernel, padding }, rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (nx, nb) = (self.node(x)?, self.node(bias)?);
        let out = ops::add_bias(&nx.value, &nb.value)?;
        let rg = nx.requires_grad || nb.requires_grad;
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let nx = self.node(x)?;
        let out = ops::relu(&nx.value).with_grad(false);
        let rg = nx.requires_grad;
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let out = ops::add(&na.value, &nb.value)?;
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let nx = self.node(x)?;
        let s: f64 = nx.value.data().iter().map(|&v| f64::from(v)).sum();
        let rg = nx.requires_grad;
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum(x), rg))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (np, nt) = (self.node(pred)?, self.node(target)?);
        let value = ops::mse_loss(&np.value, &nt.value)?;
        let rg = np.requires_grad || nt.requires_grad;
        Ok(self.push(Tensor::scalar(value as f32), Op::Mse { pred, target, value }, rg))
    }

    /// Propagate d(root)/d(node) back through the tape.
    ///
    /// Every leaf created with `requires_grad` receives a gradient of its own
    /// shape; leaves the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rn = self.node(root)?;
        if rn.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                rn.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, kernel, padding } => {
                    let want_i = self.nodes[input.0].requires_grad;
                    let want_k = self.nodes[kernel.0].requires_grad;
                    let (gi, gk) = ops::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        padding,
                        &g,
                        want_i,
                        want_k,
                    )?;
                    if let Some(gi) = gi {
                        accumulate(&mut grads, input, gi);
                    }
                    if let Some(gk) = gk {
                        accumulate(&mut grads, kernel, gk);
                    }
                }
                Op::AddBias { x, bias } => {
                    if self.nodes[bias.0].requires_grad {
                        let [_, f, h, w] = g.dims4()?;
                        let mut gb = vec![0.0f64; f];
                        for (i, chunk) in g.data().chunks(h * w).enumerate() {
                            gb[i % f] += chunk.iter().map(|&v| f64::from(v)).sum::<f64>();
                        }
                        let gb = gb.into_iter().map(|v| v as f32).collect();
                        accumulate(&mut grads, bias, Tensor::from_vec(&[f], gb)?);
                    }
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut grads, x, g);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, Tensor::from_vec(xv.shape(), data)?);
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::Sum(x) => {
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut grads, x, Tensor::full(xv.shape(), g.data()[0])?);
                }
                Op::Mse { pred, target, .. } => {
                    let p = &self.nodes[pred.0].value;
                    let t = &self.nodes[target.0].value;
                    let scale = 2.0 * f64::from(g.data()[0]) / p.len() as f64;
                    let diff: Vec<f32> = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(&a, &b)| ((f64::from(a) - f64::from(b)) * scale) as f32)
                        .collect();
                    if self.nodes[target.0].requires_grad {
                        let neg = diff.iter().map(|v| -v).collect();
                        accumulate(&mut grads, target, Tensor::from_vec(t.shape(), neg)?);
                    }
                    if self.nodes[pred.0].requires_grad {
                        accumulate(&mut grads, pred, Tensor::from_vec(p.shape(), diff)?);
                    }
                }
            }
        }

        // Keep only trainable leaves; fill unreached ones with zeros.
        for (idx, node) in self.nodes.iter().enumerate() {
            let trainable_leaf = matches!(node.op, Op::Leaf) && node.requires_grad;
            if !trainable_leaf {
                grads[idx] = None;
            } else if grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape())?);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.with_grad(false)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = GradTape::new();
        let theta = tape.leaf(Tensor::randn(&[2, 3], StreamKey::new(1, "t"), 1.0).unwrap().with_grad(true));
        let s = tape.sum(theta).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(theta).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::full(&[3], 2.0).unwrap().with_grad(true));
        let b = tape.leaf(Tensor::full(&[4], 5.0).unwrap().with_grad(true));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[0.0; 4]);
        assert_eq!(g.get(b).unwrap().shape(), &[4]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::full(&[3], 2.0).unwrap().with_grad(true));
        let r = tape.relu(a).unwrap();
        assert!(matches!(tape.backward(r), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constants_have_no_gradient_slot() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::full(&[3], 2.0).unwrap().with_grad(true));
        let c = tape.leaf(Tensor::full(&[3], 1.0).unwrap());
        let s = tape.add(a, c).unwrap();
        let s = tape.sum(s).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(a).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::full(&[2], 1.5).unwrap().with_grad(true));
        let s = tape.add(a, a).unwrap();
        let s = tape.sum(s).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0]);
    }
}
