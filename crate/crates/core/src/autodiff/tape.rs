use super::ops::{self, Prim};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

struct Node {
    prim: Prim,
    inputs: Vec<Var>,
    value: Tensor,
}

/// Append-only record of primitive applications. Inputs of a node always
/// precede it, so reverse iteration is a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor (parameter or constant) as a graph leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            prim: Prim::Leaf,
            inputs: Vec::new(),
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Apply a primitive to already-recorded variables and record the result.
    pub fn apply(&mut self, prim: Prim, inputs: &[Var]) -> Result<Var, AutodiffError> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(AutodiffError::NotOnTape(v.0));
            }
        }
        let tensors: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = ops::forward(&prim, &tensors)?;
        self.nodes.push(Node {
            prim,
            inputs: inputs.to_vec(),
            value,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Apply a primitive looked up by name, e.g. `"leaky_relu(0.2)"`.
    pub fn apply_named(&mut self, name: &str, inputs: &[Var]) -> Result<Var, AutodiffError> {
        self.apply(Prim::parse(name)?, inputs)
    }

    // ── convenience wrappers ─────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Matmul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Affine, &[x, w, b])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.apply(Prim::LeakyRelu { slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Tanh, &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Softplus, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Square, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::Mean, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(Prim::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.apply(Prim::Slice { start, end }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        self.apply(Prim::Concat, xs)
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(Prim::Broadcast { shape: shape.to_vec() }, &[x])
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, AutodiffError> {
        self.apply(Prim::UpsampleNearest { factor }, &[x])
    }

    pub fn masked_sum_of_squares(&mut self, d: Var, mask: Var) -> Result<Var, AutodiffError> {
        self.apply(Prim::MaskedSumSquares, &[d, mask])
    }

    /// Negate by subtracting from a zero scalar.
    pub fn neg(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let zero = self.leaf(Tensor::scalar(0.0));
        let shape = self.value(x).shape().to_vec();
        let z = if shape.is_empty() {
            zero
        } else {
            self.broadcast(zero, &shape)?
        };
        self.sub(z, x)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Accumulate gradients of a scalar loss with respect to every node that
    /// participates in it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::NotOnTape(loss.0));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(
                loss_node.value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !matches!(node.prim, Prim::Leaf) {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let gins = ops::backward(&node.prim, &inputs, &node.value, &gout);
                for (v, gin) in node.inputs.iter().zip(gins) {
                    let Some(gin) = gin else { continue };
                    match &mut grads[v.0] {
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&gin) {
                                *a += g;
                            }
                        }
                        slot @ None => *slot = Some(gin),
                    }
                }
            }
            grads[idx] = Some(gout);
        }

        let tensors = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient matches node shape")
                })
            })
            .collect();
        Ok(Gradients { grads: tensors })
    }

    /// Re-run every recorded primitive on its recorded inputs and check the
    /// stored outputs are reproduced bit-exactly.
    pub fn replay_check(&self) -> Result<bool, AutodiffError> {
        for node in &self.nodes {
            if matches!(node.prim, Prim::Leaf) {
                continue;
            }
            let inputs: Vec<&Tensor> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let again = ops::forward(&node.prim, &inputs)?;
            if again.data() != node.value.data() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Gradient map produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if no gradient flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, or zeros of the given shape.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_grad_is_2x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn tanh_grad_at_zero_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[4]));
        let y = tape.tanh(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sum_of_losses_distributes() {
        // grad of (la + lb) equals grad(la) + grad(lb)
        let build = |with_sum: bool| -> (Tensor, Tensor) {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap(),
            );
            let sq = tape.square(x).unwrap();
            let la = tape.sum(sq).unwrap();
            let th = tape.tanh(x).unwrap();
            let lb = tape.sum(th).unwrap();
            if with_sum {
                let total = tape.add(la, lb).unwrap();
                let g = tape.backward(total).unwrap();
                (g.wrt(x).unwrap().clone(), Tensor::zeros(&[3]))
            } else {
                let ga = tape.backward(la).unwrap();
                let gb = tape.backward(lb).unwrap();
                (ga.wrt(x).unwrap().clone(), gb.wrt(x).unwrap().clone())
            }
        };
        let (combined, _) = build(true);
        let (ga, gb) = build(false);
        for i in 0..3 {
            let sep = ga.data()[i] + gb.data()[i];
            assert!((combined.data()[i] - sep).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_sum_of_squares_grad_exact() {
        // d/da ||M (a-b)||^2 = 2 M (a-b), checked exactly
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::from_vec(vec![4], vec![1.0, 0.0, 3.0, 0.0]).unwrap());
        let m = tape.leaf(Tensor::from_vec(vec![4], vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let d = tape.sub(a, b).unwrap();
        let loss = tape.masked_sum_of_squares(d, m).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[0.0, 4.0, 0.0, 8.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[0.0, -4.0, 0.0, -8.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn foreign_var_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let mut other = Tape::new();
        assert!(matches!(
            other.apply(Prim::Square, &[x]),
            Err(AutodiffError::NotOnTape(_))
        ));
        assert!(matches!(
            other.backward(Var(7)),
            Err(AutodiffError::NotOnTape(7))
        ));
    }

    #[test]
    fn replay_reproduces_outputs_bit_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2, 2], vec![0.3, -1.2, 2.2, 0.0]).unwrap());
        let y = tape.tanh(x).unwrap();
        let z = tape.mul(x, y).unwrap();
        let _ = tape.sum(z).unwrap();
        assert!(tape.replay_check().unwrap());
    }

    #[test]
    fn same_program_same_bits() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(vec![3], vec![0.1, 0.7, -0.4]).unwrap());
            let h = tape.softplus(x).unwrap();
            let loss = tape.mean(h).unwrap();
            let g = tape.backward(loss).unwrap();
            (
                tape.value(loss).data().to_vec(),
                g.wrt(x).unwrap().data().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
