use crate::kernels::ConvGeometry;
use crate::tensor::numel;
use crate::{Float, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Recorded operation with whatever the backward rule needs.
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Matmul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        dims: [usize; 4],
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        batch: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        batch: usize,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Gelu(Var),
    Tanh(Var),
    Softplus(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    CausalMask(Var),
    CausalSoftmax {
        x: Var,
        scale: T,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    StraightThrough {
        through: Var,
    },
    L2Normalize {
        x: Var,
        eps: T,
    },
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, which is a topological order of the
/// graph; [`Tape::backward`] walks it in reverse.
pub struct Tape<T: Float = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor, zeros when nothing reached `v`.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let value = &self.nodes[v.0].value;
        match &self.nodes[v.0].grad {
            Some(g) => Tensor::from_parts(value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Multiplies every stored gradient by `factor`.
    pub fn scale_grads(&mut self, factor: T) {
        for g in self.nodes.iter_mut().filter_map(|n| n.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Every node that requires grad and is reachable from `root` has
    /// `d root / d node` added to its stored gradient, so repeated calls
    /// accumulate until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_len = self.nodes[root.0].value.numel();
        if root_len != 1 || !self.nodes[root.0].value.shape().iter().all(|&d| d == 1) {
            return Err(TensorError::Usage(format!(
                "backward: root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut bp = Backprop {
            nodes: &self.nodes,
            grads: (0..=root.0).map(|_| None).collect(),
        };
        bp.grads[root.0] = Some(vec![T::one()]);
        let mut finished = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = bp.grads[i].take() else {
                continue;
            };
            crate::ops::backward_node(&mut bp, i, &g)?;
            finished.push((i, g));
        }
        for (i, g) in finished {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Scratch state of one backward sweep.
pub(crate) struct Backprop<'a, T> {
    pub(crate) nodes: &'a [Node<T>],
    pub(crate) grads: Vec<Option<Vec<T>>>,
}

impl<'a, T: Float> Backprop<'a, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Mutable gradient accumulator for `v`, zero-initialised on first use.
    pub(crate) fn slot(&mut self, v: Var) -> &mut [T] {
        let n = numel(self.nodes[v.0].value.shape());
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub(crate) fn accumulate(&mut self, v: Var, g: &[T]) {
        if self.wants(v) {
            self.slot(v).iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        }
    }
}
