mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shape;

use crate::tape::{Backprop, Op};
use crate::{Float, Result};

pub(crate) fn backward_node<T: Float>(bp: &mut Backprop<'_, T>, i: usize, g: &[T]) -> Result<()> {
    let nodes = bp.nodes;
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::Add(..) | Op::Sub(..) | Op::Mul(..) | Op::Scale(..) | Op::AddBias(..) => {
            elementwise::backward(bp, &node.op, g)
        }
        Op::Relu(_) | Op::LeakyRelu(..) | Op::Gelu(_) | Op::Tanh(_) | Op::Softplus(_) => {
            elementwise::backward_unary(bp, &node.op, &node.value, g)
        }
        Op::Matmul(..) | Op::Bmm { .. } => linalg::backward(bp, &node.op, g),
        Op::Conv2d { .. } | Op::ConvTranspose2d { .. } => conv::backward(bp, &node.op, g),
        Op::LayerNorm { .. }
        | Op::Softmax { .. }
        | Op::CausalMask(_)
        | Op::CausalSoftmax { .. }
        | Op::CrossEntropy { .. }
        | Op::L2Normalize { .. } => nn::backward(bp, &node.op, &node.value, g),
        Op::Gather { .. }
        | Op::Reshape(_)
        | Op::Permute { .. }
        | Op::Sum(_)
        | Op::Mean(_)
        | Op::StraightThrough { .. } => shape::backward(bp, &node.op, g),
    }
    Ok(())
}
