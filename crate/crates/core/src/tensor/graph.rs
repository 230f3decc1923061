//! Define-by-run tape. Each insertion runs the forward kernel eagerly and
//! records the node; `backward` walks the arena in reverse insertion order,
//! which is a valid topological order because inputs always precede their
//! consumers. Gradients from multiple consumers accumulate by addition.

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    CrossEntropy {
        probs: NodeId,
        labels: Vec<usize>,
    },
    Reshape {
        input: NodeId,
    },
    Stack {
        inputs: Vec<NodeId>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
}

/// Arena holding one training step's computation.
pub struct ComputeGraph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl ComputeGraph {
    pub fn new() -> Self {
        ComputeGraph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).value
    }

    /// Insert a tensor as a graph input. Parameters should arrive with
    /// `requires_grad` set so `backward` deposits their gradient.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    /// Remove a leaf's tensor from the arena (with its accumulated
    /// gradient), leaving a placeholder. Panics if the node has consumers
    /// that were not yet walked; intended for reclaiming parameters after
    /// `backward`.
    pub fn take(&mut self, id: NodeId) -> Tensor {
        let node = &mut self.nodes[id.0];
        let mut out = std::mem::replace(&mut node.value, Tensor::zeros(vec![1]));
        if out.requires_grad {
            out.grad = node.grad.take();
        }
        out
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv2d_forward(
            &self.node(input).value,
            &self.node(kernels).value,
            &self.node(bias).value,
            stride,
            padding,
        )?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let (value, argmax) = ops::maxpool2d_with_indices(&self.node(input).value, window, stride)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = ops::dense_forward(
            &self.node(input).value,
            &self.node(weights).value,
            &self.node(bias).value,
        )?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::relu(&self.node(input).value)?;
        Ok(self.push(value, Op::Relu { input }))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::softmax(&self.node(input).value)?;
        Ok(self.push(value, Op::Softmax { input }))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let loss = ops::cross_entropy_loss(&self.node(probs).value, labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.node(input).value.clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Stack B vectors of length C into a [B, C] batch.
    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Argument("stack of zero tensors".into()));
        }
        let c = self.node(inputs[0]).value.numel();
        let mut data = Vec::with_capacity(inputs.len() * c);
        for &id in inputs {
            let t = &self.node(id).value;
            if t.numel() != c {
                return Err(Error::Dimension(format!(
                    "stack rows must agree in size: {} vs {c}",
                    t.numel()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![inputs.len(), c], data)?;
        Ok(self.push(
            value,
            Op::Stack {
                inputs: inputs.to_vec(),
            },
        ))
    }

    fn add_grad(&mut self, id: NodeId, grad: &[f32]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => node.grad = Some(grad.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss node. Gradients land in each node's
    /// accumulator; leaves created with `requires_grad` surface theirs via
    /// `take`. One pass per graph: node gradients are reused as scratch, so
    /// a second call would double-count.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; build a fresh graph per step".into(),
            ));
        }
        if self.node(loss).value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).value.shape()
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let grad = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            // Split borrow: read the node's op/value, write other nodes' grads.
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let (gx, gw, gb) = ops::conv2d_backward(
                        &before[input.0].value,
                        &before[kernels.0].value,
                        &grad,
                        *stride,
                        *padding,
                    );
                    let (input, kernels, bias) = (*input, *kernels, *bias);
                    self.add_grad(input, &gx);
                    self.add_grad(kernels, &gw);
                    self.add_grad(bias, &gb);
                }
                Op::MaxPool2d { input, argmax } => {
                    let mut gx = vec![0.0f32; before[input.0].value.numel()];
                    for (&src, &g) in argmax.iter().zip(&grad) {
                        gx[src as usize] += g;
                    }
                    let input = *input;
                    self.add_grad(input, &gx);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let (gx, gw, gb) = ops::dense_backward(
                        &before[input.0].value,
                        &before[weights.0].value,
                        &grad,
                    );
                    let (input, weights, bias) = (*input, *weights, *bias);
                    self.add_grad(input, &gx);
                    self.add_grad(weights, &gw);
                    self.add_grad(bias, &gb);
                }
                Op::Relu { input } => {
                    let gx: Vec<f32> = before[input.0]
                        .value
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    let input = *input;
                    self.add_grad(input, &gx);
                }
                Op::Softmax { input } => {
                    let gx = ops::softmax_backward(&node.value, &grad);
                    let input = *input;
                    self.add_grad(input, &gx);
                }
                Op::CrossEntropy { probs, labels } => {
                    let gx = ops::cross_entropy_backward(&before[probs.0].value, labels, grad[0]);
                    let probs = *probs;
                    self.add_grad(probs, &gx);
                }
                Op::Reshape { input } => {
                    let input = *input;
                    self.add_grad(input, &grad);
                }
                Op::Stack { inputs } => {
                    let inputs = inputs.clone();
                    let c = node.value.numel() / inputs.len();
                    for (row, &id) in inputs.iter().enumerate() {
                        self.add_grad(id, &grad[row * c..(row + 1) * c]);
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for ComputeGraph {
    fn default() -> Self {
        Self::new()
    }
}
