use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Read access to the values around one node during the reverse sweep.
pub struct Ctx<'a> {
    tape: &'a Tape,
    inputs: &'a [Var],
    out: usize,
}

impl Ctx<'_> {
    pub fn input(&self, i: usize) -> &Tensor {
        &self.tape.nodes[self.inputs[i].0].value
    }

    pub fn output(&self) -> &Tensor {
        &self.tape.nodes[self.out].value
    }
}

/// Local adjoint rule of a primitive. Implementations add `J^T grad` into
/// every `Some` slot of `grads` (one slot per input, `None` when that input
/// needs no gradient).
pub trait Backward {
    fn backward(&self, ctx: &Ctx<'_>, grad: &[f64], grads: &mut [Option<Vec<f64>>]);
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Define-by-run record of primitive operations, in topological order.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records adjoints; leaves are treated as constants.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.grad_enabled;
        self.push_node(value, Vec::new(), None, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        op: Option<Box<dyn Backward>>,
        requires_grad: bool,
    ) -> Var {
        debug_assert!(value.is_finite(), "non-finite value recorded on tape");
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of a primitive together with its adjoint rule.
    pub fn push_op<B: Backward + 'static>(&mut self, value: Tensor, inputs: &[Var], op: B) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if requires_grad {
            self.push_node(value, inputs.to_vec(), Some(Box::new(op)), true)
        } else {
            self.push_node(value, Vec::new(), None, false)
        }
    }

    /// Reverse sweep from `out`. With `seed = None` the output must be a
    /// single element and is seeded with 1.
    pub fn backward(&self, out: Var, seed: Option<&[f64]>) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::Ordering(format!(
                "node {} has not been recorded (tape holds {})",
                out.0,
                self.nodes.len()
            )));
        }
        let out_len = self.nodes[out.0].value.len();
        let seed = match seed {
            Some(s) if s.len() == out_len => s.to_vec(),
            Some(s) => return Err(shape_err!("seed has {} entries, output has {out_len}", s.len())),
            None if out_len == 1 => vec![1.0],
            None => return Err(shape_err!("implicit seed needs a scalar output, got {out_len} entries")),
        };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(out.0 + 1);
        grads.resize_with(out.0 + 1, || None);
        if self.nodes[out.0].requires_grad {
            grads[out.0] = Some(seed);
        }
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let mut slots: Vec<Option<Vec<f64>>> = node
                .inputs
                .iter()
                .map(|v| {
                    let n = &self.nodes[v.0];
                    if n.requires_grad {
                        Some(grads[v.0].take().unwrap_or_else(|| vec![0.0; n.value.len()]))
                    } else {
                        None
                    }
                })
                .collect();
            let ctx = Ctx {
                tape: self,
                inputs: &node.inputs,
                out: i,
            };
            op.backward(&ctx, &g, &mut slots);
            for (v, slot) in node.inputs.iter().zip(slots) {
                if let Some(buf) = slot {
                    match &mut grads[v.0] {
                        Some(existing) => {
                            for (a, b) in existing.iter_mut().zip(buf) {
                                *a += b;
                            }
                        }
                        empty => *empty = Some(buf),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints of the leaves reached by a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when unreached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}
