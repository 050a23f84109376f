use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to one parameter tensor inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub tensors: Vec<ParamTensor>,
}

impl ParamGroup {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Named groups of learnable tensors, each with a gradient buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    groups: Vec<ParamGroup>,
}

/// Initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Gaussian with the given standard deviation.
    Normal(f64),
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    fn group_index(&mut self, group: &str) -> usize {
        match self.groups.iter().position(|g| g.name == group) {
            Some(i) => i,
            None => {
                self.groups.push(ParamGroup {
                    name: group.to_string(),
                    tensors: Vec::new(),
                });
                self.groups.len() - 1
            }
        }
    }

    pub fn add(&mut self, group: &str, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect(),
        };
        let g = self.group_index(group);
        self.groups[g].tensors.push(ParamTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            data,
        });
        ParamId {
            group: g,
            index: self.groups[g].tensors.len() - 1,
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.groups[id.group].tensors[id.index]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.groups[id.group].tensors[id.index]
    }

    pub fn count(&self) -> usize {
        self.groups.iter().map(ParamGroup::count).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.groups.iter().enumerate().flat_map(|(g, grp)| {
            (0..grp.tensors.len()).map(move |index| ParamId { group: g, index })
        })
    }

    pub fn zero_grad(&mut self) {
        for t in self.groups.iter_mut().flat_map(|g| g.tensors.iter_mut()) {
            t.grad.fill(0.0);
        }
    }

    /// All parameters concatenated in group/tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.tensors.iter())
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn flat_grad(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.tensors.iter())
            .flat_map(|t| t.grad.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Shape(alloc::format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.count()
            )));
        }
        let mut off = 0;
        for t in self.groups.iter_mut().flat_map(|g| g.tensors.iter_mut()) {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Adds another gradient set (same layout) into this one's buffers.
    pub fn accumulate_grads(&mut self, other: &ParamGrads) {
        for (t, g) in self.groups.iter_mut().flat_map(|g| g.tensors.iter_mut()).zip(&other.0) {
            if let Some(g) = g {
                for (a, b) in t.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.flat_grad().iter().map(|g| g * g).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.groups
            .iter()
            .flat_map(|g| g.tensors.iter())
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Per-tensor gradients, `None` where the tensor was not reached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn flat(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.count());
        for (g, t) in self.0.iter().zip(params.groups.iter().flat_map(|g| g.tensors.iter())) {
            match g {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(core::iter::repeat(0.0).take(t.data.len())),
            }
        }
        out
    }
}

/// A tape bound to a parameter set. Each parameter becomes one leaf on first use.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    bound: Vec<Vec<Option<Var>>>,
}

impl<'p> Session<'p> {
    /// Records gradients for parameters.
    pub fn train(params: &'p ModelParams) -> Self {
        Self::with_tape(params, Tape::new())
    }

    /// Forward-only evaluation.
    pub fn inference(params: &'p ModelParams) -> Self {
        Self::with_tape(params, Tape::no_grad())
    }

    fn with_tape(params: &'p ModelParams, tape: Tape) -> Self {
        let bound = params.groups.iter().map(|g| vec![None; g.tensors.len()]).collect();
        Self { tape, params, bound }
    }

    /// Wraps an existing tape, binding parameters (in [`ModelParams::ids`]
    /// order) to the given nodes instead of fresh leaves.
    pub fn attach(params: &'p ModelParams, tape: Tape, leaves: &[Var]) -> Result<Self> {
        let mut s = Self::with_tape(params, tape);
        let ids: Vec<ParamId> = params.ids().collect();
        if ids.len() != leaves.len() {
            return Err(Error::Shape(alloc::format!(
                "{} parameter tensors, {} nodes supplied",
                ids.len(),
                leaves.len()
            )));
        }
        for (id, &v) in ids.iter().zip(leaves) {
            if s.tape.shape(v) != params.tensor(*id).shape.as_slice() {
                return Err(Error::Shape(alloc::format!("node for {} has wrong shape", params.tensor(*id).name)));
            }
            s.bound[id.group][id.index] = Some(v);
        }
        Ok(s)
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.group][id.index] {
            return v;
        }
        let t = self.params.tensor(id);
        let v = self.tape.leaf(Tensor::new(&t.shape, t.data.clone()));
        self.bound[id.group][id.index] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Runs the reverse sweep from a scalar loss and collects parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let grads = self.tape.backward(loss, None)?;
        Ok(self.collect(&grads))
    }

    pub fn collect(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads(
            self.bound
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v.and_then(|v| grads.get(v).map(|g| g.to_vec())))
                .collect(),
        )
    }
}
