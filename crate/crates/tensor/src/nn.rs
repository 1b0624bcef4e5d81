//! Named parameters and the small layer set the network is built from.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::kernels::conv::PaddingMode;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Slope of every leaky-ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Optimizer group a parameter belongs to; groups get separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Main,
    Flow,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Main => "main",
            ParamGroup::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "main" => Some(ParamGroup::Main),
            "flow" => Some(ParamGroup::Flow),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: ParamGroup,
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_group(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Replace the value of `name`, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(&i) = self.by_name.get(name) else {
            return invalid("ParamStore::assign", format!("unknown parameter {name}"));
        };
        if self.params[i].value.shape() != value.shape() {
            return shape_err(
                "ParamStore::assign",
                format!(
                    "{}: expected {:?}, got {:?}",
                    name,
                    self.params[i].value.shape(),
                    value.shape()
                ),
            );
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    group: p.group,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameters bound to one graph: each parameter becomes a single leaf on
/// first use.
pub struct Binding<'a, T: Real = f32> {
    graph: &'a Graph<T>,
    store: &'a ParamStore<T>,
    vars: RefCell<Vec<Option<Var<T>>>>,
}

impl<'a, T: Real> Binding<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore<T>) -> Self {
        Self {
            graph,
            store,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn graph(&self) -> &'a Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<T> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| self.graph.leaf(self.store.get(id).value.clone()))
            .clone()
    }

    /// Use `var` for parameter `id` instead of a fresh leaf, e.g. to
    /// differentiate with respect to an externally created input.
    pub fn bind(&self, id: ParamId, var: Var<T>) -> Result<()> {
        if var.shape() != self.store.get(id).value.shape() {
            return shape_err(
                "Binding::bind",
                format!(
                    "{}: expected {:?}, got {:?}",
                    self.store.get(id).name,
                    self.store.get(id).value.shape(),
                    var.shape()
                ),
            );
        }
        self.vars.borrow_mut()[id.0] = Some(var);
        Ok(())
    }

    /// One gradient per parameter, zeros for parameters not used.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        let vars = self.vars.borrow();
        self.store
            .iter()
            .map(|(id, p)| match &vars[id.0] {
                Some(v) => grads.get_or_zero(v),
                None => Tensor::zeros(p.value.shape()),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / ((1 + a²)·fan_in))` for leaky slope `a`.
    FanIn,
    Zero,
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt()
}

/// Convolution parameters: weight `C_out×C_in×k×k`, bias `C_out`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PaddingMode,
}

/// Builder state shared by layer constructors.
pub struct Builder<'s, T: Real, R: Rng> {
    pub store: &'s mut ParamStore<T>,
    pub rng: &'s mut R,
    pub group: ParamGroup,
}

impl<'s, T: Real, R: Rng> Builder<'s, T, R> {
    pub fn new(store: &'s mut ParamStore<T>, rng: &'s mut R, group: ParamGroup) -> Self {
        Self { store, rng, group }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> ParamId {
        let t = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::FanIn => {
                let b = fan_in_bound(fan_in);
                Tensor::uniform(shape, -b, b, self.rng)
            }
        };
        self.store.add(name, t, self.group)
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, init: Init) -> Conv2d {
        self.conv_full(name, c_in, c_out, kernel, 1, kernel / 2, PaddingMode::Zero, init)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_full(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        mode: PaddingMode,
        init: Init,
    ) -> Conv2d {
        let weight = self.tensor(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            c_in * kernel * kernel,
            init,
        );
        let bias = self.store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), self.group);
        Conv2d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            mode,
        }
    }

    pub fn conv_transpose(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> ConvTranspose2d {
        let weight = self.tensor(
            &format!("{name}.weight"),
            &[c_in, c_out, kernel, kernel],
            c_in * kernel * kernel / (stride * stride).max(1),
            init,
        );
        let bias = self.store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), self.group);
        ConvTranspose2d {
            weight,
            bias,
            stride,
            pad: 0,
        }
    }

    pub fn resblock(&mut self, name: &str, channels: usize) -> ResBlock {
        ResBlock {
            conv1: self.conv(&format!("{name}.conv1"), channels, channels, 3, Init::FanIn),
            conv2: self.conv(&format!("{name}.conv2"), channels, channels, 3, Init::Zero),
        }
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, init: Init) -> Linear {
        Linear {
            weight: self.tensor(&format!("{name}.weight"), &[d_in, d_out], d_in, init),
        }
    }
}

impl Conv2d {
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = p.var(self.weight);
        let b = p.var(self.bias);
        p.graph().conv2d(x, &w, Some(&b), self.stride, self.pad, self.mode)
    }
}

/// Transposed convolution parameters: weight `C_in×C_out×k×k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = p.var(self.weight);
        let b = p.var(self.bias);
        p.graph().conv_transpose2d(x, &w, Some(&b), self.stride, self.pad)
    }
}

/// `x + conv2(leaky_relu(conv1(x)))`. The second convolution starts at zero
/// so a fresh block is the identity.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().get(1) != Some(&self.conv1.c_in) {
            return shape_err(
                "resblock",
                format!("input {:?} for a {}-channel block", x.shape(), self.conv1.c_in),
            );
        }
        let g = p.graph();
        let h = self.conv1.forward(p, x)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = self.conv2.forward(p, &h)?;
        g.add(x, &h)
    }
}

pub fn resblocks_forward<T: Real>(blocks: &[ResBlock], p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
    blocks.iter().try_fold(x.clone(), |h, b| b.forward(p, &h))
}

/// Bias-free linear map on rows: `x · W` with `W: d_in×d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
}

impl Linear {
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        p.graph().matmul(x, &p.var(self.weight))
    }
}
