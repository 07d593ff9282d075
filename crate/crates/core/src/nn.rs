//! Named parameter storage, per-pass sessions and the basic layers.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, Mode, RunningStats, LEAKY_SLOPE};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried between passes (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Tensor,
}

/// Ordered, named tensors of one model instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, kind, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == ParamKind::Trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Replace a value, keeping the shape contract.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = self.get(id).shape();
        if cur != value.shape() {
            return Err(Error::shape(
                "param_store",
                "value",
                format!("{} has shape {cur}, got {}", self.name(id), value.shape()),
            ));
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }
}

/// Kaiming-normal gain for LeakyReLU with the network's slope.
pub fn leaky_gain() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

/// Creates parameters with hierarchical names and seeded initialization.
pub struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    /// Run `f` with `name` pushed on the naming scope.
    pub fn scope<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(full, ParamKind::Trainable, value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(full, ParamKind::Buffer, value)
    }

    pub fn normal(&mut self, shape: impl Into<Shape>, std: f64) -> Tensor {
        Tensor::randn(shape, std, &mut self.rng)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a mut ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    trainable: bool,
}

impl<'a> Session<'a> {
    /// `trainable` decides whether parameters are recorded as gradient leaves.
    pub fn new(store: &'a mut ParamStore, mode: Mode, trainable: bool) -> Self {
        let n = store.len();
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; n],
            mode,
            trainable,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph handle for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let trainable = self.trainable && self.store.kind(id) == ParamKind::Trainable;
        let v = self.graph.leaf(self.store.get(id).clone(), trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.graph.leaf(t, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Run backward from `loss` and collect gradients per trainable parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        self.graph.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .map(|b| b.and_then(|v| self.graph.grad(v).cloned()))
            .collect())
    }

    fn batch_norm(&mut self, x: Var, bn: &BatchNorm) -> Result<Var> {
        let gamma = self.param(bn.gamma);
        let beta = self.param(bn.beta);
        let mut stats = RunningStats {
            mean: self.store.get(bn.running_mean).data().to_vec(),
            var: self.store.get(bn.running_var).data().to_vec(),
        };
        let y = self.graph.batch_norm(x, gamma, beta, &mut stats, self.mode)?;
        if self.mode == Mode::Train {
            let c = stats.mean.len();
            self.store
                .set(bn.running_mean, Tensor::new([1, c, 1, 1], stats.mean)?)?;
            self.store.set(bn.running_var, Tensor::new([1, c, 1, 1], stats.var)?)?;
        }
        Ok(y)
    }
}

/// Convolution layer with optional bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Kaiming-normal (fan-in, LeakyReLU gain) weights and zero bias.
    pub fn build(b: &mut Builder, name: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let w = b.normal(spec.weight_shape(), leaky_gain() / (fan_in as f64).sqrt());
        Self::with_values(b, name, spec, w, bias.then(|| Tensor::zeros([1, spec.out_channels, 1, 1])))
    }

    pub fn with_values(
        b: &mut Builder,
        name: &str,
        spec: ConvSpec,
        weight: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let weight = b.param("weight", weight)?;
            let bias = bias.map(|t| b.param("bias", t)).transpose()?;
            Ok(Conv2d { weight, bias, spec })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, self.spec)
    }
}

/// Transposed convolution layer, weight `(C_in, C_out, kh, kw)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl ConvTranspose2d {
    pub fn build(b: &mut Builder, name: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        // each output pixel sees in_channels * (k / stride)^2 inputs
        let fan_in = (spec.in_channels * spec.kernel.0 * spec.kernel.1) / (spec.stride * spec.stride).max(1);
        let w = b.normal(spec.transpose_weight_shape(), leaky_gain() / (fan_in.max(1) as f64).sqrt());
        b.scope(name, |b| {
            let weight = b.param("weight", w)?;
            let bias = if bias {
                Some(b.param("bias", Tensor::zeros([1, spec.out_channels, 1, 1]))?)
            } else {
                None
            };
            Ok(ConvTranspose2d { weight, bias, spec })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv_transpose2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(BatchNorm {
                gamma: b.param("gamma", Tensor::ones([1, channels, 1, 1]))?,
                beta: b.param("beta", Tensor::zeros([1, channels, 1, 1]))?,
                running_mean: b.buffer("running_mean", Tensor::zeros([1, channels, 1, 1]))?,
                running_var: b.buffer("running_var", Tensor::ones([1, channels, 1, 1]))?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        s.batch_norm(x, self)
    }
}
