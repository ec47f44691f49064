//! Named parameter storage and the per-step forward session.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers (running statistics) are stored here too but never receive
    /// optimizer updates.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform weight in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        shape: [usize; 2],
        fan_in: usize,
        fan_out: usize,
        rng: &mut RngState,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape[0] * shape[1])
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("positive shape");
        self.add(name, t, true)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("param_set", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
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

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Number of trainable scalars whose name starts with `prefix`.
    pub fn scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn checksum(&self) -> u64 {
        self.entries.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, e| {
            (h ^ e.tensor.checksum()).wrapping_mul(0x100_0000_01b3)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Infer,
}

/// One forward pass: a fresh graph, lazily bound parameters, and the buffer
/// updates produced by train-mode normalization.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Session {
            g: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Leaf for a stored tensor, bound at most once per session.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.g.leaf(self.store.get(id).clone())?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.g.leaf(t)
    }

    pub fn record_buffer(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    pub fn buffer_updates(&self) -> &[(ParamId, Tensor)] {
        &self.buffer_updates
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Backward from `root`, returning one gradient slot per stored
    /// parameter. Parameters not bound in this session, or bound but not
    /// reached, get `None`; buffers are always `None`.
    pub fn param_grads(&self, root: Var) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Gradients = self.g.backward(root)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .map(|(i, b)| match b {
                Some(v) if self.store.entries[i].trainable => grads.take(*v),
                _ => None,
            })
            .collect())
    }
}
