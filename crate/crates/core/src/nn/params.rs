use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// The four networks; optimizer groups and freezing are expressed per network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetGroup {
    EventEncoder,
    ReconDecoder,
    ImageEncoder,
    TaskDecoder,
}

impl NetGroup {
    pub const ALL: [NetGroup; 4] = [
        NetGroup::EventEncoder,
        NetGroup::ReconDecoder,
        NetGroup::ImageEncoder,
        NetGroup::TaskDecoder,
    ];

    fn bit(self) -> u8 {
        match self {
            NetGroup::EventEncoder => 1,
            NetGroup::ReconDecoder => 2,
            NetGroup::ImageEncoder => 4,
            NetGroup::TaskDecoder => 8,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            NetGroup::EventEncoder => "event_encoder",
            NetGroup::ReconDecoder => "recon_decoder",
            NetGroup::ImageEncoder => "image_encoder",
            NetGroup::TaskDecoder => "task_decoder",
        }
    }
}

/// Set of networks whose parameters receive gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupMask(u8);

impl GroupMask {
    pub const NONE: GroupMask = GroupMask(0);

    pub fn of(groups: &[NetGroup]) -> Self {
        GroupMask(groups.iter().fold(0, |m, g| m | g.bit()))
    }

    pub fn contains(self, g: NetGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Named parameter tensors of all networks.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    groups: Vec<NetGroup>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            groups: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name`. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: NetGroup, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.groups.push(group);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> NetGroup {
        self.groups[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Number of scalar parameters belonging to `group`.
    pub fn count(&self, group: NetGroup) -> usize {
        self.ids()
            .filter(|&id| self.group(id) == group)
            .map(|id| self.get(id).len())
            .sum()
    }

    /// Raw little-endian bytes of every parameter in `group`, in registration order.
    pub fn group_bytes(&self, group: NetGroup) -> Vec<u8> {
        let mut out = Vec::new();
        for id in self.ids().filter(|&id| self.group(id) == group) {
            for v in self.get(id).data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    /// Replaces the value of an existing parameter, checking its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: expected shape {:?}, found {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Parameter gradients collected by a backward pass.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new(len: usize) -> Self {
        ParamGrads {
            grads: vec![None; len],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// True when no gradient was recorded or every recorded entry is zero.
    pub fn all_zero(&self) -> bool {
        self.iter().all(|(_, g)| g.data().iter().all(|v| *v == T::zero()))
    }
}
