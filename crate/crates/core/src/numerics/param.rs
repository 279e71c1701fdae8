use std::collections::HashMap;
use std::fmt;

use super::{NumericsError, Scalar, Tensor};

/// Partition of model parameters: encoder, decoder, entropy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Enc,
    Dec,
    Pz,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Enc, Group::Dec, Group::Pz];

    pub fn to_byte(self) -> u8 {
        match self {
            Group::Enc => 0,
            Group::Dec => 1,
            Group::Pz => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Group> {
        match b {
            0 => Some(Group::Enc),
            1 => Some(Group::Dec),
            2 => Some(Group::Pz),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Enc => "enc",
            Group::Dec => "dec",
            Group::Pz => "pz",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub group: Group,
    pub trainable: bool,
    pub tensor: Tensor<T>,
}

/// Named parameters of one model. Names are unique and group membership is
/// fixed at insertion.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, tensor: Tensor<T>) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, group, trainable: true, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Marks exactly the parameters of `groups` as trainable.
    pub fn set_trainable_groups(&mut self, groups: &[Group]) {
        for p in &mut self.params {
            p.trainable = groups.contains(&p.group);
        }
    }

    pub fn trainable_groups(&self) -> Vec<Group> {
        let mut gs: Vec<Group> = self.params.iter().filter(|p| p.trainable).map(|p| p.group).collect();
        gs.sort();
        gs.dedup();
        gs
    }

    pub fn count(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), group: p.group, trainable: p.trainable, tensor: p.tensor.cast() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Flat view of every value, in insertion order.
    pub fn values_flat(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.tensor.data().iter().copied()).collect()
    }
}

/// Per-parameter gradients produced by one backward pass. Only trainable
/// parameters reached by the graph have an entry.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(param_count: usize) -> Self {
        Gradients { grads: vec![None; param_count] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[T]) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Records an explicit zero gradient, used when a loss term with weight
    /// zero is skipped rather than evaluated.
    pub fn ensure_zero(&mut self, id: ParamId, numel: usize) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); numel]);
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Adds another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| ParamId(i))
    }

    /// Euclidean norm over all present entries, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| {
                let f = v.as_f64();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }
}
