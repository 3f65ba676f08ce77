use super::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter {name:?}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Appends every entry of `other`, failing on a name clash.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (n, t) in other.entries {
            self.insert(n, t)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Places every tensor on `g` as a leaf.
    pub fn bind<'g>(&self, g: &'g Graph, requires_grad: bool) -> Bound<'g> {
        let vars = self.entries.iter().map(|(n, t)| (n.clone(), g.leaf(t.clone(), requires_grad))).collect();
        Bound { vars }
    }
}

/// A [`ParamSet`] placed on a graph.
pub struct Bound<'g> {
    vars: Vec<(String, Var<'g>)>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    /// Gradients in the same order and with the same names as the source set.
    /// Parameters the loss does not reach get zeros.
    pub fn gradients(&self, grads: &Gradients) -> ParamSet {
        let entries = self
            .vars
            .iter()
            .map(|(n, v)| {
                let t = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (n.clone(), t)
            })
            .collect();
        ParamSet { entries }
    }
}
