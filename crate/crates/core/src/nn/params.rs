use ndarray::Array2;

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<F> {
    pub name: String,
    pub value: Array2<F>,
    pub frozen: bool,
}

/// Named parameter tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>, frozen: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            frozen,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.value.len())
            .sum()
    }

    /// Same parameters converted to another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.mapv(|x| G::of(x.as_f64())),
                    frozen: e.frozen,
                })
                .collect(),
        }
    }
}

/// Per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    slots: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn new(len: usize) -> Self {
        Gradients {
            slots: vec![None; len],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Array2<F>) {
        match &mut self.slots[id.0] {
            Some(g) => *g += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<F>> {
        self.slots[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<F>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> F {
        self.slots
            .iter()
            .flatten()
            .map(|g| g.iter().map(|&x| x * x).sum::<F>())
            .sum::<F>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            *s = None;
        }
    }
}
