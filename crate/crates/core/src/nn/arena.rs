use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::Scalar;

/// Handle to one named tensor in a [`ParamArena`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Handle to one named buffer in a [`BufArena`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BufId(pub(crate) usize);

/// Named trainable tensors plus their gradient accumulators.
///
/// Names are unique and stable; checkpointing, weight inheritance, and
/// ablation comparisons all address parameters by name. Iteration order is
/// insertion order, which is deterministic by construction.
#[derive(Debug, Clone)]
pub struct ParamArena<S: Scalar> {
    names: Vec<String>,
    values: Vec<ArrayD<S>>,
    grads: Vec<ArrayD<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for ParamArena<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamArena<S> {
    pub fn new() -> Self {
        ParamArena { names: Vec::new(), values: Vec::new(), grads: Vec::new(), by_name: BTreeMap::new() }
    }

    /// Register a tensor under a unique name. Panics on a duplicate name:
    /// that is a model-construction bug, not a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id.0);
        self.names.push(name);
        self.grads.push(ArrayD::zeros(value.raw_dim()));
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<S> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut ArrayD<S> {
        &mut self.grads[id.0]
    }

    /// Value and gradient of one parameter, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&ArrayD<S>, &mut ArrayD<S>) {
        (&self.values[id.0], &mut self.grads[id.0])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(S::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total element count across all tensors.
    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Named non-trainable state (running statistics). Cloneable so a fitness
/// evaluation can recalibrate a private copy without touching the
/// supernet's own buffers.
#[derive(Debug, Clone)]
pub struct BufArena<S: Scalar> {
    names: Vec<String>,
    values: Vec<ArrayD<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> Default for BufArena<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> BufArena<S> {
    pub fn new() -> Self {
        BufArena { names: Vec::new(), values: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<S>) -> BufId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate buffer name {name:?}"
        );
        let id = BufId(self.values.len());
        self.by_name.insert(name.clone(), id.0);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<BufId> {
        self.by_name.get(name).copied().map(BufId)
    }

    pub fn name(&self, id: BufId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: BufId) -> &ArrayD<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: BufId) -> &mut ArrayD<S> {
        &mut self.values[id.0]
    }

    /// Two distinct buffers borrowed mutably at once (mean and variance of
    /// one batch-norm layer).
    pub fn two_mut(&mut self, a: BufId, b: BufId) -> (&mut ArrayD<S>, &mut ArrayD<S>) {
        assert_ne!(a.0, b.0, "aliasing buffer ids");
        if a.0 < b.0 {
            let (lo, hi) = self.values.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.values.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = BufId> {
        (0..self.values.len()).map(BufId)
    }
}

/// The parameter slices a backward pass wrote gradients into, as a shape
/// prefix per axis. The optimizer updates exactly these slices, so a
/// supernet step leaves unsampled channel tails untouched.
#[derive(Debug, Clone, Default)]
pub struct TouchedSet {
    extents: BTreeMap<ParamId, Vec<usize>>,
}

impl TouchedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record that the leading `extent` elements per axis of `id` were
    /// touched; merges with any prior mark by per-axis maximum.
    pub fn mark(&mut self, id: ParamId, extent: &[usize]) {
        self.extents
            .entry(id)
            .and_modify(|e| {
                assert_eq!(e.len(), extent.len(), "rank change for {id:?}");
                for (a, &b) in e.iter_mut().zip(extent) {
                    *a = (*a).max(b);
                }
            })
            .or_insert_with(|| extent.to_vec());
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[usize])> {
        self.extents.iter().map(|(&id, e)| (id, e.as_slice()))
    }

    pub fn get(&self, id: ParamId) -> Option<&[usize]> {
        self.extents.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.extents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extents.is_empty()
    }

    pub fn clear(&mut self) {
        self.extents.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn arena_round_trips_names_and_ids() {
        let mut arena: ParamArena<f32> = ParamArena::new();
        let a = arena.add("a.weight", ArrayD::zeros(IxDyn(&[2, 3])));
        let b = arena.add("b.bias", ArrayD::zeros(IxDyn(&[3])));
        assert_eq!(arena.id("a.weight"), Some(a));
        assert_eq!(arena.id("b.bias"), Some(b));
        assert_eq!(arena.id("missing"), None);
        assert_eq!(arena.name(a), "a.weight");
        assert_eq!(arena.total_elements(), 9);
        let order: Vec<&str> = arena.ids().map(|i| arena.name(i)).collect();
        assert_eq!(order, vec!["a.weight", "b.bias"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut arena: ParamArena<f32> = ParamArena::new();
        arena.add("w", ArrayD::zeros(IxDyn(&[1])));
        arena.add("w", ArrayD::zeros(IxDyn(&[1])));
    }

    #[test]
    fn zero_grads_resets_every_entry() {
        let mut arena: ParamArena<f64> = ParamArena::new();
        let id = arena.add("w", ArrayD::zeros(IxDyn(&[4])));
        arena.grad_mut(id)[[2]] = 5.0;
        arena.zero_grads();
        assert!(arena.grad(id).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn touched_marks_merge_by_max() {
        let mut arena: ParamArena<f32> = ParamArena::new();
        let id = arena.add("w", ArrayD::zeros(IxDyn(&[8, 4, 3, 3])));
        let mut touched = TouchedSet::new();
        touched.mark(id, &[4, 2, 3, 3]);
        touched.mark(id, &[2, 4, 3, 3]);
        assert_eq!(touched.get(id), Some(&[4, 4, 3, 3][..]));
        assert_eq!(touched.len(), 1);
    }
}
