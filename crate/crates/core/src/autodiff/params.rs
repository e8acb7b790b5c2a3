use indexmap::IndexMap;

use crate::autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Ordered, uniquely named collection of tensors.
#[derive(Clone, PartialEq, Default)]
pub struct ParameterSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T> std::fmt::Debug for ParameterSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, v)| (k, v.shape())))
            .finish()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            entries: IndexMap::new(),
        }
    }

    /// Inserts a new entry; re-using a name is an error.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
    ) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar components.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Same names and shapes in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    /// `self += c * other`, entry by entry. Layouts must match.
    pub fn axpy(&mut self, c: T, other: &Self) {
        assert!(self.same_layout(other), "parameter layouts differ");
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            a.axpy(c, b);
        }
    }

    /// A copy moved by `-step * grads`.
    pub fn descended(&self, grads: &Self, step: T) -> Self {
        let mut out = self.clone();
        out.axpy(-step, grads);
        out
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_layout(other)
            && self
                .entries
                .values()
                .zip(other.entries.values())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Per-entry maximum absolute difference, for parameters present in both sets.
    pub fn diff(&self, other: &Self) -> Vec<(String, T)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| {
                let o = other.entries.get(k)?;
                (o.shape() == v.shape()).then(|| (k.clone(), v.max_abs_diff(o)))
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.diff(other)
            .into_iter()
            .map(|(_, d)| d)
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Records every entry on `tape` as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for ParameterSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParameterSet {
            entries: iter.into_iter().collect(),
        }
    }
}

/// A [`ParameterSet`] as tape variables, keyed by the same names.
#[derive(Clone)]
pub struct BoundParams<'t, T: Scalar> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>, AutodiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::MissingParameter(name.to_string()))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var<'t, T>> + '_ {
        self.vars.values().copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Rebuilds a binding from variables in this binding's name order.
    pub fn with_vars(&self, vars: impl IntoIterator<Item = Var<'t, T>>) -> Self {
        BoundParams {
            vars: self.vars.keys().cloned().zip(vars).collect(),
        }
    }

    /// Gradients of the bound leaves as a parameter set.
    pub fn gradients(&self, grads: &Gradients<T>) -> ParameterSet<T> {
        ParameterSet {
            entries: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), grads.wrt(*v)))
                .collect(),
        }
    }

    /// Current values of the bound variables.
    pub fn values(&self) -> ParameterSet<T> {
        ParameterSet {
            entries: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), (*v.value()).clone()))
                .collect(),
        }
    }
}
