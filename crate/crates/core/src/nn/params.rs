use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named tensor with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub shape: Vec<usize>,
    pub values: Vec<S>,
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Scalar> Param<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        let n = values.len();
        Ok(Self {
            shape,
            values,
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered name → tensor map holding every model weight and buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore<S> {
    params: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<S>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param::new(shape, values)?);
        Ok(())
    }

    /// Inserts a fully specified entry, replacing any existing one.
    pub fn insert_param(&mut self, name: impl Into<String>, param: Param<S>) {
        self.params.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.get_mut(name)
    }

    /// Values of `name`; panics if the parameter does not exist.
    pub fn values(&self, name: &str) -> &[S] {
        match self.params.get(name) {
            Some(p) => &p.values,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn values_mut(&mut self, name: &str) -> &mut [S] {
        match self.params.get_mut(name) {
            Some(p) => &mut p.values,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all entries whose name passes `filter`.
    pub fn count_values(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| filter(k))
            .map(|(_, p)| p.len())
            .sum()
    }

    /// True when every entry whose name starts with `prefix` is bitwise equal in both stores.
    pub fn same_prefix(&self, other: &Self, prefix: &str) -> bool {
        let a = self.params.range(prefix.to_string()..).take_while(|(k, _)| k.starts_with(prefix));
        let b = other.params.range(prefix.to_string()..).take_while(|(k, _)| k.starts_with(prefix));
        a.eq(b)
    }
}

/// Named gradients; names must match entries of a [`ParameterStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<S> {
    grads: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }

    /// Adds `g` into the gradient for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, g: &[S]) {
        match self.grads.get_mut(name) {
            Some(acc) => {
                assert_eq!(acc.len(), g.len(), "gradient length changed for {name}");
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), g.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: Gradients<S>) {
        for (k, v) in other.grads {
            self.accumulate(&k, &v);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<S>> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[S])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(String::as_str)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.grads.retain(|k, _| keep(k));
    }

    pub fn scale(&mut self, k: S) {
        self.grads.values_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_shapes() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("a", vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(s.insert("a", vec![1], vec![0.0]).is_err());
        assert!(s.insert("b", vec![3], vec![0.0; 2]).is_err());
        let p = s.get("a").unwrap();
        assert_eq!(p.m.len(), 4);
        assert_eq!(p.step, 0);
    }

    #[test]
    fn prefix_comparison() {
        let mut a = ParameterStore::<f64>::new();
        a.insert("head.0.w", vec![1], vec![1.0]).unwrap();
        a.insert("head.1.w", vec![1], vec![2.0]).unwrap();
        let mut b = a.clone();
        b.values_mut("head.1.w")[0] = 3.0;
        assert!(a.same_prefix(&b, "head.0."));
        assert!(!a.same_prefix(&b, "head.1."));
    }

    #[test]
    fn gradients_accumulate() {
        let mut g = Gradients::<f64>::new();
        g.accumulate("w", &[1.0, 2.0]);
        g.accumulate("w", &[0.5, 0.5]);
        assert_eq!(g.get("w").unwrap(), &[1.5, 2.5]);
    }
}
