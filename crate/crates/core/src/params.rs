//! Named flat parameter storage shared by models, gradients and the optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ordered map from parameter name to a flat row-major tensor.
///
/// Iteration order is lexicographic in the key, which makes every loop over
/// parameters deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamMap(BTreeMap<String, Vec<f64>>);

/// Gradients share the parameter layout.
pub type GradientVector = ParamMap;

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, values: Vec<f64>) {
        self.0.insert(key.into(), values);
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.0.get(key).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Vec<f64>> {
        self.0.get_mut(key)
    }

    pub fn require(&self, key: &str) -> Result<&[f64]> {
        match self.get(key) {
            Some(v) => Ok(v),
            None => invalid(format!("missing parameter `{key}`")),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<f64>)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    /// Same keys and lengths, all zero.
    pub fn zeros_like(&self) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), vec![0.0; v.len()])).collect())
    }

    pub fn same_layout(&self, other: &ParamMap) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
    }

    /// `self += scale * other`, keys must match.
    pub fn add_scaled(&mut self, other: &ParamMap, scale: f64) -> Result<()> {
        if !self.same_layout(other) {
            return invalid("parameter layouts differ");
        }
        for (a, b) in self.0.values_mut().zip(other.0.values()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(k, _)| k.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_arithmetic() {
        let mut a = ParamMap::new();
        a.insert("b", vec![1.0, 2.0]);
        a.insert("a", vec![3.0]);
        let g = a.zeros_like();
        assert_eq!(g.scalar_count(), 3);
        assert_eq!(a.keys().collect::<Vec<_>>(), vec!["a", "b"]);
        let mut c = a.clone();
        c.add_scaled(&a, -1.0).unwrap();
        assert_eq!(c, g);
        let mut other = ParamMap::new();
        other.insert("a", vec![0.0]);
        assert!(c.add_scaled(&other, 1.0).is_err());
    }
}
