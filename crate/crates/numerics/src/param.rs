//! Named parameter storage.
//!
//! A [`ParamStore`] maps parameter names to tensors, their gradients, and a
//! per-parameter forward scale (used by learning-rate equalization). Iteration
//! order is the sorted name order, which keeps optimizer reductions and
//! checkpoint layouts deterministic.

use std::collections::BTreeMap;

use crate::array::Array;
use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;

/// One named parameter: value, optional gradient, and forward scale.
#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub value: Array<T>,
    pub grad: Option<Array<T>>,
    /// Multiplier applied when the parameter enters a graph. 1.0 except for
    /// learning-rate-equalized parameters, which store `w / k` and carry
    /// `forward_scale = k`.
    pub forward_scale: f64,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Register a new parameter. Re-registering an existing name is an error
    /// if the shape changed, and a no-op otherwise (so module constructors
    /// stay idempotent).
    pub fn register(&mut self, name: &str, value: Array<T>) -> Result<()> {
        if let Some(existing) = self.entries.get(name) {
            if existing.value.shape() != value.shape() {
                return Err(NumericsError::ParameterShapeConflict {
                    name: name.to_string(),
                    stored: existing.value.shape().to_vec(),
                    new: value.shape().to_vec(),
                });
            }
            return Ok(());
        }
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: None,
                forward_scale: 1.0,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries.get(name).ok_or_else(|| NumericsError::UnknownParameter {
            name: name.to_string(),
        })
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries.get_mut(name).ok_or_else(|| NumericsError::UnknownParameter {
            name: name.to_string(),
        })
    }

    pub fn value(&self, name: &str) -> Result<&Array<T>> {
        Ok(&self.entry(name)?.value)
    }

    /// Replace a parameter's value; the shape must match.
    pub fn set_value(&mut self, name: &str, value: Array<T>) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != value.shape() {
            return Err(NumericsError::ParameterShapeConflict {
                name: name.to_string(),
                stored: entry.value.shape().to_vec(),
                new: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    /// Store gradients produced by a backward pass. Names must exist; shapes
    /// must match the parameter.
    pub fn set_grads(&mut self, grads: Vec<(String, Array<T>)>) -> Result<()> {
        for (name, grad) in grads {
            let entry = self.entry_mut(&name)?;
            if entry.value.shape() != grad.shape() {
                return Err(NumericsError::ParameterShapeConflict {
                    name,
                    stored: entry.value.shape().to_vec(),
                    new: grad.shape().to_vec(),
                });
            }
            entry.grad = Some(grad);
        }
        Ok(())
    }

    /// Drop all stored gradients.
    pub fn clear_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad = None;
        }
    }

    /// Iterate `(name, entry)` in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    /// Iterate mutably in sorted name order.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Convert every value to another scalar type (gradients are dropped).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(name, entry)| {
                    (
                        name.clone(),
                        ParamEntry {
                            value: entry.value.cast::<U>(),
                            grad: None,
                            forward_scale: entry.forward_scale,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("b.w", Array::zeros(&[2, 2])).unwrap();
        ps.register("a.w", Array::zeros(&[3])).unwrap();
        assert_eq!(ps.names(), vec!["a.w".to_string(), "b.w".to_string()]);
        assert_eq!(ps.total_elements(), 7);
        assert!(ps.value("missing").is_err());
    }

    #[test]
    fn shape_conflict_rejected() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("w", Array::zeros(&[2])).unwrap();
        // Same shape: idempotent.
        ps.register("w", Array::ones(&[2])).unwrap();
        assert_eq!(ps.value("w").unwrap().data(), &[0.0, 0.0]);
        let err = ps.register("w", Array::zeros(&[3])).unwrap_err();
        assert!(matches!(err, NumericsError::ParameterShapeConflict { .. }));
    }

    #[test]
    fn grads_validate_shapes() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("w", Array::zeros(&[2])).unwrap();
        assert!(ps.set_grads(vec![("w".into(), Array::ones(&[3]))]).is_err());
        ps.set_grads(vec![("w".into(), Array::ones(&[2]))]).unwrap();
        assert!(ps.entry("w").unwrap().grad.is_some());
    }
}
