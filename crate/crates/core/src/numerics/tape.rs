use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::Result;

/// Identifies one parameter matrix of the prober pair or the projection head.
///
/// Teacher identifiers exist so that isolation can be asserted: no loss ever
/// writes an adjoint for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    EncoderWeight(usize),
    EncoderBias(usize),
    HeadWeight(usize),
    HeadBias(usize),
    StudentBuffer,
    LabelledPrototypes,
    TeacherEncoderWeight(usize),
    TeacherEncoderBias(usize),
    TeacherBuffer,
}

impl ParamId {
    pub fn is_teacher(self) -> bool {
        matches!(
            self,
            ParamId::TeacherEncoderWeight(_) | ParamId::TeacherEncoderBias(_) | ParamId::TeacherBuffer
        )
    }
}

/// Accumulated adjoints keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    grads: BTreeMap<ParamId, Matrix>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `grad` into the slot for `id`. The first write fixes the shape.
    pub fn accumulate(&mut self, id: ParamId, grad: Matrix) -> Result<()> {
        match self.grads.get_mut(&id) {
            Some(existing) => existing.add_assign(&grad),
            None => {
                self.grads.insert(id, grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.grads.get_mut(&id)
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Matrix> {
        self.grads.remove(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.grads.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Multiplies every stored adjoint by `s`.
    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            *g = g.scale(s);
        }
    }

    /// Merges `other` into `self`, scaling its entries by `weight`.
    pub fn merge_scaled(&mut self, other: GradientTape, weight: f64) -> Result<()> {
        for (id, g) in other.grads {
            let g = if weight == 1.0 { g } else { g.scale(weight) };
            self.accumulate(id, g)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }
}
