//! Cluster prototypes, the persistent pool of learnable potential prototypes,
//! labelled-class prototypes, and the per-epoch student/teacher memory buffers.
//!
//! Each epoch the buffer is `concat(μ^c, μ^p[0..K^t−K^e])`. The potential slots
//! of the student buffer are the pool rows themselves for the duration of the
//! epoch and are written back into the pool when the epoch ends; the cluster
//! slots are discarded and rebuilt from the next clustering.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::seeding::rng_for;
use crate::types::{ClusterResult, FeatureMatrix};

/// Mean of the unit-normalized member features of each cluster. The means are
/// not re-normalized.
pub fn cluster_prototypes(features: &FeatureMatrix, clusters: &ClusterResult) -> Result<Matrix> {
    if clusters.len() != features.len() {
        return Err(Error::Contract(format!(
            "assignment covers {} rows, features have {}",
            clusters.len(),
            features.len()
        )));
    }
    let d = features.dim();
    let mut sums = Matrix::zeros(clusters.num_clusters, d);
    let mut counts = vec![0usize; clusters.num_clusters];
    for (row, &c) in features.matrix().row_iter().zip(&clusters.assignment) {
        if c >= clusters.num_clusters {
            return Err(Error::Contract(format!("cluster id {c} out of range")));
        }
        let scale = if features.is_normalized() {
            1.0
        } else {
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                return Err(Error::DegenerateInput("zero feature row".into()));
            }
            1.0 / n
        };
        for (s, &x) in sums.row_mut(c).iter_mut().zip(row) {
            *s += x * scale;
        }
        counts[c] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Contract(format!("cluster {empty} has no members")));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|x| *x /= n as f64);
    }
    Ok(sums)
}

/// `rows` unit vectors with Gaussian-distributed directions.
pub fn random_unit_rows(rows: usize, dim: usize, seed: u64) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    let mut rng = rng_for(&[seed, 0x9f]);
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let row = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = dot(&v, &v).sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        data.extend(row);
    }
    Matrix::from_vec(rows, dim, data)
}

/// The potential-prototype pool: `buffer_size` unit-normalized Gaussian rows.
pub fn init_potential_pool(dim: usize, buffer_size: usize, seed: u64) -> Result<Matrix> {
    random_unit_rows(buffer_size, dim, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferRole {
    Student,
    Teacher,
}

/// Prototype matrix over which a prober's predictions are taken.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    pub slots: Matrix,
    /// Rows `0..cluster_slots` come from clustering, the rest from the pool.
    pub cluster_slots: usize,
    pub epoch: usize,
    pub role: BufferRole,
}

impl MemoryBuffer {
    pub fn len(&self) -> usize {
        self.slots.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.rows() == 0
    }

    pub fn potential_slots(&self) -> usize {
        self.slots.rows() - self.cluster_slots
    }
}

/// All prototype state carried across epochs, plus the latest cluster prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// μ^c from the latest clustering (`K^e × d`).
    pub cluster_protos: Matrix,
    /// μ^p, persistent and learnable (`K^t × d`).
    pub potential_pool: Matrix,
    /// μ^l, one learnable row per labelled class.
    pub labelled_protos: Matrix,
    /// K^t
    pub buffer_size: usize,
}

impl PrototypeBank {
    /// Fresh bank with `K^t = buffer_multiplier · num_labelled_classes`.
    pub fn new(dim: usize, num_labelled_classes: usize, buffer_multiplier: usize, seed: u64) -> Result<Self> {
        if num_labelled_classes == 0 || buffer_multiplier == 0 {
            return Err(Error::Config(
                "buffer size needs at least one labelled class and a positive multiplier".into(),
            ));
        }
        let buffer_size = buffer_multiplier * num_labelled_classes;
        Ok(PrototypeBank {
            cluster_protos: Matrix::zeros(0, dim),
            potential_pool: init_potential_pool(dim, buffer_size, seed)?,
            labelled_protos: random_unit_rows(num_labelled_classes, dim, seed.wrapping_add(1))?,
            buffer_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.potential_pool.cols()
    }

    /// Replaces μ^c with the prototypes of a new clustering.
    pub fn set_cluster_prototypes(&mut self, protos: Matrix) -> Result<()> {
        if protos.rows() > 0 && protos.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "prototypes of dimension {} for a bank of dimension {}",
                protos.cols(),
                self.dim()
            )));
        }
        self.cluster_protos = protos;
        Ok(())
    }

    /// Student and teacher buffers for `epoch`, both `concat(μ^c, μ^p[0..K^t−K^e])`.
    pub fn init_buffers(&self, epoch: usize) -> Result<(MemoryBuffer, MemoryBuffer)> {
        let ke = self.cluster_protos.rows();
        if ke >= self.buffer_size {
            return Err(Error::Config(format!(
                "clustering found {ke} clusters but the memory buffer holds {}; increase the buffer multiplier",
                self.buffer_size
            )));
        }
        let potential = self.potential_pool.slice_rows(0, self.buffer_size - ke);
        let slots = self.cluster_protos.vstack(&potential)?;
        Ok(self.buffer_pair(slots, ke, epoch))
    }

    /// Buffers holding the cluster prototypes only (potential prototypes disabled).
    pub fn init_cluster_only_buffers(&self, epoch: usize) -> Result<(MemoryBuffer, MemoryBuffer)> {
        let ke = self.cluster_protos.rows();
        if ke == 0 {
            return Err(Error::Contract("no cluster prototypes".into()));
        }
        Ok(self.buffer_pair(self.cluster_protos.clone(), ke, epoch))
    }

    fn buffer_pair(&self, slots: Matrix, cluster_slots: usize, epoch: usize) -> (MemoryBuffer, MemoryBuffer) {
        let student = MemoryBuffer {
            slots: slots.clone(),
            cluster_slots,
            epoch,
            role: BufferRole::Student,
        };
        let teacher = MemoryBuffer {
            slots,
            cluster_slots,
            epoch,
            role: BufferRole::Teacher,
        };
        (student, teacher)
    }

    /// Copies the trained potential slots of the student buffer back into the pool.
    pub fn write_back(&mut self, student: &MemoryBuffer) -> Result<()> {
        if student.role != BufferRole::Student {
            return Err(Error::Contract("only the student buffer is written back".into()));
        }
        let count = student.potential_slots();
        if count > self.potential_pool.rows() {
            return Err(Error::Contract("buffer has more potential slots than the pool".into()));
        }
        for k in 0..count {
            let src = student.slots.row(student.cluster_slots + k).to_vec();
            self.potential_pool.row_mut(k).copy_from_slice(&src);
        }
        Ok(())
    }
}
