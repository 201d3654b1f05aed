use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{blend, Mlp};
use crate::numerics::{GradientTape, Matrix, ParamId};
use crate::prototypes::{MemoryBuffer, PrototypeBank};
use crate::seeding::{derive_seed, rng_for};

/// Student and teacher probers, the projection head, and all prototype state.
#[derive(Debug, Clone)]
pub struct ProberState {
    pub student: Mlp,
    pub teacher: Mlp,
    pub head: Mlp,
    pub bank: PrototypeBank,
    /// `m^s`, present between buffer initialization and the end of an epoch.
    pub student_buffer: Option<MemoryBuffer>,
    /// `m^t`
    pub teacher_buffer: Option<MemoryBuffer>,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Momentum of the optimizer, keyed like the gradients.
    pub velocity: GradientTape,
}

pub(crate) const SEED_INIT: u64 = 1;
pub(crate) const SEED_SHUFFLE: u64 = 2;
pub(crate) const SEED_AUGMENT: u64 = 3;
pub(crate) const SEED_CLUSTER: u64 = 4;

impl ProberState {
    /// Fresh state: a near-isometric student encoder, an identical teacher, a
    /// Gaussian projection head and a new prototype bank.
    pub fn new(input_dim: usize, num_labelled_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng: ChaCha8Rng = rng_for(&[cfg.seed, SEED_INIT]);
        let student = Mlp::near_isometric(
            input_dim,
            cfg.encoder_hidden,
            cfg.feature_dim,
            cfg.normalize_features,
            &mut rng,
        )?;
        let head = Mlp::gaussian(&[cfg.feature_dim, cfg.head_hidden, cfg.head_hidden, cfg.proj_dim], true, &mut rng)?;
        let bank = PrototypeBank::new(
            cfg.feature_dim,
            num_labelled_classes,
            cfg.buffer_multiplier,
            derive_seed(&[cfg.seed, SEED_INIT, 1]),
        )?;
        Ok(ProberState {
            teacher: student.clone(),
            student,
            head,
            bank,
            student_buffer: None,
            teacher_buffer: None,
            epoch: 0,
            velocity: GradientTape::new(),
        })
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        match id {
            ParamId::EncoderWeight(l) => self.student.layers.get(l).map(|x| &x.weight),
            ParamId::EncoderBias(l) => self.student.layers.get(l).map(|x| &x.bias),
            ParamId::HeadWeight(l) => self.head.layers.get(l).map(|x| &x.weight),
            ParamId::HeadBias(l) => self.head.layers.get(l).map(|x| &x.bias),
            ParamId::StudentBuffer => self.student_buffer.as_ref().map(|b| &b.slots),
            ParamId::LabelledPrototypes => Some(&self.bank.labelled_protos),
            ParamId::TeacherEncoderWeight(l) => self.teacher.layers.get(l).map(|x| &x.weight),
            ParamId::TeacherEncoderBias(l) => self.teacher.layers.get(l).map(|x| &x.bias),
            ParamId::TeacherBuffer => self.teacher_buffer.as_ref().map(|b| &b.slots),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        match id {
            ParamId::EncoderWeight(l) => self.student.layers.get_mut(l).map(|x| &mut x.weight),
            ParamId::EncoderBias(l) => self.student.layers.get_mut(l).map(|x| &mut x.bias),
            ParamId::HeadWeight(l) => self.head.layers.get_mut(l).map(|x| &mut x.weight),
            ParamId::HeadBias(l) => self.head.layers.get_mut(l).map(|x| &mut x.bias),
            ParamId::StudentBuffer => self.student_buffer.as_mut().map(|b| &mut b.slots),
            ParamId::LabelledPrototypes => Some(&mut self.bank.labelled_protos),
            ParamId::TeacherEncoderWeight(l) => self.teacher.layers.get_mut(l).map(|x| &mut x.weight),
            ParamId::TeacherEncoderBias(l) => self.teacher.layers.get_mut(l).map(|x| &mut x.bias),
            ParamId::TeacherBuffer => self.teacher_buffer.as_mut().map(|b| &mut b.slots),
        }
    }

    /// Every student-side parameter currently present.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in 0..self.student.layers.len() {
            ids.push(ParamId::EncoderWeight(l));
            ids.push(ParamId::EncoderBias(l));
        }
        for l in 0..self.head.layers.len() {
            ids.push(ParamId::HeadWeight(l));
            ids.push(ParamId::HeadBias(l));
        }
        if self.student_buffer.is_some() {
            ids.push(ParamId::StudentBuffer);
        }
        ids.push(ParamId::LabelledPrototypes);
        ids
    }

    /// Every teacher-side parameter currently present.
    pub fn teacher_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in 0..self.teacher.layers.len() {
            ids.push(ParamId::TeacherEncoderWeight(l));
            ids.push(ParamId::TeacherEncoderBias(l));
        }
        if self.teacher_buffer.is_some() {
            ids.push(ParamId::TeacherBuffer);
        }
        ids
    }

    /// `Θ_t ← ω·Θ_t + (1−ω)·Θ` over the encoder and the memory buffer.
    pub fn ema_update(&mut self, omega: f64) -> Result<()> {
        self.teacher.blend_toward(&self.student, omega)?;
        match (&mut self.teacher_buffer, &self.student_buffer) {
            (Some(t), Some(s)) => blend(&mut t.slots, &s.slots, omega),
            (None, None) => Ok(()),
            _ => Err(Error::Contract("only one of the memory buffers is initialized".into())),
        }
    }
}
