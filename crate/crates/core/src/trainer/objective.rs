use super::config::TrainConfig;
use super::state::ProberState;
use crate::error::{Error, Result};
use crate::model::LayerGrad;
use crate::numerics::{GradientTape, Matrix, ParamId};
use crate::objectives::{
    combine, loss_cru, loss_cru_adjoints, loss_crl, loss_sup, loss_unsup, student_predict, teacher_predict,
    LossBreakdown,
};

/// One mini-batch: two augmented views of each row, labelled rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub view1: Matrix,
    pub view2: Matrix,
    /// Labelled-class index of each of the first `labels.len()` rows.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.view1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.view1.rows() == 0
    }

    pub fn num_labelled(&self) -> usize {
        self.labels.len()
    }
}

fn push_layers(tape: &mut GradientTape, grads: Vec<LayerGrad>, weight: fn(usize) -> ParamId, bias: fn(usize) -> ParamId) -> Result<()> {
    for (l, g) in grads.into_iter().enumerate() {
        tape.accumulate(weight(l), g.weight)?;
        tape.accumulate(bias(l), g.bias)?;
    }
    Ok(())
}

fn add_rows(target: &mut Matrix, offset: usize, grad: &Matrix, scale: f64) {
    for r in 0..grad.rows() {
        for (t, &g) in target.row_mut(offset + r).iter_mut().zip(grad.row(r)) {
            *t += scale * g;
        }
    }
}

/// Loss values and student-side gradients of one batch.
///
/// The student sees `view1`, the teacher `view2`. Teacher quantities only form
/// targets: the returned tape never holds a teacher parameter.
pub fn compute_objective(state: &ProberState, batch: &Batch, cfg: &TrainConfig, tau_t: f64) -> Result<(LossBreakdown, GradientTape)> {
    let (Some(ms), Some(mt)) = (&state.student_buffer, &state.teacher_buffer) else {
        return Err(Error::Contract("memory buffers are not initialized".into()));
    };
    let b = batch.len();
    let nl = batch.num_labelled();
    if nl > b || b < 2 {
        return Err(Error::Contract(format!("batch of {b} rows with {nl} labelled")));
    }
    let nu = b - nl;
    let on = cfg.losses;
    let (w_cru, w_crl) = (cfg.alpha1, 1.0 - cfg.alpha1);
    let (w_sup, w_unsup) = (cfg.beta1, 1.0 - cfg.beta1);

    let (v1, enc1) = state.student.forward(&batch.view1)?;
    let mut gv1 = Matrix::zeros(b, v1.cols());
    let mut tape = GradientTape::new();

    let (mut l_cru, mut regularizer, mut l_crl) = (0.0, 0.0, 0.0);
    if on.cru && nu > 0 {
        let vu = v1.slice_rows(nl, b);
        let vt = state.teacher.infer(&batch.view2.slice_rows(nl, b))?;
        let ps = student_predict(&vu, &ms.slots, cfg.tau)?;
        let pt = teacher_predict(&vt, &mt.slots, tau_t)?;
        let cru = loss_cru(&ps, &pt, cfg.gamma)?;
        let adj = loss_cru_adjoints(&cru, &vu, &ms.slots)?;
        l_cru = cru.value;
        regularizer = cru.regularizer;
        add_rows(&mut gv1, nl, &adj.grad_features, w_cru);
        tape.accumulate(ParamId::StudentBuffer, adj.grad_prototypes.scale(w_cru))?;
    }
    if on.crl && nl > 0 {
        let vl = v1.slice_rows(0, nl);
        let crl = loss_crl(&vl, &batch.labels, &state.bank.labelled_protos, cfg.tau)?;
        l_crl = crl.value;
        add_rows(&mut gv1, 0, &crl.grad_features, w_crl);
        tape.accumulate(ParamId::LabelledPrototypes, crl.grad_prototypes.scale(w_crl))?;
    }

    let (mut l_sup, mut l_unsup) = (0.0, 0.0);
    if on.sup || on.unsup {
        let (z1, head1) = state.head.forward(&v1)?;
        let mut gz1 = Matrix::zeros(b, z1.cols());
        let mut view2_pass = None;
        if on.sup && nl > 0 {
            let sup = loss_sup(&z1.slice_rows(0, nl), &batch.labels, cfg.tau_r)?;
            l_sup = sup.value;
            add_rows(&mut gz1, 0, &sup.grad, w_sup);
        }
        if on.unsup {
            let (v2, enc2) = state.student.forward(&batch.view2)?;
            let (z2, head2) = state.head.forward(&v2)?;
            let pair = loss_unsup(&z1, &z2, cfg.tau_r, cfg.cross_view_denominator)?;
            l_unsup = pair.value;
            gz1.axpy(w_unsup, &pair.grad_view1)?;
            let (hg2, gv2) = state.head.backward(&head2, &pair.grad_view2.scale(w_unsup))?;
            push_layers(&mut tape, hg2, ParamId::HeadWeight, ParamId::HeadBias)?;
            view2_pass = Some((enc2, gv2));
        }
        let (hg1, gv_head) = state.head.backward(&head1, &gz1)?;
        push_layers(&mut tape, hg1, ParamId::HeadWeight, ParamId::HeadBias)?;
        gv1.add_assign(&gv_head)?;
        if let Some((enc2, gv2)) = view2_pass {
            let (eg2, _) = state.student.backward(&enc2, &gv2)?;
            push_layers(&mut tape, eg2, ParamId::EncoderWeight, ParamId::EncoderBias)?;
        }
    }
    let (eg1, _) = state.student.backward(&enc1, &gv1)?;
    push_layers(&mut tape, eg1, ParamId::EncoderWeight, ParamId::EncoderBias)?;

    let losses = combine(l_cru, l_crl, l_sup, l_unsup, regularizer, cfg.alpha1, cfg.beta1)?;
    Ok((losses, tape))
}
