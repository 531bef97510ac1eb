use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{diagonal_mass, guided_mask_batch, unstack_alignments, Forward};

/// Per-term values of one loss evaluation. `attn` is unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mel: f64,
    pub linear: f64,
    pub stop: f64,
    pub attn: f64,
    pub total: f64,
}

/// Loss weights and the guided-mask width.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub guided_weight: f64,
    pub guided_g: f64,
    pub stop_pos_weight: f64,
}

fn masked_mse<'t>(tape: &'t Tape, pred: Var<'t>, target: Tensor, mask: Tensor) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("masked_mse", &pred.shape(), target.shape()));
    }
    let count = mask.sum();
    let diff = pred.sub(tape.constant(target))?;
    let sq = diff.mul(diff)?.mul(tape.constant(mask))?.sum();
    Ok(sq.scale(1.0 / count.max(1.0)))
}

/// `MSE_mel + MSE_linear + BCE_stop + λ·L_attn`, each averaged over real
/// (unpadded) elements only.
pub fn total_loss<'t>(
    tape: &'t Tape,
    fwd: &Forward<'t>,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<(Var<'t>, LossBreakdown)> {
    let mel = masked_mse(
        tape,
        fwd.mel,
        batch.mel_frames(),
        batch.frame_major_mask(batch.n_mels()),
    )?;
    let linear = masked_mse(
        tape,
        fwd.linear,
        batch.linear_frames(),
        batch.frame_major_mask(batch.n_bins()),
    )?;

    let step_mask = batch.step_mask();
    if fwd.stop_logits.shape() != batch.stop_targets.shape() {
        return Err(Error::shape(
            "stop loss",
            &fwd.stop_logits.shape(),
            batch.stop_targets.shape(),
        ));
    }
    let stop = fwd
        .stop_logits
        .bce_with_logits(
            batch.stop_targets.data(),
            step_mask.data(),
            cfg.stop_pos_weight,
        )?
        .scale(1.0 / step_mask.sum().max(1.0));

    let steps: Vec<usize> = (0..batch.size()).map(|b| batch.step_length(b)).collect();
    let (w, cells) = guided_mask_batch(
        &batch.char_lengths,
        &steps,
        batch.max_chars(),
        batch.decode_steps(),
        cfg.guided_g,
    );
    if fwd.alignments.shape() != w.shape() {
        return Err(Error::shape(
            "guided loss",
            &fwd.alignments.shape(),
            w.shape(),
        ));
    }
    let attn = fwd
        .alignments
        .mul(tape.constant(w))?
        .sum()
        .scale(1.0 / cells.max(1) as f64);

    let mut total = mel.add(linear)?.add(stop)?;
    if cfg.guided_weight != 0.0 {
        total = total.add(attn.scale(cfg.guided_weight))?;
    }
    let parts = LossBreakdown {
        mel: mel.item(),
        linear: linear.item(),
        stop: stop.item(),
        attn: attn.item(),
        total: total.item(),
    };
    Ok((total, parts))
}

/// Mean diagonal mass over the real region of each item's alignment.
pub fn batch_diagonal_mass(fwd: &Forward<'_>, batch: &Batch) -> f64 {
    let steps: Vec<usize> = (0..batch.size()).map(|b| batch.step_length(b)).collect();
    let items = unstack_alignments(&fwd.alignments.value(), &batch.char_lengths, &steps);
    items.iter().map(diagonal_mass).sum::<f64>() / items.len() as f64
}
