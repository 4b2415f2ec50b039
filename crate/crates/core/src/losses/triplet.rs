use crate::error::{Error, Result};

use super::kernel::{Slot, Workspace};
use super::{ContrastiveBatch, LossResult, Quantization};

/// InfoNCE over all in-batch documents plus every query's mined hard
/// negatives. No masking.
pub fn triplet_loss(batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
    let negatives = batch
        .hard_negatives
        .as_ref()
        .ok_or(Error::MissingComponent("hard_negatives"))?;
    let mut ws = Workspace::new(batch, quant)?;
    let n = ws.len();
    let hard: Vec<Slot> = negatives
        .iter()
        .enumerate()
        .flat_map(|(j, l)| (0..l.len()).map(move |k| Slot::Neg(j, k)))
        .collect();
    for i in 0..n {
        let denominator: Vec<Slot> = (0..n)
            .filter(|&j| j != i)
            .map(Slot::Doc)
            .chain(hard.iter().copied())
            .collect();
        ws.row(i, Slot::Doc(i), &denominator);
    }
    Ok(ws.finish())
}
