use crate::error::{Error, Result};

use super::kernel::{Slot, Workspace};
use super::mask::{dup_mask, false_negative_mask, MaskMatrix};
use super::{ContrastiveBatch, LossResult, Quantization};

/// Query-to-document and query-to-query similarity matrices with the
/// false-negative masks derived from them.
fn masks(ws: &Workspace, margin: f64) -> Result<(MaskMatrix, MaskMatrix)> {
    let n = ws.len();
    let s_qd: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| ws.sim(i, Slot::Doc(j))).collect())
        .collect();
    let s_qq: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| ws.sim(i, Slot::Query(j))).collect())
        .collect();
    let pos: Vec<f64> = (0..n).map(|i| s_qd[i][i]).collect();
    Ok((
        false_negative_mask(&s_qd, &pos, margin)?,
        false_negative_mask(&s_qq, &pos, margin)?,
    ))
}

/// In-batch InfoNCE against other documents and other queries, with
/// likely false negatives masked out.
pub fn pair_loss(batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
    let mut ws = Workspace::new(batch, quant)?;
    let (m_doc, m_query) = masks(&ws, batch.margin)?;
    let n = ws.len();
    for i in 0..n {
        let negatives: Vec<Slot> = (0..n)
            .filter(|&j| j != i && m_doc.get(i, j))
            .map(Slot::Doc)
            .chain((0..n).filter(|&j| j != i && m_query.get(i, j)).map(Slot::Query))
            .collect();
        ws.row(i, Slot::Doc(i), &negatives);
    }
    Ok(ws.finish())
}

/// Document-level loss of contextual training: the pair loss with duplicate
/// documents (equal hashes) removed from the negatives.
pub fn global_loss(batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
    let hashes = batch.doc_hashes.as_ref().ok_or(Error::MissingComponent("doc_hashes"))?;
    let mut ws = Workspace::new(batch, quant)?;
    let dup = dup_mask(hashes);
    let (m_doc, m_query) = masks(&ws, batch.margin)?;
    let n = ws.len();
    for i in 0..n {
        let negatives: Vec<Slot> = (0..n)
            .filter(|&j| j != i && dup.get(i, j) && m_doc.get(i, j))
            .map(Slot::Doc)
            .chain((0..n).filter(|&j| j != i && m_query.get(i, j)).map(Slot::Query))
            .collect();
        ws.row(i, Slot::Doc(i), &negatives);
    }
    Ok(ws.finish())
}
