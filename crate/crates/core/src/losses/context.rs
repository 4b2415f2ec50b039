use crate::error::{Error, Result};

use super::kernel::{Slot, Workspace};
use super::{check_unit_interval, global_loss, mix, ContrastiveBatch, DocChunks, LossResult, Quantization};

fn chunks_of(batch: &ContrastiveBatch) -> Result<&[DocChunks]> {
    batch.chunks.as_deref().ok_or(Error::MissingComponent("chunks"))
}

/// In-sequence loss: the gold chunk against the other chunks of the same
/// document.
pub fn seq_loss(batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
    let chunks = chunks_of(batch)?;
    let mut ws = Workspace::new(batch, quant)?;
    for (i, doc) in chunks.iter().enumerate() {
        let negatives: Vec<Slot> = (0..doc.chunks.len())
            .filter(|&k| k != doc.gold)
            .map(|k| Slot::Chunk(i, k))
            .collect();
        ws.row(i, Slot::Chunk(i, doc.gold), &negatives);
    }
    Ok(ws.finish())
}

/// In-batch loss: the gold chunk against every other chunk in the batch,
/// including those of the same document.
pub fn batch_loss(batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
    let chunks = chunks_of(batch)?;
    let mut ws = Workspace::new(batch, quant)?;
    let all: Vec<Slot> = chunks
        .iter()
        .enumerate()
        .flat_map(|(j, doc)| (0..doc.chunks.len()).map(move |k| Slot::Chunk(j, k)))
        .collect();
    for (i, doc) in chunks.iter().enumerate() {
        let gold = Slot::Chunk(i, doc.gold);
        let negatives: Vec<Slot> = all.iter().copied().filter(|&s| s != gold).collect();
        ws.row(i, gold, &negatives);
    }
    Ok(ws.finish())
}

/// `alpha * seq + (1 - alpha) * batch`.
pub fn local_loss(batch: &ContrastiveBatch, alpha: f64, quant: Quantization) -> Result<LossResult> {
    check_unit_interval("alpha", alpha)?;
    Ok(mix(seq_loss(batch, quant)?, &batch_loss(batch, quant)?, alpha))
}

/// `beta * global + (1 - beta) * local`.
pub fn context_loss(batch: &ContrastiveBatch, alpha: f64, beta: f64, quant: Quantization) -> Result<LossResult> {
    check_unit_interval("beta", beta)?;
    Ok(mix(global_loss(batch, quant)?, &local_loss(batch, alpha, quant)?, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::RawEmbedding;

    fn e(v: &[f64]) -> RawEmbedding {
        RawEmbedding::new(v.to_vec()).unwrap()
    }

    fn one_doc(chunks: Vec<RawEmbedding>, gold: usize, tau: f64) -> ContrastiveBatch {
        ContrastiveBatch::new(vec![e(&[1.0, 0.0])], vec![e(&[1.0, 1.0])], tau)
            .with_chunks(vec![DocChunks { chunks, gold }])
            .with_doc_hashes(vec![0])
    }

    #[test]
    fn single_chunk_is_zero() {
        let b = one_doc(vec![e(&[0.3, 0.4])], 0, 0.02);
        assert_eq!(seq_loss(&b, Quantization::None).unwrap().value, 0.0);
    }

    #[test]
    fn two_chunk_softmax() {
        let b = one_doc(vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])], 0, 1.0);
        let v = seq_loss(&b, Quantization::None).unwrap().value;
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn uniform_similarities_give_log_count() {
        let b = one_doc(vec![e(&[1.0, 1.0]); 5], 2, 0.05);
        assert!((seq_loss(&b, Quantization::None).unwrap().value - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_equals_seq_for_one_document() {
        let b = one_doc(vec![e(&[1.0, 0.2]), e(&[0.1, 1.0]), e(&[-0.5, 0.5])], 1, 0.3);
        let s = seq_loss(&b, Quantization::None).unwrap();
        let bl = batch_loss(&b, Quantization::None).unwrap();
        assert!((s.value - bl.value).abs() < 1e-15);
    }

    #[test]
    fn batch_uniform_over_all_chunks() {
        let q = vec![e(&[1.0, 0.0]), e(&[1.0, 0.0])];
        let same = vec![e(&[2.0, 1.0]); 3];
        let b = ContrastiveBatch::new(q.clone(), q, 0.02).with_chunks(vec![
            DocChunks {
                chunks: same.clone(),
                gold: 0,
            },
            DocChunks { chunks: same, gold: 2 },
        ]);
        assert!((batch_loss(&b, Quantization::None).unwrap().value - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixtures_hit_endpoints() {
        let b = one_doc(vec![e(&[1.0, 0.2]), e(&[0.1, 1.0])], 0, 0.5);
        let s = seq_loss(&b, Quantization::None).unwrap();
        let bl = batch_loss(&b, Quantization::None).unwrap();
        let g = global_loss(&b, Quantization::None).unwrap();
        assert_eq!(local_loss(&b, 1.0, Quantization::None).unwrap().value, s.value);
        assert_eq!(local_loss(&b, 0.0, Quantization::None).unwrap().value, bl.value);
        let local = local_loss(&b, 0.2, Quantization::None).unwrap();
        assert_eq!(
            context_loss(&b, 0.2, 0.0, Quantization::None).unwrap().value,
            local.value
        );
        assert_eq!(context_loss(&b, 0.2, 1.0, Quantization::None).unwrap().value, g.value);
        assert!(local_loss(&b, 1.5, Quantization::None).is_err());
        assert!(context_loss(&b, 0.2, -0.1, Quantization::None).is_err());
    }

    #[test]
    fn missing_chunks_and_bad_gold() {
        let b = ContrastiveBatch::new(vec![e(&[1.0])], vec![e(&[1.0])], 1.0);
        assert!(matches!(
            seq_loss(&b, Quantization::None),
            Err(Error::MissingComponent("chunks"))
        ));
        let bad = one_doc(vec![e(&[1.0, 0.0])], 3, 1.0);
        assert!(matches!(seq_loss(&bad, Quantization::None), Err(Error::Shape(_))));
    }
}
