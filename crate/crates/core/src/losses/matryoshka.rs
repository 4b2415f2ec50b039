use crate::error::{Error, Result};

use super::{
    batch_loss, context_loss, global_loss, local_loss, pair_loss, seq_loss, triplet_loss, ContrastiveBatch, LossResult,
    Quantization,
};

/// Selects one of the contrastive objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Pair,
    Global,
    Seq,
    Batch,
    Local { alpha: f64 },
    Context { alpha: f64, beta: f64 },
    Triplet,
}

impl LossKind {
    pub fn evaluate(self, batch: &ContrastiveBatch, quant: Quantization) -> Result<LossResult> {
        match self {
            LossKind::Pair => pair_loss(batch, quant),
            LossKind::Global => global_loss(batch, quant),
            LossKind::Seq => seq_loss(batch, quant),
            LossKind::Batch => batch_loss(batch, quant),
            LossKind::Local { alpha } => local_loss(batch, alpha, quant),
            LossKind::Context { alpha, beta } => context_loss(batch, alpha, beta, quant),
            LossKind::Triplet => triplet_loss(batch, quant),
        }
    }
}

/// Evaluates `kind` on every embedding prefix in `dims` and averages with
/// equal weights. Prefixes are quantized after truncation; per-prefix
/// gradients are scattered back into full-width buffers.
pub fn matryoshka_wrap(
    kind: LossKind,
    batch: &ContrastiveBatch,
    dims: &[usize],
    quant: Quantization,
) -> Result<LossResult> {
    let d = batch.dim();
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no Matryoshka dimensions".into()));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "Matryoshka dimensions {dims:?} are not strictly ascending"
        )));
    }
    if let Some(&bad) = dims.iter().find(|&&m| m == 0 || m > d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad });
    }
    let mut total = LossResult::zeros_like(batch);
    let w = 1.0 / dims.len() as f64;
    for &m in dims {
        let part = if m == d {
            kind.evaluate(batch, quant)?
        } else {
            widen(kind.evaluate(&batch.truncated(m)?, quant)?, d)
        };
        total.add_scaled(&part, w);
    }
    Ok(total)
}

fn widen(mut r: LossResult, d: usize) -> LossResult {
    for g in r
        .grad_queries
        .iter_mut()
        .chain(r.grad_docs.iter_mut())
        .chain(r.grad_negatives.iter_mut().flatten())
        .chain(r.grad_chunks.iter_mut().flatten())
    {
        g.resize(d, 0.0);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::RawEmbedding;

    fn e(v: &[f64]) -> RawEmbedding {
        RawEmbedding::new(v.to_vec()).unwrap()
    }

    fn batch() -> ContrastiveBatch {
        ContrastiveBatch::new(
            vec![e(&[0.9, 0.3]), e(&[-0.4, 0.8]), e(&[0.2, -0.6])],
            vec![e(&[0.7, 0.5]), e(&[-0.1, 0.9]), e(&[0.5, -0.5])],
            0.5,
        )
    }

    #[test]
    fn full_width_only_is_inner_loss() {
        let b = batch();
        let inner = pair_loss(&b, Quantization::None).unwrap();
        let wrapped = matryoshka_wrap(LossKind::Pair, &b, &[2], Quantization::None).unwrap();
        assert_eq!(inner, wrapped);
    }

    #[test]
    fn two_prefixes_average_brute_force() {
        let b = batch();
        let one = pair_loss(&b.truncated(1).unwrap(), Quantization::None).unwrap();
        let two = pair_loss(&b, Quantization::None).unwrap();
        let w = matryoshka_wrap(LossKind::Pair, &b, &[1, 2], Quantization::None).unwrap();
        assert!((w.value - (one.value + two.value) / 2.0).abs() < 1e-14);
        for i in 0..3 {
            let g0 = (one.grad_queries[i][0] + two.grad_queries[i][0]) / 2.0;
            let g1 = two.grad_queries[i][1] / 2.0;
            assert!((w.grad_queries[i][0] - g0).abs() < 1e-14);
            assert!((w.grad_queries[i][1] - g1).abs() < 1e-14);
        }
    }

    #[test]
    fn scale_consistent_prefixes_give_equal_losses() {
        // every prefix of (x, x, x, x) points the same way
        let c = |x: f64| e(&[x, x, x, x]);
        let b = ContrastiveBatch::new(vec![c(1.0), c(-1.0)], vec![c(2.0), c(0.5)], 0.3);
        let full = pair_loss(&b, Quantization::None).unwrap().value;
        let w = matryoshka_wrap(LossKind::Pair, &b, &[1, 2, 4], Quantization::None).unwrap();
        assert!((w.value - full).abs() < 1e-12);
    }

    #[test]
    fn invalid_dims() {
        let b = batch();
        assert!(matches!(
            matryoshka_wrap(LossKind::Pair, &b, &[3], Quantization::None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matryoshka_wrap(LossKind::Pair, &b, &[2, 1], Quantization::None).is_err());
        assert!(matryoshka_wrap(LossKind::Pair, &b, &[], Quantization::None).is_err());
    }
}
