//! Absorbing-state corruption and the masked-diffusion ELBO.
//!
//! At timestep `t` every token independently decays to the mask token with
//! probability `t` (linear schedule). The per-sequence loss is the sum of
//! cross-entropies at masked positions scaled by `1/t`. Because the backbone
//! keeps its left shift and no BOS token is prepended, the first position
//! is never predicted and the sum starts at the second position.

use rand::Rng;

use crate::error::{Error, Result};

/// Lower end of the timestep distribution.
pub const MIN_TIMESTEP: f64 = 0.001;
/// Fraction of pretraining sequences cut to a random length.
pub const TRUNCATION_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedSequence {
    original: Vec<u32>,
    corrupted: Vec<u32>,
    mask_positions: Vec<bool>,
    t: f64,
    mask_id: u32,
}

impl CorruptedSequence {
    /// Builds a corrupted sequence from an explicit mask pattern.
    pub fn from_mask(original: Vec<u32>, mask_positions: Vec<bool>, t: f64, mask_id: u32) -> Result<Self> {
        check_t(t)?;
        if original.len() != mask_positions.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} mask flags",
                original.len(),
                mask_positions.len()
            )));
        }
        if original.contains(&mask_id) {
            return Err(Error::MaskIdInSequence(mask_id));
        }
        let corrupted = original
            .iter()
            .zip(&mask_positions)
            .map(|(&x, &m)| if m { mask_id } else { x })
            .collect();
        Ok(Self {
            original,
            corrupted,
            mask_positions,
            t,
            mask_id,
        })
    }

    pub fn original(&self) -> &[u32] {
        &self.original
    }

    pub fn corrupted(&self) -> &[u32] {
        &self.corrupted
    }

    pub fn mask_positions(&self) -> &[bool] {
        &self.mask_positions
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.mask_positions.iter().filter(|&&m| m).count()
    }

    /// Whether any position can carry a loss term (length at least 2).
    pub fn has_predictable_positions(&self) -> bool {
        self.len() >= 2
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("timestep must lie in (0, 1], got {t}")));
    }
    Ok(())
}

/// Draws `t ~ U(0.001, 1)`.
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(MIN_TIMESTEP..=1.0)
}

/// Masks every position of `x0` independently with probability `t`.
pub fn corrupt<R: Rng + ?Sized>(x0: &[u32], t: f64, mask_id: u32, rng: &mut R) -> Result<CorruptedSequence> {
    check_t(t)?;
    if x0.contains(&mask_id) {
        return Err(Error::MaskIdInSequence(mask_id));
    }
    let mask: Vec<bool> = x0.iter().map(|_| rng.gen::<f64>() < t).collect();
    CorruptedSequence::from_mask(x0.to_vec(), mask, t, mask_id)
}

/// Unnormalized log-probabilities, one row of `vocab` entries per position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBlock {
    data: Vec<f64>,
    vocab: usize,
}

impl LogitBlock {
    pub fn new(data: Vec<f64>, vocab: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!("vocabulary of size {vocab}")));
        }
        if !data.len().is_multiple_of(vocab) {
            return Err(Error::Shape(format!(
                "{} logits do not form rows of {vocab}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { data, vocab })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab) {
            return Err(Error::Shape("ragged logit rows".into()));
        }
        Self::new(rows.concat(), vocab)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.data[l * self.vocab..(l + 1) * self.vocab]
    }

    /// `-log softmax(row l)[token]`.
    pub fn cross_entropy(&self, l: usize, token: u32) -> Result<f64> {
        let row = self.row(l);
        let target = *row.get(token as usize).ok_or(Error::OutOfVocab {
            id: token,
            vocab: self.vocab,
        })?;
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        Ok(lse - target)
    }
}

/// Per-sequence ELBO value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboLoss {
    pub value: f64,
    /// Masked positions that contributed a term.
    pub terms: usize,
    /// Set when the sequence has no predictable position (length < 2).
    pub degenerate: bool,
}

/// `(1/t) * sum_{l >= 2} [masked(l)] * CE(logits[l], x0[l])`.
pub fn elbo_loss(logits: &LogitBlock, seq: &CorruptedSequence) -> Result<ElboLoss> {
    check_t(seq.t)?;
    if logits.rows() != seq.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for a sequence of length {}",
            logits.rows(),
            seq.len()
        )));
    }
    let mut sum = 0.0;
    let mut terms = 0;
    for l in 1..seq.len() {
        if seq.mask_positions[l] {
            sum += logits.cross_entropy(l, seq.original[l])?;
            terms += 1;
        }
    }
    Ok(ElboLoss {
        value: sum / seq.t,
        terms,
        degenerate: !seq.has_predictable_positions(),
    })
}

/// Cuts each sequence, with probability `p`, to a uniform length in `[1, L]`.
pub fn random_truncate<R: Rng + ?Sized>(sequences: Vec<Vec<u32>>, rng: &mut R, p: f64) -> Result<Vec<Vec<u32>>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "truncation probability {p} outside [0, 1]"
        )));
    }
    Ok(sequences
        .into_iter()
        .map(|mut s| {
            if !s.is_empty() && rng.gen::<f64>() < p {
                let len = rng.gen_range(1..=s.len());
                s.truncate(len);
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_mask_at_t_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = corrupt(&[1, 2, 3, 4], 1.0, 99, &mut rng).unwrap();
        assert_eq!(c.corrupted(), &[99, 99, 99, 99]);
        assert_eq!(c.masked_count(), 4);
    }

    #[test]
    fn corruption_preserves_clean_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0: Vec<u32> = (0..50).collect();
        let c = corrupt(&x0, 0.4, 1000, &mut rng).unwrap();
        let restored: Vec<u32> = c
            .corrupted()
            .iter()
            .zip(c.mask_positions())
            .zip(&x0)
            .map(|((&y, &m), &x)| if m { x } else { y })
            .collect();
        assert_eq!(restored, x0);
        for ((&y, &m), &x) in c.corrupted().iter().zip(c.mask_positions()).zip(&x0) {
            assert_eq!(m, y == 1000);
            if !m {
                assert_eq!(y, x);
            }
        }
    }

    #[test]
    fn mask_id_in_sequence_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            corrupt(&[1, 7, 2], 0.5, 7, &mut rng),
            Err(Error::MaskIdInSequence(7))
        ));
        assert!(corrupt(&[1], 0.0, 7, &mut rng).is_err());
    }

    #[test]
    fn uniform_logits_value() {
        let seq = CorruptedSequence::from_mask(vec![0, 3], vec![false, true], 0.5, 9).unwrap();
        let logits = LogitBlock::new(vec![0.0; 8], 4).unwrap();
        let l = elbo_loss(&logits, &seq).unwrap();
        assert!((l.value - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(l.terms, 1);
    }

    #[test]
    fn first_position_never_counts() {
        let seq = CorruptedSequence::from_mask(vec![2, 1, 0], vec![true, false, false], 0.3, 9).unwrap();
        let a = LogitBlock::new(vec![5.0, -3.0, 0.1, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(elbo_loss(&a, &seq).unwrap().value, 0.0);
        let single = CorruptedSequence::from_mask(vec![1], vec![true], 1.0, 9).unwrap();
        let l = elbo_loss(&LogitBlock::new(vec![0.0, 1.0], 2).unwrap(), &single).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.degenerate);
    }

    #[test]
    fn out_of_vocab_target() {
        let seq = CorruptedSequence::from_mask(vec![0, 5], vec![false, true], 1.0, 9).unwrap();
        let logits = LogitBlock::new(vec![0.0; 4], 2).unwrap();
        assert!(matches!(elbo_loss(&logits, &seq), Err(Error::OutOfVocab { id: 5, .. })));
    }

    #[test]
    fn raising_true_logit_lowers_loss() {
        let seq = CorruptedSequence::from_mask(vec![0, 1], vec![false, true], 0.7, 9).unwrap();
        assert!(LogitBlock::new(vec![0.0; 5], 3).is_err());
        let lo = LogitBlock::new(vec![0.0, 0.0, 0.0, 0.3, 0.2, -0.1], 3).unwrap();
        let hi = LogitBlock::new(vec![0.0, 0.0, 0.0, 0.3, 0.9, -0.1], 3).unwrap();
        assert!(elbo_loss(&hi, &seq).unwrap().value < elbo_loss(&lo, &seq).unwrap().value);
    }

    #[test]
    fn truncation_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seqs: Vec<Vec<u32>> = (0..20).map(|i| (0..i + 1).collect()).collect();
        assert_eq!(random_truncate(seqs.clone(), &mut rng, 0.0).unwrap(), seqs);
        let cut = random_truncate(seqs.clone(), &mut rng, 1.0).unwrap();
        for (a, b) in cut.iter().zip(&seqs) {
            assert!(!a.is_empty() && a.len() <= b.len());
            assert_eq!(&b[..a.len()], &a[..]);
        }
        assert!(random_truncate(seqs, &mut rng, 1.5).is_err());
    }
}
