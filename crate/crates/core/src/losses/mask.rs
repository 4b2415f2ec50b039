use std::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};

/// Row-major 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl MaskMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn as_u8(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| u8::from(self.get(i, j))).collect())
            .collect()
    }
}

/// `m_i(x) = 1` iff `s(q_i, x) <= s(q_i, d_i) + margin`.
pub fn false_negative_mask(sims: &[Vec<f64>], pos_sims: &[f64], margin: f64) -> Result<MaskMatrix> {
    if sims.len() != pos_sims.len() {
        return Err(Error::Shape(format!(
            "{} similarity rows but {} positive similarities",
            sims.len(),
            pos_sims.len()
        )));
    }
    let cols = sims.first().map_or(0, Vec::len);
    if let Some(bad) = sims.iter().position(|r| r.len() != cols) {
        return Err(Error::Shape(format!(
            "similarity row {bad} has {} columns, expected {cols}",
            sims[bad].len()
        )));
    }
    let keep = sims
        .iter()
        .zip(pos_sims)
        .flat_map(|(row, &p)| row.iter().map(move |&s| s <= p + margin))
        .collect();
    Ok(MaskMatrix {
        rows: sims.len(),
        cols,
        keep,
    })
}

/// Duplicate-document mask: zero where two distinct positions carry the same
/// hash, one elsewhere (the diagonal is always one).
pub fn dup_mask(doc_hashes: &[u64]) -> MaskMatrix {
    let n = doc_hashes.len();
    let keep = (0..n)
        .flat_map(|i| (0..n).map(move |j| i == j || doc_hashes[i] != doc_hashes[j]))
        .collect();
    MaskMatrix { rows: n, cols: n, keep }
}

/// 64-bit FNV-1a over the document bytes.
pub fn doc_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_inclusive() {
        let m = false_negative_mask(&[vec![0.65, 0.59, 0.6]], &[0.5], 0.1).unwrap();
        assert!(!m.get(0, 0));
        assert!(m.get(0, 1));
        // 0.5 + 0.1 rounds to 0.6 in binary, so compare against the same sum
        let edge = 0.5 + 0.1;
        let m = false_negative_mask(&[vec![edge]], &[0.5], 0.1).unwrap();
        assert!(m.get(0, 0));
    }

    #[test]
    fn mask_shape_errors() {
        assert!(false_negative_mask(&[vec![0.1]], &[0.1, 0.2], 0.1).is_err());
        assert!(false_negative_mask(&[vec![0.1], vec![0.1, 0.2]], &[0.1, 0.2], 0.1).is_err());
    }

    #[test]
    fn dup_mask_cases() {
        assert!(dup_mask(&[1, 2, 3]).keep.iter().all(|&k| k));
        assert_eq!(dup_mask(&[7, 7]).as_u8(), vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(
            dup_mask(&[5, 9, 5, 5]).as_u8(),
            vec![vec![1, 1, 0, 0], vec![1, 1, 1, 1], vec![0, 1, 1, 0], vec![0, 1, 0, 1]]
        );
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(doc_hash(b""), 0xcbf29ce484222325);
        assert_eq!(doc_hash(b"a"), 0xaf63dc4c8601ec8c);
    }
}
