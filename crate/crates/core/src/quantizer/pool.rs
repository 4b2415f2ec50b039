use crate::error::{Error, Result};

use super::RawEmbedding;

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// `L` token vectors of dimension `d`, row-major, with optional chunk spans.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    data: Vec<f64>,
    dim: usize,
    spans: Vec<Span>,
}

impl TokenMatrix {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("token dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            data,
            dim,
            spans: Vec::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptySequence)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim)
    }

    /// Attaches chunk spans. Spans must be non-empty, inside `[0, L)` and
    /// pairwise disjoint.
    pub fn with_spans(mut self, spans: Vec<Span>) -> Result<Self> {
        validate_spans(&spans, self.len())?;
        self.spans = spans;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    fn mean_of(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for l in range.clone() {
            for (a, &v) in acc.iter_mut().zip(self.row(l)) {
                *a += v;
            }
        }
        let n = range.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

pub(crate) fn validate_spans(spans: &[Span], len: usize) -> Result<()> {
    for (index, s) in spans.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::InvalidSpan {
                index,
                reason: format!("empty range [{}, {})", s.start, s.end),
            });
        }
        if s.end > len {
            return Err(Error::InvalidSpan {
                index,
                reason: format!("range [{}, {}) exceeds sequence length {len}", s.start, s.end),
            });
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i].start);
    for w in order.windows(2) {
        if spans[w[1]].start < spans[w[0]].end {
            return Err(Error::InvalidSpan {
                index: w[1],
                reason: format!("overlaps span {}", w[0]),
            });
        }
    }
    Ok(())
}

/// Mean of all token vectors.
pub fn mean_pool(tokens: &TokenMatrix) -> Result<RawEmbedding> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    RawEmbedding::new(tokens.mean_of(0..tokens.len()))
}

/// One mean-pooled vector per chunk span, all read from the same token
/// matrix (late chunking: the document is encoded once, then pooled per span).
pub fn chunk_pool(tokens: &TokenMatrix) -> Result<Vec<RawEmbedding>> {
    if tokens.spans.is_empty() {
        return Err(Error::MissingComponent("chunk spans"));
    }
    validate_spans(&tokens.spans, tokens.len())?;
    tokens
        .spans
        .iter()
        .map(|s| RawEmbedding::new(tokens.mean_of(s.start..s.end)))
        .collect()
}

/// Overlapping-segment encoding for documents longer than the encoder's
/// context. Off unless requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChunkWindows {
    pub window: usize,
    pub overlap: usize,
}

impl ChunkWindows {
    fn starts(&self, len: usize) -> Result<Vec<usize>> {
        if self.window == 0 || self.overlap >= self.window {
            return Err(Error::InvalidArgument(format!(
                "window {} with overlap {} does not advance",
                self.window, self.overlap
            )));
        }
        let stride = self.window - self.overlap;
        let mut starts = vec![0];
        while starts.last().unwrap() + self.window < len {
            starts.push(starts.last().unwrap() + stride);
        }
        Ok(starts)
    }
}

/// Encodes `ids` window by window and stitches a full-length token matrix.
///
/// Each position takes its vector from the window in which it sits farthest
/// from a window edge; document boundaries do not count as edges. With a
/// window covering the whole document this is a single `encode` call.
pub fn encode_windowed<F>(ids: &[u32], windows: ChunkWindows, mut encode: F) -> Result<TokenMatrix>
where
    F: FnMut(&[u32]) -> Result<TokenMatrix>,
{
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let len = ids.len();
    let starts = windows.starts(len)?;
    if starts.len() == 1 {
        return encode(ids);
    }
    let encoded: Vec<TokenMatrix> = starts
        .iter()
        .map(|&s| encode(&ids[s..(s + windows.window).min(len)]))
        .collect::<Result<_>>()?;
    let dim = encoded[0].dim();
    let mut data = Vec::with_capacity(len * dim);
    for l in 0..len {
        let mut best: Option<(usize, usize)> = None;
        for (w, &s) in starts.iter().enumerate() {
            let e = (s + windows.window).min(len);
            if l < s || l >= e {
                continue;
            }
            let left = if s == 0 { usize::MAX } else { l - s };
            let right = if e == len { usize::MAX } else { e - 1 - l };
            let margin = left.min(right);
            if best.is_none_or(|(_, m)| margin > m) {
                best = Some((w, margin));
            }
        }
        let (w, _) = best.expect("windows cover the sequence");
        data.extend_from_slice(encoded[w].row(l - starts[w]));
    }
    TokenMatrix::new(data, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool(&mat(&[&[0.2, -0.4]])).unwrap().values(), &[0.2, -0.4]);
        assert_eq!(
            mean_pool(&mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap().values(),
            &[0.5, 0.5]
        );
        assert_eq!(
            mean_pool(&mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]))
                .unwrap()
                .values(),
            &[3.0, 4.0]
        );
    }

    #[test]
    fn empty_sequence_errors() {
        let empty = TokenMatrix::new(vec![], 3).unwrap();
        assert!(matches!(mean_pool(&empty), Err(Error::EmptySequence)));
        assert!(TokenMatrix::from_rows(&[]).is_err());
    }

    #[test]
    fn chunk_pool_examples() {
        let m = mat(&[&[1.0, 0.0], &[3.0, 0.0], &[0.0, 2.0], &[0.0, 4.0]])
            .with_spans(vec![Span::new(0, 2), Span::new(2, 4)])
            .unwrap();
        let pooled = chunk_pool(&m).unwrap();
        assert_eq!(pooled[0].values(), &[2.0, 0.0]);
        assert_eq!(pooled[1].values(), &[0.0, 3.0]);

        let full = m.clone().with_spans(vec![Span::new(0, 4)]).unwrap();
        assert_eq!(chunk_pool(&full).unwrap()[0], mean_pool(&m).unwrap());
    }

    #[test]
    fn invalid_spans_name_index() {
        let m = mat(&[&[1.0], &[2.0], &[3.0]]);
        let err = m
            .clone()
            .with_spans(vec![Span::new(0, 1), Span::new(2, 4)])
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSpan { index: 1, .. }));
        let err = m
            .clone()
            .with_spans(vec![Span::new(0, 2), Span::new(1, 3)])
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSpan { index: 1, .. }));
        let err = m.with_spans(vec![Span::new(2, 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidSpan { index: 0, .. }));
    }

    // position-dependent encoder: each token vector sees the window length
    fn ctx_encode(ids: &[u32]) -> Result<TokenMatrix> {
        let n = ids.len() as f64;
        TokenMatrix::new(ids.iter().flat_map(|&i| [f64::from(i), n]).collect(), 2)
    }

    #[test]
    fn window_covering_document_is_plain_encoding() {
        let ids: Vec<u32> = (0..10).collect();
        let whole = ctx_encode(&ids).unwrap();
        let w = encode_windowed(&ids, ChunkWindows { window: 10, overlap: 3 }, ctx_encode).unwrap();
        assert_eq!(w, whole);
        let w = encode_windowed(&ids, ChunkWindows { window: 64, overlap: 0 }, ctx_encode).unwrap();
        assert_eq!(w, whole);
    }

    #[test]
    fn windows_stitch_every_position_once() {
        let ids: Vec<u32> = (0..10).collect();
        let w = encode_windowed(&ids, ChunkWindows { window: 4, overlap: 2 }, ctx_encode).unwrap();
        assert_eq!(w.len(), 10);
        for l in 0..10 {
            assert_eq!(w.row(l)[0], l as f64);
        }
        assert!(encode_windowed(&ids, ChunkWindows { window: 4, overlap: 4 }, ctx_encode).is_err());
    }
}
