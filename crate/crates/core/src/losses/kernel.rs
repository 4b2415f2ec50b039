use crate::error::{Error, Result};
use crate::quantizer::{quantize_scalar, ste_factor, RawEmbedding, INT8_SCALE};

use super::{ContrastiveBatch, LossResult, Quantization};

/// Embedding after the quantization map, with its norm and the per-entry
/// derivative of the map (absent for the identity).
pub(crate) struct Mapped {
    v: Vec<f64>,
    norm: f64,
    factor: Option<Vec<f64>>,
}

impl Mapped {
    fn new(raw: &RawEmbedding, quant: Quantization) -> Result<Self> {
        let x = raw.values();
        let (v, factor) = match quant {
            Quantization::None => (x.to_vec(), None),
            Quantization::Int8 => (
                x.iter().map(|&t| f64::from(quantize_scalar(t))).collect(),
                Some(x.iter().map(|&t| ste_factor(t)).collect()),
            ),
            Quantization::Int8Smooth => (
                x.iter().map(|&t| INT8_SCALE * t.tanh()).collect(),
                Some(x.iter().map(|&t| ste_factor(t)).collect()),
            ),
        };
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::UndefinedCosine);
        }
        Ok(Self { v, norm, factor })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Query(usize),
    Doc(usize),
    Neg(usize, usize),
    Chunk(usize, usize),
}

/// Mapped embeddings of a batch plus gradient accumulators (with respect to
/// the mapped vectors until [`Workspace::finish`]).
pub(crate) struct Workspace {
    q: Vec<Mapped>,
    d: Vec<Mapped>,
    neg: Vec<Vec<Mapped>>,
    chunks: Vec<Vec<Mapped>>,
    out: LossResult,
    tau: f64,
    n: f64,
}

fn map_all(v: &[RawEmbedding], quant: Quantization) -> Result<Vec<Mapped>> {
    v.iter().map(|e| Mapped::new(e, quant)).collect()
}

impl Workspace {
    pub(crate) fn new(batch: &ContrastiveBatch, quant: Quantization) -> Result<Self> {
        batch.validate()?;
        Ok(Self {
            q: map_all(&batch.queries, quant)?,
            d: map_all(&batch.docs, quant)?,
            neg: batch
                .hard_negatives
                .as_ref()
                .map_or(Ok(Vec::new()), |n| n.iter().map(|l| map_all(l, quant)).collect())?,
            chunks: batch.chunks.as_ref().map_or(Ok(Vec::new()), |c| {
                c.iter().map(|dc| map_all(&dc.chunks, quant)).collect()
            })?,
            out: LossResult::zeros_like(batch),
            tau: batch.temperature,
            n: batch.len() as f64,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.q.len()
    }

    fn mapped(&self, slot: Slot) -> &Mapped {
        match slot {
            Slot::Query(i) => &self.q[i],
            Slot::Doc(i) => &self.d[i],
            Slot::Neg(i, k) => &self.neg[i][k],
            Slot::Chunk(i, k) => &self.chunks[i][k],
        }
    }

    fn grad_mut(&mut self, slot: Slot) -> &mut [f64] {
        match slot {
            Slot::Query(i) => &mut self.out.grad_queries[i],
            Slot::Doc(i) => &mut self.out.grad_docs[i],
            Slot::Neg(i, k) => &mut self.out.grad_negatives[i][k],
            Slot::Chunk(i, k) => &mut self.out.grad_chunks[i][k],
        }
    }

    /// Cosine between query `i` and `slot`, in the mapped space.
    pub(crate) fn sim(&self, i: usize, slot: Slot) -> f64 {
        let a = &self.q[i];
        let b = self.mapped(slot);
        let dot: f64 = a.v.iter().zip(&b.v).map(|(x, y)| x * y).sum();
        dot / (a.norm * b.norm)
    }

    /// Adds `coeff * d s(q_i, slot)` to both operands' gradients.
    fn add_sim_grad(&mut self, i: usize, slot: Slot, s: f64, coeff: f64) {
        let (ga, gb) = {
            let a = &self.q[i];
            let b = self.mapped(slot);
            let inv = 1.0 / (a.norm * b.norm);
            let sa = s / (a.norm * a.norm);
            let sb = s / (b.norm * b.norm);
            let ga: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| coeff * (y * inv - sa * x)).collect();
            let gb: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| coeff * (x * inv - sb * y)).collect();
            (ga, gb)
        };
        for (g, d) in self.grad_mut(Slot::Query(i)).iter_mut().zip(&ga) {
            *g += d;
        }
        for (g, d) in self.grad_mut(slot).iter_mut().zip(&gb) {
            *g += d;
        }
    }

    /// One InfoNCE row for query `i`: the denominator holds `pos` and every
    /// slot in `negatives`. Contributes `row / N` to the value.
    ///
    /// Evaluated as `log(1 + sum_j exp((s_j - s_pos) / tau))` so that rows
    /// the model already gets right keep full relative precision.
    pub(crate) fn row(&mut self, i: usize, pos: Slot, negatives: &[Slot]) -> f64 {
        let s_pos = self.sim(i, pos);
        let sims: Vec<f64> = negatives.iter().map(|&s| self.sim(i, s)).collect();
        let gaps: Vec<f64> = sims.iter().map(|s| (s - s_pos) / self.tau).collect();
        let top = gaps.iter().copied().fold(0.0, f64::max);
        let exps: Vec<f64> = gaps.iter().map(|g| (g - top).exp()).collect();
        let rest: f64 = exps.iter().sum();
        let total = (-top).exp() + rest;
        let value = if top == 0.0 { rest.ln_1p() } else { top + total.ln() };

        let scale = 1.0 / (self.tau * self.n);
        // 1 - p_pos, without cancellation
        self.add_sim_grad(i, pos, s_pos, -scale * rest / total);
        for ((&slot, &s), &e) in negatives.iter().zip(&sims).zip(&exps) {
            self.add_sim_grad(i, slot, s, scale * e / total);
        }
        self.out.value += value / self.n;
        value
    }

    /// Chains the accumulated gradients through the quantization map.
    pub(crate) fn finish(mut self) -> LossResult {
        fn chain(grads: &mut [Vec<f64>], mapped: &[Mapped]) {
            for (g, m) in grads.iter_mut().zip(mapped) {
                if let Some(f) = &m.factor {
                    g.iter_mut().zip(f).for_each(|(a, b)| *a *= b);
                }
            }
        }
        chain(&mut self.out.grad_queries, &self.q);
        chain(&mut self.out.grad_docs, &self.d);
        for (g, m) in self.out.grad_negatives.iter_mut().zip(&self.neg) {
            chain(g, m);
        }
        for (g, m) in self.out.grad_chunks.iter_mut().zip(&self.chunks) {
            chain(g, m);
        }
        // rounding can make a row's value -0.0 or a few ulps below zero
        self.out.value = self.out.value.max(0.0);
        self.out
    }
}
