use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A query paired with one of the chunks of a contextual document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkQuery {
    pub query: Vec<u32>,
    pub gold: usize,
}

/// One training example, as token ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Pair {
        query: Vec<u32>,
        doc: Vec<u32>,
    },
    /// A document split into chunks, with every query that targets one of
    /// them. All queries of a document enter a batch together.
    Context {
        chunks: Vec<Vec<u32>>,
        queries: Vec<ChunkQuery>,
    },
    Triplet {
        query: Vec<u32>,
        positive: Vec<u32>,
        negatives: Vec<Vec<u32>>,
    },
}

impl Record {
    /// Number of batch rows this record contributes.
    pub fn rows(&self) -> usize {
        match self {
            Record::Context { queries, .. } => queries.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<Record>) -> Self {
        Self {
            name: name.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Named datasets; every batch is drawn from a single one.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPool {
    datasets: Vec<Dataset>,
}

impl DatasetPool {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::InvalidArgument("dataset pool is empty".into()));
        }
        for (i, d) in datasets.iter().enumerate() {
            if d.is_empty() {
                return Err(Error::InvalidArgument(format!("dataset {:?} has no records", d.name)));
            }
            if datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidArgument(format!("dataset {:?} listed twice", d.name)));
            }
        }
        Ok(Self { datasets })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Sub-pool restricted to `names`, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<DatasetPool> {
        let picked = names
            .iter()
            .map(|n| {
                self.get(n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        DatasetPool::new(picked)
    }
}

/// Picks a dataset with probability proportional to its size.
pub fn sample_source<'a, R: Rng + ?Sized>(pool: &'a DatasetPool, rng: &mut R) -> &'a Dataset {
    let weights = WeightedIndex::new(pool.datasets.iter().map(Dataset::len)).expect("pool sizes are positive");
    &pool.datasets[weights.sample(rng)]
}

/// Draws distinct records until `rows` batch rows are filled; a context
/// record that overflows the budget is cut short.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &Dataset, rows: usize, rng: &mut R) -> Vec<Record> {
    let order = rand::seq::index::sample(rng, dataset.len(), dataset.len());
    let mut out = Vec::new();
    let mut filled = 0;
    for i in order {
        if filled >= rows {
            break;
        }
        let mut r = dataset.records[i].clone();
        if let Record::Context { queries, .. } = &mut r {
            queries.truncate(rows - filled);
        }
        filled += r.rows();
        out.push(r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs(n: usize) -> Vec<Record> {
        (0..n)
            .map(|i| Record::Pair {
                query: vec![i as u32],
                doc: vec![i as u32],
            })
            .collect()
    }

    #[test]
    fn single_dataset_always_chosen() {
        let pool = DatasetPool::new(vec![Dataset::new("only", pairs(2))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_source(&pool, &mut rng).name == "only"));
    }

    #[test]
    fn proportional_frequencies() {
        let pool = DatasetPool::new(vec![Dataset::new("a", pairs(3)), Dataset::new("b", pairs(1))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let a = (0..n).filter(|_| sample_source(&pool, &mut rng).name == "a").count();
        assert!((a as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn pool_validation() {
        assert!(DatasetPool::new(vec![]).is_err());
        assert!(DatasetPool::new(vec![Dataset::new("a", vec![])]).is_err());
        assert!(DatasetPool::new(vec![Dataset::new("a", pairs(1)), Dataset::new("a", pairs(1))]).is_err());
        let pool = DatasetPool::new(vec![Dataset::new("a", pairs(1)), Dataset::new("b", pairs(2))]).unwrap();
        assert_eq!(pool.select(&["b"]).unwrap().datasets().len(), 1);
        assert!(pool.select(&["c"]).is_err());
    }

    #[test]
    fn context_records_fill_rows() {
        let rec = Record::Context {
            chunks: vec![vec![1], vec![2]],
            queries: vec![
                ChunkQuery {
                    query: vec![1],
                    gold: 0,
                },
                ChunkQuery {
                    query: vec![2],
                    gold: 1,
                },
            ],
        };
        let ds = Dataset::new("c", vec![rec; 5]);
        let b = sample_batch(&ds, 5, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(b.iter().map(Record::rows).sum::<usize>(), 5);
        assert_eq!(b.len(), 3);
    }
}
