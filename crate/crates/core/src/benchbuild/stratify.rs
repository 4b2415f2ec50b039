use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Intent {
    Informational,
    Navigational,
    Transactional,
    Factual,
    Exploratory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    Keyword,
    NaturalQuestion,
    Telegraphic,
    LongForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthClass {
    Short,
    Medium,
    Long,
}

impl LengthClass {
    /// 1-2 whitespace tokens short, 3-11 medium, 12+ long.
    pub fn of(query: &str) -> Self {
        match query.split_whitespace().count() {
            0..=2 => LengthClass::Short,
            3..=11 => LengthClass::Medium,
            _ => LengthClass::Long,
        }
    }
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub intent: Intent,
    pub form: Form,
    pub length: LengthClass,
    pub language: String,
}

impl QueryMeta {
    pub fn new(query: &str, intent: Intent, form: Form, language: impl Into<String>) -> Self {
        Self {
            intent,
            form,
            length: LengthClass::of(query),
            language: language.into(),
        }
    }

    pub fn check(&self, query: &str) -> Result<()> {
        let actual = LengthClass::of(query);
        if actual != self.length {
            return Err(Error::InvalidArgument(format!(
                "query {query:?} is {} but tagged {}",
                label(&actual),
                label(&self.length)
            )));
        }
        Ok(())
    }

    pub fn value(&self, dim: Dimension) -> String {
        match dim {
            Dimension::Intent => label(&self.intent),
            Dimension::Form => label(&self.form),
            Dimension::Length => label(&self.length),
            Dimension::Language => self.language.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Intent,
    Form,
    Length,
    Language,
}

/// Target counts per stratum. A stratum key joins the values of `by` with
/// `|`, e.g. `"factual|en"` for `by = [intent, language]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quotas {
    pub by: Vec<Dimension>,
    pub quotas: BTreeMap<String, usize>,
    #[serde(default = "default_strict")]
    pub strict: bool,
}

fn default_strict() -> bool {
    true
}

impl Quotas {
    pub fn key(&self, meta: &QueryMeta) -> String {
        self.by.iter().map(|&d| meta.value(d)).collect::<Vec<_>>().join("|")
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&label(self))
    }
}

/// Draws `quotas[stratum]` candidates uniformly from each stratum and returns
/// their indices in input order. Strata without a quota are not sampled.
pub fn stratified_sample<R: Rng + ?Sized>(metas: &[QueryMeta], quotas: &Quotas, rng: &mut R) -> Result<Vec<usize>> {
    if quotas.by.is_empty() {
        return Err(Error::InvalidArgument("quotas need at least one dimension".into()));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in metas.iter().enumerate() {
        strata.entry(quotas.key(m)).or_default().push(i);
    }
    let mut picked = Vec::new();
    for (key, &want) in &quotas.quotas {
        let pool = strata.get_mut(key).map(Vec::as_mut_slice).unwrap_or_default();
        if want > pool.len() && quotas.strict {
            return Err(Error::UnsatisfiableQuota {
                stratum: key.clone(),
                requested: want,
                available: pool.len(),
            });
        }
        let take = want.min(pool.len());
        let (chosen, _) = pool.partial_shuffle(rng, take);
        picked.extend_from_slice(chosen);
    }
    picked.sort_unstable();
    Ok(picked)
}
