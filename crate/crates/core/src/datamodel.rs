//! Items, their cognitive-demand annotations and historical score matrices.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_DIMS: usize = 16;
pub const MAX_LEVEL: u8 = 5;

/// Annotation dimensions in their fixed order.
pub const DIMENSION_NAMES: [&str; N_DIMS] = [
    "Attention and scan",
    "Calibrating knowns and unknowns",
    "Conceptualisation learning abstraction",
    "Critical thinking processes",
    "Identifying relevant information",
    "Knowledge applied science",
    "Knowledge customary",
    "Knowledge formal science",
    "Knowledge natural science",
    "Knowledge social science",
    "Logical reasoning",
    "Mind modelling and social cognition",
    "Quantitative reasoning",
    "Spatial reasoning and navigation",
    "Verbal comprehension",
    "Verbal expression",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub benchmark: String,
    pub text: String,
}

impl BenchmarkItem {
    pub fn new(
        id: impl Into<String>,
        benchmark: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self> {
        let item = BenchmarkItem {
            id: id.into(),
            benchmark: benchmark.into(),
            text: text.into(),
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::EmptyField("item id"));
        }
        if self.text.is_empty() {
            return Err(Error::EmptyField("item text"));
        }
        Ok(())
    }
}

/// Checks per-item invariants and id uniqueness across the dataset.
pub fn validate_items(items: &[BenchmarkItem]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for item in items {
        item.validate()?;
        if !seen.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

/// The 16 demand levels of one item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleVector {
    pub item_id: String,
    pub levels: [u8; N_DIMS],
}

impl ScaleVector {
    /// Validates arity and the 0–5 range.
    pub fn new(item_id: impl Into<String>, levels: &[i64]) -> Result<Self> {
        let item_id = item_id.into();
        if levels.len() != N_DIMS {
            return Err(Error::WrongArity {
                item_id,
                found: levels.len(),
            });
        }
        let mut out = [0u8; N_DIMS];
        for (d, (&l, o)) in levels.iter().zip(out.iter_mut()).enumerate() {
            if !(0..=MAX_LEVEL as i64).contains(&l) {
                return Err(Error::LevelOutOfRange {
                    item_id,
                    dimension: d,
                    level: l,
                });
            }
            *o = l as u8;
        }
        Ok(ScaleVector {
            item_id,
            levels: out,
        })
    }

    #[inline]
    pub fn level(&self, dim: usize) -> f64 {
        self.levels[dim] as f64
    }
}

/// Orders annotations like `items`, requiring exactly one per item.
pub fn align_annotations(items: &[BenchmarkItem], scales: Vec<ScaleVector>) -> Result<Vec<ScaleVector>> {
    let index: BTreeMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.as_str(), i))
        .collect();
    let mut slots: Vec<Option<ScaleVector>> = vec![None; items.len()];
    for s in scales {
        let &i = index
            .get(s.item_id.as_str())
            .ok_or_else(|| Error::UnknownItem(s.item_id.clone()))?;
        if slots[i].is_some() {
            return Err(Error::DuplicateAnnotation(s.item_id));
        }
        slots[i] = Some(s);
    }
    slots
        .into_iter()
        .zip(items)
        .map(|(s, it)| s.ok_or_else(|| Error::MissingAnnotation(it.id.clone())))
        .collect()
}

/// Dense model × item score matrix with values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    /// Row-major, one row per model.
    scores: Vec<f64>,
    /// Larger rank means more recently released.
    release_order: Option<Vec<i64>>,
}

impl PerformanceMatrix {
    pub fn new(model_ids: Vec<String>, item_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != model_ids.len() * item_ids.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} models x {} items",
                scores.len(),
                model_ids.len(),
                item_ids.len()
            )));
        }
        check_unique(&model_ids)?;
        check_unique(&item_ids)?;
        for (m, model) in model_ids.iter().enumerate() {
            for (i, item) in item_ids.iter().enumerate() {
                let s = scores[m * item_ids.len() + i];
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::ScoreOutOfRange {
                        model_id: model.clone(),
                        item_id: item.clone(),
                        score: s,
                    });
                }
            }
        }
        Ok(PerformanceMatrix {
            model_ids,
            item_ids,
            scores,
            release_order: None,
        })
    }

    /// Builds a dense matrix from long-form `(model, item, score)` rows.
    ///
    /// Model and item order follow first appearance. Every pair must occur
    /// exactly once.
    pub fn from_long_form<I, M, T>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (M, T, f64)>,
        M: AsRef<str>,
        T: AsRef<str>,
    {
        let mut model_ids: Vec<String> = Vec::new();
        let mut item_ids: Vec<String> = Vec::new();
        let mut model_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut item_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (model, item, score) in rows {
            let (model, item) = (model.as_ref(), item.as_ref());
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::ScoreOutOfRange {
                    model_id: model.to_string(),
                    item_id: item.to_string(),
                    score,
                });
            }
            let m = *model_index.entry(model.to_string()).or_insert_with(|| {
                model_ids.push(model.to_string());
                model_ids.len() - 1
            });
            let i = *item_index.entry(item.to_string()).or_insert_with(|| {
                item_ids.push(item.to_string());
                item_ids.len() - 1
            });
            if cells.insert((m, i), score).is_some() {
                return Err(Error::DuplicatePair {
                    model_id: model.to_string(),
                    item_id: item.to_string(),
                });
            }
        }
        let mut scores = vec![0.0; model_ids.len() * item_ids.len()];
        for (m, model) in model_ids.iter().enumerate() {
            for (i, item) in item_ids.iter().enumerate() {
                match cells.get(&(m, i)) {
                    Some(&s) => scores[m * item_ids.len() + i] = s,
                    None => {
                        return Err(Error::MissingPair {
                            model_id: model.clone(),
                            item_id: item.clone(),
                        })
                    }
                }
            }
        }
        PerformanceMatrix::new(model_ids, item_ids, scores)
    }

    /// Attaches release ranks keyed by model id. Every model needs a rank.
    pub fn with_release_order<S: AsRef<str>>(mut self, ranks: &[(S, i64)]) -> Result<Self> {
        let map: BTreeMap<&str, i64> = ranks.iter().map(|(m, r)| (m.as_ref(), *r)).collect();
        for (m, _) in ranks {
            if self.model_index(m.as_ref()).is_none() {
                return Err(Error::UnknownModel(m.as_ref().to_string()));
            }
        }
        let order = self
            .model_ids
            .iter()
            .map(|m| map.get(m.as_str()).copied().ok_or(Error::MissingReleaseOrder))
            .collect::<Result<Vec<_>>>()?;
        self.release_order = Some(order);
        Ok(self)
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn release_order(&self) -> Option<&[i64]> {
        self.release_order.as_deref()
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    #[inline]
    pub fn score(&self, model: usize, item: usize) -> f64 {
        self.scores[model * self.item_ids.len() + item]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let n = self.item_ids.len();
        &self.scores[model * n..(model + 1) * n]
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|m| m == id)
    }

    /// Restricts to the given models (in the given order).
    pub fn select_models<S: AsRef<str>>(&self, ids: &[S]) -> Result<PerformanceMatrix> {
        let idx = ids
            .iter()
            .map(|id| {
                self.model_index(id.as_ref())
                    .ok_or_else(|| Error::UnknownModel(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(idx.len() * self.n_items());
        for &m in &idx {
            scores.extend_from_slice(self.row(m));
        }
        Ok(PerformanceMatrix {
            model_ids: idx.iter().map(|&m| self.model_ids[m].clone()).collect(),
            item_ids: self.item_ids.clone(),
            scores,
            release_order: self
                .release_order
                .as_ref()
                .map(|o| idx.iter().map(|&m| o[m]).collect()),
        })
    }

    /// Long-form rows in matrix order.
    pub fn to_long_form(&self) -> Vec<(String, String, f64)> {
        let mut out = Vec::with_capacity(self.scores.len());
        for (m, model) in self.model_ids.iter().enumerate() {
            for (i, item) in self.item_ids.iter().enumerate() {
                out.push((model.clone(), item.clone(), self.score(m, i)));
            }
        }
        out
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Mean score of one model over every item.
pub fn true_score(matrix: &PerformanceMatrix, model_id: &str) -> Result<f64> {
    let m = matrix
        .model_index(model_id)
        .ok_or_else(|| Error::UnknownModel(model_id.to_string()))?;
    Ok(row_mean(matrix.row(m)))
}

pub(crate) fn row_mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// Call budget for scoring `n_models` models on a `k`-item subset after
/// `ell` annotation calls per benchmark item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub k: u64,
    pub ell: u64,
    pub n_items: u64,
    pub n_models: u64,
}

impl CostModel {
    pub fn new(k: u64, ell: u64, n_items: u64, n_models: u64) -> Result<Self> {
        if k > n_items {
            return Err(Error::KTooLarge {
                k: k as usize,
                n: n_items as usize,
            });
        }
        Ok(CostModel {
            k,
            ell,
            n_items,
            n_models,
        })
    }
}

/// `k·m + ℓ·N` LLM calls.
pub fn compute_cost(cost: &CostModel) -> u64 {
    cost.k * cost.n_models + cost.ell * cost.n_items
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn true_score_examples() {
        let m = PerformanceMatrix::new(
            ids("m", 3),
            ids("i", 4),
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.4, 0.6, 0.6],
        )
        .unwrap();
        assert_eq!(true_score(&m, "m0").unwrap(), 0.5);
        assert_eq!(true_score(&m, "m1").unwrap(), 1.0);
        assert!(matches!(true_score(&m, "nope"), Err(Error::UnknownModel(_))));
        let three = PerformanceMatrix::new(ids("m", 1), ids("i", 3), vec![0.2, 0.4, 0.6]).unwrap();
        assert!((true_score(&three, "m0").unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        let c = CostModel::new(143, 16, 28_659, 1).unwrap();
        assert_eq!(compute_cost(&c), 458_687);
        let lite = CostModel::new(143, 1, 28_659, 1).unwrap();
        assert_eq!(compute_cost(&lite), 28_802);
        assert_eq!(compute_cost(&CostModel::new(0, 0, 10, 5).unwrap()), 0);
        assert!(CostModel::new(11, 0, 10, 1).is_err());
    }

    #[test]
    fn cost_is_linear_in_models() {
        let base = compute_cost(&CostModel::new(143, 16, 28_659, 1).unwrap());
        for m in [1u64, 2, 10] {
            let c = compute_cost(&CostModel::new(143, 16, 28_659, m).unwrap());
            assert_eq!(c, base + 143 * (m - 1));
        }
    }

    #[test]
    fn scale_vector_validation() {
        assert!(ScaleVector::new("a", &[0; 16]).is_ok());
        assert!(matches!(
            ScaleVector::new("a", &[0; 15]),
            Err(Error::WrongArity { found: 15, .. })
        ));
        let mut levels = [1i64; 16];
        levels[3] = 6;
        assert!(matches!(
            ScaleVector::new("a", &levels),
            Err(Error::LevelOutOfRange { dimension: 3, level: 6, .. })
        ));
    }

    #[test]
    fn long_form_requires_complete_unique_pairs() {
        let rows = vec![
            ("a", "x", 1.0),
            ("a", "y", 0.0),
            ("a", "z", 1.0),
            ("b", "x", 0.0),
            ("b", "y", 1.0),
            ("b", "z", 0.0),
        ];
        let m = PerformanceMatrix::from_long_form(rows.clone()).unwrap();
        assert_eq!((m.n_models(), m.n_items()), (2, 3));
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
        let err = PerformanceMatrix::from_long_form(rows[..5].iter().cloned()).unwrap_err();
        assert_eq!(
            err,
            Error::MissingPair {
                model_id: "b".into(),
                item_id: "z".into()
            }
        );
        let bad = vec![("a", "x", 1.5)];
        assert!(matches!(
            PerformanceMatrix::from_long_form(bad),
            Err(Error::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn items_must_be_unique_and_nonempty() {
        let a = BenchmarkItem::new("q7", "gsm8k", "x").unwrap();
        let b = BenchmarkItem::new("q8", "gsm8k", "y").unwrap();
        assert!(validate_items(&[a.clone(), b.clone()]).is_ok());
        assert_eq!(
            validate_items(&[a.clone(), b, a]),
            Err(Error::DuplicateId("q7".into()))
        );
        assert!(BenchmarkItem::new("", "b", "t").is_err());
        assert!(BenchmarkItem::new("a", "b", "").is_err());
    }

    #[test]
    fn alignment_requires_exact_cover() {
        let items: Vec<_> = (0..2)
            .map(|i| BenchmarkItem::new(format!("i{i}"), "b", "t").unwrap())
            .collect();
        let s0 = ScaleVector::new("i0", &[0; 16]).unwrap();
        let s1 = ScaleVector::new("i1", &[1; 16]).unwrap();
        let aligned = align_annotations(&items, vec![s1.clone(), s0.clone()]).unwrap();
        assert_eq!(aligned[0].item_id, "i0");
        assert!(matches!(
            align_annotations(&items, vec![s0.clone()]),
            Err(Error::MissingAnnotation(_))
        ));
        assert!(matches!(
            align_annotations(&items, vec![s0.clone(), s0, s1]),
            Err(Error::DuplicateAnnotation(_))
        ));
    }
}
