use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::words::inflections;

/// Weighted list of generative (imperative) verbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbTable {
    entries: Vec<(String, f64)>,
}

const DEFAULT_VERBS: [(&str, f64); 12] = [
    ("add", 0.10),
    ("put", 0.10),
    ("place", 0.10),
    ("set", 0.10),
    ("create", 0.10),
    ("generate", 0.10),
    ("insert", 0.10),
    ("produce", 0.10),
    ("lay", 0.05),
    ("deposit", 0.05),
    ("position", 0.05),
    ("situate", 0.05),
];

impl Default for VerbTable {
    fn default() -> Self {
        Self {
            entries: DEFAULT_VERBS
                .iter()
                .map(|&(v, w)| (v.to_string(), w))
                .collect(),
        }
    }
}

impl VerbTable {
    /// Builds a table; weights must be positive and sum to 1 within 1e-9.
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, PipelineError> {
        if entries.is_empty() {
            return Err(PipelineError::InvalidTable("no verbs".into()));
        }
        if let Some((v, w)) = entries.iter().find(|(_, w)| !(*w > 0.0) || !w.is_finite()) {
            return Err(PipelineError::InvalidTable(format!(
                "weight of {v:?} must be positive, got {w}"
            )));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidTable(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn verbs(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(v, _)| v.as_str())
    }

    pub fn weight(&self, verb: &str) -> Option<f64> {
        self.entries.iter().find(|(v, _)| v == verb).map(|(_, w)| *w)
    }

    /// Every accepted surface form of every verb in the table.
    pub fn surface_forms(&self) -> Vec<String> {
        let mut forms: Vec<String> = self.verbs().flat_map(inflections).collect();
        forms.sort();
        forms.dedup();
        forms
    }
}

/// Weighted categorical draw from the table.
pub fn sample_verb<'a, R: Rng + ?Sized>(
    table: &'a VerbTable,
    rng: &mut R,
) -> Result<&'a str, PipelineError> {
    if table.entries.is_empty() {
        return Err(PipelineError::InvalidTable("no verbs".into()));
    }
    let dist = WeightedIndex::new(table.entries.iter().map(|(_, w)| *w))
        .map_err(|e| PipelineError::InvalidTable(e.to_string()))?;
    Ok(&table.entries[dist.sample(rng)].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_weights_sum_to_one() {
        let t = VerbTable::default();
        let total: f64 = t.entries().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(t.entries().len(), 12);
        assert_eq!(t.weight("lay"), Some(0.05));
        assert_eq!(t.weight("add"), Some(0.10));
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(VerbTable::new(vec![]).is_err());
        assert!(VerbTable::new(vec![("a".into(), 0.5)]).is_err());
        assert!(VerbTable::new(vec![("a".into(), 1.5), ("b".into(), -0.5)]).is_err());
    }

    #[test]
    fn single_entry_table_always_draws_it() {
        let t = VerbTable::new(vec![("place".into(), 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_verb(&t, &mut rng).unwrap(), "place");
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let t = VerbTable::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_verb(&t, &mut rng).unwrap().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn frequencies_follow_weights() {
        let t = VerbTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(sample_verb(&t, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        for (v, w) in t.entries() {
            let f = counts[v.as_str()] as f64 / n as f64;
            assert!((f - w).abs() <= 0.01, "{v}: {f} vs {w}");
        }
    }
}
