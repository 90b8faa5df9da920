use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{DatasetManifest, Record, Split};

/// How many labelled records to draw per class from the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBudget {
    /// `ceil(fraction × class train count)`.
    Fraction(f64),
    /// A fixed number per class.
    PerClass(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplit {
    pub train_records: Vec<Record>,
    pub val_records: Vec<Record>,
    /// Labelled records per class over the class's train-split size.
    pub label_fraction: f64,
}

/// Draw a class-balanced labelled subset from the train split, holding out
/// `per_class_val` records of each class for probe validation.
pub fn split_labels<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    budget: LabelBudget,
    per_class_val: usize,
    rng: &mut R,
) -> Result<ProbeSplit> {
    let mut train_records = Vec::new();
    let mut val_records = Vec::new();
    let mut fraction = 0.0;
    for class in &manifest.class_names {
        let pool: Vec<&Record> =
            manifest.records_in(Split::Train).filter(|r| &r.class_label == class).collect();
        let want = match budget {
            LabelBudget::Fraction(f) if (0.0..=1.0).contains(&f) => (f * pool.len() as f64 - 1e-9).ceil().max(0.0) as usize,
            LabelBudget::Fraction(f) => return Err(Error::Config(format!("label fraction {f} outside [0, 1]"))),
            LabelBudget::PerClass(n) => n,
        };
        if want == 0 || want > pool.len() {
            return Err(Error::InsufficientData(format!(
                "class `{class}` needs {want} labelled train records but has {}",
                pool.len()
            )));
        }
        if per_class_val > want {
            return Err(Error::InsufficientData(format!(
                "{per_class_val} validation records requested from {want} labelled records of class `{class}`"
            )));
        }
        let picked = sample(rng, pool.len(), want).into_vec();
        let (val, train) = picked.split_at(per_class_val);
        let mut val = val.to_vec();
        let mut train = train.to_vec();
        val.sort_unstable();
        train.sort_unstable();
        val_records.extend(val.into_iter().map(|i| pool[i].clone()));
        train_records.extend(train.into_iter().map(|i| pool[i].clone()));
        fraction = want as f64 / pool.len() as f64;
    }
    Ok(ProbeSplit { train_records, val_records, label_fraction: fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::HashSet;
    use std::path::PathBuf;

    fn manifest(classes: usize, train: usize, val: usize) -> DatasetManifest {
        let class_names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let mut records = Vec::new();
        for c in &class_names {
            for i in 0..train + val {
                let split = if i < train { Split::Train } else { Split::Val };
                records.push(Record { path: format!("{c}/{i}.png"), class_label: c.clone(), split });
            }
        }
        DatasetManifest { class_names, master_seed: 0, records, root: PathBuf::new() }
    }

    #[test]
    fn absolute_counts_match_the_paper_framing() {
        let m = manifest(5, 800, 200);
        let s = split_labels(&m, LabelBudget::PerClass(50), 10, &mut seeded(1)).unwrap();
        assert_eq!(s.train_records.len(), 200);
        assert_eq!(s.val_records.len(), 50);
        for c in &m.class_names {
            assert_eq!(s.train_records.iter().filter(|r| &r.class_label == c).count(), 40);
            assert_eq!(s.val_records.iter().filter(|r| &r.class_label == c).count(), 10);
        }
        let train: HashSet<_> = s.train_records.iter().map(|r| &r.path).collect();
        assert!(s.val_records.iter().all(|r| !train.contains(&r.path)));
        assert!(s.train_records.iter().chain(&s.val_records).all(|r| r.split == Split::Train));
    }

    #[test]
    fn full_fraction_takes_the_whole_train_split() {
        let m = manifest(3, 12, 4);
        let s = split_labels(&m, LabelBudget::Fraction(1.0), 0, &mut seeded(2)).unwrap();
        let all: Vec<_> = m.records_in(Split::Train).cloned().collect();
        assert_eq!(s.train_records, all);
        assert!(s.val_records.is_empty());
    }

    #[test]
    fn deterministic_and_validated() {
        let m = manifest(2, 20, 5);
        let a = split_labels(&m, LabelBudget::Fraction(0.25), 2, &mut seeded(3)).unwrap();
        let b = split_labels(&m, LabelBudget::Fraction(0.25), 2, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_records.len(), 6);
        assert!(matches!(split_labels(&m, LabelBudget::PerClass(21), 0, &mut seeded(3)), Err(Error::InsufficientData(_))));
        assert!(matches!(split_labels(&m, LabelBudget::PerClass(3), 4, &mut seeded(3)), Err(Error::InsufficientData(_))));
    }
}
