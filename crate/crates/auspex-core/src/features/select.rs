//! Feature selection and the on-disk artifacts around it: the retained-name
//! mask and the catalog manifest.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::ArrayView2;

use super::gbt::{fit_importance, GbtParams};
use super::stats::pearson;
use super::{CatalogEntry, FeatureVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SelectMethod {
    /// Rank features by gradient-boosted split gain against window labels
    /// and keep the smallest prefix covering `keep_fraction` of the total.
    Importance { keep_fraction: f64 },
    /// Drop the later feature of every pair with `|pearson| > threshold`.
    Redundancy { threshold: f64 },
}

impl SelectMethod {
    pub fn importance() -> Self {
        SelectMethod::Importance { keep_fraction: 0.95 }
    }

    pub fn redundancy() -> Self {
        SelectMethod::Redundancy { threshold: 0.95 }
    }
}

/// Ordered subset of the catalog retained for detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMask {
    names: Vec<String>,
}

impl FeatureMask {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidData("feature mask is empty".into()));
        }
        Ok(Self { names })
    }

    /// Keeps every catalog feature.
    pub fn full(catalog: &[String]) -> Result<Self> {
        Self::new(catalog.to_vec())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Positions of the masked features inside a catalog ordering.
    pub fn indices_in(&self, catalog: &[String]) -> Result<Vec<usize>> {
        self.names
            .iter()
            .map(|name| {
                catalog
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::BindingMismatch(format!("feature {name:?} not in catalog")))
            })
            .collect()
    }

    /// Projects a full feature vector down to the masked features.
    pub fn project(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        self.names
            .iter()
            .map(|name| {
                features
                    .get(name)
                    .ok_or_else(|| Error::BindingMismatch(format!("feature {name:?} missing")))
            })
            .collect()
    }
}

/// Selects features over extracted rows (windows x catalog order).
/// The importance method needs one 0/1 label per row.
pub fn select_features(
    rows: ArrayView2<'_, f64>,
    names: &[String],
    labels: Option<&[u8]>,
    method: &SelectMethod,
) -> Result<FeatureMask> {
    if rows.nrows() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 rows to select features, got {}",
            rows.nrows()
        )));
    }
    if rows.ncols() != names.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature columns for {} names",
            rows.ncols(),
            names.len()
        )));
    }
    match method {
        SelectMethod::Importance { keep_fraction } => {
            let labels = labels.ok_or_else(|| {
                Error::InvalidData("importance selection requires labels".into())
            })?;
            if labels.len() != rows.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    rows.nrows()
                )));
            }
            if !(0.0..=1.0).contains(keep_fraction) {
                return Err(Error::InvalidConfig("keep_fraction must be in [0, 1]".into()));
            }
            let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let importance = fit_importance(rows, &y, &GbtParams::default());
            let total: f64 = importance.iter().sum();
            if total <= 0.0 {
                // Nothing separates the classes; keep everything.
                return FeatureMask::full(names);
            }
            let mut order: Vec<usize> = (0..names.len()).collect();
            order.sort_by(|&a, &b| {
                importance[b]
                    .partial_cmp(&importance[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut kept = BTreeSet::new();
            let mut mass = 0.0;
            for idx in order {
                kept.insert(idx);
                mass += importance[idx];
                if mass >= keep_fraction * total {
                    break;
                }
            }
            FeatureMask::new(
                names
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| kept.contains(i))
                    .map(|(_, n)| n.clone())
                    .collect(),
            )
        }
        SelectMethod::Redundancy { threshold } => {
            let d = names.len();
            let columns: Vec<Vec<f64>> = (0..d).map(|c| rows.column(c).to_vec()).collect();
            let mut alive = vec![true; d];
            for i in 0..d {
                if !alive[i] {
                    continue;
                }
                for j in i + 1..d {
                    if alive[j] && pearson(&columns[i], &columns[j]).abs() > *threshold {
                        alive[j] = false;
                    }
                }
            }
            FeatureMask::new(
                names
                    .iter()
                    .zip(&alive)
                    .filter(|(_, &a)| a)
                    .map(|(n, _)| n.clone())
                    .collect(),
            )
        }
    }
}

/// One retained feature name per line.
pub fn save_mask(mask: &FeatureMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = mask.names.join("\n");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<FeatureMask> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    FeatureMask::new(names)
}

/// Catalog manifest: `name,category,kind` per feature.
pub fn write_catalog(entries: &[CatalogEntry], path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let sep = delimiter as char;
    let mut body = format!("name{sep}category{sep}kind\n");
    for e in entries {
        body.push_str(&format!(
            "{}{sep}{}{sep}{}\n",
            e.name,
            e.category.as_str(),
            e.kind.as_str()
        ));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn redundancy_drops_exactly_one_of_a_duplicated_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let mut rows = Array2::zeros((n, 3));
        for i in 0..n {
            let v = rng.gen_range(-1.0..1.0);
            rows[[i, 0]] = v;
            rows[[i, 1]] = v; // duplicate of f0
            rows[[i, 2]] = rng.gen_range(-1.0..1.0);
        }
        let mask = select_features(rows.view(), &names(3), None, &SelectMethod::redundancy()).unwrap();
        assert_eq!(mask.names(), &["f0".to_string(), "f2".to_string()][..]);
    }

    #[test]
    fn threshold_one_keeps_the_full_catalog() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = Array2::from_shape_fn((20, 4), |_| rng.gen_range(-1.0..1.0));
        let mask = select_features(
            rows.view(),
            &names(4),
            None,
            &SelectMethod::Redundancy { threshold: 1.0 },
        )
        .unwrap();
        assert_eq!(mask.len(), 4);
    }

    #[test]
    fn importance_ranks_the_label_copy_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 40;
        let mut rows = Array2::zeros((n, 2));
        let mut labels = vec![0u8; n];
        for i in 0..n {
            labels[i] = (i % 2) as u8;
            rows[[i, 0]] = rng.gen_range(-1.0..1.0); // pure noise
            rows[[i, 1]] = labels[i] as f64; // exact copy of the label
        }
        let mask = select_features(
            rows.view(),
            &names(2),
            Some(&labels),
            &SelectMethod::Importance { keep_fraction: 0.5 },
        )
        .unwrap();
        assert_eq!(mask.names(), &["f1".to_string()][..]);
    }

    #[test]
    fn importance_without_labels_is_an_error() {
        let rows = Array2::zeros((5, 2));
        let err =
            select_features(rows.view(), &names(2), None, &SelectMethod::importance()).unwrap_err();
        assert!(err.to_string().contains("labels"));
    }

    #[test]
    fn degenerate_labels_keep_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0..1.0));
        let labels = vec![0u8; 12];
        let mask = select_features(
            rows.view(),
            &names(3),
            Some(&labels),
            &SelectMethod::importance(),
        )
        .unwrap();
        assert_eq!(mask.len(), 3);
    }

    #[test]
    fn mask_roundtrips_and_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.txt");
        let mask = FeatureMask::new(vec!["a".into(), "b".into()]).unwrap();
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
        std::fs::write(&path, "\n\n").unwrap();
        assert!(load_mask(&path).is_err());
    }

    #[test]
    fn mask_binding_checks_names() {
        let mask = FeatureMask::new(vec!["x".into()]).unwrap();
        let catalog = vec!["a".to_string(), "x".to_string()];
        assert_eq!(mask.indices_in(&catalog).unwrap(), vec![1]);
        let missing = vec!["a".to_string()];
        assert!(matches!(
            mask.indices_in(&missing),
            Err(Error::BindingMismatch(_))
        ));
    }
}
