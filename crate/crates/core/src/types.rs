//! Shared domain types and the primitive numeric operations used throughout
//! the crate: Euclidean distance, the `exp(-distance)` discriminant, label
//! cardinality and min-max feature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of class indices, kept sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = members.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        LabelSet(v)
    }

    pub fn empty() -> Self {
        LabelSet(Vec::new())
    }

    pub fn singleton(c: usize) -> Self {
        LabelSet(vec![c])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, c: usize) -> bool {
        self.0.binary_search(&c).is_ok()
    }

    pub fn insert(&mut self, c: usize) {
        if let Err(pos) = self.0.binary_search(&c) {
            self.0.insert(pos, c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Checks that every member is a valid class index for `n` classes.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max >= n => Err(Error::usage(format!(
                "class index {max} out of range for {n} classes"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        LabelSet::new(iter)
    }
}

/// One stream item. `truth` is only consumed by offline training and by the
/// evaluator; the online classifier is handed features alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sequence_id: u64,
    pub features: Vec<f64>,
    pub truth: Option<LabelSet>,
}

impl Instance {
    pub fn new(sequence_id: u64, features: Vec<f64>, truth: Option<LabelSet>) -> Self {
        Instance {
            sequence_id,
            features,
            truth,
        }
    }

    pub fn check_features(&self, n_features: usize) -> Result<()> {
        if self.features.len() != n_features {
            return Err(Error::Data {
                sequence_id: self.sequence_id,
                message: format!(
                    "expected {n_features} features, found {}",
                    self.features.len()
                ),
            });
        }
        if let Some(f) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                sequence_id: self.sequence_id,
                message: format!("feature {f} is not finite"),
            });
        }
        Ok(())
    }
}

/// Dataset shape plus the per-feature scaling range learned on offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
}

impl DatasetMeta {
    /// Fits min/max per feature over `rows`.
    pub fn fit<'a, I>(rows: I, n_features: usize, n_classes: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::usage("dataset needs at least one feature and one class"));
        }
        let mut feature_min = vec![f64::INFINITY; n_features];
        let mut feature_max = vec![f64::NEG_INFINITY; n_features];
        let mut seen = 0usize;
        for row in rows {
            check_len(row.len(), n_features)?;
            for (f, &v) in row.iter().enumerate() {
                feature_min[f] = feature_min[f].min(v);
                feature_max[f] = feature_max[f].max(v);
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::usage("cannot fit scaling on an empty dataset"));
        }
        Ok(DatasetMeta {
            n_features,
            n_classes,
            feature_min,
            feature_max,
        })
    }

    /// The `[0, 1]` range on every feature.
    pub fn unit(n_features: usize, n_classes: usize) -> Self {
        DatasetMeta {
            n_features,
            n_classes,
            feature_min: vec![0.0; n_features],
            feature_max: vec![1.0; n_features],
        }
    }
}

/// Mean number of labels per instance, over `n` instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelCardinality {
    pub z: f64,
    pub n: u64,
}

#[inline]
fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::usage(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(distance(a, b))
}

/// `exp(-||x - m||)`, a similarity in `(0, 1]`.
pub fn discriminant(x: &[f64], m: &[f64]) -> Result<f64> {
    euclidean_distance(x, m).map(|d| (-d).exp())
}

pub fn batch_label_cardinality<'a, I>(labelsets: I) -> Result<LabelCardinality>
where
    I: IntoIterator<Item = &'a LabelSet>,
{
    let (total, n) = labelsets
        .into_iter()
        .fold((0u64, 0u64), |(t, n), y| (t + y.len() as u64, n + 1));
    if n == 0 {
        return Err(Error::usage("label cardinality of an empty sequence"));
    }
    Ok(LabelCardinality {
        z: total as f64 / n as f64,
        n,
    })
}

/// Min-max scales `x` into `[0, 1]` with the fitted range. Values outside the
/// range clamp; a constant feature maps to 0.5.
pub fn scale_features(x: &[f64], meta: &DatasetMeta) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    scale_into(x, meta, &mut out)?;
    Ok(out)
}

pub(crate) fn scale_into(x: &[f64], meta: &DatasetMeta, out: &mut [f64]) -> Result<()> {
    check_len(x.len(), meta.n_features)?;
    check_len(out.len(), meta.n_features)?;
    for (f, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        let (lo, hi) = (meta.feature_min[f], meta.feature_max[f]);
        *o = if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pythagorean_distance() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let a = [0.3, -1.2, 7.0];
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_scalar_loop() {
        let a = [0.2, 0.7, 0.1];
        let b = [0.5, 0.5, 0.5];
        let mut acc = 0.0f64;
        for i in 0..3 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        // (0.09 + 0.04 + 0.16) = 0.29
        assert!((acc - 0.29).abs() < 1e-15);
        assert!((euclidean_distance(&a, &b).unwrap() - acc.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::Usage(_))
        ));
        assert!(discriminant(&[1.0], &[]).is_err());
    }

    #[test]
    fn discriminant_values() {
        assert_eq!(discriminant(&[0.4, 0.4], &[0.4, 0.4]).unwrap(), 1.0);
        let e1 = discriminant(&[0.0], &[1.0]).unwrap();
        assert!((e1 - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e1 - 0.3679).abs() < 1e-4);
        let half = discriminant(&[0.0], &[std::f64::consts::LN_2]).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cardinality_examples() {
        let ys = [LabelSet::new([0]), LabelSet::new([0, 1])];
        let c = batch_label_cardinality(&ys).unwrap();
        assert_eq!(c.z, 1.5);
        assert_eq!(c.n, 2);
        let singles: Vec<_> = (0..7).map(|i| LabelSet::singleton(i % 3)).collect();
        assert_eq!(batch_label_cardinality(&singles).unwrap().z, 1.0);
        assert!(batch_label_cardinality(&[]).is_err());
    }

    #[test]
    fn scaling_endpoints_and_degenerate() {
        let meta = DatasetMeta {
            n_features: 3,
            n_classes: 1,
            feature_min: vec![-2.0, 0.0, 4.0],
            feature_max: vec![2.0, 10.0, 4.0],
        };
        assert_eq!(scale_features(&[-2.0, 0.0, 4.0], &meta).unwrap(), vec![0.0, 0.0, 0.5]);
        assert_eq!(scale_features(&[2.0, 10.0, 4.0], &meta).unwrap(), vec![1.0, 1.0, 0.5]);
        let mid = scale_features(&[0.0, 5.0, 9.0], &meta).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-12 && (mid[1] - 0.5).abs() < 1e-12);
        assert_eq!(mid[2], 0.5);
        assert_eq!(scale_features(&[-9.0, 11.0, 0.0], &meta).unwrap(), vec![0.0, 1.0, 0.5]);
        assert!(scale_features(&[0.0], &meta).is_err());
    }

    #[test]
    fn fit_meta() {
        let rows = [vec![1.0, 5.0], vec![-1.0, 7.0]];
        let meta = DatasetMeta::fit(rows.iter().map(|r| r.as_slice()), 2, 2).unwrap();
        assert_eq!(meta.feature_min, vec![-1.0, 5.0]);
        assert_eq!(meta.feature_max, vec![1.0, 7.0]);
        assert!(DatasetMeta::fit(std::iter::empty(), 2, 2).is_err());
    }

    #[test]
    fn labelset_ops() {
        let mut y = LabelSet::new([3, 1, 3]);
        assert_eq!(y.as_slice(), &[1, 3]);
        y.insert(2);
        y.insert(2);
        assert_eq!(y.as_slice(), &[1, 2, 3]);
        assert!(y.check_bounds(4).is_ok());
        assert!(y.check_bounds(3).is_err());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn discriminant_in_unit_interval((x, m) in vec_pair()) {
            let g = discriminant(&x, &m).unwrap();
            prop_assert!(g > 0.0 || euclidean_distance(&x, &m).unwrap() > 700.0);
            prop_assert!(g <= 1.0);
            prop_assert_eq!(g == 1.0, x == m);
            prop_assert_eq!(euclidean_distance(&x, &m).unwrap(), euclidean_distance(&m, &x).unwrap());
        }

        #[test]
        fn cardinality_of_concatenation(
            a in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..6), 1..40),
            b in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..6), 1..40),
        ) {
            let a: Vec<LabelSet> = a.into_iter().map(LabelSet::new).collect();
            let b: Vec<LabelSet> = b.into_iter().map(LabelSet::new).collect();
            let za = batch_label_cardinality(&a).unwrap();
            let zb = batch_label_cardinality(&b).unwrap();
            let zab = batch_label_cardinality(a.iter().chain(&b)).unwrap();
            let weighted = (za.z * za.n as f64 + zb.z * zb.n as f64) / (za.n + zb.n) as f64;
            prop_assert!((zab.z - weighted).abs() < 1e-12);
            prop_assert_eq!(zab.n, za.n + zb.n);
        }

        #[test]
        fn unit_scaling_is_idempotent(x in prop::collection::vec(0.0f64..=1.0, 1..6)) {
            let meta = DatasetMeta::unit(x.len(), 1);
            let once = scale_features(&x, &meta).unwrap();
            prop_assert_eq!(&once, &x);
            prop_assert_eq!(scale_features(&once, &meta).unwrap(), once);
        }
    }
}
