//! Full-image attribution, mean class accuracy, cross-scale correlations and
//! per-class trend labels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;

use crate::dataset::{image_to_tensor, normalize_image, ChannelStats, DatasetManifest, Split};
use crate::error::{FcnaError, Result};
use crate::network::{Mode, ModelState};
use crate::ops::cross_entropy;
use crate::tensor::Tensor;

/// Softmax prediction for one whole image (`3 × h × w`, values in `[0, 1]`).
pub fn predict_image(model: &ModelState, pixels: &Tensor, stats: ChannelStats) -> Result<Tensor> {
    let input = normalize_image(pixels, stats)?;
    // Eval mode draws no random numbers; the generator only satisfies the signature.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    Ok(model.forward(&input, Mode::Eval, &mut rng)?.prediction)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-class accuracy and the `K × K` confusion matrix (rows = true class).
pub fn per_class_accuracy(
    labels: &[usize],
    predictions: &[usize],
    num_classes: usize,
) -> Result<(Vec<f64>, Vec<Vec<u64>>)> {
    if labels.len() != predictions.len() {
        return Err(FcnaError::shape("per_class_accuracy", labels.len(), predictions.len()));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        if l >= num_classes || p >= num_classes {
            return Err(FcnaError::LabelOutOfRange { label: l.max(p), num_classes });
        }
        confusion[l][p] += 1;
    }
    let acc = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                Err(FcnaError::EmptyClass(c))
            } else {
                Ok(row[c] as f64 / total as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((acc, confusion))
}

/// Unweighted mean over classes.
pub fn mean_class_accuracy(per_class: &[f64]) -> f64 {
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleResult {
    pub scale: u32,
    pub per_class_accuracy: Vec<f64>,
    pub mca: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Mean cross-entropy and per-class results over one split, using
/// eval-mode inference on whole images.
pub fn evaluate_split(
    model: &ModelState,
    manifest: &DatasetManifest,
    split: Split,
    scale: u32,
) -> Result<(f64, ScaleResult)> {
    if model.spec.num_classes != manifest.num_classes {
        return Err(FcnaError::Eval(format!(
            "model has {} classes, manifest has {}",
            model.spec.num_classes, manifest.num_classes
        )));
    }
    let mut labels = Vec::new();
    let mut predicted = Vec::new();
    let mut loss = 0.0;
    for r in manifest.records_in(split) {
        let img = crate::dataset::load_rgb(&manifest.resolve(r, scale)?)?;
        let probs = predict_image(model, &image_to_tensor(&img), manifest.channel_stats)?;
        loss += cross_entropy(&probs.cast::<f64>(), &[r.class_label])?;
        labels.push(r.class_label);
        predicted.push(argmax(probs.data()));
    }
    if labels.is_empty() {
        return Err(FcnaError::Eval(format!("split {split} is empty")));
    }
    let (acc, confusion) = per_class_accuracy(&labels, &predicted, manifest.num_classes)?;
    Ok((
        loss / labels.len() as f64,
        ScaleResult { scale, mca: mean_class_accuracy(&acc), per_class_accuracy: acc, confusion },
    ))
}

/// Test-split accuracies for a model at one scale.
pub fn evaluate_scale(model: &ModelState, manifest: &DatasetManifest, scale: u32) -> Result<ScaleResult> {
    Ok(evaluate_split(model, manifest, Split::Test, scale)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        }
    }
}

impl FromStr for CorrelationMethod {
    type Err = FcnaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(FcnaError::Eval(format!("unknown correlation method {other:?}"))),
        }
    }
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson length mismatch");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    if a == b {
        return Some(1.0);
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn correlation(a: &[f64], b: &[f64], method: CorrelationMethod) -> Option<f64> {
    match method {
        CorrelationMethod::Pearson => pearson(a, b),
        CorrelationMethod::Spearman => pearson(&ranks(a), &ranks(b)),
    }
}

fn check_vectors(scales: &[u32], per_scale: &[Vec<f64>]) -> Result<usize> {
    if scales.len() != per_scale.len() {
        return Err(FcnaError::shape("accuracy vectors", scales.len(), per_scale.len()));
    }
    let k = per_scale.first().map_or(0, Vec::len);
    if per_scale.iter().any(|v| v.len() != k) {
        return Err(FcnaError::Eval("accuracy vectors differ in length".into()));
    }
    Ok(k)
}

/// `S × S` correlations between per-class accuracy vectors; errors on the
/// first pair involving a constant vector.
pub fn correlation_matrix(scales: &[u32], per_scale: &[Vec<f64>], method: CorrelationMethod) -> Result<Vec<Vec<f64>>> {
    let k = check_vectors(scales, per_scale)?;
    if scales.len() < 2 || k < 2 {
        return Err(FcnaError::Eval(format!(
            "correlations need >= 2 scales and >= 2 classes, got {} and {k}",
            scales.len()
        )));
    }
    let s = scales.len();
    let mut m = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in i..s {
            let r = correlation(&per_scale[i], &per_scale[j], method)
                .ok_or(FcnaError::UndefinedCorrelation { a: scales[i], b: scales[j] })?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

/// As [`correlation_matrix`] but records undefined pairs as NaN.
pub fn correlation_matrix_lenient(
    scales: &[u32],
    per_scale: &[Vec<f64>],
    method: CorrelationMethod,
) -> Result<Vec<Vec<f64>>> {
    check_vectors(scales, per_scale)?;
    let s = scales.len();
    let mut m = vec![vec![f64::NAN; s]; s];
    for i in 0..s {
        for j in i..s {
            let r = correlation(&per_scale[i], &per_scale[j], method).unwrap_or(f64::NAN);
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trend {
    Increasing,
    Decreasing,
    Invariant,
}

impl Trend {
    pub const ALL: [Trend; 3] = [Trend::Increasing, Trend::Decreasing, Trend::Invariant];
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Increasing => "Increasing",
            Trend::Decreasing => "Decreasing",
            Trend::Invariant => "Invariant",
        })
    }
}

impl FromStr for Trend {
    type Err = FcnaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Increasing" => Ok(Trend::Increasing),
            "Decreasing" => Ok(Trend::Decreasing),
            "Invariant" => Ok(Trend::Invariant),
            other => Err(FcnaError::Eval(format!("unknown trend {other:?}"))),
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Labels each class by the slope of its accuracy against `log2(scale)`:
/// `|slope| ≤ epsilon` is Invariant, otherwise the sign decides.
pub fn classify_trends(
    scales: &[u32],
    per_scale: &[Vec<f64>],
    epsilon: f64,
) -> Result<(Vec<Trend>, BTreeMap<Trend, usize>)> {
    let k = check_vectors(scales, per_scale)?;
    if scales.len() < 2 {
        return Err(FcnaError::Eval("trend classification needs at least 2 scales".into()));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FcnaError::Eval(format!("scales must be ascending, got {scales:?}")));
    }
    let x: Vec<f64> = scales.iter().map(|&s| (s as f64).log2()).collect();
    let trends: Vec<Trend> = (0..k)
        .map(|c| {
            let y: Vec<f64> = per_scale.iter().map(|v| v[c]).collect();
            let slope = ls_slope(&x, &y);
            if slope.abs() <= epsilon {
                Trend::Invariant
            } else if slope > 0.0 {
                Trend::Increasing
            } else {
                Trend::Decreasing
            }
        })
        .collect();
    let mut counts: BTreeMap<Trend, usize> = Trend::ALL.iter().map(|&t| (t, 0)).collect();
    for t in &trends {
        *counts.get_mut(t).unwrap() += 1;
    }
    Ok((trends, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn all_correct() {
        let labels = [0, 0, 1, 2, 2];
        let (acc, conf) = per_class_accuracy(&labels, &labels, 3).unwrap();
        assert_eq!(acc, vec![1.0; 3]);
        assert_eq!(mean_class_accuracy(&acc), 1.0);
        assert_eq!(conf, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn half_right_class() {
        let (acc, _) = per_class_accuracy(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap();
        assert_eq!(acc, vec![1.0, 0.5]);
        assert_eq!(mean_class_accuracy(&acc), 0.75);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(per_class_accuracy(&[0, 0], &[0, 1], 3), Err(FcnaError::EmptyClass(1))));
    }

    #[test]
    fn correlation_basics() {
        let v = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(pearson(&v, &v), Some(1.0));
        let neg: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
        assert!((pearson(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&v, &[0.5; 4]), None);
        match correlation_matrix(&[64, 128], &[v.to_vec(), vec![0.5; 4]], CorrelationMethod::Pearson) {
            Err(FcnaError::UndefinedCorrelation { a: 64, b: 128 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 4.0, 9.0, 16.0];
        let m = correlation_matrix(&[1, 2], &[a.to_vec(), b.to_vec()], CorrelationMethod::Spearman).unwrap();
        assert!((m[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trend_examples() {
        let scales = [256, 512, 1024, 2048];
        let per_scale: Vec<Vec<f64>> =
            vec![vec![0.2, 0.5, 0.9], vec![0.4, 0.5, 0.6], vec![0.6, 0.5, 0.3], vec![0.8, 0.5, 0.0]];
        let (t, counts) = classify_trends(&scales, &per_scale, 0.01).unwrap();
        assert_eq!(t, vec![Trend::Increasing, Trend::Invariant, Trend::Decreasing]);
        assert_eq!(counts.values().sum::<usize>(), 3);
        assert!(classify_trends(&[256], &[vec![0.1]], 0.01).is_err());
    }

    proptest! {
        #[test]
        fn mca_is_invariant_under_relabeling(acc in proptest::collection::vec(0.0f64..1.0, 2..12), rot in 0usize..12) {
            let mut permuted = acc.clone();
            let r = rot % acc.len();
            permuted.rotate_left(r);
            prop_assert!((mean_class_accuracy(&acc) - mean_class_accuracy(&permuted)).abs() < 1e-12);
        }

        #[test]
        fn correlation_is_symmetric_with_unit_diagonal(
            vs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 2..5)
        ) {
            let scales: Vec<u32> = (0..vs.len() as u32).map(|i| 64 << i).collect();
            if let Ok(m) = correlation_matrix(&scales, &vs, CorrelationMethod::Pearson) {
                for i in 0..vs.len() {
                    prop_assert!((m[i][i] - 1.0).abs() < 1e-9);
                    for j in 0..vs.len() {
                        prop_assert_eq!(m[i][j], m[j][i]);
                    }
                }
            }
        }

        #[test]
        fn diagonal_ignores_constant_shift(v in proptest::collection::vec(0.0f64..1.0, 4), shift in -5.0f64..5.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            if let Some(r) = pearson(&shifted, &shifted) {
                prop_assert!((r - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn trends_survive_joint_rescaling(
            vs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 6), 3),
            factor in 0.1f64..10.0,
        ) {
            let scales = [64, 128, 256];
            let (a, _) = classify_trends(&scales, &vs, 0.01).unwrap();
            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * factor).collect()).collect();
            let (b, _) = classify_trends(&scales, &scaled, 0.01 * factor).unwrap();
            // Exact ties at the threshold may round differently; compare away from it.
            let x: Vec<f64> = scales.iter().map(|&s| (s as f64).log2()).collect();
            for c in 0..6 {
                let y: Vec<f64> = vs.iter().map(|v| v[c]).collect();
                if (ls_slope(&x, &y).abs() - 0.01).abs() > 1e-9 {
                    prop_assert_eq!(a[c], b[c]);
                }
            }
        }
    }
}
