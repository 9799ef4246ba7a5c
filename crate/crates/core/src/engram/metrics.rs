use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// A metric value plus whether a degenerate case forced a convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Class labels present, ascending.
fn classes(f: &FeatureMatrix) -> Vec<usize> {
    let mut c = f.labels.clone();
    c.sort_unstable();
    c.dedup();
    c
}

fn need_two_classes(f: &FeatureMatrix, what: &str) -> Result<Vec<usize>> {
    let c = classes(f);
    if c.len() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "{what} needs at least 2 classes, got {}",
            c.len()
        )));
    }
    Ok(c)
}

/// Mean Euclidean silhouette. Members of singleton classes score 0 and set the
/// degenerate flag; a point with `a = b = 0` also scores 0.
pub fn silhouette(f: &FeatureMatrix) -> Result<Metric> {
    let cls = need_two_classes(f, "silhouette")?;
    let n = f.len();
    let mut sums = vec![0.0; cls.len()];
    let mut counts = vec![0usize; cls.len()];
    for &l in &f.labels {
        counts[cls.binary_search(&l).unwrap_or(0)] += 1;
    }
    let slot: Vec<usize> = f
        .labels
        .iter()
        .map(|l| cls.binary_search(l).unwrap_or(0))
        .collect();
    let mut total = 0.0;
    let mut degenerate = false;
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[slot[j]] += dist(f.row(i), f.row(j));
            }
        }
        let own = slot[i];
        if counts[own] < 2 {
            degenerate = true;
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..cls.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(Metric {
        value: total / n as f64,
        degenerate,
    })
}

fn centroids(f: &FeatureMatrix, cls: &[usize]) -> Vec<Vec<f64>> {
    let d = f.dim();
    cls.iter()
        .map(|&c| {
            let mut sum = vec![0.0; d];
            let mut k = 0;
            for i in (0..f.len()).filter(|&i| f.labels[i] == c) {
                sum.iter_mut().zip(f.row(i)).for_each(|(s, v)| *s += v);
                k += 1;
            }
            sum.iter().map(|s| s / k as f64).collect()
        })
        .collect()
}

/// Davies-Bouldin index. Coincident centroids give `+inf` with the
/// degenerate flag set.
pub fn davies_bouldin(f: &FeatureMatrix) -> Result<Metric> {
    let cls = need_two_classes(f, "davies-bouldin")?;
    let cent = centroids(f, &cls);
    let scatter: Vec<f64> = cls
        .iter()
        .zip(&cent)
        .map(|(&c, mu)| {
            let members: Vec<usize> = (0..f.len()).filter(|&i| f.labels[i] == c).collect();
            members.iter().map(|&i| dist(f.row(i), mu)).sum::<f64>() / members.len() as f64
        })
        .collect();
    let mut degenerate = false;
    let mut total = 0.0;
    for i in 0..cls.len() {
        let mut worst = 0.0f64;
        for j in (0..cls.len()).filter(|&j| j != i) {
            let m = dist(&cent[i], &cent[j]);
            let r = if m > 0.0 {
                (scatter[i] + scatter[j]) / m
            } else {
                degenerate = true;
                f64::INFINITY
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(Metric {
        value: total / cls.len() as f64,
        degenerate,
    })
}

/// Class-centroid cosine similarities between two modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `matrix[c1][c2] = cos(first centroid c1, second centroid c2)`.
    pub matrix: Vec<Vec<f64>>,
    pub mean_diag: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    c.clamp(-1.0, 1.0)
}

/// Cosine between per-class centroids of `a` and `b` over classes
/// `0..num_classes`. A zero centroid has cosine 0 with everything.
pub fn cross_modal_alignment(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<Alignment> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "feature dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.num_classes.max(b.num_classes);
    let all: Vec<usize> = (0..n).collect();
    for f in [a, b] {
        let present = classes(f);
        if let Some(&missing) = all.iter().find(|c| !present.contains(c)) {
            return Err(Error::MissingClass(missing));
        }
    }
    let ca = centroids(a, &all);
    let cb = centroids(b, &all);
    let matrix: Vec<Vec<f64>> = ca
        .iter()
        .map(|x| cb.iter().map(|y| cosine(x, y)).collect())
        .collect();
    let mean_diag = (0..n).map(|i| matrix[i][i]).sum::<f64>() / n as f64;
    Ok(Alignment { matrix, mean_diag })
}

fn column_means(f: &FeatureMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; f.dim()];
    for i in 0..f.len() {
        mean.iter_mut().zip(f.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= f.len() as f64);
    mean
}

/// Eigenvalues of the sample covariance, descending.
pub fn covariance_spectrum(f: &FeatureMatrix) -> Vec<f64> {
    let (n, d) = (f.len(), f.dim());
    let mean = column_means(f);
    let centred = DMatrix::from_fn(n, d, |i, j| f.row(i)[j] - mean[j]);
    let cov = centred.transpose() * &centred / (n.max(2) - 1) as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Number of leading principal components reaching `threshold` of the total
/// variance, divided by the feature dimension. Zero variance gives 0, flagged.
pub fn effective_dim(f: &FeatureMatrix, threshold: f64) -> Result<Metric> {
    if f.len() < 2 {
        return Err(Error::DegenerateBatch(
            "effective dimensionality needs 2 samples".into(),
        ));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config(format!(
            "variance threshold {threshold} outside (0, 1]"
        )));
    }
    let eig = covariance_spectrum(f);
    let total: f64 = eig.iter().sum();
    // Variance at rounding level relative to the data's magnitude counts as none.
    let scale: f64 = column_means(f).iter().map(|m| m * m).sum();
    if total <= 1e-20 * (1.0 + scale) {
        return Ok(Metric {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut acc = 0.0;
    let mut k = 0;
    for v in &eig {
        acc += v;
        k += 1;
        // Relative slack absorbs rounding when the threshold is hit exactly.
        if acc >= threshold * total * (1.0 - 1e-12) {
            break;
        }
    }
    Ok(Metric {
        value: k as f64 / f.dim() as f64,
        degenerate: false,
    })
}
