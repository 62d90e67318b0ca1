use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteResult {
    pub overall: f64,
    pub per_label: BTreeMap<String, f64>,
    pub n_samples: usize,
}

/// Silhouette coefficients with Euclidean distances. Samples alone in their
/// cluster, and samples with `a = b = 0`, score 0.
pub fn silhouette_samples(features: ArrayView2<f64>, labels: &[String]) -> Result<Vec<f64>> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::Degenerate("silhouette needs at least 2 samples".into()));
    }
    let ids: BTreeMap<&str, usize> = labels
        .iter()
        .map(String::as_str)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let k = ids.len();
    if k < 2 {
        return Err(Error::Degenerate("silhouette needs at least 2 distinct labels".into()));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids[l.as_str()]).collect();
    let mut sizes = vec![0usize; k];
    cluster.iter().for_each(|&c| sizes[c] += 1);

    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sums = vec![vec![0.0f64; k]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sums[i][cluster[j]] += d;
            sums[j][cluster[i]] += d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let own = cluster[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = sums[i][own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[i][c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 { (b - a) / m } else { 0.0 }
        })
        .collect())
}

/// Mean silhouette overall and per label.
pub fn silhouette(features: ArrayView2<f64>, labels: &[String]) -> Result<SilhouetteResult> {
    let s = silhouette_samples(features, labels)?;
    let mut per: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (l, v) in labels.iter().zip(&s) {
        let e = per.entry(l.clone()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(SilhouetteResult {
        overall: s.iter().sum::<f64>() / s.len() as f64,
        per_label: per.into_iter().map(|(l, (sum, n))| (l, sum / n as f64)).collect(),
        n_samples: s.len(),
    })
}
