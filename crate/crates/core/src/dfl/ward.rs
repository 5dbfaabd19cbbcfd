//! Agglomerative clustering with Ward linkage.
//!
//! Distances follow the usual dendrogram height convention: merging clusters
//! `A` and `B` costs `sqrt(2 |A||B| / (|A|+|B|)) * |c_A - c_B|`, i.e. the
//! square root of twice the increase in within-cluster sum of squares. The
//! Lance-Williams recurrence updates the squared heights.

use super::DflError;

#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    /// Smallest member id of each merged cluster, `a < b`.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Full merge sequence. Among equal heights the pair with the smallest
/// member ids merges first.
pub fn ward_linkage(vectors: &[Vec<f64>]) -> Result<Vec<Merge>, DflError> {
    let n = vectors.len();
    if n == 0 {
        return Err(DflError::EmptyInput("ward_cluster needs at least one vector"));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(DflError::LengthMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    // d2[i][j]: squared height between live clusters identified by their
    // smallest member
    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = vectors[i].iter().zip(&vectors[j]).map(|(x, y)| (x - y) * (x - y)).sum();
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut live: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while live.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &i) in live.iter().enumerate() {
            for &j in &live[x + 1..] {
                // live is sorted, so (i, j) are visited in id order and the
                // strict comparison keeps the earliest pair on ties
                if d2[i][j] < best.0 {
                    best = (d2[i][j], i, j);
                }
            }
        }
        let (d_ij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for &k in &live {
            if k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let d = ((ni + nk) * d2[k][i] + (nj + nk) * d2[k][j] - nk * d_ij) / (ni + nj + nk);
            d2[i][k] = d;
            d2[k][i] = d;
        }
        size[i] += size[j];
        live.retain(|&k| k != j);
        merges.push(Merge {
            a: i,
            b: j,
            height: d_ij.max(0.0).sqrt(),
            size: size[i],
        });
    }
    Ok(merges)
}

/// Flat clusters: merges with height above `cut` are not applied. Clusters
/// are returned as sorted member lists, ordered by smallest member.
pub fn ward_cluster(vectors: &[Vec<f64>], cut: f64) -> Result<Vec<Vec<usize>>, DflError> {
    if !(cut > 0.0) {
        return Err(DflError::Config(format!("cut must be positive, got {cut}")));
    }
    let merges = ward_linkage(vectors)?;
    Ok(flat_clusters(vectors.len(), &merges, cut))
}

pub fn flat_clusters(n: usize, merges: &[Merge], cut: f64) -> Vec<Vec<usize>> {
    let mut owner: Vec<usize> = (0..n).collect();
    for m in merges.iter().take_while(|m| m.height <= cut) {
        for o in owner.iter_mut() {
            if *o == m.b {
                *o = m.a;
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for root in 0..n {
        let members: Vec<usize> = (0..n).filter(|&i| owner[i] == root).collect();
        if !members.is_empty() {
            clusters.push(members);
        }
    }
    clusters
}
