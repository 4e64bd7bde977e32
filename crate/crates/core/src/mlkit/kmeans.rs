use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rows_of, sq_dist, ClusterResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    /// Independent k-means++ initialisations; the lowest wcss wins.
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iter: 300,
        }
    }
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

struct Lloyd {
    labels: Vec<usize>,
    centers: Vec<Vec<f64>>,
    wcss: f64,
    history: Vec<f64>,
    converged: bool,
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> Lloyd {
    let (n, p, k) = (rows.len(), rows[0].len(), centers.len());
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut dist = vec![0.0; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, sq_dist(r, ctr)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            dist[i] = d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let wcss: f64 = dist.iter().sum();
        debug_assert!(
            history
                .last()
                .map_or(true, |&w: &f64| wcss <= w * (1.0 + 1e-12) + 1e-300),
            "wcss increased during Lloyd iterations"
        );
        history.push(wcss);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed an empty cluster at the worst-fitting sample
                let far = (0..n).fold(0, |a, i| if dist[i] > dist[a] { i } else { a });
                centers[c] = rows[far].clone();
                dist[far] = 0.0;
            }
        }
    }
    Lloyd {
        wcss: *history.last().unwrap_or(&f64::INFINITY),
        labels,
        centers,
        history,
        converged,
    }
}

/// k-means with the default configuration (10 restarts, 300 iterations).
pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<ClusterResult> {
    kmeans_with(x, k, seed, KMeansConfig::default())
}

pub fn kmeans_with(
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<ClusterResult> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > x.nrows() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds the {} samples",
            x.nrows()
        )));
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(Error::InvalidConfig(
            "restarts and max_iter must be positive".into(),
        ));
    }
    let rows = rows_of(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Lloyd> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd(&rows, seed_centers(&rows, k, &mut rng), cfg.max_iter);
        if best.as_ref().map_or(true, |b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    // dense relabelling in order of first appearance keeps labels in 0..k
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &best.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let mut centers = DMatrix::zeros(next, x.ncols());
    for (c, &m) in map.iter().enumerate() {
        if m != usize::MAX {
            centers
                .row_mut(m)
                .iter_mut()
                .zip(&best.centers[c])
                .for_each(|(d, s)| *d = *s);
        }
    }
    Ok(ClusterResult {
        labels: best.labels.iter().map(|&l| map[l]).collect(),
        k: next,
        centers: Some(centers),
        exemplars: None,
        wcss: Some(best.wcss),
        wcss_history: best.history,
        converged: best.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub k_star: usize,
    /// (k, wcss) for every k in the range.
    pub curve: Vec<(usize, f64)>,
    /// True when the curve shows no usable elbow; `k_star` is then `k_min`.
    pub flat: bool,
}

/// Smallest relative wcss reduction at the elbow that counts as real
/// structure: the chosen k must remove at least half of the remaining wcss.
pub const ELBOW_MIN_STRENGTH: f64 = 0.5;

/// Pick k at the largest second difference of wcss(k).
pub fn elbow_select(
    x: &DMatrix<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<ElbowResult> {
    if k_min < 1 || k_max < k_min + 2 || k_max > x.nrows() {
        return Err(Error::InvalidConfig(format!(
            "k range {k_min}..={k_max} invalid for {} samples",
            x.nrows()
        )));
    }
    let mut curve = Vec::new();
    for k in k_min..=k_max {
        curve.push((k, kmeans(x, k, seed)?.wcss.unwrap_or(0.0)));
    }
    let w: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let (mut best_i, mut best_d2) = (0, f64::NEG_INFINITY);
    for i in 1..w.len() - 1 {
        let d2 = w[i - 1] - 2.0 * w[i] + w[i + 1];
        if d2 > best_d2 {
            best_i = i;
            best_d2 = d2;
        }
    }
    let scale = rows_of(x)
        .iter()
        .map(|r| sq_dist(r, &vec![0.0; r.len()]))
        .sum::<f64>();
    let strength = if w[best_i - 1] > 0.0 {
        1.0 - w[best_i] / w[best_i - 1]
    } else {
        0.0
    };
    let flat = w[0] <= 1e-12 * scale.max(f64::MIN_POSITIVE)
        || best_d2 <= 0.0
        || strength < ELBOW_MIN_STRENGTH;
    Ok(ElbowResult {
        k_star: if flat { k_min } else { curve[best_i].0 },
        curve,
        flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_two_clusters() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let r = kmeans(&x, 2, 3).unwrap();
        assert_eq!(r.wcss, Some(0.0));
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let x = DMatrix::from_row_slice(4, 2, &[0., 0., 2., 0., 0., 4., 2., 4.]);
        let r = kmeans(&x, 1, 0).unwrap();
        let c = r.centers.unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15 && (c[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((r.wcss.unwrap() - 4.0 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn bad_k_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(kmeans(&x, 0, 0).is_err());
        assert!(kmeans(&x, 3, 0).is_err());
        assert!(elbow_select(&x, 1, 2, 0).is_err());
    }
}
