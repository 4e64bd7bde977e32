use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rows_of, sq_dist, ClusterResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityConfig {
    /// Self-similarity; `None` uses the median off-diagonal similarity.
    pub preference: Option<f64>,
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to stop.
    pub convergence_iter: usize,
    /// Seed for the tie-breaking perturbation of the similarities.
    pub seed: u64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            preference: None,
            damping: 0.5,
            max_iter: 1000,
            convergence_iter: 15,
            seed: 0,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn finish(labels: Vec<usize>, exemplars: Vec<usize>, converged: bool) -> ClusterResult {
    ClusterResult {
        k: exemplars.len(),
        labels,
        centers: None,
        exemplars: Some(exemplars),
        wcss: None,
        wcss_history: Vec::new(),
        converged,
    }
}

/// Assign every sample to its most similar exemplar; exemplars label
/// themselves.
fn assign(s: &DMatrix<f64>, exemplars: &[usize]) -> Vec<usize> {
    (0..s.nrows())
        .map(|i| {
            if let Some(pos) = exemplars.iter().position(|&e| e == i) {
                return pos;
            }
            (0..exemplars.len()).fold(0, |b, c| {
                if s[(i, exemplars[c])] > s[(i, exemplars[b])] {
                    c
                } else {
                    b
                }
            })
        })
        .collect()
}

/// Frey-Dueck message passing on negative squared Euclidean similarities.
pub fn affinity_propagation(x: &DMatrix<f64>, cfg: AffinityConfig) -> Result<ClusterResult> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Data(
            "affinity propagation needs at least 2 samples".into(),
        ));
    }
    if !(0.5..1.0).contains(&cfg.damping) {
        return Err(Error::InvalidConfig(format!(
            "damping {} outside [0.5, 1)",
            cfg.damping
        )));
    }
    let rows = rows_of(x);
    let mut s = DMatrix::from_fn(n, n, |i, k| -sq_dist(&rows[i], &rows[k]));
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .map(|(i, k)| s[(i, k)])
        .collect();
    let pref = cfg.preference.unwrap_or_else(|| median(off.clone()));

    if off.iter().all(|&v| v == off[0]) {
        // every pair equally similar: messages cannot break the tie
        return Ok(if pref > off[0] {
            finish((0..n).collect(), (0..n).collect(), true)
        } else {
            finish(vec![0; n], vec![0], true)
        });
    }

    for i in 0..n {
        s[(i, i)] = pref;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for v in s.iter_mut() {
        *v += (f64::EPSILON * *v + 100.0 * f64::MIN_POSITIVE) * rng.gen_range(-1.0..1.0);
    }

    let lam = cfg.damping;
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut last = vec![false; n];
    let mut stable = 0;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        for i in 0..n {
            let (mut first, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[(i, k)] + s[(i, k)];
                if v > first {
                    second = first;
                    first = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let new = s[(i, k)] - if k == arg { second } else { first };
                r[(i, k)] = lam * r[(i, k)] + (1.0 - lam) * new;
            }
        }
        for k in 0..n {
            let col: f64 = (0..n)
                .map(|i| {
                    if i == k {
                        r[(k, k)]
                    } else {
                        r[(i, k)].max(0.0)
                    }
                })
                .sum();
            for i in 0..n {
                let new = if i == k {
                    col - r[(k, k)]
                } else {
                    (col - r[(i, k)].max(0.0)).min(0.0)
                };
                a[(i, k)] = lam * a[(i, k)] + (1.0 - lam) * new;
            }
        }
        let e: Vec<bool> = (0..n).map(|k| a[(k, k)] + r[(k, k)] > 0.0).collect();
        if e == last {
            stable += 1;
        } else {
            stable = 0;
            last = e;
        }
        if stable >= cfg.convergence_iter && last.iter().any(|&b| b) {
            converged = true;
            break;
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        let best = (0..n).fold(0, |b, k| {
            if a[(k, k)] + r[(k, k)] > a[(b, b)] + r[(b, b)] {
                k
            } else {
                b
            }
        });
        return Ok(finish(vec![0; n], vec![best], false));
    }
    // refine each exemplar to the member most similar to its cluster
    let labels = assign(&s, &exemplars);
    for (c, ex) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        *ex = members
            .iter()
            .copied()
            .map(|m| (m, members.iter().map(|&i| s[(i, m)]).sum::<f64>()))
            .fold(
                (*ex, f64::NEG_INFINITY),
                |b, v| if v.1 > b.1 { v } else { b },
            )
            .0;
    }
    exemplars.sort_unstable();
    let labels = assign(&s, &exemplars);
    Ok(finish(labels, exemplars, converged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_form_one_cluster() {
        let x = DMatrix::from_element(5, 3, 0.7);
        let r = affinity_propagation(&x, AffinityConfig::default()).unwrap();
        assert_eq!(r.k, 1);
        assert!(r.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn two_far_pairs_form_two_clusters() {
        let x = DMatrix::from_row_slice(4, 2, &[0., 0., 0.1, 0., 10., 10., 10.1, 10.]);
        let r = affinity_propagation(&x, AffinityConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.k, 2);
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
    }

    #[test]
    fn bad_damping_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let cfg = AffinityConfig {
            damping: 1.0,
            ..Default::default()
        };
        assert!(affinity_propagation(&x, cfg).is_err());
    }
}
