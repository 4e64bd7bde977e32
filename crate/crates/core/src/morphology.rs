//! Rule-based morphology labels from a final composition field: which species
//! forms the continuous phase and how the remaining phases are arranged.

use serde::{Deserialize, Serialize};

use crate::grid::FieldPair;

/// Standard deviation below which every species counts as unpatterned.
pub const CONTRAST_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    /// No resolved minority domains.
    Homogeneous,
    /// Isolated minority domains.
    Droplets,
    /// A minority domain spanning the box.
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Morphology {
    pub continuous: Species,
    pub structure: Structure,
}

impl Morphology {
    /// Dense class id in `0..9`.
    pub fn class_id(&self) -> usize {
        let s = match self.continuous {
            Species::A => 0,
            Species::B => 1,
            Species::C => 2,
        };
        let t = match self.structure {
            Structure::Homogeneous => 0,
            Structure::Droplets => 1,
            Structure::Network => 2,
        };
        3 * s + t
    }

    pub fn name(&self) -> String {
        format!("{:?}/{:?}", self.continuous, self.structure).to_lowercase()
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

/// Label a field by its matrix phase and the connectivity of the rest.
///
/// The species with the largest spatial spread is thresholded halfway
/// between its extremes, splitting the box into an enriched and a depleted
/// region. The larger region is the matrix; the continuous species is the
/// largest component of the matrix's mean composition. The other region is
/// grouped into 4-connected domains (periodic in x); the structure is a
/// network when one domain touches every column or every row, droplets
/// otherwise.
pub fn classify_morphology(f: &FieldPair) -> Morphology {
    let g = *f.grid();
    let (a, b) = (f.a.values(), f.b.values());
    let c: Vec<f64> = a.iter().zip(b).map(|(a, b)| 1.0 - a - b).collect();
    let species = [a, b, c.as_slice()];
    let spread = species.map(std_dev);
    let s = (0..3).fold(0, |best, i| if spread[i] > spread[best] { i } else { best });
    let x = species[s];
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let enriched: Vec<bool> = x.iter().map(|&v| v > 0.5 * (lo + hi)).collect();
    let n_enriched = enriched.iter().filter(|&&e| e).count();
    let matrix_is_enriched = 2 * n_enriched >= g.len();
    let in_matrix = |k: usize| enriched[k] == matrix_is_enriched;

    let mut mean = [0.0; 3];
    let mut count = 0usize;
    for k in (0..g.len()).filter(|&k| in_matrix(k)) {
        for (m, sp) in mean.iter_mut().zip(&species) {
            *m += sp[k];
        }
        count += 1;
    }
    if spread[s] < CONTRAST_THRESHOLD || count == g.len() {
        let all = species.map(|sp| sp.iter().sum::<f64>());
        return Morphology {
            continuous: SPECIES[argmax(&all)],
            structure: Structure::Homogeneous,
        };
    }
    let continuous = SPECIES[argmax(&mean)];

    let mut seen = vec![false; g.len()];
    let mut stack = Vec::new();
    let mut spans = false;
    for start in 0..g.len() {
        if seen[start] || in_matrix(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut cols = vec![false; g.nx];
        let mut rows = vec![false; g.ny];
        while let Some(k) = stack.pop() {
            let (i, j) = (k % g.nx, k / g.nx);
            cols[i] = true;
            rows[j] = true;
            let mut nbrs = vec![g.idx((i + 1) % g.nx, j), g.idx((i + g.nx - 1) % g.nx, j)];
            if j > 0 {
                nbrs.push(g.idx(i, j - 1));
            }
            if j + 1 < g.ny {
                nbrs.push(g.idx(i, j + 1));
            }
            for n in nbrs {
                if !seen[n] && !in_matrix(n) {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if cols.iter().all(|&x| x) || rows.iter().all(|&x| x) {
            spans = true;
            break;
        }
    }
    Morphology {
        continuous,
        structure: if spans {
            Structure::Network
        } else {
            Structure::Droplets
        },
    }
}

const SPECIES: [Species; 3] = [Species::A, Species::B, Species::C];

fn argmax(v: &[f64; 3]) -> usize {
    (0..3).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}
