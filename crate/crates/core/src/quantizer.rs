//! K-means codebook learning (k-means++ seeding, Lloyd iterations) and
//! nearest-centroid assignment. Distances and sums are accumulated in double
//! precision whatever the input precision.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::exec::{Executor, Serial};
use crate::rng;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub clusters: usize,
    pub max_iters: usize,
    /// Stop when the relative inertia improvement falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Independent seedings; the run with the lowest final inertia wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            clusters: 500,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// Row-major `clusters × dim`.
    pub centroids: Vec<f64>,
    pub clusters: usize,
    pub dim: usize,
    /// Sum of squared distances of the training frames to their centroid.
    pub inertia: f64,
    /// Inertia after the seeding assignment and after every Lloyd iteration.
    pub history: Vec<f64>,
}

impl Codebook {
    pub fn new(centroids: Vec<f64>, clusters: usize, dim: usize, inertia: f64) -> Result<Self> {
        if clusters == 0 || dim == 0 || centroids.len() != clusters * dim {
            bail!(
                Quantizer,
                "codebook shape {clusters}x{dim} does not match {} values",
                centroids.len()
            );
        }
        if centroids.iter().any(|x| !x.is_finite()) || !inertia.is_finite() || inertia < 0.0 {
            bail!(Quantizer, "codebook contains non-finite values");
        }
        Ok(Self {
            centroids,
            clusters,
            dim,
            inertia,
            history: Vec::new(),
        })
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    fn nearest(&self, x: &[f32]) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for c in 0..self.clusters {
            let d = sq_dist(x, self.centroid(c));
            if d < best.1 {
                best = (c as u32, d);
            }
        }
        best
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

fn check_frames(frames: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 || !frames.len().is_multiple_of(dim) {
        bail!(
            Quantizer,
            "{} values do not form rows of dimension {dim}",
            frames.len()
        );
    }
    if frames.iter().any(|x| !x.is_finite()) {
        bail!(Quantizer, "non-finite feature value");
    }
    Ok(frames.len() / dim)
}

/// Nearest centroid per frame; ties go to the lowest centroid index.
pub fn assign(codebook: &Codebook, frames: &[f32], dim: usize) -> Result<Vec<u32>> {
    assign_with(&Serial, codebook, frames, dim)
}

pub fn assign_with<E: Executor>(
    exec: &E,
    codebook: &Codebook,
    frames: &[f32],
    dim: usize,
) -> Result<Vec<u32>> {
    if dim != codebook.dim {
        bail!(
            Quantizer,
            "frames have dimension {dim}, codebook expects {}",
            codebook.dim
        );
    }
    check_frames(frames, dim)?;
    Ok(assign_dist(exec, codebook, frames)
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

fn assign_dist<E: Executor>(exec: &E, codebook: &Codebook, frames: &[f32]) -> Vec<(u32, f64)> {
    let dim = codebook.dim;
    let n = frames.len() / dim;
    let chunks = n.div_ceil(CHUNK);
    exec.map(chunks, |ci| {
        let rows = ci * CHUNK..((ci + 1) * CHUNK).min(n);
        rows.map(|i| codebook.nearest(&frames[i * dim..(i + 1) * dim]))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Sum of squared distances from each frame to its assigned centroid.
pub fn inertia(codebook: &Codebook, frames: &[f32], labels: &[u32]) -> f64 {
    let dim = codebook.dim;
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            sq_dist(
                &frames[i * dim..(i + 1) * dim],
                codebook.centroid(c as usize),
            )
        })
        .sum()
}

pub fn fit_kmeans(frames: &[f32], dim: usize, opts: &KMeansOptions) -> Result<Codebook> {
    fit_kmeans_with(&Serial, frames, dim, opts)
}

/// Lloyd's algorithm from a k-means++ start, repeated `restarts` times. The objective is checked after
/// every iteration and an increase is reported as an error.
pub fn fit_kmeans_with<E: Executor>(
    exec: &E,
    frames: &[f32],
    dim: usize,
    opts: &KMeansOptions,
) -> Result<Codebook> {
    let n = check_frames(frames, dim)?;
    let k = opts.clusters;
    if k == 0 {
        bail!(Quantizer, "cluster count must be positive");
    }
    if n < k {
        bail!(Quantizer, "{n} frames cannot seed {k} clusters");
    }
    if opts.restarts == 0 {
        bail!(Quantizer, "restart count must be positive");
    }
    let mut best: Option<Codebook> = None;
    for r in 0..opts.restarts {
        let seed = if r == 0 {
            opts.seed
        } else {
            rng::mix(opts.seed, r as u64)
        };
        let book = lloyd(exec, frames, dim, k, seed, opts)?;
        if best.as_ref().is_none_or(|b| book.inertia < b.inertia) {
            best = Some(book);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd<E: Executor>(
    exec: &E,
    frames: &[f32],
    dim: usize,
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Codebook> {
    let mut book = Codebook {
        centroids: seed_plus_plus(frames, dim, k, seed),
        clusters: k,
        dim,
        inertia: 0.0,
        history: Vec::new(),
    };
    let mut assigned = assign_dist(exec, &book, frames);
    let mut current: f64 = assigned.iter().map(|a| a.1).sum();
    book.history.push(current);

    for _ in 0..opts.max_iters {
        update_centroids(&mut book, frames, &assigned);
        assigned = assign_dist(exec, &book, frames);
        let next: f64 = assigned.iter().map(|a| a.1).sum();
        if next > current * (1.0 + 1e-12) + 1e-12 {
            bail!(Quantizer, "inertia increased from {current} to {next}");
        }
        book.history.push(next);
        let improvement = if current > 0.0 {
            (current - next) / current
        } else {
            0.0
        };
        current = next;
        if improvement < opts.tol {
            break;
        }
    }
    book.inertia = current;
    Ok(book)
}

/// Greedy k-means++: each new center is the best of `2 + floor(ln k)`
/// candidates drawn with probability proportional to squared distance,
/// judged by the resulting potential.
fn seed_plus_plus(frames: &[f32], dim: usize, k: usize, seed: u64) -> Vec<f64> {
    let n = frames.len() / dim;
    let mut r = rng::seeded(seed);
    let row = |i: usize| &frames[i * dim..(i + 1) * dim];
    let as_f64 = |i: usize| row(i).iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let trials = 2 + libm::log(k as f64) as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend(as_f64(r.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut target = r.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if target < d {
                        chosen = i;
                        break;
                    }
                    target -= d;
                }
                chosen
            } else {
                // every point coincides with a centroid already
                r.random_range(0..n)
            };
            let candidate = as_f64(pick);
            let next: Vec<f64> = d2
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist(row(i), &candidate)))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, candidate, next));
            }
        }
        let (_, candidate, next) = best.expect("at least two trials");
        centroids.extend(candidate);
        d2 = next;
    }
    centroids
}

fn update_centroids(book: &mut Codebook, frames: &[f32], assigned: &[(u32, f64)]) {
    let (k, dim) = (book.clusters, book.dim);
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &(c, _)) in assigned.iter().enumerate() {
        let c = c as usize;
        counts[c] += 1;
        for (s, &x) in sums[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&frames[i * dim..(i + 1) * dim])
        {
            *s += f64::from(x);
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in book.centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s * inv;
            }
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    // farthest points from their (updated) centroid, largest first
    let mut far: Vec<(f64, usize)> = assigned
        .iter()
        .enumerate()
        .map(|(i, &(c, _))| {
            (
                sq_dist(&frames[i * dim..(i + 1) * dim], book.centroid(c as usize)),
                i,
            )
        })
        .collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (&c, &(_, i)) in empty.iter().zip(&far) {
        for (dst, &x) in book.centroids[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&frames[i * dim..(i + 1) * dim])
        {
            *dst = f64::from(x);
        }
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |&m| m as usize + 1);
    let kb = b.iter().max().map_or(0, |&m| m as usize + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize * kb + y as usize] += 1;
        rows[x as usize] += 1;
        cols[y as usize] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&m| pairs(m)).sum();
    let sum_rows: f64 = rows.iter().map(|&m| pairs(m)).sum();
    let sum_cols: f64 = cols.iter().map(|&m| pairs(m)).sum();
    let expected = sum_rows * sum_cols / pairs(n as u64);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
