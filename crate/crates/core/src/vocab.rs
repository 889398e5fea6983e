//! k-means visual vocabulary.
//!
//! Lloyd iterations from k-means++ seeding, restarted with consecutive seeds;
//! the lowest-cost run wins. Points are row-major `f32` rows.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::artifact::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
const MAGIC: &[u8; 4] = b"XBWV";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<f32>,
    dim: usize,
    training_cost: f64,
}

impl Vocabulary {
    pub fn new(centroids: Vec<f32>, dim: usize, training_cost: f64) -> Result<Self> {
        if dim == 0 || !centroids.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: centroids.len(),
            });
        }
        if centroids.len() / dim < 2 {
            return Err(Error::InvalidParameter(
                "a vocabulary needs at least two words".into(),
            ));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite centroid".into()));
        }
        Ok(Self {
            centroids,
            dim,
            training_cost,
        })
    }

    /// Number of visual words.
    pub fn size(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn training_cost(&self) -> f64 {
        self.training_cost
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, point: &[f32]) -> (usize, f32) {
        nearest(&self.centroids, self.dim, point)
    }

    fn payload(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.size() as u32);
        w.u32(self.dim as u32);
        w.f32s(&self.centroids);
        w.f64(self.training_cost);
        w.into_bytes()
    }

    /// SHA-256 of the serialized centroids and cost (provenance excluded).
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.payload()).into()
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        let mut bytes = self.payload();
        crate::artifact::append_provenance(&mut bytes, provenance);
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader::new(bytes, MAGIC, VERSION)?;
        let v = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let centroids = r.f32s(v * dim)?;
        let cost = r.f64()?;
        let provenance = r.provenance()?;
        Ok((Self::new(centroids, dim, cost)?, provenance))
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: &str) -> Result<()> {
        crate::artifact::write_file(path, &self.to_bytes(provenance))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_bytes(&crate::artifact::read_file(path)?)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f32], dim: usize, point: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Outcome of a single k-means run.
#[derive(Clone, Debug)]
pub struct KMeansRun {
    pub vocabulary: Vocabulary,
    pub cost: f64,
    /// Cost after each assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

fn check_input(data: &[f32], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: data.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidParameter(
            "vocabulary size must be >= 2".into(),
        ));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} points for {k} clusters"
        )));
    }
    Ok(n)
}

fn plusplus_seed(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| f64::from(sq_dist(row(i), row(first))))
        .collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "fewer than {k} distinct points"
            )));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, d) in dist.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a candidate");
        let c = row(pick).to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = f64::from(sq_dist(&data[i * dim..(i + 1) * dim], &c));
            if nd < *d {
                *d = nd;
            }
        });
        centroids.extend_from_slice(&c);
    }
    Ok(centroids)
}

fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> Vec<(usize, f32)> {
    data.par_chunks_exact(dim)
        .map(|p| nearest(centroids, dim, p))
        .collect()
}

/// One k-means run seeded with k-means++ from `seed`.
pub fn kmeans(data: &[f32], dim: usize, k: usize, seed: u64) -> Result<KMeansRun> {
    let n = check_input(data, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plusplus_seed(data, dim, k, &mut rng)?;
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let assigned = assign(data, dim, &centroids);
        let cost: f64 = assigned.iter().map(|(_, d)| f64::from(*d)).sum();
        history.push(cost);
        let new_labels: Vec<usize> = assigned.iter().map(|(j, _)| *j).collect();
        if new_labels == labels || iterations >= MAX_ITERATIONS {
            break;
        }
        labels = new_labels;
        iterations += 1;

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            let p = &data[i * dim..(i + 1) * dim];
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(p) {
                *s += f64::from(*v);
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..dim {
                    centroids[j * dim + t] = (sums[j * dim + t] / counts[j] as f64) as f32;
                }
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        let mut dist: Vec<f32> = (0..n)
            .map(|i| {
                sq_dist(
                    &data[i * dim..(i + 1) * dim],
                    &centroids[labels[i] * dim..(labels[i] + 1) * dim],
                )
            })
            .collect();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .fold(None::<(usize, f32)>, |best, i| match best {
                    Some((_, bd)) if dist[i] <= bd => best,
                    _ => Some((i, dist[i])),
                })
                .map(|(i, _)| i)
                .expect("non-empty data");
            let p = data[far * dim..(far + 1) * dim].to_vec();
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&p);
            for (i, d) in dist.iter_mut().enumerate() {
                let nd = sq_dist(&data[i * dim..(i + 1) * dim], &p);
                if nd < *d {
                    *d = nd;
                }
            }
        }
    }
    let cost = *history.last().expect("at least one assignment");
    Ok(KMeansRun {
        vocabulary: Vocabulary::new(centroids, dim, cost)?,
        cost,
        cost_history: history,
        iterations,
        seed,
    })
}

/// Result of [`build_vocabulary`]: the winning run plus every restart's cost.
#[derive(Clone, Debug)]
pub struct VocabularyBuild {
    pub best: KMeansRun,
    pub restart_costs: Vec<(u64, f64)>,
}

/// Runs `restarts` k-means with seeds `seed..seed+restarts` and keeps the
/// cheapest (lowest seed on ties).
pub fn build_vocabulary(
    data: &[f32],
    dim: usize,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<VocabularyBuild> {
    if restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be >= 1".into()));
    }
    check_input(data, dim, k)?;
    let runs: Result<Vec<KMeansRun>> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| kmeans(data, dim, k, seed + r))
        .collect();
    let runs = runs?;
    let restart_costs = runs.iter().map(|r| (r.seed, r.cost)).collect();
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.cost < best.cost { r } else { best })
        .expect("restarts >= 1");
    Ok(VocabularyBuild {
        best,
        restart_costs,
    })
}
