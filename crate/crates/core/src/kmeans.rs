//! Lloyd's k-means with k-means++ initialization, plus codebook persistence.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Rng;

/// Cluster centroids, C×D.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Mat,
}

impl Codebook {
    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Binary layout: C (u32 LE), D (u32 LE), then C·D f32 LE centroids.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.centroids.data().len() * 4);
        buf.extend_from_slice(&(self.num_clusters() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for &v in self.centroids.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Codebook> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if bytes.len() < 8 {
            return Err(Error::Format(format!("{}: truncated codebook", path.display())));
        }
        let c = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let d = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        if bytes.len() != 8 + c * d * 4 {
            return Err(Error::Format(format!(
                "{}: codebook payload size mismatch",
                path.display()
            )));
        }
        let mut data = Vec::with_capacity(c * d);
        for chunk in bytes[8..].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        Ok(Codebook {
            centroids: Mat::from_vec(c, d, data),
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by Euclidean distance; ties break to the lowest index.
pub fn nearest_centroid(point: &[f64], cb: &Codebook) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..cb.num_clusters() {
        let d = sq_dist(point, cb.centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Assigns every row of `frames` to its nearest centroid.
pub fn kmeans_assign(frames: &Mat, cb: &Codebook) -> Result<Vec<u32>> {
    if frames.cols() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            got: frames.cols(),
        });
    }
    Ok((0..frames.rows())
        .map(|t| nearest_centroid(frames.row(t), cb) as u32)
        .collect())
}

fn kmeanspp_init(frames: &Mat, c: usize, rng: &mut Rng) -> Mat {
    let n = frames.rows();
    let d = frames.cols();
    let mut centroids = Mat::zeros(c, d);
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(frames.row(first));
    let mut dists: Vec<f64> = (0..n)
        .map(|i| sq_dist(frames.row(i), centroids.row(0)))
        .collect();
    for k in 1..c {
        let total: f64 = dists.iter().sum();
        let pick = if total <= 0.0 {
            rng.below(n)
        } else {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &w) in dists.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(k).copy_from_slice(frames.row(pick));
        for i in 0..n {
            let d2 = sq_dist(frames.row(i), centroids.row(k));
            if d2 < dists[i] {
                dists[i] = d2;
            }
        }
    }
    centroids
}

/// Result of a k-means fit, including the per-iteration distortion history
/// (sum of squared distances to assigned centroids).
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub codebook: Codebook,
    pub assignments: Vec<u32>,
    pub distortions: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
/// reseeding the centroid to the point currently farthest from its own
/// centroid, which keeps the distortion sequence non-increasing.
pub fn kmeans_fit(frames: &Mat, c: usize, iters: usize, rng: &mut Rng) -> Result<KmeansFit> {
    let n = frames.rows();
    if n < c {
        return Err(Error::NotEnoughData {
            clusters: c,
            frames: n,
        });
    }
    let d = frames.cols();
    let mut centroids = kmeanspp_init(frames, c, rng);
    let mut assignments = vec![0u32; n];
    let mut distortions = Vec::with_capacity(iters);
    for _ in 0..iters {
        // Assignment step.
        let mut changed = false;
        let mut distortion = 0.0;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..c {
                let d2 = sq_dist(frames.row(i), centroids.row(k));
                if d2 < best_d {
                    best_d = d2;
                    best = k;
                }
            }
            distortion += best_d;
            if assignments[i] != best as u32 {
                assignments[i] = best as u32;
                changed = true;
            }
        }
        distortions.push(distortion);
        if !changed && distortions.len() > 1 {
            break;
        }
        // Update step.
        let mut sums = Mat::zeros(c, d);
        let mut counts = vec![0usize; c];
        for i in 0..n {
            let k = assignments[i] as usize;
            counts[k] += 1;
            for (s, &v) in sums.row_mut(k).iter_mut().zip(frames.row(i)) {
                *s += v;
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for (ctr, &s) in centroids.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *ctr = s * inv;
                }
            }
        }
        // Empty-cluster repair: reseed to the globally farthest point.
        for k in 0..c {
            if counts[k] == 0 {
                let mut far_i = 0;
                let mut far_d = -1.0;
                for i in 0..n {
                    let d2 = sq_dist(frames.row(i), centroids.row(assignments[i] as usize));
                    if d2 > far_d {
                        far_d = d2;
                        far_i = i;
                    }
                }
                centroids.row_mut(k).copy_from_slice(frames.row(far_i));
            }
        }
    }
    let codebook = Codebook { centroids };
    let assignments = kmeans_assign(frames, &codebook)?;
    Ok(KmeansFit {
        codebook,
        assignments,
        distortions,
    })
}

/// Majority-class purity of a clustering against ground-truth classes.
pub fn cluster_purity(assignments: &[u32], truth: &[u32], num_clusters: usize) -> f64 {
    assert_eq!(assignments.len(), truth.len());
    if assignments.is_empty() {
        return 0.0;
    }
    let num_truth = truth.iter().map(|&t| t as usize + 1).max().unwrap_or(1);
    let mut counts = vec![vec![0usize; num_truth]; num_clusters];
    for (&a, &t) in assignments.iter().zip(truth) {
        counts[a as usize][t as usize] += 1;
    }
    let majority: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / assignments.len() as f64
}
