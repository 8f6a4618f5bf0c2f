//! Manufacturer emulation: K-means over normalized PPA followed by
//! Dirichlet reassignment of a random fraction of the points.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{zscore_normalize, Corpus};
use crate::error::{Error, Result};
use crate::seeding::{self, StreamRng};

/// Whether each reassigned point draws its own Dirichlet vector or all share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirichletMode {
    #[default]
    PerPoint,
    Shared,
}

impl std::str::FromStr for DirichletMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-point" => Ok(DirichletMode::PerPoint),
            "shared" => Ok(DirichletMode::Shared),
            other => Err(Error::validation(format!(
                "unknown dirichlet mode: {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub alpha: f64,
    pub fraction: f64,
    #[serde(default)]
    pub mode: DirichletMode,
}

impl DirichletSpec {
    pub fn new(alpha: f64, fraction: f64) -> Result<Self> {
        let spec = DirichletSpec {
            alpha,
            fraction,
            mode: DirichletMode::PerPoint,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::validation("dirichlet alpha must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::validation("reassignment fraction must be in [0, 1]"));
        }
        Ok(())
    }

    /// Number of points to reassign out of `t`, rounding half away from zero.
    pub fn reassign_count(&self, t: usize) -> usize {
        (self.fraction * t as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties broken towards the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(p, centroids);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when the largest centroid move is below `tol` or after `max_iters`
/// update steps. A centroid that loses all its points is moved onto the point
/// farthest from its assigned centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    if points.len() < k {
        return Err(Error::validation(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape(
            "k-means points must share one dimension".into(),
        ));
    }

    let mut rng = seeding::stream(seed, &[seeding::TAG_KMEANS]);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        // Fixed (point order) reduction keeps the sums reproducible.
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| s.into_iter().map(|x| x / n.max(1) as f64).collect())
            .collect();
        let mut taken = BTreeSet::new();
        for j in 0..k {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    )
                    .0;
                taken.insert(far);
                next[j] = points[far].clone();
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        (labels, inertia) = assign(points, &centroids);
        trace.push(inertia);
        if shift < tol {
            break;
        }
    }

    Ok(KMeansResult {
        labels,
        centroids,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}

fn dirichlet_sample(k: usize, alpha: f64, rng: &mut StreamRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // Tiny alpha can underflow every draw; fall back to a uniform vector.
        vec![1.0 / k as f64; k]
    }
}

/// Reassign `round(fraction * t)` uniformly chosen points to clusters sampled
/// from Dirichlet(alpha, ..., alpha) probabilities. Returns the new labels and
/// the sorted reassigned indices.
pub fn dirichlet_reassign(
    labels: &[usize],
    k: usize,
    spec: &DirichletSpec,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if k == 0 || labels.iter().any(|&l| l >= k) {
        return Err(Error::validation(format!("labels must lie in [0, {k})")));
    }
    let t = labels.len();
    let count = spec.reassign_count(t);
    let mut rng = seeding::stream(seed, &[seeding::TAG_DIRICHLET]);
    let chosen = index::sample(&mut rng, t, count).into_vec();

    let shared = match spec.mode {
        DirichletMode::Shared => Some(dirichlet_sample(k, spec.alpha, &mut rng)),
        DirichletMode::PerPoint => None,
    };
    let mut out = labels.to_vec();
    for &i in &chosen {
        let probs = match &shared {
            Some(p) => p.clone(),
            None => dirichlet_sample(k, spec.alpha, &mut rng),
        };
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::Domain(format!("degenerate dirichlet draw: {e}")))?;
        out[i] = dist.sample(&mut rng);
    }
    let mut reassigned = chosen;
    reassigned.sort_unstable();
    Ok((out, reassigned))
}

/// Cluster assignment of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub reassigned_ids: Vec<String>,
    pub seed: u64,
    pub alpha: f64,
    pub fraction: f64,
    #[serde(default)]
    pub mode: DirichletMode,
}

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_TOL: f64 = 1e-10;

/// Normalize, cluster and reassign. Returns the partition and one sub-corpus
/// per cluster (records keep corpus order).
pub fn partition_corpus(
    corpus: &Corpus,
    k: usize,
    spec: &DirichletSpec,
    seed: u64,
) -> Result<(Partition, Vec<Corpus>)> {
    spec.validate()?;
    let (rows, _) = zscore_normalize(corpus)?;
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let km = kmeans(&points, k, seed, KMEANS_MAX_ITERS, KMEANS_TOL)?;
    let (labels, reassigned) = dirichlet_reassign(&km.labels, k, spec, seed)?;

    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let subs = members.iter().map(|idx| corpus.select(idx)).collect();
    let records = corpus.records();
    let partition = Partition {
        labels,
        k,
        centroids: km.centroids,
        reassigned_ids: reassigned.iter().map(|&i| records[i].id.clone()).collect(),
        seed,
        alpha: spec.alpha,
        fraction: spec.fraction,
        mode: spec.mode,
    };
    Ok((partition, subs))
}
