//! Clustering and representative-item selection.
//!
//! Ties on distance are always broken towards the lowest item (or cluster)
//! index so that equal inputs give equal outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::PerformanceMatrix;
use crate::error::{Error, Result};
use crate::math::{self, dist, sq_dist, Matrix};
use crate::rng::{self, StreamRng};

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEDOIDS_MAX_PASSES: usize = 100;
/// Random-start PAM runs tried in addition to the BUILD start.
pub const KMEDOIDS_RESTARTS: usize = 2;
pub const GMM_ITERS: usize = 200;
pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;
pub const GMM_MAX_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Kmeans,
    Kmedoids,
    Gmm,
    Random,
}

/// Chosen items with the weight each one carries in the weighted estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub method: SelectionMethod,
    /// Indices into the item list the coordinates were built from.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub seed: u64,
}

impl SubsetSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks distinct indices, nonnegative weights summing to one and
    /// cluster sizes summing to `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let k = self.indices.len();
        if k == 0 {
            return Err(Error::InvalidArgument("empty selection".into()));
        }
        if self.weights.len() != k || self.cluster_sizes.len() != k {
            return Err(Error::Shape(format!(
                "{k} indices, {} weights, {} cluster sizes",
                self.weights.len(),
                self.cluster_sizes.len()
            )));
        }
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.last().is_some_and(|&i| i >= n) {
            return Err(Error::InvalidArgument("selected indices must be distinct and in range".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        if self.cluster_sizes.iter().sum::<usize>() != n {
            return Err(Error::InvalidArgument("cluster sizes do not sum to n".into()));
        }
        Ok(())
    }
}

/// Subset size for a fraction of `n` items: `max(1, round(fraction · n))`,
/// rounding half away from zero.
pub fn k_from_fraction(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subset fraction {fraction} must lie in (0, 1]"
        )));
    }
    Ok((math::round(fraction * n as f64) as usize).clamp(1, n.max(1)))
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}

fn check_finite(coords: &Matrix) -> Result<()> {
    if coords.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("coordinates"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

pub fn within_cluster_sse(coords: &Matrix, centers: &Matrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(coords.row(i), centers.row(c)))
        .sum()
}

/// Seeded k-means++ seeding. When every remaining squared distance is zero the
/// lowest-index point not yet chosen becomes the next seed.
pub(crate) fn kmeans_plus_plus(coords: &Matrix, k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let n = coords.rows();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(coords.row(i), coords.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(coords.row(i), coords.row(next)));
        }
    }
    chosen
}

/// Nearest center, keeping `current` when it is among the tied minima and
/// otherwise the lowest tied index.
fn nearest_center(point: &[f64], centers: &Matrix, current: Option<usize>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    if let Some(cur) = current {
        if sq_dist(point, centers.row(cur)) == best_d {
            return cur;
        }
    }
    best
}

fn cluster_sizes(assignments: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    sizes
}

/// Moves the farthest member of the largest cluster into each empty cluster.
fn repair_empty_clusters(coords: &Matrix, centers: &mut Matrix, assignments: &mut [usize]) {
    let k = centers.rows();
    loop {
        let sizes = cluster_sizes(assignments, k);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let mut far = usize::MAX;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &a) in assignments.iter().enumerate() {
            if a == largest {
                let d = sq_dist(coords.row(i), centers.row(largest));
                if d > far_d {
                    far = i;
                    far_d = d;
                }
            }
        }
        assignments[far] = empty;
        centers.row_mut(empty).copy_from_slice(coords.row(far));
    }
}

fn update_centers(coords: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let mut centers = Matrix::zeros(k, coords.cols());
    let sizes = cluster_sizes(assignments, k);
    for (i, &a) in assignments.iter().enumerate() {
        for (c, x) in centers.row_mut(a).iter_mut().zip(coords.row(i)) {
            *c += x;
        }
    }
    for (c, &s) in sizes.iter().enumerate() {
        for v in centers.row_mut(c) {
            *v /= s as f64;
        }
    }
    centers
}

/// One sweep of single-point moves, in index order. A point leaves cluster
/// `a` for `b` when `n_b/(n_b+1)·|x−c_b|² < n_a/(n_a−1)·|x−c_a|²`, which
/// strictly lowers the SSE; centers are updated after each move. Returns
/// whether anything moved.
fn hartigan_pass(coords: &Matrix, centers: &mut Matrix, assignments: &mut [usize]) -> bool {
    let k = centers.rows();
    let mut sizes = cluster_sizes(assignments, k);
    let mut moved = false;
    for i in 0..coords.rows() {
        let a = assignments[i];
        if sizes[a] <= 1 {
            continue;
        }
        let x = coords.row(i);
        let na = sizes[a] as f64;
        let remove = na / (na - 1.0) * sq_dist(x, centers.row(a));
        let mut best = a;
        let mut best_add = remove;
        for b in (0..k).filter(|&b| b != a) {
            let nb = sizes[b] as f64;
            let add = nb / (nb + 1.0) * sq_dist(x, centers.row(b));
            if add < best_add - 1e-12 * remove.max(1e-300) {
                best = b;
                best_add = add;
            }
        }
        if best == a {
            continue;
        }
        let nb = sizes[best] as f64;
        for (c, &v) in centers.row_mut(a).iter_mut().zip(x) {
            *c = (*c * na - v) / (na - 1.0);
        }
        for (c, &v) in centers.row_mut(best).iter_mut().zip(x) {
            *c = (*c * nb + v) / (nb + 1.0);
        }
        sizes[a] -= 1;
        sizes[best] += 1;
        assignments[i] = best;
        moved = true;
    }
    if moved {
        *centers = update_centers(coords, assignments, k);
    }
    moved
}

/// Lloyd's algorithm from a seeded k-means++ start, then Hartigan
/// single-point sweeps until no move lowers the SSE.
///
/// Lloyd runs until the assignment stops changing or [`KMEANS_MAX_ITERS`].
/// Empty clusters are refilled before every center update, so the returned
/// clustering has no empty cluster.
pub fn kmeans(coords: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = coords.rows();
    check_k(k, n)?;
    check_finite(coords)?;
    let mut rng = rng::substream(seed, rng::SELECTION);
    let init = kmeans_plus_plus(coords, k, &mut rng);
    let mut centers = coords.select_rows(&init);
    let mut assignments: Vec<usize> = Vec::new();
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    for iter in 0..KMEANS_MAX_ITERS {
        iterations = iter + 1;
        let mut next: Vec<usize> = (0..n)
            .map(|i| nearest_center(coords.row(i), &centers, assignments.get(i).copied()))
            .collect();
        repair_empty_clusters(coords, &mut centers, &mut next);
        let converged = next == assignments;
        assignments = next;
        if converged {
            centers = update_centers(coords, &assignments, k);
            break;
        }
        centers = update_centers(coords, &assignments, k);
        let sse = within_cluster_sse(coords, &centers, &assignments);
        debug_assert!(
            sse_history.last().is_none_or(|&prev: &f64| sse <= prev + 1e-9 * prev.abs().max(1.0)),
            "k-means objective increased"
        );
        sse_history.push(sse);
    }
    while hartigan_pass(coords, &mut centers, &mut assignments) {
        sse_history.push(within_cluster_sse(coords, &centers, &assignments));
    }
    if sse_history.is_empty() {
        sse_history.push(within_cluster_sse(coords, &centers, &assignments));
    }
    Ok(KMeansResult {
        centers,
        assignments,
        sse_history,
        iterations,
    })
}

/// One item per cluster: the member closest to its center. Weights are
/// cluster size over `n`.
pub fn select_representatives(
    coords: &Matrix,
    centers: &Matrix,
    assignments: &[usize],
) -> Result<SubsetSelection> {
    let k = centers.rows();
    let n = coords.rows();
    if assignments.len() != n {
        return Err(Error::Shape(format!("{} assignments for {n} points", assignments.len())));
    }
    let sizes = cluster_sizes(assignments, k);
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!("cluster {c} is empty")));
    }
    let mut best = vec![usize::MAX; k];
    let mut best_d = vec![f64::INFINITY; k];
    for (i, &c) in assignments.iter().enumerate() {
        let d = sq_dist(coords.row(i), centers.row(c));
        if d < best_d[c] {
            best[c] = i;
            best_d[c] = d;
        }
    }
    Ok(SubsetSelection {
        method: SelectionMethod::Kmeans,
        indices: best,
        weights: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        cluster_sizes: sizes,
        seed: 0,
    })
}

/// k-means followed by [`select_representatives`].
pub fn kmeans_select(coords: &Matrix, k: usize, seed: u64) -> Result<SubsetSelection> {
    let km = kmeans(coords, k, seed)?;
    let mut sel = select_representatives(coords, &km.centers, &km.assignments)?;
    sel.seed = seed;
    Ok(sel)
}

/// Sum of distances from every point to its nearest medoid.
pub fn medoid_cost(coords: &Matrix, medoids: &[usize]) -> f64 {
    (0..coords.rows())
        .map(|i| {
            medoids
                .iter()
                .map(|&m| dist(coords.row(i), coords.row(m)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

struct Nearest {
    /// Position in the medoid list.
    first: usize,
    d_first: f64,
    d_second: f64,
}

fn nearest_two(coords: &Matrix, medoids: &[usize]) -> Vec<Nearest> {
    (0..coords.rows())
        .map(|j| {
            let mut nb = Nearest {
                first: 0,
                d_first: f64::INFINITY,
                d_second: f64::INFINITY,
            };
            for (p, &m) in medoids.iter().enumerate() {
                let d = dist(coords.row(j), coords.row(m));
                if d < nb.d_first {
                    nb.d_second = nb.d_first;
                    nb.first = p;
                    nb.d_first = d;
                } else if d < nb.d_second {
                    nb.d_second = d;
                }
            }
            nb
        })
        .collect()
}

fn pam_build(coords: &Matrix, k: usize) -> Vec<usize> {
    let n = coords.rows();
    let mut medoids = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n)
                .map(|j| nearest[j].min(dist(coords.row(j), coords.row(c))))
                .sum();
            if cost < best_cost {
                best = c;
                best_cost = cost;
            }
        }
        medoids.push(best);
        for (j, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(coords.row(j), coords.row(best)));
        }
    }
    medoids
}

/// PAM SWAP phase: applies the best improving (medoid, non-medoid) exchange
/// until none improves the cost or the pass limit is reached.
fn pam_swap(coords: &Matrix, medoids: &mut [usize]) -> f64 {
    let n = coords.rows();
    let k = medoids.len();
    for _ in 0..KMEDOIDS_MAX_PASSES {
        let nb = nearest_two(coords, medoids);
        let current: f64 = nb.iter().map(|x| x.d_first).sum();
        let mut best_delta = 0.0;
        let mut best_swap = None;
        let mut per_medoid = vec![0.0; k];
        for o in 0..n {
            if medoids.contains(&o) {
                continue;
            }
            per_medoid.iter_mut().for_each(|v| *v = 0.0);
            let mut shared = 0.0;
            for (j, x) in nb.iter().enumerate() {
                let d_oj = dist(coords.row(o), coords.row(j));
                let s = (d_oj - x.d_first).min(0.0);
                shared += s;
                per_medoid[x.first] += d_oj.min(x.d_second) - x.d_first - s;
            }
            for (p, &corr) in per_medoid.iter().enumerate() {
                let delta = shared + corr;
                if delta < best_delta {
                    best_delta = delta;
                    best_swap = Some((p, o));
                }
            }
        }
        match best_swap {
            Some((p, o)) if best_delta < -1e-12 * current.max(1.0) => medoids[p] = o,
            _ => break,
        }
    }
    medoid_cost(coords, medoids)
}

/// PAM k-medoids (BUILD + SWAP), plus [`KMEDOIDS_RESTARTS`] seeded random
/// starts; the lowest-cost medoid set wins. Medoids are returned in ascending
/// index order with weights from nearest-medoid assignment counts.
pub fn kmedoids(coords: &Matrix, k: usize, seed: u64) -> Result<SubsetSelection> {
    let n = coords.rows();
    check_k(k, n)?;
    check_finite(coords)?;
    let mut best = pam_build(coords, k);
    let mut best_cost = pam_swap(coords, &mut best);
    let mut rng = rng::substream(seed, rng::SELECTION);
    for _ in 0..KMEDOIDS_RESTARTS {
        if k == n {
            break;
        }
        let mut start = index::sample(&mut rng, n, k).into_vec();
        let cost = pam_swap(coords, &mut start);
        if cost < best_cost {
            best = start;
            best_cost = cost;
        }
    }
    best.sort_unstable();
    let mut assign: Vec<usize> = nearest_two(coords, &best).iter().map(|x| x.first).collect();
    for (p, &m) in best.iter().enumerate() {
        assign[m] = p;
    }
    let sizes = cluster_sizes(&assign, k);
    Ok(SubsetSelection {
        method: SelectionMethod::Kmedoids,
        weights: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        cluster_sizes: sizes,
        indices: best,
        seed,
    })
}

/// Fitted spherical Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub means: Matrix,
    pub variances: Vec<f64>,
    pub mixing: Vec<f64>,
    /// n × k responsibilities.
    pub responsibilities: Matrix,
    pub log_likelihood: f64,
}

fn gmm_em(coords: &Matrix, k: usize, rng: &mut StreamRng) -> Option<GmmFit> {
    let n = coords.rows();
    let d = coords.cols().max(1) as f64;
    let init = kmeans_plus_plus(coords, k, rng);
    let mut means = coords.select_rows(&init);
    for a in 0..k {
        for b in a + 1..k {
            if means.row(a) == means.row(b) {
                return None;
            }
        }
    }
    let centroid: Vec<f64> = (0..coords.cols())
        .map(|j| coords.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let global_var = ((0..n).map(|i| sq_dist(coords.row(i), &centroid)).sum::<f64>() / (n as f64 * d))
        .max(GMM_VARIANCE_FLOOR);
    let mut variances = vec![global_var; k];
    let mut mixing = vec![1.0 / k as f64; k];
    let mut resp = Matrix::zeros(n, k);
    let mut ll = f64::NEG_INFINITY;
    let log_2pi = math::ln(2.0 * core::f64::consts::PI);
    let mut logp = vec![0.0; k];
    for _ in 0..GMM_ITERS {
        let mut total = 0.0;
        for i in 0..n {
            for c in 0..k {
                logp[c] = math::ln(mixing[c]) - 0.5 * d * (log_2pi + math::ln(variances[c]))
                    - sq_dist(coords.row(i), means.row(c)) / (2.0 * variances[c]);
            }
            let lse = math::log_sum_exp(&logp);
            total += lse;
            for c in 0..k {
                resp[(i, c)] = math::exp(logp[c] - lse);
            }
        }
        if !total.is_finite() {
            return None;
        }
        let mut next_means = Matrix::zeros(k, coords.cols());
        for c in 0..k {
            let nc: f64 = (0..n).map(|i| resp[(i, c)]).sum();
            if !(nc > 1e-10) {
                return None;
            }
            for i in 0..n {
                let r = resp[(i, c)];
                for (m, x) in next_means.row_mut(c).iter_mut().zip(coords.row(i)) {
                    *m += r * x;
                }
            }
            next_means.row_mut(c).iter_mut().for_each(|m| *m /= nc);
            let var = (0..n)
                .map(|i| resp[(i, c)] * sq_dist(coords.row(i), next_means.row(c)))
                .sum::<f64>()
                / (d * nc);
            variances[c] = var.max(GMM_VARIANCE_FLOOR);
            mixing[c] = nc / n as f64;
        }
        means = next_means;
        let converged = (total - ll).abs() < 1e-10 * total.abs().max(1.0);
        ll = total;
        if converged {
            break;
        }
    }
    Some(GmmFit {
        means,
        variances,
        mixing,
        responsibilities: resp,
        log_likelihood: ll,
    })
}

/// Representative per component: highest responsibility, near-ties (1e-9)
/// resolved by distance to the component mean, then lowest index.
fn gmm_representatives(coords: &Matrix, fit: &GmmFit) -> Vec<usize> {
    let n = coords.rows();
    (0..fit.means.rows())
        .map(|c| {
            let max_r = (0..n).map(|i| fit.responsibilities[(i, c)]).fold(0.0, f64::max);
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for i in 0..n {
                if fit.responsibilities[(i, c)] >= max_r - 1e-9 {
                    let d = sq_dist(coords.row(i), fit.means.row(c));
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
            }
            best
        })
        .collect()
}

/// EM for a spherical Gaussian mixture with one representative per component.
///
/// Weights are the mixing proportions; cluster sizes are hard
/// (maximum-responsibility) assignment counts. A collapsed component or two
/// components sharing a representative counts as degenerate and triggers a
/// fresh attempt on the next substream, up to [`GMM_MAX_ATTEMPTS`].
pub fn gmm_select(coords: &Matrix, k: usize, seed: u64) -> Result<SubsetSelection> {
    let n = coords.rows();
    check_k(k, n)?;
    check_finite(coords)?;
    let mut rng = rng::substream(seed, rng::SELECTION);
    for _ in 0..GMM_MAX_ATTEMPTS {
        let Some(fit) = gmm_em(coords, k, &mut rng) else {
            continue;
        };
        let reps = gmm_representatives(coords, &fit);
        let mut sorted = reps.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let hard: Vec<usize> = (0..n)
            .map(|i| {
                (0..k).fold(0, |b, c| {
                    if fit.responsibilities[(i, c)] > fit.responsibilities[(i, b)] {
                        c
                    } else {
                        b
                    }
                })
            })
            .collect();
        let total: f64 = fit.mixing.iter().sum();
        return Ok(SubsetSelection {
            method: SelectionMethod::Gmm,
            indices: reps,
            weights: fit.mixing.iter().map(|p| p / total).collect(),
            cluster_sizes: cluster_sizes(&hard, k),
            seed,
        });
    }
    Err(Error::GmmDegenerate {
        attempts: GMM_MAX_ATTEMPTS,
    })
}

/// Item coordinates from historical scores: row `i` holds the source models'
/// scores on item `i`.
pub fn model_centric_embed<S: AsRef<str>>(matrix: &PerformanceMatrix, source_model_ids: &[S]) -> Result<Matrix> {
    if source_model_ids.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    let sources = matrix.select_models(source_model_ids)?;
    let mut coords = Matrix::zeros(matrix.n_items(), sources.n_models());
    for m in 0..sources.n_models() {
        for (i, &s) in sources.row(m).iter().enumerate() {
            coords[(i, m)] = s;
        }
    }
    Ok(coords)
}

/// Uniform sample of `k` of `n` items without replacement, sorted by index,
/// with weights `1/k`. Cluster sizes split `n` as evenly as possible.
pub fn random_select(n: usize, k: usize, seed: u64) -> Result<SubsetSelection> {
    check_k(k, n)?;
    let mut rng = rng::substream(seed, rng::SELECTION);
    let mut indices = index::sample(&mut rng, n, k).into_vec();
    indices.sort_unstable();
    let base = n / k;
    let extra = n % k;
    Ok(SubsetSelection {
        method: SelectionMethod::Random,
        indices,
        weights: vec![1.0 / k as f64; k],
        cluster_sizes: (0..k).map(|c| base + usize::from(c < extra)).collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Matrix {
        Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]).unwrap()
    }

    #[test]
    fn kmeans_toy_clusters() {
        let km = kmeans(&toy(), 2, 3).unwrap();
        assert_eq!(km.assignments[0], km.assignments[1]);
        assert_eq!(km.assignments[2], km.assignments[3]);
        assert_ne!(km.assignments[0], km.assignments[2]);
        let c0 = km.centers.row(km.assignments[0]);
        let c2 = km.centers.row(km.assignments[2]);
        assert_eq!(c0, &[0.0, 0.5]);
        assert_eq!(c2, &[10.0, 10.5]);
        assert!((km.sse() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_identity_and_duplicates() {
        let km = kmeans(&toy(), 4, 1).unwrap();
        assert_eq!(km.sse(), 0.0);
        let mut a = km.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);

        let dup = Matrix::from_rows(&[[2.0, 3.0]; 5]).unwrap();
        let one = kmeans(&dup, 1, 9).unwrap();
        assert_eq!(one.centers.row(0), &[2.0, 3.0]);
        let all = kmeans(&dup, 5, 9).unwrap();
        let sel = select_representatives(&dup, &all.centers, &all.assignments).unwrap();
        sel.validate(5).unwrap();
        assert_eq!(sel.weights, vec![0.2; 5]);
    }

    #[test]
    fn representatives_and_weights() {
        let coords = toy();
        let km = kmeans(&coords, 2, 0).unwrap();
        let sel = select_representatives(&coords, &km.centers, &km.assignments).unwrap();
        assert_eq!(sel.weights, vec![0.5, 0.5]);
        let mut idx = sel.indices.clone();
        idx.sort_unstable();
        // ties between 0/1 and 2/3 go to the lower index
        assert_eq!(idx, vec![0, 2]);

        let centers = Matrix::from_rows(&[[0.0, 0.5], [10.0, 11.0]]).unwrap();
        let sel = select_representatives(&coords, &centers, &[0, 0, 0, 1]).unwrap();
        assert_eq!(sel.weights, vec![0.75, 0.25]);
        assert_eq!(sel.indices, vec![0, 3]);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        assert!(matches!(kmeans(&toy(), 5, 0), Err(Error::KTooLarge { k: 5, n: 4 })));
        assert!(matches!(kmedoids(&toy(), 5, 0), Err(Error::KTooLarge { .. })));
        assert!(matches!(gmm_select(&toy(), 5, 0), Err(Error::KTooLarge { .. })));
        assert!(matches!(random_select(4, 5, 0), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn kmedoids_small_cases() {
        let line = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let sel = kmedoids(&line, 1, 0).unwrap();
        assert_eq!(sel.indices, vec![1]);
        let all = kmedoids(&toy(), 4, 0).unwrap();
        assert_eq!(medoid_cost(&toy(), &all.indices), 0.0);
    }

    #[test]
    fn gmm_degenerate_on_identical_points() {
        let same = Matrix::from_rows(&[[1.0, 1.0]; 6]).unwrap();
        assert_eq!(
            gmm_select(&same, 2, 4),
            Err(Error::GmmDegenerate { attempts: GMM_MAX_ATTEMPTS })
        );
    }

    #[test]
    fn random_select_contract() {
        let all = random_select(10, 10, 5).unwrap();
        assert_eq!(all.indices, (0..10).collect::<Vec<_>>());
        assert_eq!(random_select(100, 7, 5), random_select(100, 7, 5));
        let big = random_select(28_659, 143, 1).unwrap();
        big.validate(28_659).unwrap();
        assert_eq!(big.len(), 143);
    }

    #[test]
    fn fraction_to_k() {
        assert_eq!(k_from_fraction(0.005, 28_659).unwrap(), 143);
        assert_eq!(k_from_fraction(0.0001, 100).unwrap(), 1);
        assert_eq!(k_from_fraction(1.0, 37).unwrap(), 37);
        assert_eq!(k_from_fraction(0.025, 100).unwrap(), 3);
        assert!(k_from_fraction(0.0, 10).is_err());
        assert!(k_from_fraction(1.5, 10).is_err());
    }

    #[test]
    fn model_centric_coords_are_score_columns() {
        let m = PerformanceMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            vec![1.0, 1.0, 0.0, 1.0, 0.5, 0.0],
        )
        .unwrap();
        let coords = model_centric_embed(&m, &["a", "b"]).unwrap();
        assert_eq!(coords.row(0), &[1.0, 0.0]);
        assert_eq!(coords.row(1), &[1.0, 1.0]);
        assert!(matches!(
            model_centric_embed::<&str>(&m, &[]),
            Err(Error::EmptySourceSet)
        ));
    }
}
