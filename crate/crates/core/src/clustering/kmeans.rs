use rand::Rng;

use super::{sq_dist, ClusterAssignment, ClusterError, PipelineConfig, PointMatrix};
use crate::seeds::stream_rng;

/// Lloyd's k-means with greedy k-means++ seeding and multiple restarts.
///
/// Restart `r` draws from stream `r` of `cfg.seed`; the restart with the
/// lowest inertia wins (earliest on ties). Clusters that empty out during an
/// iteration are refilled with the point farthest from its current center.
pub fn kmeans(
    points: &PointMatrix,
    k: usize,
    cfg: &PipelineConfig,
) -> Result<ClusterAssignment, ClusterError> {
    points.check(k)?;
    cfg.validate()?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..cfg.kmeans_restarts {
        let mut rng = stream_rng(cfg.seed, restart as u64);
        let mut centers = seed_centers(points, k, &mut rng);
        let (labels, inertia) = lloyd(points, &mut centers, cfg.kmeans_max_iters, None);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart");
    Ok(ClusterAssignment::canonical(&labels, k))
}

/// Sum of squared distances from each point to the center of its cluster.
pub(crate) fn inertia(points: &PointMatrix, centers: &[Vec<f64>], labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), &centers[l]))
        .sum()
}

/// Greedy k-means++: each new center is the best of several D²-weighted
/// candidates. Stops early when every remaining point coincides with a center,
/// so fewer than `k` centers are returned for inputs with duplicates.
fn seed_centers(points: &PointMatrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.n();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centers = vec![points.row(first).to_vec()];
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centers[0]))
        .collect();

    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut best_pot = f64::INFINITY;
        let mut best_cand = 0;
        for _ in 0..trials {
            let mut target = rng.random::<f64>() * total;
            let mut cand = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    cand = i;
                    break;
                }
                target -= d;
            }
            if closest[cand] == 0.0 {
                // Rounding pushed us onto a zero-weight point; take the last positive one.
                cand = closest.iter().rposition(|&d| d > 0.0).expect("total > 0");
            }
            let pot: f64 = (0..n)
                .map(|i| closest[i].min(sq_dist(points.row(i), points.row(cand))))
                .sum();
            if pot < best_pot {
                best_pot = pot;
                best_cand = cand;
            }
        }
        let c = points.row(best_cand).to_vec();
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(points: &PointMatrix, centers: &[Vec<f64>], labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let row = points.row(i);
        let mut best = (f64::INFINITY, 0);
        for (c, center) in centers.iter().enumerate() {
            let d = sq_dist(row, center);
            if d < best.0 {
                best = (d, c);
            }
        }
        if *label != best.1 {
            *label = best.1;
            changed = true;
        }
    }
    changed
}

/// Runs Lloyd iterations until assignments stop changing. When `trace` is
/// given, the inertia after every assignment and every update step is pushed.
pub(crate) fn lloyd(
    points: &PointMatrix,
    centers: &mut [Vec<f64>],
    max_iters: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> (Vec<usize>, f64) {
    let n = points.n();
    let m = centers.len();
    let dim = points.dim();
    let mut labels = vec![usize::MAX; n];
    assign(points, centers, &mut labels);

    for _ in 0..max_iters {
        if let Some(t) = trace.as_deref_mut() {
            t.push(inertia(points, centers, &labels));
        }
        // Update step.
        let mut counts = vec![0usize; m];
        let mut sums = vec![vec![0.0; dim]; m];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            sums[l]
                .iter_mut()
                .zip(points.row(i))
                .for_each(|(s, x)| *s += x);
        }
        for c in 0..m {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centers[c]
                    .iter_mut()
                    .zip(&sums[c])
                    .for_each(|(x, s)| *x = s * inv);
            }
        }
        // Empty-cluster repair.
        for c in 0..m {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (sq_dist(points.row(i), &centers[labels[i]]), i))
                .filter(|&(d, _)| d > 0.0)
                .fold(None, |acc: Option<(f64, usize)>, x| match acc {
                    Some(a) if a.0 >= x.0 => Some(a),
                    _ => Some(x),
                });
            if let Some((_, i)) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                centers[c] = points.row(i).to_vec();
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(inertia(points, centers, &labels));
        }
        if !assign(points, centers, &mut labels) {
            break;
        }
    }
    let total = inertia(points, centers, &labels);
    (labels, total)
}
