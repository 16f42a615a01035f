use super::{sq_dist, ClusterAssignment, ClusterError, Linkage, PipelineConfig, PointMatrix};

/// Bottom-up hierarchical clustering on Euclidean distance, cut at `k` clusters.
///
/// Inter-cluster dissimilarities are maintained with the Lance–Williams
/// update for the configured linkage. When two pairs are equally close the
/// lexicographically smallest `(i, j)` slot pair is merged; a merged cluster
/// keeps the smaller slot.
///
/// Ward dissimilarity is `sqrt(2·|A||B|/(|A|+|B|))·‖μA − μB‖`, which reduces to
/// the Euclidean distance between singletons.
pub fn agglomerative(
    points: &PointMatrix,
    k: usize,
    cfg: &PipelineConfig,
) -> Result<ClusterAssignment, ClusterError> {
    points.check(k)?;
    let n = points.n();
    let linkage = cfg.linkage;

    // Ward is updated on squared distances, the others on plain distances.
    let squared = linkage == Linkage::Ward;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist(points.row(i), points.row(j));
            let d = if squared { d2 } else { d2.sqrt() };
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut owner: Vec<usize> = (0..n).collect();

    while active.len() > k {
        let (mut bi, mut bj, mut best) = (0, 0, f64::INFINITY);
        for (a, &i) in active.iter().enumerate() {
            let row = &dist[i * n..(i + 1) * n];
            for &j in &active[a + 1..] {
                if row[j] < best {
                    best = row[j];
                    bi = i;
                    bj = j;
                }
            }
        }

        let (ni, nj) = (size[bi] as f64, size[bj] as f64);
        let dij = dist[bi * n + bj];
        for &m in &active {
            if m == bi || m == bj {
                continue;
            }
            let dim = dist[bi * n + m];
            let djm = dist[bj * n + m];
            let updated = match linkage {
                Linkage::Average => (ni * dim + nj * djm) / (ni + nj),
                Linkage::Complete => dim.max(djm),
                Linkage::Ward => {
                    let nm = size[m] as f64;
                    ((ni + nm) * dim + (nj + nm) * djm - nm * dij) / (ni + nj + nm)
                }
            };
            dist[bi * n + m] = updated;
            dist[m * n + bi] = updated;
        }
        size[bi] += size[bj];
        active.retain(|&s| s != bj);
        owner.iter_mut().filter(|o| **o == bj).for_each(|o| *o = bi);
    }

    Ok(ClusterAssignment::canonical(&owner, k))
}
