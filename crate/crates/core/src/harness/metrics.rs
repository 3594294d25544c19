//! Statistics used by evaluation: correlation, clustering, projection,
//! image similarity and kernel two-sample distance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::synthworld::WorldConfig;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
const KMEANS_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pearson correlation between the columns of `rows`. Constant columns
/// correlate 0 with everything else; the diagonal is exactly 1.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let norm: Vec<f64> = (0..d).map(|j| centered.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt()).collect();
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        m[i][i] = 1.0;
        for j in i + 1..d {
            let c = if norm[i] > 0.0 && norm[j] > 0.0 {
                (centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / (norm[i] * norm[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    m
}

/// Mean absolute entry of the off-diagonal block between the first `split`
/// dimensions and the rest.
pub fn cross_block_mean_abs(m: &[Vec<f64>], split: usize) -> f64 {
    let d = m.len();
    if split == 0 || split >= d {
        return 0.0;
    }
    let mut s = 0.0;
    for row in &m[..split] {
        s += row[split..].iter().map(|v| v.abs()).sum::<f64>();
    }
    s / (split * (d - split)) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Clusters left without members in the best restart.
    pub empty_clusters: usize,
}

/// Lloyd's algorithm from k-means++ seeds; the restart with the lowest
/// inertia wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> KMeans {
    let n = points.len();
    let mut best = KMeans { labels: vec![0; n], inertia: f64::INFINITY, empty_clusters: k.saturating_sub(1) };
    if n == 0 || k == 0 {
        return best;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts.max(1) {
        let mut centers = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                d.iter().position(|&v| {
                    r -= v;
                    r <= 0.0
                })
                .unwrap_or(n - 1)
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
        }
        let mut labels = vec![0; n];
        for it in 0..KMEANS_ITERS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut arg = 0;
                for c in 1..k {
                    if sq_dist(p, &centers[c]) < sq_dist(p, &centers[arg]) {
                        arg = c;
                    }
                }
                if labels[i] != arg {
                    labels[i] = arg;
                    changed = true;
                }
            }
            if !changed && it > 0 {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (j, v) in center.iter_mut().enumerate() {
                    *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
        if inertia < best.inertia {
            let empty = (0..k).filter(|c| !labels.contains(c)).count();
            best = KMeans { labels, inertia, empty_clusters: empty };
        }
    }
    best
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(clusters: &[usize], truth: &[usize]) -> f64 {
    if clusters.is_empty() {
        return 0.0;
    }
    let kc = clusters.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; kt]; kc];
    for (&c, &t) in clusters.iter().zip(truth) {
        counts[c][t] += 1;
    }
    counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum::<usize>() as f64 / clusters.len() as f64
}

/// Mean silhouette coefficient; singleton clusters score 0, a single
/// cluster scores 0 overall.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if n < 2 || sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own && sizes[c] > 0).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Mean cosine similarity over same-label pairs and over different-label
/// pairs.
pub fn cosine_structure(points: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let unit: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            p.iter().map(|v| v / n).collect()
        })
        .collect();
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if labels[i] == labels[j] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                ne += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / ne.max(1) as f64)
}

/// Whether every point coincides with the first.
pub fn is_degenerate(points: &[Vec<f64>]) -> bool {
    points.iter().all(|p| sq_dist(p, &points[0]) < 1e-18)
}

/// Coordinates on the two leading principal components. Each axis is
/// oriented so its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| x * sign).collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let proj = |a: Option<&Vec<f64>>| a.map_or(0.0, |a| (0..d).map(|j| x[(i, j)] * a[j]).sum());
            [proj(axes.first()), proj(axes.get(1))]
        })
        .collect()
}

/// Peak signal-to-noise ratio for values in [0, 1], capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64;
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Mean SSIM over frames and channels with a uniform `SSIM_WINDOW` window
/// (sample covariances, data range 1).
pub fn ssim_video(a: &[f64], b: &[f64], world: &WorldConfig) -> f64 {
    let (s, ch) = (world.size, WorldConfig::CHANNELS);
    let w = SSIM_WINDOW.min(s);
    let np = (w * w) as f64;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let cov_norm = if np > 1.0 { np / (np - 1.0) } else { 1.0 };
    let at = |v: &[f64], f: usize, y: usize, x: usize, c: usize| v[((f * s + y) * s + x) * ch + c];
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 0..world.frames {
        for c in 0..ch {
            for y0 in 0..=s - w {
                for x0 in 0..=s - w {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in y0..y0 + w {
                        for x in x0..x0 + w {
                            let (p, q) = (at(a, f, y, x, c), at(b, f, y, x, c));
                            sa += p;
                            sb += q;
                            saa += p * p;
                            sbb += q * q;
                            sab += p * q;
                        }
                    }
                    let (ma, mb) = (sa / np, sb / np);
                    let va = cov_norm * (saa / np - ma * ma);
                    let vb = cov_norm * (sbb / np - mb * mb);
                    let vab = cov_norm * (sab / np - ma * mb);
                    total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count.max(1) as f64
}

/// Per-frame features: channel means over a 4×4 grid of cells.
pub fn frame_features(video: &[f64], world: &WorldConfig) -> Vec<Vec<f64>> {
    let (s, ch) = (world.size, WorldConfig::CHANNELS);
    let cells = 4.min(s);
    let cell = s / cells;
    (0..world.frames)
        .map(|f| {
            let mut feat = Vec::with_capacity(cells * cells * ch);
            for gy in 0..cells {
                for gx in 0..cells {
                    for c in 0..ch {
                        let mut sum = 0.0;
                        for y in gy * cell..(gy + 1) * cell {
                            for x in gx * cell..(gx + 1) * cell {
                                sum += video[((f * s + y) * s + x) * ch + c];
                            }
                        }
                        feat.push(sum / (cell * cell) as f64);
                    }
                }
            }
            feat
        })
        .collect()
}

/// Biased squared MMD with an RBF kernel whose bandwidth is the median
/// pairwise distance of the pooled sample.
pub fn mmd_rbf(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let med = if d.is_empty() { 1.0 } else { d[d.len() / 2].sqrt() };
    let gamma = 1.0 / (2.0 * if med > 0.0 { med * med } else { 1.0 });
    let mean_k = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += (-gamma * sq_dist(p, q)).exp();
            }
        }
        s / (a.len() * b.len()) as f64
    };
    (mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) + shift).collect::<Vec<f64>>()).collect()
    }

    #[test]
    fn pearson_known_values() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, -(i as f64), 3.0]).collect();
        let m = pearson_matrix(&rows);
        assert!((m[0][1] - 1.0).abs() < 1e-12);
        assert!((m[0][2] + 1.0).abs() < 1e-12);
        assert_eq!(m[0][3], 0.0);
        for i in 0..4 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        assert!((cross_block_mean_abs(&m, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut pts = gauss(30, 2, 0.0, 1);
        pts.extend(gauss(30, 2, 10.0, 2));
        pts.extend(gauss(30, 2, -10.0, 3));
        let truth: Vec<usize> = (0..90).map(|i| i / 30).collect();
        let km = kmeans(&pts, 3, 10, 0);
        assert_eq!(purity(&km.labels, &truth), 1.0);
        assert_eq!(km.empty_clusters, 0);
        assert!(silhouette(&pts, &truth) > 0.7);
        let (intra, inter) = cosine_structure(&pts[30..], &truth[30..]);
        assert!(intra > inter);
    }

    #[test]
    fn purity_and_silhouette_edge_cases() {
        assert_eq!(purity(&[0, 0, 1, 1], &[0, 1, 0, 1]), 0.5);
        let pts = vec![vec![1.0, 1.0]; 5];
        assert!(is_degenerate(&pts));
        assert_eq!(silhouette(&pts, &[0; 5]), 0.0);
        let km = kmeans(&pts, 3, 10, 0);
        assert!(km.inertia.abs() < 1e-12);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![5.0 * a, 5.0 * a + 0.1 * b, 0.5 * b]
            })
            .collect();
        let p = pca_2d(&pts);
        let var0: f64 = p.iter().map(|v| v[0] * v[0]).sum();
        let var1: f64 = p.iter().map(|v| v[1] * v[1]).sum();
        assert!(var0 > 50.0 * var1);
        assert_eq!(p, pca_2d(&pts));
    }

    #[test]
    fn psnr_and_ssim_identities() {
        let world = WorldConfig { frames: 2, size: 8, card_size: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..world.video_len()).map(|_| rng.random::<f64>()).collect();
        assert_eq!(psnr(&a, &a), PSNR_CAP);
        assert!((ssim_video(&a, &a, &world) - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| (v + 0.1).min(1.0)).collect();
        let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        assert!((psnr(&a, &b) + 10.0 * mse.log10()).abs() < 1e-12);
        let c: Vec<f64> = (0..world.video_len()).map(|_| rng.random::<f64>()).collect();
        assert!(ssim_video(&a, &c, &world) < 0.2);
    }

    #[test]
    fn ssim_matches_direct_formula_on_one_window() {
        let world = WorldConfig { frames: 1, size: 7, card_size: 7 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..world.video_len()).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..world.video_len()).map(|_| rng.random::<f64>()).collect();
        let mut expect = 0.0;
        for c in 0..2 {
            let pa: Vec<f64> = a.iter().skip(c).step_by(2).copied().collect();
            let pb: Vec<f64> = b.iter().skip(c).step_by(2).copied().collect();
            let n = pa.len() as f64;
            let (ma, mb) = (pa.iter().sum::<f64>() / n, pb.iter().sum::<f64>() / n);
            let va = pa.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = pb.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let vab = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
            let (c1, c2) = (1e-4, 9e-4);
            expect += (2.0 * ma * mb + c1) * (2.0 * vab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)) / 2.0;
        }
        assert!((ssim_video(&a, &b, &world) - expect).abs() < 1e-12);
    }

    #[test]
    fn mmd_orders_same_and_shifted() {
        let x = gauss(60, 3, 0.0, 7);
        let y = gauss(60, 3, 0.0, 8);
        let z = gauss(60, 3, 1.5, 9);
        assert!(mmd_rbf(&x, &y) < mmd_rbf(&x, &z));
        assert_eq!(mmd_rbf(&x, &x), 0.0);
    }

    #[test]
    fn frame_features_average_cells() {
        let world = WorldConfig { frames: 1, size: 8, card_size: 8 };
        let v = vec![0.5; world.video_len()];
        let f = frame_features(&v, &world);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].len(), 32);
        assert!(f[0].iter().all(|&x| (x - 0.5).abs() < 1e-12));
    }
}
