//! Kernel clustering: flatten kernels to vectors, k-means (k-means++ with
//! Lloyd iterations), nearest-center assignment, 2-D PCA projection, and a
//! silhouette selector for the cluster count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::Kernel;
use crate::error::{Error, Result};
use crate::image::write_atomic;

/// A kernel flattened row-major into a feature vector, optionally tagged
/// with the name of its source.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelVector {
    pub dims: usize,
    pub values: Vec<f64>,
    pub label: Option<String>,
}

pub fn flatten_kernel(k: &Kernel) -> KernelVector {
    KernelVector {
        dims: k.size() * k.size(),
        values: k.weights().to_vec(),
        label: None,
    }
}

/// Inverse of [`flatten_kernel`]; `dims` must be an odd perfect square.
pub fn unflatten_kernel(v: &KernelVector) -> Result<Kernel> {
    let size = odd_square_side(v.dims)?;
    Kernel::new(size, v.values.clone())
}

pub(crate) fn odd_square_side(dims: usize) -> Result<usize> {
    let size = (dims as f64).sqrt().round() as usize;
    if size * size != dims || size % 2 == 0 {
        return Err(Error::Parameter(format!(
            "{dims} is not an odd perfect square"
        )));
    }
    Ok(size)
}

/// Result of Lloyd's algorithm: centers, per-input assignments, and the
/// within-cluster sum of squared distances per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub dims: usize,
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after the initial assignment and after every iteration.
    pub inertia_history: Vec<f64>,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(v: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = dist_sq(v, &centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = dist_sq(v, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Seeded k-means++ initialization: the first center is uniform, each later
/// center is drawn with probability proportional to its squared distance
/// from the chosen set. Degenerate all-zero distances fall back to the
/// first unused points.
fn kmeans_pp_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centers.push(points[first].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let r = rng.gen_range(0.0..total);
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                cum += d;
                if cum > r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // identical points: take the first not yet used
            (0..n).find(|i| !chosen[*i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centers.push(points[idx].to_vec());
        let latest = centers.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = dist_sq(p, latest);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centers
}

/// Lloyd's algorithm with k-means++ initialization. Iterates until the
/// assignment is stable, the largest center movement drops to `tol`, or
/// `max_iter` passes. Clusters that empty out are re-seeded with the point
/// farthest from its assigned center.
pub fn kmeans(
    vectors: &[KernelVector],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::Parameter(format!(
            "{} points cannot support {} clusters",
            vectors.len(),
            k
        )));
    }
    let dims = vectors[0].dims;
    if vectors.iter().any(|v| v.dims != dims || v.values.len() != dims) {
        return Err(Error::Parameter("all vectors must share dims".into()));
    }
    let points: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(&points, k, &mut rng);

    let assign_all = |centers: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let assignments = points
            .iter()
            .map(|p| {
                let (idx, d) = nearest_center(p, centers);
                inertia += d;
                idx
            })
            .collect();
        (assignments, inertia)
    };

    let (mut assignments, mut inertia) = assign_all(&centers);
    let mut history = vec![inertia];
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        iterations_run += 1;

        // means of each cluster
        let mut sums = vec![vec![0.0f64; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(*p) {
                *s += v;
            }
        }
        let mut new_centers = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (nc, s) in new_centers[c].iter_mut().zip(&sums[c]) {
                    *nc = s / counts[c] as f64;
                }
            }
        }
        // farthest-point reseed for empty clusters
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] == 0 {
                let mut far_idx = 0;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    if taken[i] {
                        continue;
                    }
                    let d = dist_sq(p, &new_centers[assignments[i]]);
                    if d > far_d {
                        far_d = d;
                        far_idx = i;
                    }
                }
                taken[far_idx] = true;
                new_centers[c] = points[far_idx].to_vec();
            }
        }

        let movement = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| dist_sq(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centers = new_centers;

        let (new_assignments, new_inertia) = assign_all(&centers);
        history.push(new_inertia);
        let stable = new_assignments == assignments;
        assignments = new_assignments;
        inertia = new_inertia;
        if stable || movement <= tol {
            break;
        }
    }

    Ok(Clustering {
        k,
        dims,
        centers,
        assignments,
        inertia,
        seed,
        iterations_run,
        inertia_history: history,
    })
}

/// Index of the nearest center under Euclidean distance; ties keep the
/// lowest index.
pub fn assign(v: &KernelVector, clustering: &Clustering) -> Result<usize> {
    if v.dims != clustering.dims {
        return Err(Error::Parameter(format!(
            "vector dims {} do not match clustering dims {}",
            v.dims, clustering.dims
        )));
    }
    Ok(nearest_center(&v.values, &clustering.centers).0)
}

/// Mean-centered top-2 principal components with per-vector coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub coords: Vec<(f64, f64)>,
    /// Population variances along the two components, descending.
    pub explained_variance: [f64; 2],
}

/// PCA to two dimensions via eigendecomposition of the smaller of the
/// covariance or Gram matrix. Each component's largest-magnitude entry is
/// made positive so the projection is sign-deterministic.
pub fn pca2d(vectors: &[KernelVector]) -> Result<PcaProjection> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::Parameter("pca2d needs at least 3 vectors".into()));
    }
    let dims = vectors[0].dims;
    if vectors.iter().any(|v| v.dims != dims || v.values.len() != dims) {
        return Err(Error::Parameter("all vectors must share dims".into()));
    }

    let mut mean = vec![0.0f64; dims];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.values.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_variance: f64 =
        centered.iter().flatten().map(|x| x * x).sum::<f64>() / n as f64;
    if total_variance <= 1e-24 {
        return Err(Error::Parameter(
            "all vectors identical: covariance has rank 0".into(),
        ));
    }

    // Eigen-decompose whichever of X^T X / n (dims x dims) or X X^T / n
    // (n x n) is smaller; both yield the same leading eigenvalues.
    let (mut eigvals, mut raw_components): (Vec<f64>, Vec<Vec<f64>>) = if dims <= n {
        let mut cov = nalgebra::DMatrix::<f64>::zeros(dims, dims);
        for row in &centered {
            for i in 0..dims {
                for j in 0..=i {
                    cov[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..dims {
            for j in 0..=i {
                let v = cov[(i, j)] / n as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dims).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).expect("finite"));
        let vals = order.iter().take(2).map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let comps = order
            .iter()
            .take(2)
            .map(|&i| eig.eigenvectors.column(i).iter().cloned().collect())
            .collect();
        (vals, comps)
    } else {
        let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                gram[(i, j)] = v / n as f64;
                gram[(j, i)] = v / n as f64;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).expect("finite"));
        let mut vals = Vec::with_capacity(2);
        let mut comps = Vec::with_capacity(2);
        for &i in order.iter().take(2) {
            let lambda = eig.eigenvalues[i].max(0.0);
            let u = eig.eigenvectors.column(i);
            // component = X^T u, renormalized
            let mut comp = vec![0.0f64; dims];
            for (row, ui) in centered.iter().zip(u.iter()) {
                for (c, x) in comp.iter_mut().zip(row) {
                    *c += ui * x;
                }
            }
            let norm = comp.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for c in &mut comp {
                    *c /= norm;
                }
            } else {
                comp.clear(); // degenerate direction, rebuilt below
            }
            vals.push(lambda);
            comps.push(comp);
        }
        (vals, comps)
    };

    // A rank-1 data set leaves the second direction free: complete it with
    // a deterministic unit vector orthogonal to the first component.
    if raw_components.len() < 2 || raw_components[1].is_empty() {
        let first = raw_components[0].clone();
        let mut second = vec![0.0f64; dims];
        for basis in 0..dims {
            let mut cand = vec![0.0f64; dims];
            cand[basis] = 1.0;
            let proj: f64 = cand.iter().zip(&first).map(|(a, b)| a * b).sum();
            for (c, f) in cand.iter_mut().zip(&first) {
                *c -= proj * f;
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for c in &mut cand {
                    *c /= norm;
                }
                second = cand;
                break;
            }
        }
        if raw_components.len() < 2 {
            raw_components.push(second);
            eigvals.push(0.0);
        } else {
            raw_components[1] = second;
        }
        eigvals[1] = eigvals[1].max(0.0);
    }

    // sign convention: largest-magnitude entry positive
    for comp in &mut raw_components {
        let mut max_idx = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[max_idx].abs() {
                max_idx = i;
            }
        }
        if comp[max_idx] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }

    let coords: Vec<(f64, f64)> = centered
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&raw_components[0]).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&raw_components[1]).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect();

    let mut components = raw_components.into_iter();
    Ok(PcaProjection {
        mean,
        components: [
            components.next().expect("two components"),
            components.next().expect("two components"),
        ],
        coords,
        explained_variance: [eigvals[0], eigvals[1]],
    })
}

/// Mean silhouette over all points, in [-1, 1]. Singleton clusters and
/// all-zero distances contribute 0 by convention.
pub fn silhouette_score(vectors: &[KernelVector], clustering: &Clustering) -> Result<f64> {
    if clustering.k < 2 {
        return Err(Error::Parameter("silhouette needs k >= 2".into()));
    }
    let n = vectors.len();
    if clustering.assignments.len() != n {
        return Err(Error::Parameter(
            "assignments do not match the vector count".into(),
        ));
    }
    let mut sizes = vec![0usize; clustering.k];
    for &a in &clustering.assignments {
        sizes[a] += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Parameter("every cluster must be non-empty".into()));
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = clustering.assignments[i];
        if sizes[own] == 1 {
            continue; // contributes 0
        }
        let mut sums = vec![0.0f64; clustering.k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist_sq(&vectors[i].values, &vectors[j].values).sqrt();
            sums[clustering.assignments[j]] += d;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..clustering.k {
            if c != own {
                b = b.min(sums[c] / sizes[c] as f64);
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the projected points with their cluster and label as CSV
/// (`x,y,cluster,label`). An empty label slice writes empty labels.
pub fn export_scatter(
    proj: &PcaProjection,
    clustering: &Clustering,
    labels: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let n = proj.coords.len();
    if clustering.assignments.len() != n || (!labels.is_empty() && labels.len() != n) {
        return Err(Error::Parameter(
            "coords, assignments, and labels must have matching lengths".into(),
        ));
    }
    let mut text = String::from("x,y,cluster,label\n");
    for (i, (x, y)) in proj.coords.iter().enumerate() {
        let label = labels.get(i).map(String::as_str).unwrap_or("");
        writeln!(
            text,
            "{x},{y},{},{}",
            clustering.assignments[i],
            csv_field(label)
        )
        .expect("string write");
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

const SVG_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22", "#17becf",
];

/// A minimal scatter SVG, one glyph color per cluster.
pub fn export_scatter_svg(
    proj: &PcaProjection,
    clustering: &Clustering,
    path: impl AsRef<Path>,
) -> Result<()> {
    if clustering.assignments.len() != proj.coords.len() {
        return Err(Error::Parameter(
            "coords and assignments must have matching lengths".into(),
        ));
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &proj.coords {
        min_x = min_x.min(*x);
        max_x = max_x.max(*x);
        min_y = min_y.min(*y);
        max_y = max_y.max(*y);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let (w, h, pad) = (640.0, 480.0, 24.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, (x, y)) in proj.coords.iter().enumerate() {
        let px = pad + (x - min_x) / span_x * (w - 2.0 * pad);
        let py = h - pad - (y - min_y) / span_y * (h - 2.0 * pad);
        let color = SVG_PALETTE[clustering.assignments[i] % SVG_PALETTE.len()];
        writeln!(
            svg,
            "<circle cx=\"{px:.3}\" cy=\"{py:.3}\" r=\"4\" fill=\"{color}\"/>"
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    write_atomic(path.as_ref(), svg.as_bytes())
}

/// Writes centers in the `SRC1` text format: `SRC1 <k> <dims>` then one
/// line of 17-significant-digit decimals per center.
pub fn write_clustering(clustering: &Clustering, path: impl AsRef<Path>) -> Result<()> {
    let mut text = format!("SRC1 {} {}\n", clustering.k, clustering.dims);
    for center in &clustering.centers {
        let mut line = String::new();
        for (i, v) in center.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v:.16e}").expect("string write");
        }
        text.push_str(&line);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Reads an `SRC1` centers file. The file stores centers only, so the
/// returned clustering has no assignments or inertia history.
pub fn read_clustering(path: impl AsRef<Path>) -> Result<Clustering> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("SRC1") {
        return Err(Error::format(path, "expected SRC1 header"));
    }
    let k: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, "missing k"))?;
    let dims: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, "missing dims"))?;
    let values: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad value {t:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != k * dims {
        return Err(Error::format(
            path,
            format!("expected {} values, found {}", k * dims, values.len()),
        ));
    }
    let centers = values.chunks(dims).map(|c| c.to_vec()).collect();
    Ok(Clustering {
        k,
        dims,
        centers,
        assignments: Vec::new(),
        inertia: 0.0,
        seed: 0,
        iterations_run: 0,
        inertia_history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::Kernel;

    fn vecs_from_scalars(scalars: &[f64], dims: usize) -> Vec<KernelVector> {
        scalars
            .iter()
            .map(|&s| {
                let mut values = vec![0.0; dims];
                values[0] = s;
                KernelVector { dims, values, label: None }
            })
            .collect()
    }

    /// Exhaustive optimal 2-partition cost for tiny inputs.
    fn brute_force_best_2partition(scalars: &[f64]) -> f64 {
        let n = scalars.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let (mut s0, mut s1, mut n0, mut n1) = (0.0, 0.0, 0usize, 0usize);
            for (i, &v) in scalars.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s0 += v;
                    n0 += 1;
                } else {
                    s1 += v;
                    n1 += 1;
                }
            }
            let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
            let cost: f64 = scalars
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let m = if mask & (1 << i) != 0 { m0 } else { m1 };
                    (v - m) * (v - m)
                })
                .sum();
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn kmeans_degenerate_fit_has_zero_inertia() {
        let vectors = vecs_from_scalars(&[1.0, 2.0, 5.0], 4);
        let c = kmeans(&vectors, 3, 0, 50, 0.0).unwrap();
        assert!(c.inertia < 1e-18);
        let mut centers: Vec<f64> = c.centers.iter().map(|c| c[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(centers, vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn kmeans_matches_exhaustive_optimum() {
        let scalars = [0.0, 1.0, 10.0, 11.0];
        let vectors = vecs_from_scalars(&scalars, 3);
        let c = kmeans(&vectors, 2, 1, 100, 0.0).unwrap();
        let brute = brute_force_best_2partition(&scalars);
        assert!((c.inertia - brute).abs() < 1e-12);
        assert!((c.inertia - 1.0).abs() < 1e-12);
        let mut centers: Vec<f64> = c.centers.iter().map(|c| c[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] - 0.5).abs() < 1e-12 && (centers[1] - 10.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let vectors = vecs_from_scalars(&[0.0, 0.5, 3.0, 3.5, 9.0, 9.5], 5);
        let a = kmeans(&vectors, 3, 42, 100, 0.0).unwrap();
        let b = kmeans(&vectors, 3, 42, 100, 0.0).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centers, b.centers);
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        let vectors = vecs_from_scalars(&[1.0, 2.0], 2);
        assert!(matches!(
            kmeans(&vectors, 3, 0, 10, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn kmeans_inertia_history_non_increasing() {
        let scalars: Vec<f64> = (0..40).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let vectors = vecs_from_scalars(&scalars, 6);
        let c = kmeans(&vectors, 4, 3, 100, 0.0).unwrap();
        for pair in c.inertia_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "inertia rose: {pair:?}");
        }
        // inertia recomputable from centers + assignments
        let recomputed: f64 = vectors
            .iter()
            .zip(&c.assignments)
            .map(|(v, &a)| dist_sq(&v.values, &c.centers[a]))
            .sum();
        assert!((recomputed - c.inertia).abs() <= 1e-9 * recomputed.max(1.0));
    }

    #[test]
    fn assign_exact_center_and_tie_break() {
        let clustering = Clustering {
            k: 5,
            dims: 2,
            centers: vec![
                vec![5.0, 5.0],
                vec![0.0, 1.0],
                vec![9.0, 9.0],
                vec![2.0, 2.0],
                vec![0.0, -1.0],
            ],
            assignments: vec![],
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: vec![],
        };
        let at_center = KernelVector { dims: 2, values: vec![2.0, 2.0], label: None };
        assert_eq!(assign(&at_center, &clustering).unwrap(), 3);
        // equidistant from centers 1 and 4: the lower index wins
        let midpoint = KernelVector { dims: 2, values: vec![0.0, 0.0], label: None };
        assert_eq!(assign(&midpoint, &clustering).unwrap(), 1);
        let wrong = KernelVector { dims: 3, values: vec![0.0; 3], label: None };
        assert!(matches!(assign(&wrong, &clustering), Err(Error::Parameter(_))));
    }

    #[test]
    fn assign_reproduces_training_assignments() {
        let scalars: Vec<f64> = (0..30).map(|i| ((i * 31) % 17) as f64).collect();
        let vectors = vecs_from_scalars(&scalars, 4);
        let c = kmeans(&vectors, 3, 9, 100, 0.0).unwrap();
        for (v, &a) in vectors.iter().zip(&c.assignments) {
            assert_eq!(assign(v, &c).unwrap(), a);
        }
    }

    #[test]
    fn assign_is_translation_equivariant() {
        let vectors = vecs_from_scalars(&[0.0, 1.0, 6.0, 7.0], 3);
        let c = kmeans(&vectors, 2, 5, 100, 0.0).unwrap();
        let t = [0.7, -1.3, 2.0];
        let shifted = Clustering {
            centers: c
                .centers
                .iter()
                .map(|ctr| ctr.iter().zip(&t).map(|(a, b)| a + b).collect())
                .collect(),
            ..c.clone()
        };
        for v in &vectors {
            let moved = KernelVector {
                dims: v.dims,
                values: v.values.iter().zip(&t).map(|(a, b)| a + b).collect(),
                label: None,
            };
            assert_eq!(assign(v, &c).unwrap(), assign(&moved, &shifted).unwrap());
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let k = crate::kernelest::make_gaussian_kernel(
            &crate::kernelest::GaussianKernelParams::new(1.0, 0.6, 0.2).unwrap(),
            33,
        )
        .unwrap();
        let v = flatten_kernel(&k);
        assert_eq!(v.dims, 1089);
        let back = unflatten_kernel(&v).unwrap();
        assert_eq!(back.weights(), k.weights());

        let delta = Kernel::delta(33).unwrap();
        let flat = flatten_kernel(&delta);
        assert_eq!(flat.values[16 * 33 + 16], 1.0);
        assert_eq!(flat.values.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn pca_planar_data_is_exact() {
        // points in the plane spanned by two fixed directions in 5-D
        let u = [1.0, 0.0, 2.0, 0.0, -1.0];
        let w = [0.0, 3.0, 0.0, 1.0, 1.0];
        let coeffs = [
            (1.0, 0.5),
            (-2.0, 1.0),
            (0.3, -0.7),
            (2.0, 2.0),
            (-1.0, -1.0),
            (0.0, 1.5),
        ];
        let vectors: Vec<KernelVector> = coeffs
            .iter()
            .map(|&(a, b)| KernelVector {
                dims: 5,
                values: (0..5).map(|i| a * u[i] + b * w[i] + 0.25).collect(),
                label: None,
            })
            .collect();
        let proj = pca2d(&vectors).unwrap();

        // orthonormality
        let dot: f64 = proj.components[0]
            .iter()
            .zip(&proj.components[1])
            .map(|(a, b)| a * b)
            .sum();
        assert!(dot.abs() < 1e-9);
        for comp in &proj.components {
            let norm: f64 = comp.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert!(proj.explained_variance[0] >= proj.explained_variance[1]);

        // exact reconstruction from two components
        for (vec, (x, y)) in vectors.iter().zip(&proj.coords) {
            for i in 0..5 {
                let rebuilt =
                    proj.mean[i] + x * proj.components[0][i] + y * proj.components[1][i];
                assert!((rebuilt - vec.values[i]).abs() < 1e-9);
            }
        }

        // explained variance sums to total variance for planar data
        let total: f64 = vectors
            .iter()
            .map(|v| {
                v.values
                    .iter()
                    .zip(&proj.mean)
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / vectors.len() as f64;
        let explained = proj.explained_variance[0] + proj.explained_variance[1];
        assert!((explained - total).abs() < 1e-9 * total.max(1.0));

        // projected variance equals the eigenvalues
        let var_x: f64 =
            proj.coords.iter().map(|(x, _)| x * x).sum::<f64>() / vectors.len() as f64;
        assert!((var_x - proj.explained_variance[0]).abs() < 1e-9 * var_x.max(1.0));
    }

    #[test]
    fn pca_collinear_points_have_tiny_second_variance() {
        let vectors = vecs_from_scalars(&[0.0, 1.0, 2.0], 4);
        let proj = pca2d(&vectors).unwrap();
        assert!(proj.explained_variance[1] <= 1e-12);
    }

    #[test]
    fn pca_rejects_identical_points() {
        let vectors = vecs_from_scalars(&[2.0, 2.0, 2.0], 3);
        assert!(matches!(pca2d(&vectors), Err(Error::Parameter(_))));
    }

    #[test]
    fn pca_duplication_invariance() {
        let base = vecs_from_scalars(&[0.0, 1.0, 5.0, 2.5], 3);
        let proj1 = pca2d(&base).unwrap();
        let doubled: Vec<KernelVector> =
            base.iter().chain(base.iter()).cloned().collect();
        let proj2 = pca2d(&doubled).unwrap();
        for (a, b) in proj1.components[0].iter().zip(&proj2.components[0]) {
            assert!((a - b).abs() < 1e-9);
        }
        for (i, (x, y)) in proj1.coords.iter().enumerate() {
            assert!((x - proj2.coords[i].0).abs() < 1e-9);
            assert!((y - proj2.coords[i].1).abs() < 1e-9);
        }
    }

    #[test]
    fn silhouette_separated_blobs_score_high() {
        let mut scalars = Vec::new();
        for i in 0..10 {
            scalars.push(i as f64 * 0.01);
        }
        for i in 0..10 {
            scalars.push(50.0 + i as f64 * 0.01);
        }
        let vectors = vecs_from_scalars(&scalars, 3);
        let c = kmeans(&vectors, 2, 0, 100, 0.0).unwrap();
        let score = silhouette_score(&vectors, &c).unwrap();
        assert!(score > 0.9, "silhouette {score}");

        // ground-truth partition recovered
        let first = c.assignments[0];
        assert!(c.assignments[..10].iter().all(|&a| a == first));
        assert!(c.assignments[10..].iter().all(|&a| a != first));
    }

    #[test]
    fn silhouette_identical_points_is_zero() {
        let vectors = vecs_from_scalars(&[1.0, 1.0, 1.0, 1.0], 2);
        let clustering = Clustering {
            k: 2,
            dims: 2,
            centers: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            assignments: vec![0, 0, 1, 1],
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: vec![],
        };
        let score = silhouette_score(&vectors, &clustering).unwrap();
        assert!(score <= 0.0);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn silhouette_invariant_under_relabeling() {
        let scalars = [0.0, 0.1, 4.0, 4.1, 9.0, 9.1];
        let vectors = vecs_from_scalars(&scalars, 2);
        let c = kmeans(&vectors, 3, 7, 100, 0.0).unwrap();
        let s1 = silhouette_score(&vectors, &c).unwrap();
        // permute cluster ids 0->1->2->0
        let permuted = Clustering {
            centers: vec![c.centers[2].clone(), c.centers[0].clone(), c.centers[1].clone()],
            assignments: c.assignments.iter().map(|&a| (a + 1) % 3).collect(),
            ..c.clone()
        };
        let s2 = silhouette_score(&vectors, &permuted).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn silhouette_rejects_k1() {
        let vectors = vecs_from_scalars(&[1.0, 2.0], 2);
        let c = kmeans(&vectors, 1, 0, 10, 0.0).unwrap();
        assert!(matches!(
            silhouette_score(&vectors, &c),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn scatter_csv_deterministic_and_labeled() {
        let dir = tempfile::tempdir().unwrap();
        let vectors = vecs_from_scalars(&[0.0, 1.0, 5.0, 6.0], 3);
        let c = kmeans(&vectors, 2, 0, 100, 0.0).unwrap();
        let proj = pca2d(&vectors).unwrap();
        let labels: Vec<String> = ["alpha", "beta", "gamma, delta", "eps"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        export_scatter(&proj, &c, &labels, &p1).unwrap();
        export_scatter(&proj, &c, &labels, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        assert_eq!(b1, std::fs::read(&p2).unwrap());
        let text = String::from_utf8(b1).unwrap();
        assert!(text.starts_with("x,y,cluster,label\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("\"gamma, delta\""));

        export_scatter(&proj, &c, &[], dir.path().join("empty.csv")).unwrap();
        let empty = std::fs::read_to_string(dir.path().join("empty.csv")).unwrap();
        assert!(empty.lines().nth(1).unwrap().ends_with(','));

        export_scatter_svg(&proj, &c, dir.path().join("s.svg")).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("s.svg")).unwrap();
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn scatter_for_35_labeled_kernels_in_7_clusters() {
        use rand::SeedableRng;
        let dir = tempfile::tempdir().unwrap();
        let family = crate::synth::kernel_family(13).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (ci, k) in family.iter().enumerate() {
            for j in 0..5 {
                vectors.push(flatten_kernel(
                    &crate::synth::perturb_kernel(k, 0.004, &mut rng).unwrap(),
                ));
                labels.push(format!("source {ci}-{j}"));
            }
        }
        let c = kmeans(&vectors, 7, 0, 100, 0.0).unwrap();
        let proj = pca2d(&vectors).unwrap();
        let path = dir.path().join("scatter.csv");
        export_scatter(&proj, &c, &labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 36); // header + 35 rows
    }

    #[test]
    fn clustering_file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let vectors = vecs_from_scalars(&[0.0, 1.0, 5.0, 6.0, 7.0], 9);
        let c = kmeans(&vectors, 2, 3, 100, 0.0).unwrap();
        let path = dir.path().join("c.src");
        write_clustering(&c, &path).unwrap();
        let back = read_clustering(&path).unwrap();
        assert_eq!(back.k, c.k);
        assert_eq!(back.dims, c.dims);
        assert_eq!(back.centers, c.centers);
    }
}
