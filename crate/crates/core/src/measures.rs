//! Empirical measures, spatial clusters and Wasserstein-type distances.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::abm::Trajectory;
use crate::error::{config_err, Error, Result};
use crate::model::SystemState;
use crate::neighbors::neighbor_pairs;
use crate::pde::DensityField;
use crate::rng::{Purpose, Stream};
use crate::scalar::Scalar;

/// Equal-weight point cloud; each point is `position ⊕ opinion` for agent states.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T: Scalar = f64> {
    dim: usize,
    points: Vec<T>,
}

impl<T: Scalar> EmpiricalMeasure<T> {
    pub fn from_points(dim: usize, points: Vec<T>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Shape(format!("{} coordinates in dimension {dim}", points.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return config_err("empirical measure with non-finite points");
        }
        Ok(EmpiricalMeasure { dim, points })
    }

    pub fn from_state(s: &SystemState<T>) -> Self {
        let d = s.dim();
        let mut points = Vec::with_capacity(s.len() * (d + 1));
        for k in 0..s.len() {
            points.extend_from_slice(s.position(k));
            points.push(s.opinions()[k]);
        }
        EmpiricalMeasure { dim: d + 1, points }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[T] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Each point repeated `times` times; the same measure carried by `times · len` equal atoms.
    pub fn repeated(&self, times: usize) -> Self {
        let mut points = Vec::with_capacity(self.points.len() * times);
        for p in self.points.chunks(self.dim) {
            for _ in 0..times {
                points.extend_from_slice(p);
            }
        }
        EmpiricalMeasure { dim: self.dim, points }
    }

    fn project(&self, dir: &[T]) -> Vec<T> {
        self.points
            .chunks(self.dim)
            .map(|p| p.iter().zip(dir).map(|(&a, &b)| a * b).sum())
            .collect()
    }
}

/// Connected components of the in-radius graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

impl ClusterLabels {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Union–find over in-radius pairs; labels are numbered in order of each cluster's smallest member.
pub fn cluster_components<T: Scalar>(s: &SystemState<T>, radius: T) -> ClusterLabels {
    let n = s.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, j) in neighbor_pairs(s.positions(), s.dim(), radius) {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels[i] = label_of_root[r];
    }
    ClusterLabels { labels, n_clusters: next }
}

/// Size-weighted mean of the opinion standard deviation inside clusters with at least two members.
///
/// Returns 0 when every agent is isolated.
pub fn within_cluster_opinion_spread<T: Scalar>(s: &SystemState<T>, clusters: &ClusterLabels) -> T {
    let k = clusters.n_clusters;
    let mut count = vec![0usize; k];
    let mut sum = vec![T::zero(); k];
    for (&l, &th) in clusters.labels.iter().zip(s.opinions()) {
        count[l] += 1;
        sum[l] = sum[l] + th;
    }
    let mut sq = vec![T::zero(); k];
    for (&l, &th) in clusters.labels.iter().zip(s.opinions()) {
        let dev = th - sum[l] / T::from_usize_lossy(count[l]);
        sq[l] = sq[l] + dev * dev;
    }
    let mut weighted = T::zero();
    let mut members = 0usize;
    for c in 0..k {
        if count[c] >= 2 {
            let n = T::from_usize_lossy(count[c]);
            weighted = weighted + n * (sq[c] / n).sqrt();
            members += count[c];
        }
    }
    if members == 0 {
        T::zero()
    } else {
        weighted / T::from_usize_lossy(members)
    }
}

/// Exact 2-Wasserstein distance between two equal-size, equal-weight samples on the line.
pub fn w2_1d_exact<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("sample sizes {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    Ok(mean_sq_sorted(&a, &b).sqrt())
}

fn mean_sq_sorted<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::from_usize_lossy(a.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMethod {
    Exact1d,
    Sliced,
    SynchronousPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport<T: Scalar = f64> {
    pub value: T,
    pub method: DistanceMethod,
    pub n_projections: usize,
    pub seed: u64,
    /// Dimension of the compared clouds.
    pub dim: usize,
}

impl<T: Scalar> DistanceReport<T> {
    /// Root mean squared projected distance, without the dimension factor.
    pub fn unnormalized(&self) -> T {
        self.value / T::from_usize_lossy(self.dim).sqrt()
    }
}

/// Random unit direction of projection `index`.
fn direction<T: Scalar>(dim: usize, seed: u64, index: usize) -> Vec<T> {
    let mut rng = Stream::new(seed, Purpose::Projection, index as u64, 0);
    loop {
        let mut g = vec![0.0; dim];
        rng.fill_normal(&mut g);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.iter().map(|v| T::lit(v / norm)).collect();
        }
    }
}

/// Sliced 2-Wasserstein distance, scaled by `√D` so that a pure translation by `t` gives `‖t‖` in expectation.
///
/// `value² = D · mean_u W2²(⟨u, A⟩, ⟨u, B⟩)` over `n_proj` uniform directions.
pub fn sliced_w2<T: Scalar>(a: &EmpiricalMeasure<T>, b: &EmpiricalMeasure<T>, n_proj: usize, seed: u64) -> Result<DistanceReport<T>> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(Error::Shape(format!(
            "clouds of {}×{} and {}×{} points",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    if n_proj == 0 {
        return config_err("sliced distance needs at least one projection");
    }
    let per_dir: Vec<T> = (0..n_proj)
        .into_par_iter()
        .map(|p| {
            let u = direction::<T>(a.dim(), seed, p);
            let mut pa = a.project(&u);
            let mut pb = b.project(&u);
            pa.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            pb.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            mean_sq_sorted(&pa, &pb)
        })
        .collect();
    let mean = per_dir.iter().copied().sum::<T>() / T::from_usize_lossy(n_proj);
    Ok(DistanceReport {
        value: (T::from_usize_lossy(a.dim()) * mean).sqrt(),
        method: DistanceMethod::Sliced,
        n_projections: n_proj,
        seed,
        dim: a.dim(),
    })
}

/// `(1/N) Σ_i sup_{s ≤ t} (‖X_A^i(s) − X_B^i(s)‖² + |Θ_A^i(s) − Θ_B^i(s)|²)` over shared snapshot times.
///
/// Upper bound of the squared truncated path distance under the agent-index coupling.
pub fn synchronous_path_distance<T: Scalar>(a: &Trajectory<T>, b: &Trajectory<T>, t: T) -> Result<T> {
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::Shape("trajectories have different snapshot counts".into()));
    }
    let first = (&a.snapshots[0], &b.snapshots[0]);
    if first.0.len() != first.1.len() || first.0.dim() != first.1.dim() {
        return Err(Error::Shape("trajectories have different agent counts or dimensions".into()));
    }
    let tol = T::lit(1e-9) * t.abs().max(T::one());
    let n = first.0.len();
    let mut sup = vec![T::zero(); n];
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        if (sa.time - sb.time).abs() > tol {
            return Err(Error::Shape(format!("snapshot times {} and {} differ", sa.time, sb.time)));
        }
        if sa.time > t + tol {
            break;
        }
        for (k, s) in sup.iter_mut().enumerate() {
            let dx: T = sa
                .position(k)
                .iter()
                .zip(sb.position(k))
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            let dth = sa.opinions()[k] - sb.opinions()[k];
            *s = s.max(dx + dth * dth);
        }
    }
    Ok(sup.iter().copied().sum::<T>() / T::from_usize_lossy(n))
}

/// `n` i.i.d. draws from a grid density: a cell by inverse CDF on cell masses, then a uniform point inside it.
pub fn sample_from_density<T: Scalar>(rho: &DensityField<T>, n: usize, seed: u64) -> Result<EmpiricalMeasure<T>> {
    let g = rho.grid;
    let mut cdf = Vec::with_capacity(g.len());
    let mut acc = 0.0f64;
    for m in rho.cell_masses() {
        acc += m.as_f64().max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return config_err("density has no mass to sample");
    }
    let mut rng = Stream::new(seed, Purpose::DensitySample, 0, 0);
    let mut points = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let u = rng.uniform() * acc;
        let cell = cdf.partition_point(|&c| c <= u).min(g.len() - 1);
        let (i, j) = (cell / g.neta, cell % g.neta);
        let z = g.z_min + (T::from_usize_lossy(i) + T::lit(rng.uniform())) * g.h;
        let eta = g.eta_min + (T::from_usize_lossy(j) + T::lit(rng.uniform())) * g.h;
        points.push(z);
        points.push(eta);
    }
    EmpiricalMeasure::from_points(2, points)
}

/// Least-squares slope of `ln Var` against `ln N`.
pub fn fluctuation_slope<T: Scalar>(groups: &BTreeMap<usize, Vec<T>>) -> Result<T> {
    if groups.len() < 3 {
        return config_err(format!("need at least 3 system sizes, got {}", groups.len()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&n, vals) in groups {
        if vals.len() < 8 {
            return config_err(format!("need at least 8 ensemble members for N = {n}, got {}", vals.len()));
        }
        let var = sample_variance(vals);
        if !(var > T::zero()) {
            return config_err(format!("zero variance for N = {n}"));
        }
        xs.push(T::from_usize_lossy(n).ln());
        ys.push(var.ln());
    }
    Ok(ls_slope(&xs, &ys))
}

/// Unbiased sample variance.
pub fn sample_variance<T: Scalar>(vals: &[T]) -> T {
    let n = T::from_usize_lossy(vals.len());
    let mean = vals.iter().copied().sum::<T>() / n;
    vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one())
}

fn ls_slope<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn repetition_keeps_the_measure() {
        let a = EmpiricalMeasure::from_points(2, vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let b = EmpiricalMeasure::from_points(2, vec![0.5, 0.0, 1.0, 1.0]).unwrap();
        let r = a.repeated(3);
        assert_eq!(r.len(), 6);
        assert_eq!(r.point(2), &[0.0, 1.0]);
        assert_eq!(r.point(3), &[2.0, -1.0]);
        let d1 = sliced_w2(&a, &b, 50, 1).unwrap().value;
        let d3 = sliced_w2(&r, &b.repeated(3), 50, 1).unwrap().value;
        assert_abs_diff_eq!(d1, d3, epsilon = 1e-14);
    }

    fn line(xs: &[f64]) -> SystemState<f64> {
        SystemState::new(1, xs.to_vec(), vec![0.0; xs.len()], 0.0).unwrap()
    }

    #[test]
    fn cluster_examples() {
        let r = 0.15;
        assert_eq!(cluster_components(&line(&[0.0; 6]), r).n_clusters, 1);
        assert_eq!(cluster_components(&line(&[0.0, 10.0 * r]), r).n_clusters, 2);
        let chain: Vec<f64> = (0..5).map(|k| 0.9 * r * k as f64).collect();
        assert_eq!(cluster_components(&line(&chain), r).n_clusters, 1);
    }

    #[test]
    fn labels_follow_smallest_member() {
        let c = cluster_components(&line(&[5.0, 0.0, 5.1, 0.1, 9.0]), 0.15);
        assert_eq!(c.labels, vec![0, 1, 0, 1, 2]);
        assert_eq!(c.sizes(), vec![2, 2, 1]);
    }

    #[test]
    fn spread_ignores_singletons() {
        let s = SystemState::new(1, vec![0.0, 0.01, 5.0], vec![0.0, 0.2, 1.0], 0.0).unwrap();
        let c = cluster_components(&s, 0.15);
        assert_abs_diff_eq!(within_cluster_opinion_spread(&s, &c), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_1d_exact(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(w2_1d_exact(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w2_1d_exact(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(w2_1d_exact(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sliced_of_identical_clouds_is_zero() {
        let a = EmpiricalMeasure::from_points(3, (0..30).map(|v| v as f64 * 0.1).collect()).unwrap();
        let r = sliced_w2(&a, &a, 50, 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(sliced_w2(&a, &EmpiricalMeasure::from_points(3, vec![0.0; 3]).unwrap(), 5, 1).is_err());
    }

    #[test]
    fn sliced_of_translated_point_mass() {
        // E⟨u,t⟩² = ‖t‖²/D for uniform unit u
        let t = [0.3, -0.4];
        let a = EmpiricalMeasure::<f64>::from_points(2, vec![0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::from_points(2, t.to_vec()).unwrap();
        let r = sliced_w2(&a, &b, 20_000, 5).unwrap();
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(r.unnormalized().powi(2), 0.25f64 / 2.0, epsilon = 0.0025);
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let mk = |f: &dyn Fn(f64) -> f64| -> BTreeMap<usize, Vec<f64>> {
            [50usize, 100, 200, 400]
                .iter()
                .map(|&n| {
                    // ±a alternating samples: unbiased variance is a²·m/(m−1)
                    let a = f(n as f64).sqrt();
                    (n, (0..10).map(|k| if k % 2 == 0 { a } else { -a }).collect())
                })
                .collect()
        };
        assert_abs_diff_eq!(fluctuation_slope(&mk(&|n| 3.0 / n)).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fluctuation_slope(&mk(&|_| 0.7)).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_rejects_degenerate_input() {
        let mut g: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        g.insert(10, vec![1.0; 8]);
        g.insert(20, (0..8).map(|v| v as f64).collect());
        g.insert(40, (0..8).map(|v| v as f64).collect());
        assert!(fluctuation_slope(&g).is_err());
        g.remove(&10);
        assert!(fluctuation_slope(&g).is_err());
    }
}
