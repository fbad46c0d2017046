//! Geometric kernels shared by every stage of the network: sampling, grouping,
//! interpolation, and the point-set distances used as losses and metrics.
//!
//! Everything here works in `f64` and is a pure function of its inputs.
//! Nearest-neighbour ties always resolve to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};

pub type Point3 = [f64; 3];

/// Ordered, nonempty set of finite 3D positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(SfaError::Domain("point cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(SfaError::Numeric(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(SfaError::Size(format!("flat buffer length {} is not a multiple of 3", flat.len())));
        }
        PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Largest pairwise distance (brute force).
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(dist2(a, b));
            }
        }
        best.sqrt()
    }

    /// Transform that centers this cloud at the origin and scales it into the unit sphere.
    pub fn unit_sphere_transform(&self) -> Normalization {
        let center = self.centroid();
        let radius = self.points.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
        let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        Normalization { center, scale }
    }

    pub fn transformed(&self, t: &Normalization) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }

    pub fn translated(&self, v: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| add(p, &v)).collect(),
        }
    }
}

/// `p -> (p - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) * self.scale,
            (p[1] - self.center[1]) * self.scale,
            (p[2] - self.center[2]) * self.scale,
        ]
    }
}

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

/// Greedy maximin subsampling. The first index is `start`; each later index
/// is the point farthest from everything already selected.
pub fn farthest_point_sample(points: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(SfaError::Size(format!("cannot sample {k} of {n} points")));
    }
    if start >= n {
        return Err(SfaError::Size(format!("start index {start} out of range for {n} points")));
    }
    let pts = points.points();
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    let mut out = Vec::with_capacity(k);
    let mut current = start;
    for _ in 0..k {
        out.push(current);
        chosen[current] = true;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, p) in pts.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Fixed-width neighbour groups. Rows are centers, `k` slots per row.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub k: usize,
    pub indices: Vec<usize>,
    /// False for padded slots.
    pub valid: Vec<bool>,
}

impl NeighborIndex {
    pub fn rows(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn group(&self, row: usize) -> &[usize] {
        &self.indices[row * self.k..(row + 1) * self.k]
    }

    pub fn group_valid(&self, row: usize) -> &[bool] {
        &self.valid[row * self.k..(row + 1) * self.k]
    }
}

/// For each center, the first `max_samples` points (in storage order) with
/// distance `<= radius`. Short groups are padded with the nearest member; a
/// center with no member at all gets its overall nearest point, marked invalid.
pub fn ball_query(centers: &PointCloud, points: &PointCloud, radius: f64, max_samples: usize) -> Result<NeighborIndex> {
    if !(radius > 0.0) {
        return Err(SfaError::Domain(format!("ball query radius must be positive, got {radius}")));
    }
    if max_samples == 0 {
        return Err(SfaError::Domain("ball query needs max_samples >= 1".into()));
    }
    let r2 = radius * radius;
    let pts = points.points();
    let mut indices = Vec::with_capacity(centers.len() * max_samples);
    let mut valid = Vec::with_capacity(centers.len() * max_samples);
    for c in centers.points() {
        let start = indices.len();
        let mut nearest = (f64::INFINITY, 0usize);
        let mut nearest_overall = (f64::INFINITY, 0usize);
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(p, c);
            if d < nearest_overall.0 {
                nearest_overall = (d, i);
            }
            if d <= r2 {
                if d < nearest.0 {
                    nearest = (d, i);
                }
                indices.push(i);
                valid.push(true);
                if indices.len() - start == max_samples {
                    break;
                }
            }
        }
        let found = indices.len() - start;
        let fill = if found > 0 { nearest.1 } else { nearest_overall.1 };
        for _ in found..max_samples {
            indices.push(fill);
            valid.push(false);
        }
    }
    Ok(NeighborIndex {
        k: max_samples,
        indices,
        valid,
    })
}

pub const INTERP_EPS: f64 = 1e-8;

/// Inverse-distance weights over the (up to) three nearest sources of each target.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpWeights {
    /// Neighbours per target: `min(3, sources)`.
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Returns the `k` nearest points of `query` among `points`, closest first,
/// ties to the lowest index. `skip` excludes one index (used for self).
pub fn k_nearest(points: &[Point3], query: &Point3, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d = dist2(p, query);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        // insertion keeps earlier indices ahead of equal distances
        let pos = best.iter().position(|&(bd, _)| d < bd).unwrap_or(best.len());
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best.into_iter().map(|(d, i)| (d.sqrt(), i)).collect()
}

pub fn three_nn_weights(targets: &PointCloud, sources: &PointCloud) -> Result<InterpWeights> {
    let k = sources.len().min(3);
    let mut indices = Vec::with_capacity(targets.len() * k);
    let mut weights = Vec::with_capacity(targets.len() * k);
    for t in targets.points() {
        let nn = k_nearest(sources.points(), t, k, None);
        let inv: Vec<f64> = nn.iter().map(|&(d, _)| 1.0 / (d + INTERP_EPS)).collect();
        let total: f64 = inv.iter().sum();
        for (&(_, i), w) in nn.iter().zip(&inv) {
            indices.push(i);
            weights.push(w / total);
        }
    }
    Ok(InterpWeights { k, indices, weights })
}

/// Interpolates `source_features` (one row per source) onto `targets`.
pub fn three_nn_interpolate(
    targets: &PointCloud,
    sources: &PointCloud,
    source_features: &ndarray::Array2<f64>,
) -> Result<ndarray::Array2<f64>> {
    if source_features.nrows() != sources.len() {
        return Err(SfaError::Size(format!(
            "{} feature rows for {} sources",
            source_features.nrows(),
            sources.len()
        )));
    }
    if source_features.ncols() == 0 {
        return Err(SfaError::Size("features need at least one channel".into()));
    }
    let w = three_nn_weights(targets, sources)?;
    let mut out = ndarray::Array2::zeros((targets.len(), source_features.ncols()));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        for s in 0..w.k {
            let src = source_features.row(w.indices[t * w.k + s]);
            row.scaled_add(w.weights[t * w.k + s], &src);
        }
    }
    Ok(out)
}

/// Nearest-neighbour assignment in both directions between two clouds.
struct Matching {
    a_to_b: Vec<(f64, usize)>,
    b_to_a: Vec<(f64, usize)>,
}

const KD_LEAF: usize = 8;

/// Static kd-tree for exact nearest-neighbour queries.
struct KdTree {
    pts: Vec<Point3>,
    /// Original index of each entry of `pts`.
    ids: Vec<usize>,
    nodes: Vec<KdNode>,
}

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

impl KdTree {
    fn new(points: &[Point3]) -> Self {
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        Self::build(points, &mut ids, 0, points.len(), &mut nodes);
        let pts = ids.iter().map(|&i| points[i]).collect();
        KdTree { pts, ids, nodes }
    }

    fn build(points: &[Point3], ids: &mut [usize], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
        let at = nodes.len();
        if end - start <= KD_LEAF {
            nodes.push(KdNode::Leaf { start, end });
            return at;
        }
        let slice = &mut ids[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for d in 0..3 {
                lo[d] = lo[d].min(points[i][d]);
                hi[d] = hi[d].max(points[i][d]);
            }
        }
        let axis = (0..3).max_by(|&x, &y| (hi[x] - lo[x]).total_cmp(&(hi[y] - lo[y]))).unwrap();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&x, &y| points[x][axis].total_cmp(&points[y][axis]));
        let value = points[slice[mid]][axis];
        nodes.push(KdNode::Leaf { start, end });
        let left = Self::build(points, ids, start, start + mid, nodes);
        let right = Self::build(points, ids, start + mid, end, nodes);
        nodes[at] = KdNode::Split { axis, value, left, right };
        at
    }

    /// Squared distance and original index of the nearest point, lowest index on ties.
    fn nearest(&self, p: &Point3) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, p, &mut best);
        best
    }

    fn search(&self, node: usize, p: &Point3, best: &mut (f64, usize)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for k in start..end {
                    let d = dist2(p, &self.pts[k]);
                    let id = self.ids[k];
                    if d < best.0 || (d == best.0 && id < best.1) {
                        *best = (d, id);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = p[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, p, best);
                if diff * diff <= best.0 {
                    self.search(far, p, best);
                }
            }
        }
    }
}

fn one_way(from: &[Point3], to: &[Point3]) -> Vec<(f64, usize)> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|p| {
            let (d, j) = tree.nearest(p);
            (d.sqrt(), j)
        })
        .collect()
}

fn bidirectional_nearest(a: &[Point3], b: &[Point3]) -> Matching {
    Matching {
        a_to_b: one_way(a, b),
        b_to_a: one_way(b, a),
    }
}

/// Mean non-squared distance from each point of `from` to its nearest point in `to`.
pub fn one_sided_distance(from: &PointCloud, to: &PointCloud) -> f64 {
    let total: f64 = one_way(from.points(), to.points()).iter().map(|m| m.0).sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance with non-squared Euclidean terms.
pub fn chamfer_distance(s1: &PointCloud, s2: &PointCloud) -> f64 {
    let m = bidirectional_nearest(s1.points(), s2.points());
    chamfer_from_matching(&m)
}

fn chamfer_from_matching(m: &Matching) -> f64 {
    let fwd: f64 = m.a_to_b.iter().map(|x| x.0).sum::<f64>() / m.a_to_b.len() as f64;
    let bwd: f64 = m.b_to_a.iter().map(|x| x.0).sum::<f64>() / m.b_to_a.len() as f64;
    fwd + bwd
}

/// Chamfer distance with its gradient with respect to every coordinate of both clouds.
/// Zero-distance pairs contribute no gradient.
pub fn chamfer_with_grad(s1: &PointCloud, s2: &PointCloud) -> (f64, Vec<Point3>, Vec<Point3>) {
    let (a, b) = (s1.points(), s2.points());
    let m = bidirectional_nearest(a, b);
    let value = chamfer_from_matching(&m);
    let mut ga = vec![[0.0; 3]; a.len()];
    let mut gb = vec![[0.0; 3]; b.len()];
    let wa = 1.0 / a.len() as f64;
    let wb = 1.0 / b.len() as f64;
    for (i, &(d, j)) in m.a_to_b.iter().enumerate() {
        if d > 0.0 {
            let diff = sub(&a[i], &b[j]);
            for c in 0..3 {
                let g = wa * diff[c] / d;
                ga[i][c] += g;
                gb[j][c] -= g;
            }
        }
    }
    for (j, &(d, i)) in m.b_to_a.iter().enumerate() {
        if d > 0.0 {
            let diff = sub(&b[j], &a[i]);
            for c in 0..3 {
                let g = wb * diff[c] / d;
                gb[j][c] += g;
                ga[i][c] -= g;
            }
        }
    }
    (value, ga, gb)
}

#[inline]
fn repulsion_term(d: f64, h: f64) -> f64 {
    -d * (-(d * d) / (h * h)).exp()
}

#[inline]
fn repulsion_term_deriv(d: f64, h: f64) -> f64 {
    let w = (-(d * d) / (h * h)).exp();
    w * (2.0 * d * d / (h * h) - 1.0)
}

fn repulsion_neighbors(s: &PointCloud, k: usize, h: f64) -> Result<Vec<Vec<(f64, usize)>>> {
    if s.len() <= k || k == 0 {
        return Err(SfaError::Size(format!(
            "repulsion needs N > K >= 1, got N = {}, K = {k}",
            s.len()
        )));
    }
    if !(h > 0.0) {
        return Err(SfaError::Domain(format!("repulsion bandwidth must be positive, got {h}")));
    }
    let pts = s.points();
    Ok(pts
        .iter()
        .enumerate()
        .map(|(i, p)| k_nearest(pts, p, k, Some(i)))
        .collect())
}

/// Sum over points and their `k` nearest neighbours of `-d * exp(-d^2 / h^2)`.
pub fn repulsion_loss(s: &PointCloud, k: usize, h: f64) -> Result<f64> {
    let nbrs = repulsion_neighbors(s, k, h)?;
    Ok(nbrs.iter().flatten().map(|&(d, _)| repulsion_term(d, h)).sum())
}

pub fn repulsion_with_grad(s: &PointCloud, k: usize, h: f64) -> Result<(f64, Vec<Point3>)> {
    let nbrs = repulsion_neighbors(s, k, h)?;
    let pts = s.points();
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; pts.len()];
    for (i, list) in nbrs.iter().enumerate() {
        for &(d, j) in list {
            value += repulsion_term(d, h);
            if d > 0.0 {
                let coef = repulsion_term_deriv(d, h) / d;
                let diff = sub(&pts[i], &pts[j]);
                for c in 0..3 {
                    grad[i][c] += coef * diff[c];
                    grad[j][c] -= coef * diff[c];
                }
            }
        }
    }
    Ok((value, grad))
}

/// Regular `u x u` grid over `[-scale, scale]^2`, row-major. `u == 1` gives the origin.
pub fn fold_grid(u: usize, scale: f64) -> Result<Vec<[f64; 2]>> {
    if u == 0 {
        return Err(SfaError::Config("folding grid side must be at least 1".into()));
    }
    if !(scale > 0.0) {
        return Err(SfaError::Config(format!("folding grid scale must be positive, got {scale}")));
    }
    if u == 1 {
        return Ok(vec![[0.0, 0.0]]);
    }
    let step = |a: usize| -scale + 2.0 * scale * a as f64 / (u - 1) as f64;
    Ok((0..u).flat_map(|a| (0..u).map(move |b| [step(a), step(b)])).collect())
}
