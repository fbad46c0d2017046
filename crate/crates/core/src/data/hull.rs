//! Incremental 3D convex hull, used only to find hull vertices.

use std::collections::HashMap;

use crate::geometry::{dot, sub, Point3};

#[derive(Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Point3,
    offset: f64,
    alive: bool,
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn make_face(pts: &[Point3], v: [usize; 3]) -> Face {
    let n = cross(&sub(&pts[v[1]], &pts[v[0]]), &sub(&pts[v[2]], &pts[v[0]]));
    Face {
        v,
        normal: n,
        offset: dot(&n, &pts[v[0]]),
        alive: true,
    }
}

impl Face {
    fn height(&self, p: &Point3) -> f64 {
        dot(&self.normal, p) - self.offset
    }
}

/// Picks four affinely independent points, or `None` if the set is flat.
fn initial_simplex(pts: &[Point3], eps: f64) -> Option<[usize; 4]> {
    let a = (0..pts.len()).min_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]))?;
    let b = (0..pts.len()).max_by(|&i, &j| {
        let di = sub(&pts[i], &pts[a]);
        let dj = sub(&pts[j], &pts[a]);
        dot(&di, &di).total_cmp(&dot(&dj, &dj))
    })?;
    let ab = sub(&pts[b], &pts[a]);
    let c = (0..pts.len()).max_by(|&i, &j| {
        let ci = cross(&ab, &sub(&pts[i], &pts[a]));
        let cj = cross(&ab, &sub(&pts[j], &pts[a]));
        dot(&ci, &ci).total_cmp(&dot(&cj, &cj))
    })?;
    let n = cross(&ab, &sub(&pts[c], &pts[a]));
    if dot(&n, &n).sqrt() <= eps {
        return None;
    }
    let d = (0..pts.len()).max_by(|&i, &j| {
        dot(&n, &sub(&pts[i], &pts[a])).abs().total_cmp(&dot(&n, &sub(&pts[j], &pts[a])).abs())
    })?;
    if dot(&n, &sub(&pts[d], &pts[a])).abs() <= eps * dot(&n, &n).sqrt() {
        return None;
    }
    Some([a, b, c, d])
}

/// Indices of the points that are vertices of the convex hull, ascending.
/// Returns every index when the set is flat or has fewer than four points.
pub fn hull_vertices(pts: &[Point3]) -> Vec<usize> {
    let scale = pts.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let eps = scale * 1e-12;
    let Some([a, b, c, d]) = (if pts.len() >= 4 { initial_simplex(pts, eps) } else { None }) else {
        return (0..pts.len()).collect();
    };

    let mut faces: Vec<Face> = Vec::new();
    for tri in [[a, b, c], [a, c, d], [a, d, b], [b, d, c]] {
        let mut f = make_face(pts, tri);
        let apex = [a, b, c, d].into_iter().find(|v| !tri.contains(v)).unwrap();
        if f.height(&pts[apex]) > 0.0 {
            f = make_face(pts, [tri[0], tri[2], tri[1]]);
        }
        faces.push(f);
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            edges.insert((f.v[e], f.v[(e + 1) % 3]), fi);
        }
    }

    let mut visible = Vec::new();
    let mut horizon = Vec::new();
    let mut alive_count = faces.len();
    for (p, pt) in pts.iter().enumerate() {
        if [a, b, c, d].contains(&p) {
            continue;
        }
        visible.clear();
        for (fi, f) in faces.iter().enumerate() {
            if f.alive && f.height(pt) > eps * dot(&f.normal, &f.normal).sqrt() {
                visible.push(fi);
            }
        }
        if visible.is_empty() {
            continue;
        }
        for &fi in &visible {
            faces[fi].alive = false;
        }
        horizon.clear();
        for &fi in &visible {
            let v = faces[fi].v;
            for e in 0..3 {
                let (x, y) = (v[e], v[(e + 1) % 3]);
                let twin = edges[&(y, x)];
                if faces[twin].alive {
                    horizon.push((x, y));
                }
            }
        }
        for &fi in &visible {
            let v = faces[fi].v;
            for e in 0..3 {
                edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        alive_count -= visible.len();
        for &(x, y) in &horizon {
            let fi = faces.len();
            faces.push(make_face(pts, [x, y, p]));
            edges.insert((x, y), fi);
            edges.insert((y, p), fi);
            edges.insert((p, x), fi);
            alive_count += 1;
        }
        if faces.len() > 4 * alive_count + 64 {
            compact(&mut faces, &mut edges);
        }
    }

    let mut out: Vec<usize> = faces.iter().filter(|f| f.alive).flat_map(|f| f.v).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn compact(faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>) {
    faces.retain(|f| f.alive);
    edges.clear();
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            edges.insert((f.v[e], f.v[(e + 1) % 3]), fi);
        }
    }
}
