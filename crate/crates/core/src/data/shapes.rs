//! Parametric primitives and primitive composites sampled uniformly by area.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::geometry::{Point3, PointCloud};

pub const MIN_SHAPE_POINTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Sphere,
    Table,
    Chair,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Sphere, ShapeKind::Table, ShapeKind::Chair];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Table => "table",
            ShapeKind::Chair => "chair",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "box" => Ok(ShapeKind::Box),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "sphere" => Ok(ShapeKind::Sphere),
            "table" => Ok(ShapeKind::Table),
            "chair" | "chair-like" => Ok(ShapeKind::Chair),
            other => Err(SfaError::Config(format!(
                "unknown shape kind {other:?} (expected box, cylinder, sphere, table or chair-like)"
            ))),
        }
    }
}

/// A single sampled surface patch.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// `origin + a*u + b*v` for `a, b` in `[0, 1]`.
    Rect { origin: Point3, u: Point3, v: Point3 },
    /// Horizontal disc centred at `center`.
    Disc { center: Point3, radius: f64 },
    /// Open side of a z-aligned cylinder, base at `center`.
    Tube { center: Point3, radius: f64, height: f64 },
    Sphere { center: Point3, radius: f64 },
}

impl Surface {
    pub fn area(&self) -> f64 {
        match *self {
            Surface::Rect { u, v, .. } => {
                let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            }
            Surface::Disc { radius, .. } => PI * radius * radius,
            Surface::Tube { radius, height, .. } => TAU * radius * height,
            Surface::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Surface::Rect { origin, u, v } => {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                [0, 1, 2].map(|d| origin[d] + a * u[d] + b * v[d])
            }
            Surface::Disc { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * TAU;
                [center[0] + r * t.cos(), center[1] + r * t.sin(), center[2]]
            }
            Surface::Tube { center, radius, height } => {
                let t = rng.random::<f64>() * TAU;
                let h = rng.random::<f64>() * height;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin(), center[2] + h]
            }
            Surface::Sphere { center, radius } => loop {
                let g: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if n > 1e-12 {
                    break [0, 1, 2].map(|d| center[d] + radius * g[d] / n);
                }
            },
        }
    }
}

/// A named group of surfaces sampled together, e.g. one slab of a table.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: String,
    pub surfaces: Vec<Surface>,
}

impl Component {
    pub fn area(&self) -> f64 {
        self.surfaces.iter().map(Surface::area).sum()
    }
}

/// The six faces of an axis-aligned box with the given minimum corner and size.
fn slab(name: &str, min: Point3, size: Point3) -> Component {
    let [sx, sy, sz] = size;
    let at = |dx: f64, dy: f64, dz: f64| [min[0] + dx, min[1] + dy, min[2] + dz];
    let surfaces = vec![
        Surface::Rect { origin: at(0.0, 0.0, 0.0), u: [sx, 0.0, 0.0], v: [0.0, sy, 0.0] },
        Surface::Rect { origin: at(0.0, 0.0, sz), u: [sx, 0.0, 0.0], v: [0.0, sy, 0.0] },
        Surface::Rect { origin: at(0.0, 0.0, 0.0), u: [sx, 0.0, 0.0], v: [0.0, 0.0, sz] },
        Surface::Rect { origin: at(0.0, sy, 0.0), u: [sx, 0.0, 0.0], v: [0.0, 0.0, sz] },
        Surface::Rect { origin: at(0.0, 0.0, 0.0), u: [0.0, sy, 0.0], v: [0.0, 0.0, sz] },
        Surface::Rect { origin: at(sx, 0.0, 0.0), u: [0.0, sy, 0.0], v: [0.0, 0.0, sz] },
    ];
    Component { name: name.into(), surfaces }
}

fn legs(top_w: f64, top_d: f64, leg: f64, height: f64) -> Vec<Component> {
    let (x0, x1) = (-top_w / 2.0, top_w / 2.0 - leg);
    let (y0, y1) = (-top_d / 2.0, top_d / 2.0 - leg);
    [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| slab(&format!("leg{i}"), [x, y, 0.0], [leg, leg, height]))
        .collect()
}

/// Components of a shape instance; dimensions are drawn from `seed`.
pub fn shape_components(kind: ShapeKind, seed: u64) -> Vec<Component> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ShapeKind::Sphere => vec![Component {
            name: "sphere".into(),
            surfaces: vec![Surface::Sphere { center: [0.0; 3], radius: 1.0 }],
        }],
        ShapeKind::Box => {
            let e: [f64; 3] = [0; 3].map(|_| rng.random_range(0.3..1.0));
            vec![slab("box", e.map(|v| -v), e.map(|v| 2.0 * v))]
        }
        ShapeKind::Cylinder => {
            let radius = rng.random_range(0.3..0.8);
            let height = rng.random_range(0.6..2.0);
            let base = [0.0, 0.0, -height / 2.0];
            vec![Component {
                name: "cylinder".into(),
                surfaces: vec![
                    Surface::Tube { center: base, radius, height },
                    Surface::Disc { center: base, radius },
                    Surface::Disc { center: [0.0, 0.0, height / 2.0], radius },
                ],
            }]
        }
        ShapeKind::Table => {
            let w = rng.random_range(0.8..1.6);
            let d = rng.random_range(0.6..1.2);
            let h = rng.random_range(0.5..1.0);
            let t = rng.random_range(0.05..0.12);
            let leg = rng.random_range(0.06..0.12);
            let mut parts = vec![slab("top", [-w / 2.0, -d / 2.0, h], [w, d, t])];
            parts.extend(legs(w, d, leg, h));
            parts
        }
        ShapeKind::Chair => {
            let w = rng.random_range(0.5..0.9);
            let d = rng.random_range(0.5..0.9);
            let h = rng.random_range(0.4..0.6);
            let t = rng.random_range(0.05..0.1);
            let back = rng.random_range(0.4..0.9);
            let leg = rng.random_range(0.05..0.09);
            let mut parts = vec![
                slab("seat", [-w / 2.0, -d / 2.0, h], [w, d, t]),
                slab("back", [-w / 2.0, d / 2.0 - t, h + t], [w, t, back]),
            ];
            parts.extend(legs(w, d, leg, h));
            parts
        }
    }
}

/// Area-uniform sample of a shape; also returns the component index of each point.
pub fn generate_shape_labeled(kind: ShapeKind, n_points: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if n_points < MIN_SHAPE_POINTS {
        return Err(SfaError::Config(format!(
            "shapes need at least {MIN_SHAPE_POINTS} points, got {n_points}"
        )));
    }
    let components = shape_components(kind, seed);
    let surfaces: Vec<(usize, &Surface)> = components
        .iter()
        .enumerate()
        .flat_map(|(c, comp)| comp.surfaces.iter().map(move |s| (c, s)))
        .collect();
    let mut cumulative = Vec::with_capacity(surfaces.len());
    let mut total = 0.0;
    for (_, s) in &surfaces {
        total += s.area();
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3f_1e5u64);
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = rng.random::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= x).min(surfaces.len() - 1);
        points.push(surfaces[k].1.sample(&mut rng));
        labels.push(surfaces[k].0);
    }
    Ok((PointCloud::new(points)?, labels))
}

pub fn generate_shape(kind: ShapeKind, n_points: usize, seed: u64) -> Result<PointCloud> {
    generate_shape_labeled(kind, n_points, seed).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    #[test]
    fn sphere_on_unit_radius() {
        for seed in 0..3 {
            let c = generate_shape(ShapeKind::Sphere, 500, seed).unwrap();
            assert!(c.points().iter().all(|p| (norm(p) - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn box_points_on_faces() {
        let comps = shape_components(ShapeKind::Box, 4);
        let Surface::Rect { origin, .. } = comps[0].surfaces[0] else { panic!() };
        let ext = origin.map(|v| -v);
        let c = generate_shape(ShapeKind::Box, 1000, 4).unwrap();
        for p in c.points() {
            assert!((0..3).any(|d| (p[d].abs() - ext[d]).abs() < 1e-9), "{p:?}");
            assert!((0..3).all(|d| p[d].abs() <= ext[d] + 1e-9));
        }
    }

    #[test]
    fn kinds_parse_and_reject() {
        assert_eq!("chair-like".parse::<ShapeKind>().unwrap(), ShapeKind::Chair);
        assert!(matches!("torus".parse::<ShapeKind>(), Err(SfaError::Config(_))));
        assert!(matches!(generate_shape(ShapeKind::Box, 32, 0), Err(SfaError::Config(_))));
    }

    #[test]
    fn deterministic() {
        for kind in ShapeKind::ALL {
            assert_eq!(generate_shape(kind, 128, 9).unwrap(), generate_shape(kind, 128, 9).unwrap());
        }
    }
}
