//! Uniform meshes of an interval or an axis-aligned rectangle whose boundary
//! is split into a Dirichlet part Γ₀ and an acoustic part Γ₁.
//!
//! Γ₁ is always a union of whole faces (an endpoint in 1D, a side in 2D).
//! Corner nodes shared by a Γ₁ side and a Γ₀ side are Dirichlet nodes; the
//! boundary measure such a corner would carry is handed to its free
//! neighbour along the Γ₁ side, so the Γ₁ weights always sum to |Γ₁|.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("expected {expected} {what} entries, got {got}")]
    Arity { what: &'static str, expected: usize, got: usize },
    #[error("extent along axis {axis} must be positive, got {value}")]
    NonPositiveExtent { axis: usize, value: f64 },
    #[error("resolution along axis {axis} must be at least 2 elements, got {value}")]
    CoarseResolution { axis: usize, value: usize },
    #[error("face {0:?} does not exist in 1D")]
    FaceNotIn1d(Face),
    #[error("Γ₀ is empty: every boundary face was assigned to Γ₁")]
    EmptyDirichlet,
    #[error("Γ₁ is empty: at least one acoustic face is required")]
    EmptyAcoustic,
}

/// A boundary face. In 1D only `Left` (x = 0) and `Right` (x = L) exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

impl Face {
    fn all(dimension: usize) -> &'static [Face] {
        if dimension == 1 {
            &[Face::Left, Face::Right]
        } else {
            &[Face::Left, Face::Right, Face::Bottom, Face::Top]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dimension: usize,
    pub extent: Vec<f64>,
    pub gamma1_faces: Vec<Face>,
    pub resolution: Vec<usize>,
}

impl DomainSpec {
    pub fn interval(length: f64, elements: usize, gamma1: Face) -> Self {
        Self { dimension: 1, extent: vec![length], gamma1_faces: vec![gamma1], resolution: vec![elements] }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize, gamma1: Vec<Face>) -> Self {
        Self { dimension: 2, extent: vec![lx, ly], gamma1_faces: gamma1, resolution: vec![nx, ny] }
    }

    /// Returns every violated invariant, not only the first.
    pub fn validate(&self) -> Vec<GeometryError> {
        let mut errs = Vec::new();
        if !(1..=2).contains(&self.dimension) {
            errs.push(GeometryError::BadDimension(self.dimension));
            return errs;
        }
        let d = self.dimension;
        if self.extent.len() != d {
            errs.push(GeometryError::Arity { what: "extent", expected: d, got: self.extent.len() });
        }
        if self.resolution.len() != d {
            errs.push(GeometryError::Arity { what: "resolution", expected: d, got: self.resolution.len() });
        }
        for (axis, &value) in self.extent.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                errs.push(GeometryError::NonPositiveExtent { axis, value });
            }
        }
        for (axis, &value) in self.resolution.iter().enumerate() {
            if value < 2 {
                errs.push(GeometryError::CoarseResolution { axis, value });
            }
        }
        for f in &self.gamma1_faces {
            if !Face::all(d).contains(f) {
                errs.push(GeometryError::FaceNotIn1d(*f));
            }
        }
        if self.gamma1_faces.is_empty() {
            errs.push(GeometryError::EmptyAcoustic);
        }
        if Face::all(d).iter().all(|f| self.gamma1_faces.contains(f)) {
            errs.push(GeometryError::EmptyDirichlet);
        }
        errs
    }

    /// Same domain with the element count per axis multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut s = self.clone();
        for r in &mut s.resolution {
            *r *= factor;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dimension: usize,
    pub extent: Vec<f64>,
    pub resolution: Vec<usize>,
    /// Node coordinates; the second component is 0 in 1D.
    pub coords: Vec<[f64; 2]>,
    /// Segments (2 nodes) in 1D, counter-clockwise triangles (3 nodes) in 2D.
    pub elements: Vec<Vec<usize>>,
    /// `true` for Γ₀ (Dirichlet) nodes.
    pub pinned: Vec<bool>,
    pub free: Vec<usize>,
    pub dirichlet: Vec<usize>,
    /// Γ₁ nodes in ascending order; all are free.
    pub gamma1: Vec<usize>,
    /// Boundary measure carried by each Γ₁ node, aligned with `gamma1`.
    pub gamma1_weights: Vec<f64>,
    pub gamma1_faces: Vec<Face>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Largest axis spacing.
    pub fn h(&self) -> f64 {
        self.extent
            .iter()
            .zip(&self.resolution)
            .map(|(l, &n)| l / n as f64)
            .fold(0.0, f64::max)
    }

    pub fn gamma1_measure(&self) -> f64 {
        self.gamma1_faces
            .iter()
            .map(|f| match (self.dimension, f) {
                (1, _) => 1.0,
                (_, Face::Left | Face::Right) => self.extent[1],
                (_, Face::Bottom | Face::Top) => self.extent[0],
            })
            .sum()
    }

    /// Position of node `node` inside `gamma1`, if it is a Γ₁ node.
    pub fn gamma1_slot(&self, node: usize) -> Option<usize> {
        self.gamma1.binary_search(&node).ok()
    }

    /// Outward unit normal at a Γ₁ node (ambiguous at free Γ₁–Γ₁ corners, where
    /// the average of the two face normals, normalized, is returned).
    pub fn outward_normal(&self, node: usize) -> [f64; 2] {
        let [x, y] = self.coords[node];
        let tol = 1e-12 * self.extent.iter().fold(1.0_f64, |a, &b| a.max(b));
        let mut n = [0.0_f64, 0.0];
        for f in &self.gamma1_faces {
            match f {
                Face::Left if x.abs() <= tol => n[0] -= 1.0,
                Face::Right if (x - self.extent[0]).abs() <= tol => n[0] += 1.0,
                Face::Bottom if y.abs() <= tol => n[1] -= 1.0,
                Face::Top if self.dimension == 2 && (y - self.extent[1]).abs() <= tol => n[1] += 1.0,
                _ => {}
            }
        }
        let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
        if len > 0.0 {
            [n[0] / len, n[1] / len]
        } else {
            n
        }
    }
}

/// Builds the uniform mesh described by `spec`.
pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh, GeometryError> {
    if let Some(e) = spec.validate().into_iter().next() {
        return Err(e);
    }
    let mut faces = spec.gamma1_faces.clone();
    faces.sort();
    faces.dedup();
    match spec.dimension {
        1 => Ok(build_interval(spec.extent[0], spec.resolution[0], faces)),
        _ => Ok(build_rectangle(spec, faces)),
    }
}

fn build_interval(length: f64, n: usize, faces: Vec<Face>) -> Mesh {
    let h = length / n as f64;
    let coords: Vec<[f64; 2]> = (0..=n).map(|i| [i as f64 * h, 0.0]).collect();
    let elements = (0..n).map(|i| vec![i, i + 1]).collect();
    let end_node = |f: &Face| if *f == Face::Left { 0 } else { n };
    let mut pinned = vec![false; n + 1];
    for f in Face::all(1) {
        if !faces.contains(f) {
            pinned[end_node(f)] = true;
        }
    }
    let mut gamma1: Vec<usize> = faces.iter().map(end_node).collect();
    gamma1.sort_unstable();
    let gamma1_weights = vec![1.0; gamma1.len()];
    finish(1, vec![length], vec![n], coords, elements, pinned, gamma1, gamma1_weights, faces)
}

fn build_rectangle(spec: &DomainSpec, faces: Vec<Face>) -> Mesh {
    let (lx, ly) = (spec.extent[0], spec.extent[1]);
    let (nx, ny) = (spec.resolution[0], spec.resolution[1]);
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let id = |i: usize, j: usize| j * (nx + 1) + i;

    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push([i as f64 * hx, j as f64 * hy]);
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            elements.push(vec![a, b, c]);
            elements.push(vec![a, c, d]);
        }
    }

    // Node lists of each side, ordered along the side.
    let side = |f: Face| -> Vec<usize> {
        match f {
            Face::Left => (0..=ny).map(|j| id(0, j)).collect(),
            Face::Right => (0..=ny).map(|j| id(nx, j)).collect(),
            Face::Bottom => (0..=nx).map(|i| id(i, 0)).collect(),
            Face::Top => (0..=nx).map(|i| id(i, ny)).collect(),
        }
    };
    let side_spacing = |f: Face| if matches!(f, Face::Left | Face::Right) { hy } else { hx };

    let mut pinned = vec![false; coords.len()];
    for &f in Face::all(2) {
        if !faces.contains(&f) {
            for node in side(f) {
                pinned[node] = true;
            }
        }
    }

    let mut weight = vec![0.0; coords.len()];
    let mut on_gamma1 = vec![false; coords.len()];
    for &f in &faces {
        let nodes = side(f);
        let hs = side_spacing(f);
        for pair in nodes.windows(2) {
            let (p, q) = (pair[0], pair[1]);
            match (pinned[p], pinned[q]) {
                (false, false) => {
                    weight[p] += 0.5 * hs;
                    weight[q] += 0.5 * hs;
                }
                (true, false) => weight[q] += hs,
                (false, true) => weight[p] += hs,
                (true, true) => unreachable!("resolution >= 2 leaves a free node on every side"),
            }
        }
        for node in nodes {
            if !pinned[node] {
                on_gamma1[node] = true;
            }
        }
    }
    let gamma1: Vec<usize> = (0..coords.len()).filter(|&i| on_gamma1[i]).collect();
    let gamma1_weights = gamma1.iter().map(|&i| weight[i]).collect();
    finish(2, vec![lx, ly], vec![nx, ny], coords, elements, pinned, gamma1, gamma1_weights, faces)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    dimension: usize,
    extent: Vec<f64>,
    resolution: Vec<usize>,
    coords: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    pinned: Vec<bool>,
    gamma1: Vec<usize>,
    gamma1_weights: Vec<f64>,
    gamma1_faces: Vec<Face>,
) -> Mesh {
    let free = (0..coords.len()).filter(|&i| !pinned[i]).collect();
    let dirichlet = (0..coords.len()).filter(|&i| pinned[i]).collect();
    Mesh {
        dimension,
        extent,
        resolution,
        coords,
        elements,
        pinned,
        free,
        dirichlet,
        gamma1,
        gamma1_weights,
        gamma1_faces,
    }
}
