//! Points, rigid motions and triangle meshes.
//!
//! Everything here is immutable after construction. Rotations are stored as
//! 3x3 matrices; axis-angle is accepted at the API edges and converted once.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A point or direction in scene units.
pub type Vec3 = Vector3<f64>;

/// Complex scalar used for density values and their gradients.
pub type Complex = num_complex::Complex64;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    /// Bounding box of this box after a rigid motion.
    pub fn transformed(&self, t: &RigidTransform) -> Aabb {
        let mut out = Aabb::empty();
        for corner in 0..8 {
            let p = Vec3::new(
                if corner & 1 == 0 {
                    self.min.x
                } else {
                    self.max.x
                },
                if corner & 2 == 0 {
                    self.min.y
                } else {
                    self.max.y
                },
                if corner & 4 == 0 {
                    self.min.z
                } else {
                    self.max.z
                },
            );
            out.grow(&t.apply(&p));
        }
        out
    }
}

/// Unit rotation axis and an angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// Normalizes `axis`; fails for a zero or non-finite axis.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "axis-angle needs a finite non-zero axis and finite angle, got {axis:?}, {angle}"
            )));
        }
        Ok(AxisAngle {
            axis: axis / n,
            angle,
        })
    }

    pub fn x(angle: f64) -> Self {
        AxisAngle {
            axis: Vec3::x(),
            angle,
        }
    }

    pub fn y(angle: f64) -> Self {
        AxisAngle {
            axis: Vec3::y(),
            angle,
        }
    }

    pub fn z(angle: f64) -> Self {
        AxisAngle {
            axis: Vec3::z(),
            angle,
        }
    }

    /// Builds from a rotation vector (axis scaled by angle). A zero vector is the identity.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle == 0.0 {
            AxisAngle {
                axis: Vec3::z(),
                angle: 0.0,
            }
        } else {
            AxisAngle {
                axis: v / angle,
                angle,
            }
        }
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn rotation_vector(&self) -> Vec3 {
        self.axis * self.angle
    }
}

/// A proper rigid motion `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Fails unless `rotation` is orthonormal with determinant +1 (1e-9 per entry).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let defect = rotation.transpose() * rotation - Matrix3::identity();
        if defect.amax() > 1e-9
            || (rotation.determinant() - 1.0).abs() > 1e-9
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "rotation must be orthonormal with determinant +1".into(),
            ));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about an axis through the origin.
    pub fn exp_rotation(a: AxisAngle) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(a.axis), a.angle);
        RigidTransform {
            rotation: *rot.matrix(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation given as a rotation vector, followed by a translation.
    pub fn from_rotation_vector(rotation: &Vec3, translation: Vec3) -> Self {
        let mut t = Self::exp_rotation(AxisAngle::from_rotation_vector(rotation));
        t.translation = translation;
        t
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Rotation vector (axis times angle, angle in [0, pi]).
    pub fn rotation_vector(&self) -> Vec3 {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        rot.scaled_axis()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `R^T (p - t)`.
    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Largest absolute entry difference in rotation and translation.
    pub fn max_difference(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

/// Oriented triangle mesh with cached per-face normal, area and midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    centroids: Vec<Vec3>,
    bounds: Aabb,
}

impl TriMesh {
    /// Builds the per-face cache. Only index range is checked here; call
    /// [`TriMesh::validate`] for the solid-model rules.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx as usize >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: idx,
                        len: vertices.len(),
                    });
                }
            }
        }
        let mut normals = Vec::with_capacity(faces.len());
        let mut areas = Vec::with_capacity(faces.len());
        let mut centroids = Vec::with_capacity(faces.len());
        for f in &faces {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let len = cross.norm();
            normals.push(if len > 0.0 {
                cross / len
            } else {
                Vec3::zeros()
            });
            areas.push(0.5 * len);
            centroids.push((a + b + c) / 3.0);
        }
        let bounds = Aabb::from_points(&vertices);
        Ok(TriMesh {
            vertices,
            faces,
            normals,
            areas,
            centroids,
            bounds,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i as usize])
    }

    pub fn normal(&self, face: usize) -> Vec3 {
        self.normals[face]
    }

    pub fn area(&self, face: usize) -> f64 {
        self.areas[face]
    }

    pub fn centroid(&self, face: usize) -> Vec3 {
        self.centroids[face]
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Enclosed volume by the divergence theorem (positive for outward orientation).
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        let vertices = self.vertices.iter().map(|v| t.apply(v)).collect();
        TriMesh::new(vertices, self.faces.clone()).expect("indices unchanged")
    }

    /// SHA-256 over vertex coordinates and face indices, little-endian.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        h.update((self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            for i in f {
                h.update(i.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Checks the closed, oriented, non-degenerate solid rules.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.faces.is_empty() {
            violations.push(Violation::Empty);
            return ValidationReport { violations };
        }
        let diag = self.bounds.diagonal();
        let min_area = 1e-12 * diag * diag;
        for (fi, &area) in self.areas.iter().enumerate() {
            if !(area > min_area) {
                violations.push(Violation::DegenerateFace { face: fi, area });
            } else if (self.normals[fi].norm() - 1.0).abs() >= 1e-9 {
                violations.push(Violation::NonUnitNormal { face: fi });
            }
        }

        // undirected edge -> (count, net direction)
        let mut edges: HashMap<(u32, u32), (u32, i32)> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = edges.entry(key).or_insert((0, 0));
                e.0 += 1;
                e.1 += if a < b { 1 } else { -1 };
            }
        }
        let mut keys: Vec<_> = edges.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let (count, net) = edges[&key];
            let edge = [key.0, key.1];
            match count {
                1 => violations.push(Violation::BoundaryEdge { edge }),
                2 if net != 0 => violations.push(Violation::OrientationConflict { edge }),
                2 => {}
                _ => violations.push(Violation::NonManifoldEdge { edge, faces: count }),
            }
        }
        ValidationReport { violations }
    }
}

/// One broken mesh rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    DegenerateFace { face: usize, area: f64 },
    NonUnitNormal { face: usize },
    BoundaryEdge { edge: [u32; 2] },
    OrientationConflict { edge: [u32; 2] },
    NonManifoldEdge { edge: [u32; 2], faces: u32 },
}

/// Result of [`TriMesh::validate`]; the mesh is accepted iff there are no violations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn boundary_edges(&self) -> usize {
        self.count(|v| matches!(v, Violation::BoundaryEdge { .. }))
    }

    pub fn orientation_conflicts(&self) -> usize {
        self.count(|v| matches!(v, Violation::OrientationConflict { .. }))
    }

    pub fn degenerate_faces(&self) -> usize {
        self.count(|v| matches!(v, Violation::DegenerateFace { .. }))
    }

    fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_accepted() {
            Ok(())
        } else {
            Err(Error::InvalidMesh(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_accepted() {
            return write!(f, "ok");
        }
        let mut parts = Vec::new();
        if self.violations.contains(&Violation::Empty) {
            parts.push("empty mesh".to_string());
        }
        let deg = self.degenerate_faces();
        if deg > 0 {
            parts.push(format!("{deg} degenerate faces"));
        }
        let b = self.boundary_edges();
        if b > 0 {
            parts.push(format!("{b} boundary edges"));
        }
        let o = self.orientation_conflicts();
        if o > 0 {
            parts.push(format!("{o} edges with inconsistent orientation"));
        }
        let nm = self.count(|v| matches!(v, Violation::NonManifoldEdge { .. }));
        if nm > 0 {
            parts.push(format!("{nm} non-manifold edges"));
        }
        let nn = self.count(|v| matches!(v, Violation::NonUnitNormal { .. }));
        if nn > 0 {
            parts.push(format!("{nn} faces with non-unit normals"));
        }
        write!(f, "{}", parts.join(", "))
    }
}

/// Axis-aligned box `[-h, h]` centred at `center`, outward-oriented, 12 faces.
pub fn box_mesh(center: Vec3, half: Vec3) -> TriMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push(
            center
                + Vec3::new(
                    if i & 1 == 0 { -half.x } else { half.x },
                    if i & 2 == 0 { -half.y } else { half.y },
                    if i & 4 == 0 { -half.z } else { half.z },
                ),
        );
    }
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // z-
        [4, 5, 7],
        [4, 7, 6], // z+
        [0, 1, 5],
        [0, 5, 4], // y-
        [2, 6, 7],
        [2, 7, 3], // y+
        [0, 4, 6],
        [0, 6, 2], // x-
        [1, 3, 7],
        [1, 7, 5], // x+
    ];
    TriMesh::new(vertices, faces).expect("static indices")
}

/// Unit cube centred at the origin.
pub fn unit_cube() -> TriMesh {
    box_mesh(Vec3::zeros(), Vec3::repeat(0.5))
}
