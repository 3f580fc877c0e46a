//! Exact signed distance to a closed triangle mesh.
//!
//! The sign comes from the generalized winding number (sum of signed solid
//! angles subtended by the faces), which stays robust where ray parity would
//! have to deal with rays grazing edges and vertices.

use std::f64::consts::PI;

use crate::bvh::{closest_point_on_triangle, Bvh, Nearest};
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

/// Signed distance and the surface point that realises it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceResult {
    /// Negative inside, zero on the boundary band, positive outside.
    pub xi: f64,
    pub nearest_point: Vec3,
    pub nearest_face: usize,
}

/// Point membership: interior, boundary or exterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Membership {
    Interior,
    Boundary,
    Exterior,
}

impl Membership {
    /// `-1`, `0` or `+1`.
    pub fn sign(self) -> f64 {
        match self {
            Membership::Interior => -1.0,
            Membership::Boundary => 0.0,
            Membership::Exterior => 1.0,
        }
    }
}

/// A validated closed mesh with its acceleration structure.
#[derive(Clone, Debug)]
pub struct Solid {
    mesh: TriMesh,
    bvh: Bvh,
    boundary_tolerance: f64,
}

impl Solid {
    /// Fails for an empty mesh or any mesh that is not closed and consistently oriented.
    pub fn new(mesh: TriMesh) -> Result<Self> {
        if mesh.face_count() == 0 {
            return Err(Error::EmptyMesh);
        }
        mesh.validate().into_result()?;
        let bvh = Bvh::build(&mesh);
        let boundary_tolerance = 1e-9 * mesh.bounds().diagonal();
        Ok(Solid {
            mesh,
            bvh,
            boundary_tolerance,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub(crate) fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// Width of the band around the surface treated as "on the boundary".
    pub fn boundary_tolerance(&self) -> f64 {
        self.boundary_tolerance
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> Nearest {
        self.bvh.nearest(&self.mesh, p).expect("solid has faces")
    }

    /// Generalized winding number: 1 inside, 0 outside.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut scratch = Vec::new();
        self.winding_number_with(p, &mut scratch)
    }

    pub(crate) fn winding_number_with(&self, p: &Vec3, scratch: &mut Vec<(Vec3, f64)>) -> f64 {
        scratch.clear();
        scratch.extend(self.mesh.vertices().iter().map(|v| {
            let d = v - p;
            let n = d.norm();
            (d, n)
        }));
        let mut total = 0.0;
        for f in self.mesh.faces() {
            let (a, la) = scratch[f[0] as usize];
            let (b, lb) = scratch[f[1] as usize];
            let (c, lc) = scratch[f[2] as usize];
            let det = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * det.atan2(den);
        }
        total / (4.0 * PI)
    }

    pub fn winding_pmc(&self, p: &Vec3) -> Membership {
        let near = self.unsigned_distance(p);
        self.classify(p, near.distance, &mut Vec::new())
    }

    fn classify(&self, p: &Vec3, distance: f64, scratch: &mut Vec<(Vec3, f64)>) -> Membership {
        if distance < self.boundary_tolerance {
            Membership::Boundary
        } else if self.winding_number_with(p, scratch) > 0.5 {
            Membership::Interior
        } else {
            Membership::Exterior
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> DistanceResult {
        self.signed_distance_with(p, &mut Vec::new())
    }

    pub(crate) fn signed_distance_with(
        &self,
        p: &Vec3,
        scratch: &mut Vec<(Vec3, f64)>,
    ) -> DistanceResult {
        let near = self.unsigned_distance(p);
        let m = self.classify(p, near.distance, scratch);
        DistanceResult {
            xi: m.sign() * near.distance,
            nearest_point: near.point,
            nearest_face: near.face,
        }
    }

    /// Unit gradient of the signed distance.
    ///
    /// At medial points the lowest-index nearest face decides; on the boundary
    /// band the outward normal of that face is returned.
    pub fn distance_gradient(&self, p: &Vec3) -> Vec3 {
        let d = self.signed_distance(p);
        gradient_from(p, &d, &self.mesh)
    }

    /// Mean of the signed unit directions to every distinct nearest point.
    ///
    /// Equals [`Solid::distance_gradient`] off the medial set. On it, the
    /// directions to all tied nearest points are averaged, so a point on the
    /// axis of a symmetric part gets no transversal component.
    pub fn extended_distance_gradient(&self, p: &Vec3) -> Vec3 {
        let d = self.signed_distance(p);
        self.extended_gradient_from(p, &d, &mut Vec::new())
    }

    pub(crate) fn extended_gradient_from(
        &self,
        p: &Vec3,
        d: &DistanceResult,
        faces: &mut Vec<u32>,
    ) -> Vec3 {
        if d.xi == 0.0 {
            return self.mesh.normal(d.nearest_face);
        }
        let tie = self.boundary_tolerance;
        let reach = d.xi.abs() + tie;
        self.bvh.faces_near(p, reach, faces);
        let mut points: Vec<Vec3> = Vec::new();
        for &f in faces.iter() {
            let q = closest_point_on_triangle(p, &self.mesh.triangle(f as usize));
            if (p - q).norm() <= reach && points.iter().all(|r| (r - q).norm() > tie) {
                points.push(q);
            }
        }
        if points.len() <= 1 {
            return gradient_from(p, d, &self.mesh);
        }
        let sum = points
            .iter()
            .fold(Vec3::zeros(), |acc, q| acc + (p - q).normalize());
        sum * (d.xi.signum() / points.len() as f64)
    }
}

pub(crate) fn gradient_from(p: &Vec3, d: &DistanceResult, mesh: &TriMesh) -> Vec3 {
    let offset = p - d.nearest_point;
    let len = offset.norm();
    if d.xi == 0.0 || len == 0.0 {
        mesh.normal(d.nearest_face)
    } else {
        offset * (d.xi.signum() / len)
    }
}
