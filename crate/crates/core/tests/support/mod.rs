//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use asmfield::scenes::{example, generate_pair, PegHoleSpec};
use asmfield::{
    build_affinity_grid, AffinityGrid, Complex, GridLayout, KernelParams, Solid, TriMesh, Vec3,
};

/// One generated peg/hole pair with both fields.
pub struct Fixture {
    pub spec: PegHoleSpec,
    pub peg: TriMesh,
    pub block: TriMesh,
    /// Field of the block (part 1, fixed).
    pub fixed: AffinityGrid,
    /// Field of the peg (part 2, moving).
    pub moving: AffinityGrid,
}

impl Fixture {
    /// Both fields at the spacing that puts `nodes` nodes along the block's
    /// longest padded axis.
    pub fn example(index: usize, nodes: usize) -> Fixture {
        Self::from_spec(example(index), nodes)
    }

    pub fn from_spec(spec: PegHoleSpec, nodes: usize) -> Fixture {
        let (peg, block) = generate_pair(&spec).expect("scene generates");
        let spacing = GridLayout::spacing_for(&block.bounds(), nodes);
        let params = KernelParams::default();
        let fixed =
            build_affinity_grid(&Solid::new(block.clone()).unwrap(), &params, spacing).unwrap();
        let moving =
            build_affinity_grid(&Solid::new(peg.clone()).unwrap(), &params, spacing).unwrap();
        Fixture {
            spec,
            peg,
            block,
            fixed,
            moving,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.fixed.spacing()
    }
}

fn ray_hits_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return false;
    }
    let s = origin - tri[0];
    let u = s.dot(&p) / det;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) / det;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) / det > 0.0
}

/// Inside test by crossing parity, majority vote over three skew rays.
pub fn ray_parity_inside(mesh: &TriMesh, p: &Vec3) -> bool {
    let dirs = [
        Vec3::new(0.5773, 0.3141, 0.7536).normalize(),
        Vec3::new(-0.2718, 0.8660, -0.4142).normalize(),
        Vec3::new(0.1234, -0.5678, 0.9012).normalize(),
    ];
    let votes = dirs
        .iter()
        .filter(|d| {
            let hits = (0..mesh.face_count())
                .filter(|&f| ray_hits_triangle(p, d, &mesh.triangle(f)))
                .count();
            hits % 2 == 1
        })
        .count();
    votes >= 2
}

/// Unsigned distance by brute force over every face.
pub fn brute_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.face_count())
        .map(|f| (asmfield::bvh::closest_point_on_triangle(p, &mesh.triangle(f)) - p).norm())
        .fold(f64::INFINITY, f64::min)
}

fn kernel(xi: f64, eta: f64, params: &KernelParams) -> Complex {
    let lambda = if xi > 0.0 {
        params.lambda1
    } else {
        -params.lambda2
    };
    let x = eta / xi.abs() - 1.0;
    let s = params.sigma;
    let g = (-0.5 * (x / s).powi(2)).exp() / ((2.0 * PI).sqrt() * s);
    let zeta = Complex::new(xi, eta);
    lambda / (2.0 * PI).sqrt() * g / (zeta * zeta)
}

fn full_piece(
    p: &Vec3,
    xi: f64,
    tri: [Vec3; 3],
    n: &Vec3,
    area: f64,
    depth: u32,
    params: &KernelParams,
) -> Complex {
    let mid = (tri[0] + tri[1] + tri[2]) / 3.0;
    let eta = (p - mid).norm();
    let cos = ((p - mid) / eta).dot(n);
    if depth < params.subdivision_max_depth
        && cos.abs() * area > params.subdivision_kappa * eta * eta
    {
        let [a, b, c] = tri;
        let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
        return [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
            .into_iter()
            .map(|t| full_piece(p, xi, t, n, 0.25 * area, depth + 1, params))
            .sum();
    }
    kernel(xi, eta.max(xi.abs()), params) * (cos * area)
}

/// Untruncated affinity: every face contributes, with the same adaptive
/// midpoint rule the library uses. `xi` is supplied by the caller.
pub fn full_affinity(mesh: &TriMesh, p: &Vec3, xi: f64, params: &KernelParams) -> Complex {
    (0..mesh.face_count())
        .map(|f| {
            full_piece(
                p,
                xi,
                mesh.triangle(f),
                &mesh.normal(f),
                mesh.area(f),
                0,
                params,
            )
        })
        .sum()
}
