//! Discrete skeletal density (affinity) and its gradient.
//!
//! For a query point `p` with signed distance `xi`, every face (or sub-face)
//! with midpoint `q` contributes `phi(xi + i*eta) * cos(theta) * dA`, where
//! `eta = |p - q|` and `cos(theta) = v . n` with gaze `v = (p - q) / eta`.
//! Faces seen under a large solid angle are split 4-ways at edge midpoints.

use rayon::prelude::*;

use crate::distance::Solid;
use crate::error::{Error, Result};
use crate::geometry::{Complex, Vec3};
use crate::grid::{AffinityGrid, GridLayout};
use crate::kernel::{phi_unchecked, phi_with_partials, KernelParams};

/// Which faces enter the sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Only the `epsilon` nearest-neighbour shell, `eta <= (1 + epsilon)|xi|`.
    #[default]
    Shell,
    /// Every face of the mesh.
    None,
}

/// Value and complex gradient of the affinity at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinitySample {
    pub xi: f64,
    /// Extended gradient of the signed distance used for the chain rule.
    pub distance_gradient: Vec3,
    pub value: Complex,
    pub gradient: [Complex; 3],
}

/// Per-thread buffers reused across queries.
#[derive(Default)]
pub(crate) struct Scratch {
    faces: Vec<u32>,
    winding: Vec<(Vec3, f64)>,
}

/// Truncated affinity at `p`. Fails on the boundary (`xi = 0`).
pub fn affinity_at(p: &Vec3, solid: &Solid, params: &KernelParams) -> Result<Complex> {
    affinity_with(p, solid, params, Truncation::Shell)
}

pub fn affinity_with(
    p: &Vec3,
    solid: &Solid,
    params: &KernelParams,
    truncation: Truncation,
) -> Result<Complex> {
    let mut s = Scratch::default();
    let xi = signed(p, solid, &mut s, solid.boundary_tolerance())?;
    Ok(accumulate(p, xi, None, solid, params, truncation, &mut s).value)
}

/// Gradient of the truncated affinity: one complex number per axis.
pub fn affinity_gradient_at(
    p: &Vec3,
    solid: &Solid,
    params: &KernelParams,
) -> Result<[Complex; 3]> {
    Ok(affinity_sample(p, solid, params, Truncation::Shell)?.gradient)
}

pub fn affinity_sample(
    p: &Vec3,
    solid: &Solid,
    params: &KernelParams,
    truncation: Truncation,
) -> Result<AffinitySample> {
    let mut s = Scratch::default();
    sample_with(
        p,
        solid,
        params,
        truncation,
        solid.boundary_tolerance(),
        &mut s,
    )
}

fn signed(p: &Vec3, solid: &Solid, s: &mut Scratch, band: f64) -> Result<f64> {
    let d = solid.signed_distance_with(p, &mut s.winding);
    if d.xi.abs() < band || d.xi == 0.0 {
        return Err(Error::BoundaryBand {
            distance: d.xi.abs(),
            band,
        });
    }
    Ok(d.xi)
}

pub(crate) fn sample_with(
    p: &Vec3,
    solid: &Solid,
    params: &KernelParams,
    truncation: Truncation,
    band: f64,
    s: &mut Scratch,
) -> Result<AffinitySample> {
    let d = solid.signed_distance_with(p, &mut s.winding);
    if d.xi.abs() < band || d.xi == 0.0 {
        return Err(Error::BoundaryBand {
            distance: d.xi.abs(),
            band,
        });
    }
    let grad_xi = solid.extended_gradient_from(p, &d, &mut s.faces);
    Ok(accumulate(
        p,
        d.xi,
        Some(grad_xi),
        solid,
        params,
        truncation,
        s,
    ))
}

struct Sum {
    value: Complex,
    grad: [Complex; 3],
}

struct Query<'a> {
    p: Vec3,
    xi: f64,
    abs_xi: f64,
    grad_xi: Option<Vec3>,
    shell: f64,
    params: &'a KernelParams,
}

fn accumulate(
    p: &Vec3,
    xi: f64,
    grad_xi: Option<Vec3>,
    solid: &Solid,
    params: &KernelParams,
    truncation: Truncation,
    s: &mut Scratch,
) -> AffinitySample {
    let mesh = solid.mesh();
    let shell = match truncation {
        Truncation::Shell => (1.0 + params.epsilon) * xi.abs(),
        Truncation::None => f64::INFINITY,
    };
    let q = Query {
        p: *p,
        xi,
        abs_xi: xi.abs(),
        grad_xi,
        shell,
        params,
    };
    let mut sum = Sum {
        value: Complex::new(0.0, 0.0),
        grad: [Complex::new(0.0, 0.0); 3],
    };
    match truncation {
        Truncation::Shell => {
            solid.bvh().faces_near(p, shell, &mut s.faces);
            for &f in &s.faces {
                let f = f as usize;
                piece(
                    &q,
                    mesh.triangle(f),
                    &mesh.normal(f),
                    mesh.area(f),
                    0,
                    &mut sum,
                );
            }
        }
        Truncation::None => {
            for f in 0..mesh.face_count() {
                piece(
                    &q,
                    mesh.triangle(f),
                    &mesh.normal(f),
                    mesh.area(f),
                    0,
                    &mut sum,
                );
            }
        }
    }
    AffinitySample {
        xi,
        distance_gradient: grad_xi.unwrap_or_else(Vec3::zeros),
        value: sum.value,
        gradient: sum.grad,
    }
}

fn piece(q: &Query, tri: [Vec3; 3], n: &Vec3, area: f64, depth: u32, sum: &mut Sum) {
    let [a, b, c] = tri;
    let mid = (a + b + c) / 3.0;
    let offset = q.p - mid;
    let eta = offset.norm();
    if q.shell.is_finite() {
        let reach = (a - mid).norm().max((b - mid).norm()).max((c - mid).norm());
        if eta - reach > q.shell {
            return;
        }
    }
    let v = offset / eta;
    let cos = v.dot(n);
    let params = q.params;
    if depth < params.subdivision_max_depth
        && cos.abs() * area > params.subdivision_kappa * eta * eta
    {
        let ab = (a + b) * 0.5;
        let bc = (b + c) * 0.5;
        let ca = (c + a) * 0.5;
        let quarter = 0.25 * area;
        piece(q, [a, ab, ca], n, quarter, depth + 1, sum);
        piece(q, [ab, b, bc], n, quarter, depth + 1, sum);
        piece(q, [ca, bc, c], n, quarter, depth + 1, sum);
        piece(q, [ab, bc, ca], n, quarter, depth + 1, sum);
        return;
    }
    if eta > q.shell {
        return;
    }
    let eta_k = eta.max(q.abs_xi);
    match q.grad_xi {
        None => {
            sum.value += phi_unchecked(q.xi, eta_k, params) * (cos * area);
        }
        Some(gx) => {
            let (phi, d_xi, d_eta) = phi_with_partials(q.xi, eta_k, params);
            sum.value += phi * (cos * area);
            // cos(theta) depends on p through the gaze direction
            let dcos = (n - v * cos) / eta;
            let w = cos * area;
            for k in 0..3 {
                sum.grad[k] += (d_xi * gx[k] + d_eta * v[k]) * w + phi * (area * dcos[k]);
            }
        }
    }
}

/// Samples the affinity and its gradient on a uniform grid around `solid`.
///
/// The jump across the surface is spread over one cell on either side (see
/// the book chapter on fields), so the stored field is smooth enough for
/// cubic interpolation. Nodes closer to the surface than `spacing / 4` are
/// flagged. A node where neither side can be evaluated takes the value and
/// gradient of the nearest node that could.
pub fn build_affinity_grid(
    solid: &Solid,
    params: &KernelParams,
    spacing: f64,
) -> Result<AffinityGrid> {
    params.validate()?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    let layout = GridLayout::around(&solid.mesh().bounds(), spacing);
    let [nx, ny, nz] = layout.dims;
    if (nx as u64) * (ny as u64) * (nz as u64) > 1 << 28 {
        return Err(Error::InvalidParameter(format!(
            "grid of {nx}x{ny}x{nz} nodes is too large; increase the spacing"
        )));
    }
    let band = spacing / 4.0;
    let reach = field_reach(&solid.mesh().bounds(), spacing);
    let slab = nx * ny;
    let per_slab: Vec<Vec<Option<(Complex, [Complex; 3])>>> = (0..nz)
        .into_par_iter()
        .map_init(Scratch::default, |s, k| {
            let mut out = Vec::with_capacity(slab);
            for j in 0..ny {
                for i in 0..nx {
                    let p = layout.node_position(i, j, k);
                    out.push(regularized(&p, solid, params, spacing, reach, s));
                }
            }
            out
        })
        .collect();
    let nodes: Vec<Option<(Complex, [Complex; 3])>> = per_slab.into_iter().flatten().collect();
    let flagged: Vec<bool> = (0..nodes.len())
        .map(|n| {
            let (i, j, k) = (n % nx, (n / nx) % ny, n / slab);
            nodes[n].is_none()
                || solid
                    .unsigned_distance(&layout.node_position(i, j, k))
                    .distance
                    < band
        })
        .collect();
    let filled = fill_flagged(&layout.dims, nodes);
    let (values, gradients) = filled.into_iter().unzip();
    AffinityGrid::from_parts(
        layout,
        values,
        gradients,
        flagged,
        *params,
        solid.mesh().content_hash(),
    )
}

/// Exterior distance beyond which the stored field is zero: one cell short
/// of the grid margin, so the outer node layers are empty.
pub fn field_reach(bounds: &crate::geometry::Aabb, spacing: f64) -> f64 {
    (0.25 * bounds.diagonal() - spacing).max(0.0)
}

/// Node value with the surface jump spread over `|xi| < spacing`.
///
/// Inside the transition both one-sided fields are extended to the node by
/// a first-order expansion from a point a quarter cell off the surface, then
/// blended with a quintic step in `xi`. Returns `None` where no side can be
/// evaluated; such nodes are filled from their neighbours.
fn regularized(
    p: &Vec3,
    solid: &Solid,
    params: &KernelParams,
    spacing: f64,
    reach: f64,
    s: &mut Scratch,
) -> Option<(Complex, [Complex; 3])> {
    let d = solid.signed_distance_with(p, &mut s.winding);
    let width = spacing;
    if d.xi.abs() >= width {
        let gx = solid.extended_gradient_from(p, &d, &mut s.faces);
        return Some(fade(
            &accumulate(p, d.xi, Some(gx), solid, params, Truncation::Shell, s),
            reach,
        ));
    }
    let normal = solid.extended_gradient_from(p, &d, &mut s.faces);
    let len = normal.norm();
    if len < 0.5 {
        return None;
    }
    let normal = normal / len;
    let offset = 0.25 * spacing;
    let mut side = |sign: f64| -> Option<(Complex, [Complex; 3])> {
        if d.xi * sign >= offset {
            let gx = solid.extended_gradient_from(p, &d, &mut s.faces);
            let a = accumulate(p, d.xi, Some(gx), solid, params, Truncation::Shell, s);
            return Some((a.value, a.gradient));
        }
        let r = p + normal * (sign * offset - d.xi);
        let a = sample_with(
            &r,
            solid,
            params,
            Truncation::Shell,
            solid.boundary_tolerance(),
            s,
        )
        .ok()?;
        if a.xi * sign <= 0.0 {
            return None;
        }
        let step = p - r;
        let value =
            a.value + a.gradient[0] * step.x + a.gradient[1] * step.y + a.gradient[2] * step.z;
        Some((value, a.gradient))
    };
    let inner = side(-1.0)?;
    let outer = side(1.0)?;
    let u = 0.5 * (d.xi / width + 1.0);
    let w = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let dw = 30.0 * u * u * (1.0 - u) * (1.0 - u) / (2.0 * width);
    let jump = outer.0 - inner.0;
    let value = inner.0 * (1.0 - w) + outer.0 * w;
    let grad = [0, 1, 2].map(|k| inner.1[k] * (1.0 - w) + outer.1[k] * w + jump * (dw * normal[k]));
    Some((value, grad))
}

/// Applies the exterior distance cutoff: full weight up to half the reach,
/// smoothstep down to zero at the reach.
fn fade(a: &AffinitySample, reach: f64) -> (Complex, [Complex; 3]) {
    let start = 0.5 * reach;
    if a.xi <= start {
        return (a.value, a.gradient);
    }
    if a.xi >= reach {
        return (Complex::new(0.0, 0.0), [Complex::new(0.0, 0.0); 3]);
    }
    let u = (reach - a.xi) / (reach - start);
    let w = u * u * (3.0 - 2.0 * u);
    let dw = -6.0 * u * (1.0 - u) / (reach - start);
    let g = [0, 1, 2].map(|k| a.gradient[k] * w + a.value * (dw * a.distance_gradient[k]));
    (a.value * w, g)
}

/// Breadth-first copy from unflagged nodes into flagged ones.
fn fill_flagged(
    dims: &[usize; 3],
    nodes: Vec<Option<(Complex, [Complex; 3])>>,
) -> Vec<(Complex, [Complex; 3])> {
    let [nx, ny, nz] = *dims;
    let zero = (Complex::new(0.0, 0.0), [Complex::new(0.0, 0.0); 3]);
    let mut source: Vec<Option<usize>> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| n.map(|_| i))
        .collect();
    let mut queue: std::collections::VecDeque<usize> =
        (0..nodes.len()).filter(|&i| nodes[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let mut visit = |j: usize| {
            if source[j].is_none() {
                source[j] = source[i];
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < nx {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - nx);
        }
        if y + 1 < ny {
            visit(i + nx);
        }
        if z > 0 {
            visit(i - nx * ny);
        }
        if z + 1 < nz {
            visit(i + nx * ny);
        }
    }
    source
        .iter()
        .map(|s| s.and_then(|j| nodes[j]).unwrap_or(zero))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_mesh, unit_cube, RigidTransform};
    use approx::assert_relative_eq;

    fn cube() -> Solid {
        Solid::new(unit_cube()).unwrap()
    }

    #[test]
    fn sign_pattern_inside_and_outside() {
        let s = cube();
        let p = KernelParams::default();
        let inside = affinity_at(&Vec3::new(0.1, 0.05, 0.0), &s, &p).unwrap();
        let outside = affinity_at(&Vec3::new(0.8, 0.05, 0.0), &s, &p).unwrap();
        assert!(inside.im > 0.0, "{inside}");
        assert!(outside.im < 0.0, "{outside}");
    }

    #[test]
    fn boundary_query_is_rejected() {
        let s = cube();
        let err = affinity_at(&Vec3::new(0.5, 0.0, 0.1), &s, &KernelParams::default()).unwrap_err();
        assert!(matches!(err, Error::BoundaryBand { .. }));
    }

    #[test]
    fn lambda_scaling_is_exact() {
        let s = cube();
        let p = KernelParams::default();
        let q = Vec3::new(0.3, -0.1, 0.2);
        let a = affinity_at(&q, &s, &p).unwrap();
        let b = affinity_at(&q, &s, &p.scaled_weights(2.0)).unwrap();
        assert_eq!(b, a * 2.0);
    }

    #[test]
    fn gradient_is_rotation_covariant() {
        let mesh = box_mesh(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.5, 0.7, 0.9));
        let t = RigidTransform::from_rotation_vector(
            &Vec3::new(0.3, -0.5, 0.2),
            Vec3::new(1.0, 2.0, -0.5),
        );
        let a = Solid::new(mesh.clone()).unwrap();
        let b = Solid::new(mesh.transformed(&t)).unwrap();
        let params = KernelParams::default();
        let p = Vec3::new(0.25, 0.3, -0.2);
        let ga = affinity_gradient_at(&p, &a, &params).unwrap();
        let gb = affinity_gradient_at(&t.apply(&p), &b, &params).unwrap();
        let r = t.rotation();
        for k in 0..3 {
            let rotated = (0..3).fold(Complex::new(0.0, 0.0), |acc, m| acc + ga[m] * r[(k, m)]);
            assert_relative_eq!(
                (rotated - gb[k]).norm(),
                0.0,
                epsilon = 1e-6 * ga.iter().map(|c| c.norm()).sum::<f64>()
            );
        }
    }
}
