//! Bounding-volume hierarchy over mesh faces.
//!
//! Queries return exactly what a scan over all faces would return, including
//! the lowest-index tie-break for equidistant faces.

use crate::geometry::{Aabb, TriMesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Nearest surface point to a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub distance: f64,
    pub point: Vec3,
    pub face: usize,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.face_count();
        let boxes: Vec<Aabb> = (0..n)
            .map(|f| Aabb::from_points(&mesh.triangle(f)))
            .collect();
        let centers: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            build_node(&mut nodes, &mut order, 0, n, &boxes, &centers);
        }
        Bvh { nodes, order }
    }

    /// Closest point on the mesh; ties resolved to the lowest face index.
    pub fn nearest(&self, mesh: &TriMesh, p: &Vec3) -> Option<Nearest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = f64::INFINITY;
        let mut best: Option<(usize, Vec3)> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(p) > best_d2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        let f = f as usize;
                        let q = closest_point_on_triangle(p, &mesh.triangle(f));
                        let d2 = (p - q).norm_squared();
                        let better = match best {
                            None => true,
                            Some((bf, _)) => d2 < best_d2 || (d2 == best_d2 && f < bf),
                        };
                        if better {
                            best_d2 = d2;
                            best = Some((f, q));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(p);
                    let dr = self.nodes[right as usize].bounds.distance_squared(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.map(|(face, point)| Nearest {
            distance: best_d2.sqrt(),
            point,
            face,
        })
    }

    /// Collects every face whose bounding box lies within `radius` of `p`,
    /// in ascending face order.
    pub fn faces_near(&self, p: &Vec3, radius: f64, out: &mut Vec<u32>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(p) > r2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    out.extend_from_slice(&self.order[start as usize..(start + count) as usize]);
                }
                NodeKind::Inner { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out.sort_unstable();
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centers: &[Vec3],
) -> u32 {
    let slice = &mut order[start..end];
    let bounds = slice
        .iter()
        .fold(Aabb::empty(), |acc, &f| acc.union(&boxes[f as usize]));
    let index = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf {
            start: start as u32,
            count: (end - start) as u32,
        },
    });
    if end - start <= LEAF_SIZE {
        return index;
    }
    let cbox = Aabb::from_points(slice.iter().map(|&f| &centers[f as usize]));
    let ext = cbox.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return index;
    }
    let mid = (end - start) / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centers[a as usize][axis]
            .total_cmp(&centers[b as usize][axis])
            .then(a.cmp(&b))
    });
    let left = build_node(nodes, order, start, start + mid, boxes, centers);
    let right = build_node(nodes, order, start + mid, end, boxes, centers);
    nodes[index as usize].kind = NodeKind::Inner { left, right };
    index
}

/// Closest point on a triangle (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
