//! Precomputed affinity grids: layout, interpolation and the field file.
//!
//! [`AffinityGrid::sample`] is a tricubic Hermite interpolant built from the
//! stored values and gradients, so value and gradient of the interpolant are
//! consistent and continuous. It is multiplied by a smoothstep window over the
//! outermost cell layer, which takes the field to zero at the grid boundary
//! with a continuous gradient. At interior nodes it returns the stored data
//! exactly. [`AffinityGrid::sample_trilinear`] interpolates values and stored
//! gradients independently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Complex, TriMesh, Vec3};
use crate::kernel::KernelParams;

const MAGIC: &[u8; 4] = b"SDFG";
const VERSION: u32 = 1;
const MIN_DIM: usize = 4;

/// Origin, isotropic spacing and node counts of a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridLayout {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridLayout {
    /// Grid covering `bounds` inflated by a quarter of its diagonal on every
    /// side, centred on the box.
    pub fn around(bounds: &Aabb, spacing: f64) -> Self {
        let padded = bounds.inflate(0.25 * bounds.diagonal());
        let ext = padded.extent();
        let dims = [0, 1, 2].map(|a| ((ext[a] / spacing - 1e-9).ceil() as usize + 1).max(MIN_DIM));
        let span = Vec3::new(
            (dims[0] - 1) as f64 * spacing,
            (dims[1] - 1) as f64 * spacing,
            (dims[2] - 1) as f64 * spacing,
        );
        GridLayout {
            origin: padded.center() - span * 0.5,
            spacing,
            dims,
        }
    }

    /// Spacing at which [`GridLayout::around`] puts `nodes` nodes along the
    /// longest padded axis.
    pub fn spacing_for(bounds: &Aabb, nodes: usize) -> f64 {
        let padded = bounds.inflate(0.25 * bounds.diagonal());
        padded.extent().max() / (nodes.max(MIN_DIM) - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear index, x fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Box spanned by the nodes.
    pub fn bounds(&self) -> Aabb {
        let far = self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        Aabb::from_points([&self.origin, &far])
    }
}

/// Affinity values and gradients sampled on a uniform grid in a part's body frame.
#[derive(Clone)]
pub struct AffinityGrid {
    layout: GridLayout,
    values: Vec<Complex>,
    gradients: Vec<[Complex; 3]>,
    flags: Vec<bool>,
    params: KernelParams,
    mesh_hash: [u8; 32],
    hermite: Vec<[Complex; 8]>,
}

impl std::fmt::Debug for AffinityGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffinityGrid")
            .field("layout", &self.layout)
            .field("params", &self.params)
            .field("flagged", &self.flagged_count())
            .finish_non_exhaustive()
    }
}

impl PartialEq for AffinityGrid {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.values == other.values
            && self.gradients == other.gradients
            && self.flags == other.flags
            && self.params == other.params
            && self.mesh_hash == other.mesh_hash
    }
}

/// Interpolated value and complex gradient.
pub type FieldSample = (Complex, [Complex; 3]);

const ZERO: Complex = Complex::new(0.0, 0.0);

impl AffinityGrid {
    pub fn from_parts(
        layout: GridLayout,
        values: Vec<Complex>,
        gradients: Vec<[Complex; 3]>,
        flags: Vec<bool>,
        params: KernelParams,
        mesh_hash: [u8; 32],
    ) -> Result<Self> {
        let n = layout.node_count();
        if layout.dims.iter().any(|&d| d < 2) || !(layout.spacing > 0.0) {
            return Err(Error::FieldFormat(format!(
                "degenerate layout {:?}",
                layout
            )));
        }
        if values.len() != n || gradients.len() != n || flags.len() != n {
            return Err(Error::FieldFormat(format!(
                "expected {n} nodes, got {} values, {} gradients, {} flags",
                values.len(),
                gradients.len(),
                flags.len()
            )));
        }
        let finite = |c: &Complex| c.re.is_finite() && c.im.is_finite();
        if !values.iter().all(finite) || !gradients.iter().flatten().all(finite) {
            return Err(Error::FieldFormat("non-finite node data".into()));
        }
        let hermite = hermite_table(&layout, &values, &gradients);
        Ok(AffinityGrid {
            layout,
            values,
            gradients,
            flags,
            params,
            mesh_hash,
            hermite,
        })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn origin(&self) -> Vec3 {
        self.layout.origin
    }

    pub fn spacing(&self) -> f64 {
        self.layout.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.layout.dims
    }

    pub fn cell_volume(&self) -> f64 {
        self.layout.spacing.powi(3)
    }

    pub fn bounds(&self) -> Aabb {
        self.layout.bounds()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// SHA-256 of the source mesh, see [`TriMesh::content_hash`].
    pub fn mesh_hash(&self) -> &[u8; 32] {
        &self.mesh_hash
    }

    pub fn values(&self) -> &[Complex] {
        &self.values
    }

    pub fn gradients(&self) -> &[[Complex; 3]] {
        &self.gradients
    }

    /// True for nodes inside the boundary band; their data was copied from
    /// the nearest unflagged node.
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn node_value(&self, i: usize, j: usize, k: usize) -> Complex {
        self.values[self.layout.index(i, j, k)]
    }

    pub fn check_mesh(&self, mesh: &TriMesh) -> Result<()> {
        if mesh.content_hash() == self.mesh_hash {
            Ok(())
        } else {
            Err(Error::MeshHashMismatch)
        }
    }

    /// Local cell coordinates, or `None` outside the node box.
    #[inline]
    fn locate(&self, p: &Vec3) -> Option<([usize; 3], [f64; 3], [f64; 3])> {
        let h = self.layout.spacing;
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut s = [0.0; 3];
        for a in 0..3 {
            let x = (p[a] - self.layout.origin[a]) / h;
            let n = self.layout.dims[a];
            if !(x >= 0.0 && x <= (n - 1) as f64) {
                return None;
            }
            let c = (x.floor() as usize).min(n - 2);
            cell[a] = c;
            frac[a] = x - c as f64;
            s[a] = x;
        }
        Some((cell, frac, s))
    }

    /// Smoothstep window and its derivative in index units along one axis.
    #[inline]
    fn window(s: f64, n: usize) -> (f64, f64) {
        let step = |u: f64| (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u));
        let (mut w, mut dw) = (1.0, 0.0);
        if s < 1.0 {
            let (a, da) = step(s);
            w = a;
            dw = da;
        }
        let top = (n - 1) as f64 - s;
        if top < 1.0 {
            let (b, db) = step(top);
            dw = dw * b - w * db;
            w *= b;
        }
        (w, dw)
    }

    /// Hermite value and gradient; zero outside the grid.
    pub fn sample(&self, p: &Vec3) -> FieldSample {
        let Some((cell, frac, s)) = self.locate(p) else {
            return (ZERO, [ZERO; 3]);
        };
        let wx = hermite_weights(frac[0]);
        let wy = hermite_weights(frac[1]);
        let wz = hermite_weights(frac[2]);
        let [nx, ny, _] = self.layout.dims;
        let base = cell[0] + nx * (cell[1] + ny * cell[2]);
        let corners = [
            0,
            1,
            nx,
            nx + 1,
            nx * ny,
            nx * ny + 1,
            nx * ny + nx,
            nx * ny + nx + 1,
        ];

        // contract z: zv/zd[(cx,cy)][ox + 2 oy]
        let mut zv = [[ZERO; 4]; 4];
        let mut zd = [[ZERO; 4]; 4];
        for cxy in 0..4 {
            let lo = &self.hermite[base + corners[cxy]];
            let hi = &self.hermite[base + corners[cxy + 4]];
            for o in 0..4 {
                let (a0, a1, b0, b1) = (lo[o], lo[o + 4], hi[o], hi[o + 4]);
                zv[cxy][o] = a0 * wz.v[0] + a1 * wz.v[1] + b0 * wz.v[2] + b1 * wz.v[3];
                zd[cxy][o] = a0 * wz.d[0] + a1 * wz.d[1] + b0 * wz.d[2] + b1 * wz.d[3];
            }
        }
        // contract y: index [cx][ox]
        let mut yv = [[ZERO; 2]; 2];
        let mut yd = [[ZERO; 2]; 2];
        let mut yz = [[ZERO; 2]; 2];
        for cx in 0..2 {
            for ox in 0..2 {
                let terms = [(cx, ox), (cx, ox + 2), (cx + 2, ox), (cx + 2, ox + 2)];
                let mut v = ZERO;
                let mut d = ZERO;
                let mut z = ZERO;
                for (t, &(c, o)) in terms.iter().enumerate() {
                    v += zv[c][o] * wy.v[t];
                    d += zv[c][o] * wy.d[t];
                    z += zd[c][o] * wy.v[t];
                }
                yv[cx][ox] = v;
                yd[cx][ox] = d;
                yz[cx][ox] = z;
            }
        }
        let order = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let mut f = ZERO;
        let mut g = [ZERO; 3];
        for (t, &(c, o)) in order.iter().enumerate() {
            f += yv[c][o] * wx.v[t];
            g[0] += yv[c][o] * wx.d[t];
            g[1] += yd[c][o] * wx.v[t];
            g[2] += yz[c][o] * wx.v[t];
        }
        let inv_h = 1.0 / self.layout.spacing;
        let (tx, dtx) = Self::window(s[0], self.layout.dims[0]);
        let (ty, dty) = Self::window(s[1], self.layout.dims[1]);
        let (tz, dtz) = Self::window(s[2], self.layout.dims[2]);
        let w = tx * ty * tz;
        let dw = [dtx * ty * tz, tx * dty * tz, tx * ty * dtz];
        let grad = [0, 1, 2].map(|a| (g[a] * w + f * dw[a]) * inv_h);
        (f * w, grad)
    }

    /// Hermite value only.
    pub fn sample_value(&self, p: &Vec3) -> Complex {
        let Some((cell, frac, s)) = self.locate(p) else {
            return ZERO;
        };
        let wx = hermite_weights(frac[0]);
        let wy = hermite_weights(frac[1]);
        let wz = hermite_weights(frac[2]);
        let [nx, ny, _] = self.layout.dims;
        let base = cell[0] + nx * (cell[1] + ny * cell[2]);
        let corners = [
            0,
            1,
            nx,
            nx + 1,
            nx * ny,
            nx * ny + 1,
            nx * ny + nx,
            nx * ny + nx + 1,
        ];
        let mut zv = [[ZERO; 4]; 4];
        for cxy in 0..4 {
            let lo = &self.hermite[base + corners[cxy]];
            let hi = &self.hermite[base + corners[cxy + 4]];
            for o in 0..4 {
                zv[cxy][o] =
                    lo[o] * wz.v[0] + lo[o + 4] * wz.v[1] + hi[o] * wz.v[2] + hi[o + 4] * wz.v[3];
            }
        }
        let mut f = ZERO;
        for (tx, &(cx, ox)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
            let y = zv[cx][ox] * wy.v[0]
                + zv[cx][ox + 2] * wy.v[1]
                + zv[cx + 2][ox] * wy.v[2]
                + zv[cx + 2][ox + 2] * wy.v[3];
            f += y * wx.v[tx];
        }
        let w = Self::window(s[0], self.layout.dims[0]).0
            * Self::window(s[1], self.layout.dims[1]).0
            * Self::window(s[2], self.layout.dims[2]).0;
        f * w
    }

    /// Trilinear interpolation of stored values and gradients; zero outside.
    pub fn sample_trilinear(&self, p: &Vec3) -> FieldSample {
        let Some((cell, frac, _)) = self.locate(p) else {
            return (ZERO, [ZERO; 3]);
        };
        let mut v = ZERO;
        let mut g = [ZERO; 3];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = lerp_weight(frac[0], dx) * lerp_weight(frac[1], dy) * lerp_weight(frac[2], dz);
            let idx = self.layout.index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
            v += self.values[idx] * w;
            for a in 0..3 {
                g[a] += self.gradients[idx][a] * w;
            }
        }
        (v, g)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(128 + self.values.len() * 64 + self.flags.len() / 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.mesh_hash);
        for x in [
            self.params.sigma,
            self.params.lambda1,
            self.params.lambda2,
            self.params.epsilon,
        ] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for a in 0..3 {
            buf.extend_from_slice(&self.layout.origin[a].to_le_bytes());
        }
        buf.extend_from_slice(&self.layout.spacing.to_le_bytes());
        for d in self.layout.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut bits = vec![0u8; self.flags.len().div_ceil(8)];
        for (i, &f) in self.flags.iter().enumerate() {
            if f {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&bits);
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        for g in &self.gradients {
            for c in g {
                buf.extend_from_slice(&c.re.to_le_bytes());
                buf.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a field file; with `mesh` given, its content hash must match.
    pub fn read_from(mut r: impl Read, mesh: Option<&TriMesh>) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(4)? != MAGIC {
            return Err(Error::FieldFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::FieldFormat(format!("unsupported version {version}")));
        }
        let mut mesh_hash = [0u8; 32];
        mesh_hash.copy_from_slice(cur.take(32)?);
        if let Some(m) = mesh {
            if m.content_hash() != mesh_hash {
                return Err(Error::MeshHashMismatch);
            }
        }
        let (sigma, lambda1, lambda2, epsilon) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
        let params = KernelParams {
            sigma,
            lambda1,
            lambda2,
            epsilon,
            ..KernelParams::default()
        };
        params
            .validate()
            .map_err(|e| Error::FieldFormat(format!("stored kernel parameters: {e}")))?;
        let origin = Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?);
        let spacing = cur.f64()?;
        let dims = [
            cur.u32()? as usize,
            cur.u32()? as usize,
            cur.u32()? as usize,
        ];
        let layout = GridLayout {
            origin,
            spacing,
            dims,
        };
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::FieldFormat("dims too large".into()))?;
        let expected = n.div_ceil(8) + n * 64;
        if bytes.len() - cur.pos != expected {
            return Err(Error::FieldFormat(format!(
                "payload is {} bytes, expected {expected} for {n} nodes",
                bytes.len() - cur.pos
            )));
        }
        let bits = cur.take(n.div_ceil(8))?;
        let flags = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(Complex::new(cur.f64()?, cur.f64()?));
        }
        let mut gradients = Vec::with_capacity(n);
        for _ in 0..n {
            let mut g = [ZERO; 3];
            for c in &mut g {
                *c = Complex::new(cur.f64()?, cur.f64()?);
            }
            gradients.push(g);
        }
        AffinityGrid::from_parts(layout, values, gradients, flags, params, mesh_hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::path_io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, mesh: Option<&TriMesh>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::path_io(path, e))?;
        Self::read_from(bytes.as_slice(), mesh)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::FieldFormat("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[inline]
fn lerp_weight(u: f64, side: usize) -> f64 {
    if side == 0 {
        1.0 - u
    } else {
        u
    }
}

/// Cubic Hermite basis in the order (corner 0 value, corner 0 slope,
/// corner 1 value, corner 1 slope), with derivatives.
struct Weights {
    v: [f64; 4],
    d: [f64; 4],
}

#[inline]
fn hermite_weights(u: f64) -> Weights {
    let u2 = u * u;
    let u3 = u2 * u;
    Weights {
        v: [
            1.0 - 3.0 * u2 + 2.0 * u3,
            u - 2.0 * u2 + u3,
            3.0 * u2 - 2.0 * u3,
            u3 - u2,
        ],
        d: [
            6.0 * u2 - 6.0 * u,
            1.0 - 4.0 * u + 3.0 * u2,
            6.0 * u - 6.0 * u2,
            3.0 * u2 - 2.0 * u,
        ],
    }
}

/// Per-node Hermite data indexed by `ox + 2 oy + 4 oz` (derivative order per
/// axis), scaled by `spacing^(ox + oy + oz)`. Mixed derivatives come from
/// differences of the stored gradients.
fn hermite_table(
    layout: &GridLayout,
    values: &[Complex],
    gradients: &[[Complex; 3]],
) -> Vec<[Complex; 8]> {
    let [nx, ny, nz] = layout.dims;
    let h = layout.spacing;
    let n = layout.node_count();
    let stride = [1, nx, nx * ny];
    let dims = layout.dims;
    // derivative along axis `a` of a nodal quantity, in index units
    let diff = |field: &dyn Fn(usize) -> Complex, idx: usize, coord: usize, a: usize| -> Complex {
        let s = stride[a];
        if coord == 0 {
            field(idx + s) - field(idx)
        } else if coord + 1 == dims[a] {
            field(idx) - field(idx - s)
        } else {
            (field(idx + s) - field(idx - s)) * 0.5
        }
    };
    let coords = |idx: usize| [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
    let g = |a: usize| move |i: usize| gradients[i][a] * h;
    let gx = g(0);
    let gy = g(1);
    let gz = g(2);
    let mut xy = vec![ZERO; n];
    let mut xz = vec![ZERO; n];
    let mut yz = vec![ZERO; n];
    for idx in 0..n {
        let c = coords(idx);
        xy[idx] = (diff(&gx, idx, c[1], 1) + diff(&gy, idx, c[0], 0)) * 0.5;
        xz[idx] = (diff(&gx, idx, c[2], 2) + diff(&gz, idx, c[0], 0)) * 0.5;
        yz[idx] = (diff(&gy, idx, c[2], 2) + diff(&gz, idx, c[1], 1)) * 0.5;
    }
    let _ = nz;
    let fxy = |i: usize| xy[i];
    let fxz = |i: usize| xz[i];
    let fyz = |i: usize| yz[i];
    (0..n)
        .map(|idx| {
            let c = coords(idx);
            let xyz =
                (diff(&fxy, idx, c[2], 2) + diff(&fxz, idx, c[1], 1) + diff(&fyz, idx, c[0], 0))
                    / 3.0;
            [
                values[idx],
                gx(idx),
                gy(idx),
                xy[idx],
                gz(idx),
                xz[idx],
                yz[idx],
                xyz,
            ]
        })
        .collect()
}
