//! Procedural peg-in-hole pairs.
//!
//! The block occupies `[-w/2, w/2] x [-d/2, d/2] x [-h, 0]` with a blind hole
//! opening at `z = 0`. The peg is a prism whose bottom sits on the hole floor,
//! so the assembled configuration is the identity relative pose.
//!
//! Cross-sections are star-shaped about the axis and sampled at a common list
//! of angles. The peg, the hole wall and the outer rim of the block all share
//! that list, so the top face of the block is a ring strip between the rim and
//! the hole outline and both parts have matching vertex rows.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossSection {
    Circular,
    Rectangular,
    /// Disk with the quadrant `x, y > 0` replaced by a square corner.
    Combined,
}

impl FromStr for CrossSection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "circular" | "circle" => Ok(CrossSection::Circular),
            "rectangular" | "square" => Ok(CrossSection::Rectangular),
            "combined" => Ok(CrossSection::Combined),
            other => Err(Error::InvalidParameter(format!(
                "unknown cross-section {other:?}"
            ))),
        }
    }
}

impl fmt::Display for CrossSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrossSection::Circular => "circular",
            CrossSection::Rectangular => "rectangular",
            CrossSection::Combined => "combined",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PegHoleSpec {
    pub cross_section: CrossSection,
    /// Radius of circular and combined sections.
    pub peg_radius: f64,
    /// Half-widths of rectangular sections along x and y.
    pub peg_half_extents: [f64; 2],
    pub peg_length: f64,
    /// Block width, depth and height.
    pub block_size: Vec3,
    pub hole_depth: f64,
    /// Added to the peg's radius or half-widths to size the hole.
    pub clearance: f64,
    /// Target edge length.
    pub mesh_resolution: f64,
}

impl Default for PegHoleSpec {
    fn default() -> Self {
        PegHoleSpec {
            cross_section: CrossSection::Circular,
            peg_radius: 1.0,
            peg_half_extents: [1.0, 1.0],
            peg_length: 4.0,
            block_size: Vec3::new(4.0, 4.0, 4.0),
            hole_depth: 3.0,
            clearance: 0.0,
            mesh_resolution: 0.25,
        }
    }
}

/// Star-shaped outline given by its radius as a function of angle.
#[derive(Clone, Copy, Debug)]
struct Profile {
    kind: CrossSection,
    radius: f64,
    half: [f64; 2],
}

impl Profile {
    fn at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        match self.kind {
            CrossSection::Circular => self.radius,
            CrossSection::Rectangular => 1.0 / (c.abs() / self.half[0]).max(s.abs() / self.half[1]),
            CrossSection::Combined => {
                let t = theta.rem_euclid(TAU);
                if t <= FRAC_PI_2 {
                    self.radius / c.max(s)
                } else {
                    self.radius
                }
            }
        }
    }

    /// Angles at which the outline has a corner.
    fn corners(&self) -> Vec<f64> {
        match self.kind {
            CrossSection::Circular => vec![],
            CrossSection::Rectangular => {
                let a = self.half[1].atan2(self.half[0]);
                vec![a, PI - a, PI + a, TAU - a]
            }
            CrossSection::Combined => vec![0.0, FRAC_PI_4, FRAC_PI_2],
        }
    }

    fn max_radius(&self) -> f64 {
        match self.kind {
            CrossSection::Circular => self.radius,
            CrossSection::Rectangular => self.half[0].hypot(self.half[1]),
            CrossSection::Combined => self.radius * 2f64.sqrt(),
        }
    }

    fn is_curved(&self) -> bool {
        self.kind != CrossSection::Rectangular
    }

    fn point(&self, theta: f64, z: f64) -> Vec3 {
        let r = self.at(theta);
        Vec3::new(r * theta.cos(), r * theta.sin(), z)
    }
}

impl PegHoleSpec {
    fn profile(&self, grow: f64) -> Profile {
        Profile {
            kind: self.cross_section,
            radius: self.peg_radius + grow,
            half: [
                self.peg_half_extents[0] + grow,
                self.peg_half_extents[1] + grow,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let positive = [
            ("peg_radius", self.peg_radius),
            (
                "peg_half_extents",
                self.peg_half_extents[0].min(self.peg_half_extents[1]),
            ),
            ("peg_length", self.peg_length),
            ("block_size", self.block_size.min()),
            ("hole_depth", self.hole_depth),
            ("mesh_resolution", self.mesh_resolution),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.clearance >= 0.0 && self.clearance.is_finite()) {
            return bad("clearance must be non-negative".into());
        }
        if self.hole_depth > self.block_size.z {
            return bad(format!(
                "hole depth {} exceeds block height {}",
                self.hole_depth, self.block_size.z
            ));
        }
        let hole = self.profile(self.clearance);
        let rim = 0.5 * self.block_size.x.min(self.block_size.y);
        let extent = match hole.kind {
            CrossSection::Rectangular => hole.half[0].max(hole.half[1]),
            _ => hole.radius,
        };
        if extent >= rim {
            return bad(format!(
                "hole of half-width {extent} does not fit in the block"
            ));
        }
        Ok(())
    }

    /// Number of uniformly spaced outline samples.
    pub fn angular_samples(&self) -> usize {
        let r = self.profile(self.clearance).max_radius();
        let n = (TAU * r / self.mesh_resolution).ceil() as usize;
        n.div_ceil(8).max(4) * 8
    }

    /// Largest gap between a circular arc and its chords.
    pub fn sagitta(&self) -> f64 {
        let hole = self.profile(self.clearance);
        if !hole.is_curved() {
            return 0.0;
        }
        hole.radius * (1.0 - (PI / self.angular_samples() as f64).cos())
    }

    fn angles(&self) -> Vec<f64> {
        let n = self.angular_samples();
        let mut a: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
        let rim = Profile {
            kind: CrossSection::Rectangular,
            radius: 0.0,
            half: [0.5 * self.block_size.x, 0.5 * self.block_size.y],
        };
        let corners = self
            .profile(0.0)
            .corners()
            .into_iter()
            .chain(self.profile(self.clearance).corners());
        for c in corners.chain(rim.corners()) {
            let c = c.rem_euclid(TAU);
            if a.iter().all(|&x| angular_gap(x, c) > 1e-9) {
                a.push(c);
            }
        }
        a.sort_by(f64::total_cmp);
        a
    }

    fn rows(&self, height: f64) -> usize {
        ((height / self.mesh_resolution) - 1e-9).ceil().max(1.0) as usize
    }
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    fn vertex(&mut self, p: Vec3) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn ring(&mut self, profile: &Profile, angles: &[f64], z: f64) -> Vec<u32> {
        angles
            .iter()
            .map(|&t| self.vertex(profile.point(t, z)))
            .collect()
    }

    /// Side wall between rings ordered bottom to top; `outward` means the
    /// normal points away from the axis. The quad diagonal alternates by
    /// quadrant so the triangulation is mirror symmetric about both the
    /// xz and yz planes.
    fn strip(&mut self, lower: &[u32], upper: &[u32], angles: &[f64], outward: bool) {
        let n = lower.len();
        for k in 0..n {
            let (l0, l1, u0, u1) = (lower[k], lower[(k + 1) % n], upper[k], upper[(k + 1) % n]);
            let next = if k + 1 == n {
                angles[0] + TAU
            } else {
                angles[k + 1]
            };
            let quadrant = (0.5 * (angles[k] + next) / FRAC_PI_2).floor() as i64;
            let [a, b] = if quadrant % 2 == 0 {
                [[l0, l1, u1], [l0, u1, u0]]
            } else {
                [[l0, l1, u0], [l1, u1, u0]]
            };
            if outward {
                self.faces.extend([a, b]);
            } else {
                self.faces.extend([[a[0], a[2], a[1]], [b[0], b[2], b[1]]]);
            }
        }
    }

    /// Fan from `center` over a closed ring; `up` selects a +z normal.
    fn fan(&mut self, center: u32, ring: &[u32], up: bool) {
        let n = ring.len();
        for k in 0..n {
            let (a, b) = (ring[k], ring[(k + 1) % n]);
            self.faces
                .push(if up { [center, a, b] } else { [center, b, a] });
        }
    }

    fn wall(
        &mut self,
        profile: &Profile,
        angles: &[f64],
        z0: f64,
        z1: f64,
        rows: usize,
        outward: bool,
    ) -> (Vec<u32>, Vec<u32>) {
        let bottom = self.ring(profile, angles, z0);
        let mut lower = bottom.clone();
        for r in 1..=rows {
            let z = if r == rows {
                z1
            } else {
                z0 + (z1 - z0) * r as f64 / rows as f64
            };
            let upper = self.ring(profile, angles, z);
            self.strip(&lower, &upper, angles, outward);
            lower = upper;
        }
        (bottom, lower)
    }

    fn finish(self) -> Result<TriMesh> {
        TriMesh::new(self.vertices, self.faces)
    }
}

/// Peg and block meshes; the peg is seated when both sit at the identity.
pub fn generate_pair(spec: &PegHoleSpec) -> Result<(TriMesh, TriMesh)> {
    spec.validate()?;
    if spec.clearance > 0.0 && spec.sagitta() >= spec.clearance {
        return Err(Error::InvalidParameter(format!(
            "mesh resolution {} is too coarse for clearance {}: chord sagitta is {:.3e}",
            spec.mesh_resolution,
            spec.clearance,
            spec.sagitta()
        )));
    }
    let angles = spec.angles();
    let z_floor = -spec.hole_depth;

    let mut peg = Builder::new();
    let profile = spec.profile(0.0);
    let z_top = z_floor + spec.peg_length;
    let (bottom, top) = peg.wall(
        &profile,
        &angles,
        z_floor,
        z_top,
        spec.rows(spec.peg_length),
        true,
    );
    let c0 = peg.vertex(Vec3::new(0.0, 0.0, z_floor));
    peg.fan(c0, &bottom, false);
    let c1 = peg.vertex(Vec3::new(0.0, 0.0, z_top));
    peg.fan(c1, &top, true);

    let mut block = Builder::new();
    let hole = spec.profile(spec.clearance);
    let rim = Profile {
        kind: CrossSection::Rectangular,
        radius: 0.0,
        half: [0.5 * spec.block_size.x, 0.5 * spec.block_size.y],
    };
    let h = spec.block_size.z;
    let (outer_bottom, outer_top) = block.wall(&rim, &angles, -h, 0.0, spec.rows(h), true);
    let cb = block.vertex(Vec3::new(0.0, 0.0, -h));
    block.fan(cb, &outer_bottom, false);
    let (hole_floor, hole_top) = block.wall(
        &hole,
        &angles,
        z_floor,
        0.0,
        spec.rows(spec.hole_depth),
        false,
    );
    let cf = block.vertex(Vec3::new(0.0, 0.0, z_floor));
    block.fan(cf, &hole_floor, true);
    block.strip(&hole_top, &outer_top, &angles, false);

    let peg = peg.finish()?;
    let block = block.finish()?;
    peg.validate().into_result()?;
    block.validate().into_result()?;
    Ok((peg, block))
}

const KEYS: &[&str] = &[
    "cross_section",
    "peg_radius",
    "peg_half_extents",
    "peg_length",
    "block_size",
    "hole_depth",
    "clearance",
    "mesh_resolution",
];

/// Parses `key = value` lines; `#` starts a comment, vectors are
/// whitespace- or comma-separated. Unknown keys are rejected.
///
/// ```
/// let spec = asmfield::scenes::parse_spec("cross_section = combined\nclearance = 0.05\n", "inline").unwrap();
/// assert_eq!(spec.cross_section, asmfield::scenes::CrossSection::Combined);
/// assert_eq!(spec.peg_radius, 1.0);
/// ```
pub fn parse_spec(text: &str, source_name: &str) -> Result<PegHoleSpec> {
    let mut spec = PegHoleSpec::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(source_name, lineno + 1, m);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let numbers = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("{key}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(err(format!("{key} takes {n} number(s), got {}", v.len())));
            }
            Ok(v)
        };
        match key {
            "cross_section" => {
                spec.cross_section = value.parse().map_err(|e: Error| err(e.to_string()))?
            }
            "peg_radius" => spec.peg_radius = numbers(1)?[0],
            "peg_half_extents" => {
                let v = numbers(2)?;
                spec.peg_half_extents = [v[0], v[1]];
            }
            "peg_length" => spec.peg_length = numbers(1)?[0],
            "block_size" => {
                let v = numbers(3)?;
                spec.block_size = Vec3::new(v[0], v[1], v[2]);
            }
            "hole_depth" => spec.hole_depth = numbers(1)?[0],
            "clearance" => spec.clearance = numbers(1)?[0],
            "mesh_resolution" => spec.mesh_resolution = numbers(1)?[0],
            other => {
                return Err(err(format!(
                    "unknown key {other:?}; expected one of {}",
                    KEYS.join(", ")
                )));
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// The canonical circular, square and combined pairs.
pub fn example(index: usize) -> PegHoleSpec {
    let cross_section = match index {
        1 => CrossSection::Circular,
        2 => CrossSection::Rectangular,
        _ => CrossSection::Combined,
    };
    PegHoleSpec {
        cross_section,
        ..PegHoleSpec::default()
    }
}
