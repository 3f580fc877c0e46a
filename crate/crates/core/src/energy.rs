//! Shape-complementarity score, geometric energy, force and torque.
//!
//! The score of two parts at relative pose `T` (part 2 expressed in part 1's
//! frame) is the lattice sum `f = sum rho_1(x) rho_2(T^-1 x) dV` over the nodes
//! of the finer of the two grids. Energy is `E = -gamma Re f`; force and
//! torque are `gamma Re` of the score gradient.
//!
//! Gradients are taken with respect to a perturbation of `T` on the left:
//! translations along part 1's axes and rotations about part 1's origin.
//! Force and torque are therefore expressed in part 1's frame, with torque
//! measured about part 1's origin.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Complex, RigidTransform, Vec3};
use crate::grid::AffinityGrid;

/// World poses of two parts.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PosePair {
    pub t1: RigidTransform,
    pub t2: RigidTransform,
}

impl PosePair {
    pub fn new(t1: RigidTransform, t2: RigidTransform) -> Self {
        PosePair { t1, t2 }
    }

    /// Part 1 at the world origin, part 2 at `relative`.
    pub fn from_relative(relative: RigidTransform) -> Self {
        PosePair {
            t1: RigidTransform::identity(),
            t2: relative,
        }
    }

    /// `t1^-1 * t2`.
    pub fn relative(&self) -> RigidTransform {
        self.t1.inverse().compose(&self.t2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreResult {
    pub score: Complex,
    pub samples_used: usize,
    pub cell_volume: f64,
}

/// Score gradient per translation axis and per rotation axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreGradient {
    pub translational: [Complex; 3],
    pub rotational: [Complex; 3],
}

impl ScoreGradient {
    pub fn components(&self) -> [Complex; 6] {
        let [a, b, c] = self.translational;
        let [d, e, f] = self.rotational;
        [a, b, c, d, e, f]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub energy: f64,
    pub force: [f64; 3],
    pub torque: [f64; 3],
    pub gamma_sc: f64,
    pub re_score: f64,
    pub im_score: f64,
}

impl Wrench {
    pub fn zero(gamma_sc: f64) -> Self {
        Wrench {
            energy: 0.0,
            force: [0.0; 3],
            torque: [0.0; 3],
            gamma_sc,
            re_score: 0.0,
            im_score: 0.0,
        }
    }

    pub fn force(&self) -> Vec3 {
        Vec3::from(self.force)
    }

    pub fn torque(&self) -> Vec3 {
        Vec3::from(self.torque)
    }
}

/// How force and torque are differentiated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientBackend {
    Analytic,
    /// Central differences with translation step `h_t` and rotation step `h_r` (radians).
    Fdm {
        h_t: f64,
        h_r: f64,
    },
}

/// Default finite-difference steps: half the lattice spacing and 0.01 rad.
pub fn default_fdm_steps(a: &AffinityGrid, b: &AffinityGrid) -> (f64, f64) {
    (0.5 * a.spacing().min(b.spacing()), 0.01)
}

pub fn energy(score: &ScoreResult, gamma_sc: f64) -> f64 {
    // adding zero turns -0.0 into 0.0 for an empty overlap
    -gamma_sc * score.score.re + 0.0
}

pub fn score(a: &AffinityGrid, b: &AffinityGrid, pose: &PosePair) -> ScoreResult {
    score_relative(a, b, &pose.relative())
}

pub fn score_relative(
    a: &AffinityGrid,
    b: &AffinityGrid,
    relative: &RigidTransform,
) -> ScoreResult {
    let (s, _) = lattice_sum(a, b, relative, false);
    s
}

/// Score and its analytic gradient.
pub fn analytic_gradient(
    a: &AffinityGrid,
    b: &AffinityGrid,
    pose: &PosePair,
) -> (ScoreResult, ScoreGradient) {
    let (s, g) = lattice_sum(a, b, &pose.relative(), true);
    (s, g.expect("gradient requested"))
}

pub fn fdm_gradient(
    a: &AffinityGrid,
    b: &AffinityGrid,
    pose: &PosePair,
    h_t: f64,
    h_r: f64,
) -> ScoreGradient {
    let t = pose.relative();
    let f = |m: RigidTransform| score_relative(a, b, &m.compose(&t)).score;
    let mut translational = [Complex::new(0.0, 0.0); 3];
    let mut rotational = [Complex::new(0.0, 0.0); 3];
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = h_t;
        translational[k] = (f(RigidTransform::from_translation(e))
            - f(RigidTransform::from_translation(-e)))
            / (2.0 * h_t);
        let mut r = Vec3::zeros();
        r[k] = h_r;
        rotational[k] = (f(RigidTransform::from_rotation_vector(&r, Vec3::zeros()))
            - f(RigidTransform::from_rotation_vector(&-r, Vec3::zeros())))
            / (2.0 * h_r);
    }
    ScoreGradient {
        translational,
        rotational,
    }
}

/// Energy, force and torque with the analytic gradient.
pub fn wrench(
    a: &AffinityGrid,
    b: &AffinityGrid,
    pose: &PosePair,
    gamma_sc: f64,
) -> Result<Wrench> {
    wrench_with(a, b, pose, gamma_sc, GradientBackend::Analytic)
}

pub fn wrench_with(
    a: &AffinityGrid,
    b: &AffinityGrid,
    pose: &PosePair,
    gamma_sc: f64,
    backend: GradientBackend,
) -> Result<Wrench> {
    if !(gamma_sc >= 0.0 && gamma_sc.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be non-negative, got {gamma_sc}"
        )));
    }
    let (s, g) = match backend {
        GradientBackend::Analytic => analytic_gradient(a, b, pose),
        GradientBackend::Fdm { h_t, h_r } => {
            if !(h_t > 0.0 && h_r > 0.0) {
                return Err(Error::InvalidParameter(
                    "finite-difference steps must be positive".into(),
                ));
            }
            (score(a, b, pose), fdm_gradient(a, b, pose, h_t, h_r))
        }
    };
    Ok(Wrench {
        energy: energy(&s, gamma_sc),
        force: g.translational.map(|c| gamma_sc * c.re + 0.0),
        torque: g.rotational.map(|c| gamma_sc * c.re + 0.0),
        gamma_sc,
        re_score: s.score.re,
        im_score: s.score.im,
    })
}

/// Hessians of the energy over translations and over rotation vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StiffnessMatrix {
    pub translational: Matrix3<f64>,
    pub rotational: Matrix3<f64>,
    /// Whether a Newton step on the translational block is shorter than the
    /// difference step, i.e. the pose is a local minimum at that resolution.
    pub at_minimum: bool,
}

impl StiffnessMatrix {
    /// Ascending eigenvalues of the translational block.
    pub fn translational_eigenvalues(&self) -> [f64; 3] {
        sorted_eigenvalues(self.translational)
    }

    pub fn rotational_eigenvalues(&self) -> [f64; 3] {
        sorted_eigenvalues(self.rotational)
    }
}

fn sorted_eigenvalues(m: Matrix3<f64>) -> [f64; 3] {
    let e = SymmetricEigen::new(m).eigenvalues;
    let mut v = [e[0], e[1], e[2]];
    v.sort_by(f64::total_cmp);
    v
}

pub fn stiffness(
    a: &AffinityGrid,
    b: &AffinityGrid,
    pose: &PosePair,
    gamma_sc: f64,
    h_t: f64,
    h_r: f64,
) -> Result<StiffnessMatrix> {
    if !(h_t > 0.0 && h_r > 0.0) {
        return Err(Error::InvalidParameter(
            "finite-difference steps must be positive".into(),
        ));
    }
    let t = pose.relative();
    let e = |m: RigidTransform| -gamma_sc * score_relative(a, b, &m.compose(&t)).score.re;
    let e0 = e(RigidTransform::identity());
    let hessian = |make: &dyn Fn(Vec3) -> RigidTransform, h: f64| {
        let mut m = Matrix3::zeros();
        let unit = |k: usize| {
            let mut v = Vec3::zeros();
            v[k] = h;
            v
        };
        for i in 0..3 {
            m[(i, i)] = (e(make(unit(i))) - 2.0 * e0 + e(make(-unit(i)))) / (h * h);
            for j in 0..i {
                let (ui, uj) = (unit(i), unit(j));
                let v = (e(make(ui + uj)) - e(make(ui - uj)) - e(make(uj - ui))
                    + e(make(-ui - uj)))
                    / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        (m + m.transpose()) * 0.5
    };
    let translational = hessian(&RigidTransform::from_translation, h_t);
    let rotational = hessian(
        &|r| RigidTransform::from_rotation_vector(&r, Vec3::zeros()),
        h_r,
    );
    let (_, g) = analytic_gradient(a, b, pose);
    let grad_e = Vec3::from(g.translational.map(|c| -gamma_sc * c.re));
    let at_minimum = translational
        .try_inverse()
        .map(|inv| (inv * grad_e).norm() <= h_t)
        .unwrap_or(false)
        && translational_is_psd(&translational);
    Ok(StiffnessMatrix {
        translational,
        rotational,
        at_minimum,
    })
}

fn translational_is_psd(m: &Matrix3<f64>) -> bool {
    sorted_eigenvalues(*m)[0] >= 0.0
}

/// Pose coordinate varied by a sweep: translation `x1..x3` or rotation `r1..r3` (radians).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    X1,
    X2,
    X3,
    R1,
    R2,
    R3,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::X1 => "x1",
            SweepAxis::X2 => "x2",
            SweepAxis::X3 => "x3",
            SweepAxis::R1 => "r1",
            SweepAxis::R2 => "r2",
            SweepAxis::R3 => "r3",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, SweepAxis::R1 | SweepAxis::R2 | SweepAxis::R3)
    }

    fn index(self) -> usize {
        match self {
            SweepAxis::X1 | SweepAxis::R1 => 0,
            SweepAxis::X2 | SweepAxis::R2 => 1,
            SweepAxis::X3 | SweepAxis::R3 => 2,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "x1" | "x" => SweepAxis::X1,
            "x2" | "y" => SweepAxis::X2,
            "x3" | "z" => SweepAxis::X3,
            "r1" | "rx" => SweepAxis::R1,
            "r2" | "ry" => SweepAxis::R2,
            "r3" | "rz" => SweepAxis::R3,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown sweep axis {other:?}"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub offsets: Vec<f64>,
    pub score: Complex,
    pub energy: f64,
}

/// Lattice of scores; one row per offset combination, first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axes: Vec<SweepAxis>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Header `axis names..., re_score, im_score, energy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in &self.axes {
            out.push_str(a.name());
            out.push(',');
        }
        out.push_str("re_score,im_score,energy\n");
        for r in &self.rows {
            for o in &r.offsets {
                out.push_str(&format!("{o},"));
            }
            out.push_str(&format!("{},{},{}\n", r.score.re, r.score.im, r.energy));
        }
        out
    }

    /// Row with the largest real score; the first one on ties.
    pub fn argmax_re(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&SweepRow>, r| match best {
                Some(b) if b.score.re >= r.score.re => Some(b),
                _ => Some(r),
            })
    }
}

/// `steps` evenly spaced values over `[-half_range, half_range]`; a single step gives 0.
pub fn sweep_offsets(half_range: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n)
            .map(|i| half_range * (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect(),
    }
}

/// Offset transform applied on the left of the base relative pose.
pub fn sweep_offset_transform(axes: &[SweepAxis], offsets: &[f64]) -> RigidTransform {
    let mut t = Vec3::zeros();
    let mut r = Vec3::zeros();
    for (a, &o) in axes.iter().zip(offsets) {
        if a.is_rotation() {
            r[a.index()] += o;
        } else {
            t[a.index()] += o;
        }
    }
    RigidTransform::from_rotation_vector(&r, t)
}

/// Evaluates the score on a lattice of offsets. Each axis carries its own
/// half-range; every axis uses `steps` samples.
pub fn sweep(
    a: &AffinityGrid,
    b: &AffinityGrid,
    base: &PosePair,
    axes: &[(SweepAxis, f64)],
    steps: usize,
    gamma_sc: f64,
) -> Result<SweepTable> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::InvalidParameter(format!(
            "sweeps take 1 or 2 axes, got {}",
            axes.len()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let base_rel = base.relative();
    let grids: Vec<Vec<f64>> = axes.iter().map(|&(_, r)| sweep_offsets(r, steps)).collect();
    let names: Vec<SweepAxis> = axes.iter().map(|&(a, _)| a).collect();
    let combos: Vec<Vec<f64>> = if grids.len() == 1 {
        grids[0].iter().map(|&o| vec![o]).collect()
    } else {
        grids[0]
            .iter()
            .flat_map(|&u| grids[1].iter().map(move |&v| vec![u, v]))
            .collect()
    };
    let rows = combos
        .into_iter()
        .map(|offsets| {
            let m = sweep_offset_transform(&names, &offsets);
            let s = score_relative(a, b, &m.compose(&base_rel));
            SweepRow {
                offsets,
                energy: energy(&s, gamma_sc),
                score: s.score,
            }
        })
        .collect();
    Ok(SweepTable { axes: names, rows })
}

pub fn sweep_translation(
    a: &AffinityGrid,
    b: &AffinityGrid,
    base: &PosePair,
    axes: &[(SweepAxis, f64)],
    steps: usize,
    gamma_sc: f64,
) -> Result<SweepTable> {
    if axes.iter().any(|(a, _)| a.is_rotation()) {
        return Err(Error::InvalidParameter(
            "translation sweep given a rotation axis".into(),
        ));
    }
    sweep(a, b, base, axes, steps, gamma_sc)
}

pub fn sweep_rotation(
    a: &AffinityGrid,
    b: &AffinityGrid,
    base: &PosePair,
    axis: SweepAxis,
    half_range: f64,
    steps: usize,
    gamma_sc: f64,
) -> Result<SweepTable> {
    if !axis.is_rotation() {
        return Err(Error::InvalidParameter(
            "rotation sweep given a translation axis".into(),
        ));
    }
    sweep(a, b, base, &[(axis, half_range)], steps, gamma_sc)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Seven compensated complex accumulators: score, 3 translational, 3 rotational.
#[derive(Clone, Copy, Default)]
struct Accum {
    parts: [Neumaier; 14],
    count: usize,
}

impl Accum {
    #[inline]
    fn add(&mut self, slot: usize, c: Complex) {
        self.parts[2 * slot].add(c.re);
        self.parts[2 * slot + 1].add(c.im);
    }

    fn get(&self, slot: usize) -> Complex {
        Complex::new(
            self.parts[2 * slot].total(),
            self.parts[2 * slot + 1].total(),
        )
    }

    fn merge(&mut self, other: &Accum) {
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.add(b.sum);
            a.add(b.comp);
        }
        self.count += other.count;
    }
}

#[inline]
fn cross_rc(r: &Vec3, c: &[Complex; 3]) -> [Complex; 3] {
    [
        c[2] * r.y - c[1] * r.z,
        c[0] * r.z - c[2] * r.x,
        c[1] * r.x - c[0] * r.y,
    ]
}

#[inline]
fn rotate_c(m: &Matrix3<f64>, c: &[Complex; 3]) -> [Complex; 3] {
    [0, 1, 2].map(|i| c[0] * m[(i, 0)] + c[1] * m[(i, 1)] + c[2] * m[(i, 2)])
}

/// Index range of `lattice` nodes inside `other_box`, skipping the outer layer.
fn clipped_range(
    lattice: &AffinityGrid,
    other_box: &crate::geometry::Aabb,
) -> Option<[(usize, usize); 3]> {
    let l = lattice.layout();
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        let lo = ((other_box.min[a] - l.origin[a]) / l.spacing)
            .ceil()
            .max(1.0);
        let hi = ((other_box.max[a] - l.origin[a]) / l.spacing)
            .floor()
            .min((l.dims[a] - 2) as f64);
        if !(lo <= hi) {
            return None;
        }
        out[a] = (lo as usize, hi as usize + 1);
    }
    Some(out)
}

fn lattice_sum(
    a: &AffinityGrid,
    b: &AffinityGrid,
    relative: &RigidTransform,
    with_gradient: bool,
) -> (ScoreResult, Option<ScoreGradient>) {
    let ratio = a.spacing() / b.spacing();
    if !(0.5..=2.0).contains(&ratio) {
        log::warn!("grid spacings differ by more than a factor of two ({ratio:.3})");
    }
    // integrate over the finer grid; part 1 on ties
    let lattice_is_a = a.spacing() <= b.spacing();
    let (lattice, other) = if lattice_is_a { (a, b) } else { (b, a) };
    let to_other = if lattice_is_a {
        relative.inverse()
    } else {
        *relative
    };
    let cell_volume = lattice.cell_volume();
    let zero = Complex::new(0.0, 0.0);
    let empty = (
        ScoreResult {
            score: zero,
            samples_used: 0,
            cell_volume,
        },
        with_gradient.then_some(ScoreGradient {
            translational: [zero; 3],
            rotational: [zero; 3],
        }),
    );
    let other_box = other.bounds().transformed(&to_other.inverse());
    let Some(range) = clipped_range(lattice, &other_box) else {
        return empty;
    };
    let layout = *lattice.layout();
    let rot = *relative.rotation();
    let values = lattice.values();
    let slab = |k: usize| {
        let mut acc = Accum::default();
        for j in range[1].0..range[1].1 {
            for i in range[0].0..range[0].1 {
                let own = values[layout.index(i, j, k)];
                let n = layout.node_position(i, j, k);
                let y = to_other.apply(&n);
                acc.count += 1;
                if !with_gradient {
                    acc.add(0, own * other.sample_value(&y));
                    continue;
                }
                let (v, g) = other.sample(&y);
                acc.add(0, own * v);
                if lattice_is_a {
                    // lattice node n in part 1, part 2 sampled at R^T (n - t)
                    let gw = rotate_c(&rot, &g);
                    let tor = cross_rc(&n, &gw);
                    for c in 0..3 {
                        acc.add(1 + c, -(own * gw[c]));
                        acc.add(4 + c, -(own * tor[c]));
                    }
                } else {
                    // lattice node in part 2, part 1 sampled at x = R n + t
                    let tor = cross_rc(&y, &g);
                    for c in 0..3 {
                        acc.add(1 + c, own * g[c]);
                        acc.add(4 + c, own * tor[c]);
                    }
                }
            }
        }
        acc
    };
    let slabs: Vec<Accum> = (range[2].0..range[2].1).into_par_iter().map(slab).collect();
    let mut total = Accum::default();
    for s in &slabs {
        total.merge(s);
    }
    let result = ScoreResult {
        score: total.get(0) * cell_volume,
        samples_used: total.count,
        cell_volume,
    };
    let gradient = with_gradient.then(|| ScoreGradient {
        translational: [1, 2, 3].map(|s| total.get(s) * cell_volume),
        rotational: [4, 5, 6].map(|s| total.get(s) * cell_volume),
    });
    (result, gradient)
}
