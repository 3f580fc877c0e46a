//! Scripted proxy trajectories and offline traces.
//!
//! A trajectory is a CSV of `time_s, tx, ty, tz, rx, ry, rz` rows (rotation
//! as a rotation vector), linearly interpolated between rows. A trace replays
//! it through [`SessionState::step`] at the session tick rate, the same path
//! the live server takes.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::protocol::{Coupling, SessionSettings, WirePose};
use crate::scenes::{CrossSection, PegHoleSpec};
use crate::session::{Scene, SessionState};

pub const TRAJECTORY_HEADER: [&str; 7] = ["time_s", "tx", "ty", "tz", "rx", "ry", "rz"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub translation: Vec3,
    pub rotation: Vec3,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    points: Vec<Waypoint>,
}

impl Trajectory {
    /// Times must be finite and strictly increasing.
    pub fn new(points: Vec<Waypoint>) -> Result<Self> {
        for w in &points {
            let finite = w.time.is_finite()
                && w.translation.iter().all(|v| v.is_finite())
                && w.rotation.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidParameter(format!(
                    "non-finite waypoint at t = {}",
                    w.time
                )));
            }
        }
        if let Some(p) = points.windows(2).find(|p| p[1].time <= p[0].time) {
            return Err(Error::InvalidParameter(format!(
                "waypoint times must increase: {} then {}",
                p[0].time, p[1].time
            )));
        }
        Ok(Trajectory { points })
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.points.first().map_or(0.0, |p| p.time)
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Proxy pose at `time`, clamped to the first and last rows.
    pub fn pose_at(&self, time: f64) -> Option<RigidTransform> {
        let pts = &self.points;
        let first = pts.first()?;
        let w = if time <= first.time {
            *first
        } else {
            let i = pts.partition_point(|p| p.time <= time);
            if i >= pts.len() {
                *pts.last()?
            } else {
                let (a, b) = (pts[i - 1], pts[i]);
                let u = (time - a.time) / (b.time - a.time);
                Waypoint {
                    time,
                    translation: a.translation + (b.translation - a.translation) * u,
                    rotation: a.rotation + (b.rotation - a.rotation) * u,
                }
            }
        };
        Some(RigidTransform::from_rotation_vector(
            &w.rotation,
            w.translation,
        ))
    }

    /// Reads the CSV form. A header row is optional; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut points = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
            let line = rec.position().map_or(i + 1, |p| p.line() as usize);
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            if rec.len() != 7 {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("expected 7 columns, found {}", rec.len()),
                ));
            }
            let mut v = [0.0; 7];
            for (k, f) in rec.iter().enumerate() {
                v[k] = f
                    .parse()
                    .map_err(|_| Error::parse(source_name, line, format!("not a number: {f:?}")))?;
            }
            points.push(Waypoint {
                time: v[0],
                translation: Vec3::new(v[1], v[2], v[3]),
                rotation: Vec3::new(v[4], v[5], v[6]),
            });
        }
        Trajectory::new(points).map_err(|e| Error::parse(source_name, 0, e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TRAJECTORY_HEADER).expect("in-memory write");
        for p in &self.points {
            let row = [
                p.time,
                p.translation.x,
                p.translation.y,
                p.translation.z,
                p.rotation.x,
                p.rotation.y,
                p.rotation.z,
            ];
            w.write_record(row.iter().map(f64::to_string))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }
}

fn half_width(spec: &PegHoleSpec) -> f64 {
    match spec.cross_section {
        CrossSection::Rectangular => spec.peg_half_extents[0],
        CrossSection::Circular | CrossSection::Combined => spec.peg_radius,
    }
}

fn waypoint(time: f64, x: f64, y: f64, z: f64) -> Waypoint {
    Waypoint {
        time,
        translation: Vec3::new(x, y, z),
        rotation: Vec3::zeros(),
    }
}

/// Careless motion around the hole entrance, then a release just above the fit.
///
/// For three seconds the proxy wanders with the peg tip a tenth of the hole
/// depth inside the entrance: lateral jitter up to a tenth of the peg
/// half-width, axial jitter up to a twentieth of the hole depth, a new
/// waypoint every 0.1 s. It then moves to a tenth of the hole depth above
/// the fit pose and stays there for two seconds.
pub fn snap_trajectory(spec: &PegHoleSpec, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, d) = (half_width(spec), spec.hole_depth);
    let mut pts = vec![waypoint(0.0, 0.0, 0.0, 0.9 * d)];
    for k in 1..=30 {
        let jx = rng.random_range(-0.1..=0.1) * r;
        let jy = rng.random_range(-0.1..=0.1) * r;
        let jz = rng.random_range(-0.05..=0.05) * d;
        pts.push(waypoint(0.1 * k as f64, jx, jy, 0.9 * d + jz));
    }
    pts.push(waypoint(3.5, 0.0, 0.0, 0.1 * d));
    pts.push(waypoint(5.5, 0.0, 0.0, 0.1 * d));
    Trajectory::new(pts).expect("generated times increase")
}

/// Seconds between the starts of two pushes.
pub const PUSH_PERIOD: f64 = 2.0;

/// Repeated pushes against the block's +x outer wall.
///
/// The peg starts beside the block at the fit height, far enough out that
/// neither field reaches the other. Each push takes `PUSH_PERIOD`: 0.5 s in,
/// 0.5 s held with the proxy half a peg half-width (jittered by up to 10%)
/// past contact, 0.5 s out, 0.5 s at rest. One second of rest comes first.
pub fn collision_trajectory(spec: &PegHoleSpec, pushes: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = half_width(spec);
    let wall = 0.5 * spec.block_size.x;
    let contact = wall + r;
    let rest = contact
        + 0.5 * (spec.block_size.norm() + Vec3::new(2.0 * r, 2.0 * r, spec.peg_length).norm());
    let mut pts = vec![waypoint(0.0, rest, 0.0, 0.0)];
    let mut t = 1.0;
    for _ in 0..pushes {
        let depth = 0.5 * r * (1.0 + rng.random_range(-0.1..=0.1));
        pts.push(waypoint(t, rest, 0.0, 0.0));
        pts.push(waypoint(t + 0.5, contact - depth, 0.0, 0.0));
        pts.push(waypoint(t + 1.0, contact - depth, 0.0, 0.0));
        pts.push(waypoint(t + 1.5, rest, 0.0, 0.0));
        t += PUSH_PERIOD;
    }
    pts.push(waypoint(t, rest, 0.0, 0.0));
    Trajectory::new(pts).expect("generated times increase")
}

/// Push intensity of [`collision_trajectory`] at `time`: how far the proxy
/// is past contact, zero when it is not.
pub fn push_depth(spec: &PegHoleSpec, traj: &Trajectory, time: f64) -> f64 {
    let contact = 0.5 * spec.block_size.x + half_width(spec);
    traj.pose_at(time)
        .map_or(0.0, |p| (contact - p.translation().x).max(0.0))
}

/// Settings for the snap test: a weak spring, so the geometric well dominates.
pub fn snap_settings() -> SessionSettings {
    SessionSettings {
        coupling: Coupling {
            k_t: 5.0,
            k_r: 2.0,
            c_t: 10.0,
            c_r: 10.0,
            mass: 0.01,
            inertia: 0.01,
        },
        lock_rotation: true,
        ..SessionSettings::default()
    }
}

/// Settings for the collision test: a stiff spring so the part tracks the proxy.
pub fn collision_settings() -> SessionSettings {
    SessionSettings {
        coupling: Coupling {
            k_t: 1000.0,
            k_r: 200.0,
            c_t: 10.0,
            c_r: 10.0,
            mass: 0.01,
            inertia: 0.01,
        },
        lock_rotation: true,
        ..SessionSettings::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub time: f64,
    pub proxy_pose: RigidTransform,
    pub sim_pose: RigidTransform,
    pub energy: f64,
    pub force: [f64; 3],
    pub torque: [f64; 3],
    pub flagged: bool,
}

impl TraceRow {
    pub fn force_norm(&self) -> f64 {
        Vec3::from(self.force).norm()
    }
}

/// Replays `traj` tick by tick. Both poses start at the first waypoint; tick
/// `k` uses the proxy pose at `k / tick_rate` seconds after the start. An
/// empty trajectory gives no rows.
pub fn run_trace(
    scene: &Scene,
    settings: &SessionSettings,
    traj: &Trajectory,
) -> Result<Vec<TraceRow>> {
    let Some(start) = traj.pose_at(traj.start_time()) else {
        return Ok(Vec::new());
    };
    let settings = SessionSettings {
        initial_pose: WirePose::from(&start),
        ..*settings
    };
    let mut state = SessionState::new(settings, scene)?;
    let dt = state.dt();
    let ticks = (traj.duration() * settings.tick_rate + 1e-9).floor() as u64;
    let mut rows = Vec::with_capacity(ticks as usize + 1);
    let record = |s: &SessionState| TraceRow {
        tick: s.tick,
        time: s.tick as f64 * dt,
        proxy_pose: s.proxy_pose,
        sim_pose: s.sim_pose,
        energy: s.last_wrench.energy,
        force: s.last_wrench.force,
        torque: s.last_wrench.torque,
        flagged: s.flagged,
    };
    rows.push(record(&state));
    for k in 1..=ticks {
        state.proxy_pose = traj
            .pose_at(traj.start_time() + k as f64 * dt)
            .expect("trajectory is not empty");
        state.step(scene, dt);
        rows.push(record(&state));
    }
    Ok(rows)
}

pub const TRACE_HEADER: &str = "tick,time_s,proxy_tx,proxy_ty,proxy_tz,sim_tx,sim_ty,sim_tz,sim_rx,sim_ry,sim_rz,energy,fx,fy,fz,force_norm,tx,ty,tz,flagged";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER.split(',')).map_err(csv_error)?;
    for r in rows {
        let p = r.proxy_pose.translation();
        let s = r.sim_pose.translation();
        let rv = r.sim_pose.rotation_vector();
        let mut rec: Vec<String> = vec![r.tick.to_string()];
        let nums = [
            r.time,
            p.x,
            p.y,
            p.z,
            s.x,
            s.y,
            s.z,
            rv.x,
            rv.y,
            rv.z,
            r.energy,
            r.force[0],
            r.force[1],
            r.force[2],
            r.force_norm(),
            r.torque[0],
            r.torque[1],
            r.torque[2],
        ];
        rec.extend(nums.iter().map(f64::to_string));
        rec.push(u8::from(r.flagged).to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn csv_round_trip_and_header() {
        let t = snap_trajectory(&PegHoleSpec::default(), 3);
        let text = t.to_csv();
        assert!(text.starts_with("time_s,tx,ty,tz,rx,ry,rz\n"));
        assert_eq!(Trajectory::parse_csv(&text, "mem").unwrap(), t);
        let bare = "0,0,0,0,0,0,0\n1,2,0,0,0,0,0.5\n";
        let t = Trajectory::parse_csv(bare, "mem").unwrap();
        let mid = t.pose_at(0.5).unwrap();
        assert_relative_eq!(mid.translation().x, 1.0);
        assert_relative_eq!(mid.rotation_vector().z, 0.25, epsilon = 1e-12);
        assert_relative_eq!(t.pose_at(9.0).unwrap().translation().x, 2.0);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = Trajectory::parse_csv("0,0,0,0,0,0,0\n1,2,3\n", "traj.csv").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(Trajectory::parse_csv("1,0,0,0,0,0,0\n0,0,0,0,0,0,0\n", "t").is_err());
        assert!(Trajectory::parse_csv("0,0,0,x,0,0,0\n", "t").is_err());
    }

    #[test]
    fn empty_trajectory() {
        let t = Trajectory::parse_csv("time_s,tx,ty,tz,rx,ry,rz\n", "t").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.pose_at(0.0), None);
    }

    #[test]
    fn generators_are_seeded() {
        let spec = PegHoleSpec::default();
        assert_eq!(snap_trajectory(&spec, 1), snap_trajectory(&spec, 1));
        assert_ne!(snap_trajectory(&spec, 1), snap_trajectory(&spec, 2));
        let c = collision_trajectory(&spec, 3, 5);
        assert_relative_eq!(c.duration(), 1.0 + 3.0 * PUSH_PERIOD);
        assert_eq!(push_depth(&spec, &c, 0.5), 0.0);
        assert!(push_depth(&spec, &c, 1.75) > 0.4);
    }
}
