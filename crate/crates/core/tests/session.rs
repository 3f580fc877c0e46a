mod support;

use std::sync::OnceLock;

use asmfield::protocol::codes;
use asmfield::session::{memory_pair, MemoryClient, RunLimits, SessionReport, VirtualClock};
use asmfield::trajectory::{collision_trajectory, snap_settings, snap_trajectory};
use asmfield::{
    run_session, run_trace, Coupling, RigidTransform, Scene, SessionSettings, SessionState, Vec3,
    WireMessage, WirePose,
};
use support::Fixture;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| Fixture::example(1, 32))
}

fn scene() -> Scene<'static> {
    let f = fixture();
    Scene::new(&f.fixed, &f.moving)
}

fn shifted(x: f64, y: f64, z: f64) -> RigidTransform {
    RigidTransform::from_translation(Vec3::new(x, y, z))
}

fn config(settings: SessionSettings) -> WireMessage {
    WireMessage::SessionConfig(settings)
}

/// Runs a session on the in-process transport with a virtual clock. The
/// client messages are all queued before the server starts.
fn session(
    base: &SessionSettings,
    ticks: u64,
    queue: impl FnOnce(&MemoryClient),
) -> (SessionReport, Vec<WireMessage>) {
    let (mut transport, client) = memory_pair();
    queue(&client);
    let limits = RunLimits {
        max_ticks: Some(ticks),
        ..RunLimits::default()
    };
    let report = run_session(
        &scene(),
        base,
        &mut transport,
        &mut VirtualClock::default(),
        &limits,
    )
    .unwrap();
    (report, client.drain())
}

fn frames(messages: &[WireMessage]) -> Vec<(u64, WirePose, f64)> {
    messages
        .iter()
        .filter_map(|m| match m {
            WireMessage::StateFrame {
                tick,
                sim_pose,
                energy,
                ..
            } => Some((*tick, *sim_pose, *energy)),
            _ => None,
        })
        .collect()
}

fn error_codes(messages: &[WireMessage]) -> Vec<u32> {
    messages
        .iter()
        .filter_map(|m| match m {
            WireMessage::Error { code, .. } => Some(*code),
            _ => None,
        })
        .collect()
}

#[test]
fn session_replays_the_offline_trace() {
    let f = fixture();
    let settings = snap_settings();
    let traj = snap_trajectory(&f.spec, 1);
    let rows = run_trace(&scene(), &settings, &traj).unwrap();
    let ticks = 120;
    let dt = 1.0 / settings.tick_rate;
    let base = SessionSettings {
        initial_pose: WirePose::from(&rows[0].proxy_pose),
        ..settings
    };
    let (report, out) = session(&base, ticks, |c| {
        c.send(&config(base));
        for k in 1..=ticks {
            let pose = traj.pose_at(traj.start_time() + k as f64 * dt).unwrap();
            c.send(&WireMessage::ProxyUpdate {
                tick: k,
                pose: WirePose::from(&pose),
            });
        }
    });
    assert_eq!(report.ticks_run, ticks);
    let got = frames(&out);
    assert_eq!(got.len(), ticks as usize + 1);
    for (tick, pose, energy) in got {
        let row = &rows[tick as usize];
        let expected = row.sim_pose.translation();
        assert!(
            (Vec3::from(pose.translation) - expected).norm() < 1e-9,
            "tick {tick}"
        );
        assert!(
            (energy - row.energy).abs() < 1e-9 * row.energy.abs().max(1.0),
            "tick {tick}"
        );
    }
}

#[test]
fn frames_stream_without_input() {
    let base = SessionSettings::default();
    let (report, out) = session(&base, 25, |c| {
        c.send(&config(base));
    });
    let got = frames(&out);
    let ticks: Vec<u64> = got.iter().map(|g| g.0).collect();
    assert_eq!(ticks, (0..=25).collect::<Vec<_>>());
    assert_eq!(report.ticks_skipped, 0);
    assert_eq!(report.errors_sent, 0);
    let proxy = report.final_state.unwrap().proxy_pose;
    assert_eq!(proxy, RigidTransform::identity());
}

#[test]
fn malformed_input_is_reported_and_the_session_continues() {
    let base = SessionSettings::default();
    let (report, out) = session(&base, 10, |c| {
        c.send(&config(base));
        c.send_raw(vec![5, 0, 0, 0, b'{', b'x']);
        c.send_raw(b"not framed at all".to_vec());
    });
    assert_eq!(error_codes(&out), vec![codes::MALFORMED, codes::MALFORMED]);
    assert_eq!(report.errors_sent, 2);
    assert_eq!(frames(&out).len(), 11);
}

fn framed(json: &str) -> Vec<u8> {
    let mut v = (json.len() as u32).to_le_bytes().to_vec();
    v.extend_from_slice(json.as_bytes());
    v
}

#[test]
fn out_of_range_pose_is_malformed() {
    let base = SessionSettings::default();
    let (report, out) = session(&base, 3, |c| {
        c.send(&config(base));
        c.send_raw(framed(
            r#"{"type":"ProxyUpdate","tick":1,"pose":{"translation":[1e999,0,0],"rotation":[0,0,0]}}"#,
        ));
    });
    assert_eq!(error_codes(&out), vec![codes::MALFORMED]);
    assert_eq!(
        report.final_state.unwrap().proxy_pose,
        RigidTransform::identity()
    );
}

#[test]
fn hand_framed_update_moves_the_proxy() {
    let base = SessionSettings::default();
    let (report, _) = session(&base, 1, |c| {
        c.send(&config(base));
        c.send_raw(framed(
            r#"{"type":"ProxyUpdate","tick":1,"pose":{"translation":[0,0,0.5],"rotation":[0,0,0]}}"#,
        ));
    });
    assert_eq!(report.final_state.unwrap().proxy_pose.translation().z, 0.5);
}

#[test]
fn messages_before_config_are_unexpected() {
    let base = SessionSettings::default();
    let (report, out) = session(&base, 2, |c| {
        c.send(&WireMessage::ProxyUpdate {
            tick: 1,
            pose: WirePose::default(),
        });
        c.send(&config(base));
    });
    assert_eq!(error_codes(&out), vec![codes::UNEXPECTED]);
    assert_eq!(report.ticks_run, 2);
    assert!(matches!(out[0], WireMessage::Error { .. }));
    assert!(matches!(out[1], WireMessage::StateFrame { tick: 0, .. }));
}

#[test]
fn bad_config_is_refused_then_a_good_one_is_taken() {
    let base = SessionSettings::default();
    let bad = SessionSettings {
        coupling: Coupling {
            mass: -1.0,
            ..Coupling::default()
        },
        ..base
    };
    let good = SessionSettings {
        tick_rate: 50.0,
        ..base
    };
    let (report, out) = session(&base, 4, |c| {
        c.send(&config(bad));
        c.send(&config(good));
    });
    assert_eq!(error_codes(&out), vec![codes::CONFIG]);
    assert_eq!(report.final_state.unwrap().settings.tick_rate, 50.0);
}

#[test]
fn during_a_session_a_config_is_unexpected() {
    let base = SessionSettings::default();
    let (report, out) = session(&base, 3, |c| {
        c.send(&config(base));
        c.send(&config(base));
    });
    assert_eq!(error_codes(&out), vec![codes::UNEXPECTED]);
    assert_eq!(report.ticks_run, 3);
}

#[test]
fn freshest_update_wins_and_later_ones_wait() {
    let base = SessionSettings::default();
    let at = |x: f64| WirePose {
        translation: [x, 0.0, 0.0],
        rotation: [0.0; 3],
    };
    let (report, _) = session(&base, 1, |c| {
        c.send(&config(base));
        c.send(&WireMessage::ProxyUpdate {
            tick: 1,
            pose: at(0.1),
        });
        c.send(&WireMessage::ProxyUpdate {
            tick: 0,
            pose: at(0.2),
        });
        c.send(&WireMessage::ProxyUpdate {
            tick: 5,
            pose: at(0.3),
        });
    });
    let proxy = report.final_state.unwrap().proxy_pose;
    assert_eq!(proxy.translation().x, 0.1);
}

fn settle(state: &mut SessionState, ticks: usize) -> Vec<f64> {
    let s = scene();
    let dt = state.dt();
    (0..ticks)
        .map(|_| {
            state.step(&s, dt);
            state.last_wrench.energy
        })
        .collect()
}

#[test]
fn without_geometry_the_part_follows_the_proxy() {
    let settings = SessionSettings {
        gamma_sc: 0.0,
        ..SessionSettings::default()
    };
    let mut state = SessionState::new(settings, &scene()).unwrap();
    state.proxy_pose =
        RigidTransform::from_rotation_vector(&Vec3::new(0.2, -0.1, 0.4), Vec3::new(1.0, 2.0, 3.0));
    settle(&mut state, 3000);
    assert!((state.sim_pose.translation() - state.proxy_pose.translation()).norm() < 1e-6);
    assert!((state.sim_pose.rotation() - state.proxy_pose.rotation()).norm() < 1e-6);
    assert_eq!(state.last_wrench.energy, 0.0);
}

#[test]
fn relaxation_without_springs_lowers_energy() {
    let settings = SessionSettings {
        coupling: Coupling {
            k_t: 0.0,
            k_r: 0.0,
            ..Coupling::default()
        },
        lock_rotation: true,
        initial_pose: WirePose::from(&shifted(0.05, 0.0, 0.3)),
        ..SessionSettings::default()
    };
    let mut state = SessionState::new(settings, &scene()).unwrap();
    let start = state.last_wrench.energy;
    let energies = settle(&mut state, 400);
    let scale = start.abs();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * scale, "{} then {}", w[0], w[1]);
    }
    assert!(*energies.last().unwrap() < start);
}

#[test]
fn part_rests_where_spring_and_well_balance() {
    let settings = SessionSettings {
        lock_rotation: true,
        ..snap_settings()
    };
    let mut state = SessionState::new(settings, &scene()).unwrap();
    settle(&mut state, 2000);
    let before = *state.sim_pose.translation();
    settle(&mut state, 100);
    assert!((state.sim_pose.translation() - before).norm() < 1e-9);
    assert!(state.velocity.norm() < 1e-6);
    // spring pull balances the geometric force
    let pull =
        (state.proxy_pose.translation() - state.sim_pose.translation()) * settings.coupling.k_t;
    assert!((pull + state.last_wrench.force()).norm() < 1e-6);
}

#[test]
fn weak_spring_snaps_back_into_the_hole() {
    let mut state = SessionState::new(snap_settings(), &scene()).unwrap();
    state.sim_pose = shifted(0.0, 0.0, 0.3);
    state.proxy_pose = shifted(0.0, 0.0, 0.3);
    settle(&mut state, 2000);
    let z = state.sim_pose.translation().z;
    assert!(z < 0.15, "rests at z = {z}");
}

#[test]
fn pushing_into_a_wall_stops_short_with_repulsion() {
    let f = fixture();
    let traj = collision_trajectory(&f.spec, 1, 0);
    let rest = traj.pose_at(traj.start_time()).unwrap();
    let contact = 0.5 * f.spec.block_size.x + f.spec.peg_radius;
    let mut target = *rest.translation();
    target.x = contact - 0.5 * f.spec.peg_radius;
    let settings = SessionSettings {
        coupling: Coupling {
            k_t: 5.0,
            ..snap_settings().coupling
        },
        lock_rotation: true,
        initial_pose: WirePose::from(&rest),
        ..SessionSettings::default()
    };
    let mut state = SessionState::new(settings, &scene()).unwrap();
    state.proxy_pose = RigidTransform::new(*rest.rotation(), target).unwrap();
    settle(&mut state, 3000);
    let x = state.sim_pose.translation().x;
    assert!(x > target.x + 0.1, "sim x {x}, proxy x {}", target.x);
    assert!(state.last_wrench.force[0] > 0.0);
}
