use asmfield::geometry::box_mesh;
use asmfield::protocol::split_frame;
use asmfield::session::Mailbox;
use asmfield::trajectory::Waypoint;
use asmfield::{
    AxisAngle, Membership, RigidTransform, Solid, Trajectory, Vec3, WireMessage, WirePose,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -1e3..1e3f64
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (vec3(3.0), vec3(10.0)).prop_map(|(r, t)| RigidTransform::from_rotation_vector(&r, t))
}

fn pose() -> impl Strategy<Value = WirePose> {
    (
        prop::array::uniform3(finite()),
        prop::array::uniform3(-3.0..3.0f64),
    )
        .prop_map(|(translation, rotation)| WirePose {
            translation,
            rotation,
        })
}

fn message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        (any::<u64>(), pose()).prop_map(|(tick, pose)| WireMessage::ProxyUpdate { tick, pose }),
        (
            any::<u64>(),
            pose(),
            finite(),
            prop::array::uniform3(finite()),
            prop::array::uniform3(finite()),
            0.0..1e3f64
        )
            .prop_map(|(tick, sim_pose, energy, force, torque, rate)| {
                WireMessage::StateFrame {
                    tick,
                    sim_pose,
                    energy,
                    force,
                    torque,
                    servo_rate_estimate: rate,
                }
            }),
        (1u32..5, "[ -~]{0,40}").prop_map(|(code, text)| WireMessage::Error { code, text }),
    ]
}

proptest! {
    #[test]
    fn frames_round_trip(m in message()) {
        prop_assert_eq!(WireMessage::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn a_stream_splits_back_into_its_messages(ms in prop::collection::vec(message(), 1..6), cut in 0usize..4) {
        let stream: Vec<u8> = ms.iter().flat_map(|m| m.encode()).collect();
        let mut rest = &stream[..];
        let mut got = Vec::new();
        while let Some((payload, tail)) = split_frame(rest).unwrap() {
            got.push(WireMessage::from_json(std::str::from_utf8(payload).unwrap()).unwrap());
            rest = tail;
        }
        prop_assert!(rest.is_empty());
        prop_assert_eq!(&got, &ms);
        // any strict prefix of one frame asks for more bytes
        let one = ms[0].encode();
        let short = one.len().saturating_sub(1 + cut);
        prop_assert!(split_frame(&one[..short]).unwrap().is_none());
        prop_assert!(WireMessage::decode(&one[..short]).is_err());
    }

    #[test]
    fn mailbox_hands_out_the_latest_due_update(
        ticks in prop::collection::btree_set(0u64..50, 0..12),
        now in 0u64..60,
    ) {
        let mut mailbox = Mailbox::default();
        for &t in &ticks {
            mailbox.push(t, WirePose { translation: [t as f64, 0.0, 0.0], rotation: [0.0; 3] });
        }
        let expected = ticks.range(..=now).next_back().copied();
        let got = mailbox.take_for(now).map(|p| p.translation[0] as u64);
        prop_assert_eq!(got, expected);
        prop_assert_eq!(mailbox.len(), ticks.range(now + 1..).count());
        prop_assert!(mailbox.take_for(now).is_none());
    }

    #[test]
    fn transform_inverse_undoes_it(t in transform(), p in vec3(20.0)) {
        let back = t.inverse_apply(&t.apply(&p));
        prop_assert!((back - p).norm() < 1e-9 * (1.0 + p.norm()));
        let q = t.inverse().apply(&t.apply(&p));
        prop_assert!((q - p).norm() < 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn composition_applies_right_then_left(a in transform(), b in transform(), p in vec3(20.0)) {
        let direct = a.compose(&b).apply(&p);
        let stepwise = a.apply(&b.apply(&p));
        prop_assert!((direct - stepwise).norm() < 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn rotation_vector_round_trips_below_a_half_turn(axis in vec3(1.0), angle in 0.0..3.1f64) {
        prop_assume!(axis.norm() > 1e-3);
        let v = axis.normalize() * angle;
        let back = AxisAngle::from_rotation_vector(&v).rotation_vector();
        prop_assert!((back - v).norm() < 1e-9);
        let t = RigidTransform::from_rotation_vector(&v, Vec3::zeros());
        prop_assert!((t.rotation_vector() - v).norm() < 1e-9);
    }

    #[test]
    fn rigid_motion_keeps_distances(t in transform(), p in vec3(5.0), q in vec3(5.0)) {
        let d = (t.apply(&p) - t.apply(&q)).norm();
        prop_assert!((d - (p - q).norm()).abs() < 1e-9 * (1.0 + d));
    }

    #[test]
    fn wire_pose_carries_the_transform(t in transform()) {
        let back = WirePose::from(&t).to_transform().unwrap();
        prop_assert!(back.max_difference(&t) < 1e-9);
    }

    #[test]
    fn trajectory_csv_round_trips(
        steps in prop::collection::vec((0.001..1.0f64, vec3(5.0), vec3(1.0)), 1..8),
    ) {
        let mut time = 0.0;
        let points: Vec<Waypoint> = steps
            .into_iter()
            .map(|(dt, translation, rotation)| {
                time += dt;
                Waypoint { time, translation, rotation }
            })
            .collect();
        let traj = Trajectory::new(points).unwrap();
        let back = Trajectory::parse_csv(&traj.to_csv(), "roundtrip").unwrap();
        prop_assert_eq!(back.points().len(), traj.points().len());
        for (a, b) in back.points().iter().zip(traj.points()) {
            prop_assert!((a.time - b.time).abs() < 1e-12);
            prop_assert!((a.translation - b.translation).norm() < 1e-12);
            prop_assert!((a.rotation - b.rotation).norm() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_distance_matches_the_closed_form(
        half in (0.2..3.0f64, 0.2..3.0f64, 0.2..3.0f64),
        centre in vec3(2.0),
        p in vec3(6.0),
    ) {
        let half = Vec3::new(half.0, half.1, half.2);
        let solid = Solid::new(box_mesh(centre, half)).unwrap();
        let q = (p - centre).abs() - half;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        let exact = outside + inside;
        let band = 1e-6;
        prop_assume!(exact.abs() > band);
        let d = solid.signed_distance(&p);
        prop_assert!((d.xi - exact).abs() < 1e-12 * (1.0 + exact.abs()), "{} vs {}", d.xi, exact);
        let m = solid.winding_pmc(&p);
        prop_assert_eq!(m == Membership::Interior, exact < 0.0);
    }
}
