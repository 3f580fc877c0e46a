use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::Duration;

use asmfield::{AffinityGrid, WireMessage, WirePose};
use tungstenite::Message;

const SPACING: &str = "0.4";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_asmfield"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Assets {
    dir: PathBuf,
    peg: PathBuf,
    block: PathBuf,
    peg_field: PathBuf,
    block_field: PathBuf,
}

impl Assets {
    fn fields(&self) -> String {
        format!("{},{}", s(&self.block_field), s(&self.peg_field))
    }

    fn meshes(&self) -> String {
        format!("{},{}", s(&self.block), s(&self.peg))
    }
}

/// Example 1 meshes and coarse fields, built once per test run.
fn assets() -> &'static Assets {
    static A: OnceLock<Assets> = OnceLock::new();
    A.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-assets");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let o = run(&["generate", "--example", "1", "--out", s(&dir)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let a = Assets {
            peg: dir.join("peg.obj"),
            block: dir.join("block.obj"),
            peg_field: dir.join("peg.sdfg"),
            block_field: dir.join("block.sdfg"),
            dir,
        };
        for (mesh, field) in [(&a.peg, &a.peg_field), (&a.block, &a.block_field)] {
            let o = run(&[
                "precompute",
                "--mesh",
                s(mesh),
                "--spacing",
                SPACING,
                "--out",
                s(field),
            ]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        }
        a
    })
}

#[test]
fn precompute_is_deterministic_and_round_trips() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("peg.sdfg");
    let o = run(&[
        "precompute",
        "--mesh",
        s(&a.peg),
        "--spacing",
        SPACING,
        "--out",
        s(&again),
    ]);
    assert_eq!(code(&o), 0);
    let first = std::fs::read(&a.peg_field).unwrap();
    assert_eq!(first, std::fs::read(&again).unwrap());

    let loaded = AffinityGrid::load(&a.peg_field, None).unwrap();
    let mut bytes = Vec::new();
    loaded.write_to(&mut bytes).unwrap();
    assert_eq!(bytes, first);
}

#[test]
fn precompute_from_scene_matches_mesh_file() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("block.sdfg");
    let o = run(&[
        "precompute",
        "--example",
        "1",
        "--part",
        "block",
        "--spacing",
        SPACING,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(&a.block_field).unwrap()
    );
}

#[test]
fn mismatched_mesh_is_a_validation_error() {
    let a = assets();
    let swapped = format!("{},{}", s(&a.peg), s(&a.block));
    let o = run(&["eval", "--field", &a.fields(), "--mesh", &swapped]);
    assert_eq!(code(&o), 2);
    let o = run(&["eval", "--field", &a.fields(), "--mesh", &a.meshes()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn eval_prints_one_json_record() {
    let a = assets();
    let o = run(&["eval", "--field", &a.fields()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let obj = v.as_object().unwrap();
    for key in ["energy", "force", "torque", "re_score", "im_score"] {
        assert!(obj.contains_key(key), "missing {key}");
    }
    assert_eq!(obj["force"].as_array().unwrap().len(), 3);
    assert_eq!(obj["torque"].as_array().unwrap().len(), 3);
    assert!(obj["energy"].as_f64().unwrap() < 0.0);
}

#[test]
fn far_pose_is_all_zero() {
    let a = assets();
    let o = run(&["eval", "--field", &a.fields(), "--pose", "-40,0,0,0,0.3,0"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["energy"].as_f64(), Some(0.0));
    for key in ["force", "torque"] {
        assert!(v[key]
            .as_array()
            .unwrap()
            .iter()
            .all(|x| x.as_f64() == Some(0.0)));
    }
}

#[test]
fn eval_writes_file_and_refuses_to_overwrite() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    assert_eq!(
        code(&run(&["eval", "--field", &a.fields(), "--out", s(&out)])),
        0
    );
    assert!(std::fs::read_to_string(&out).unwrap().contains("re_score"));
    assert_eq!(
        code(&run(&["eval", "--field", &a.fields(), "--out", s(&out)])),
        3
    );
    assert_eq!(
        code(&run(&[
            "eval",
            "--field",
            &a.fields(),
            "--out",
            s(&out),
            "--force"
        ])),
        0
    );
}

#[test]
fn bad_pose_and_flags_are_config_errors() {
    let a = assets();
    assert_eq!(
        code(&run(&["eval", "--field", &a.fields(), "--pose", "0,0,1"])),
        4
    );
    assert_eq!(
        code(&run(&[
            "eval",
            "--field",
            &a.fields(),
            "--pose",
            "0,0,nan,0,0,0"
        ])),
        4
    );
    assert_eq!(code(&run(&["eval", "--field", &a.fields(), "--bogus"])), 4);
    assert_eq!(code(&run(&["frobnicate"])), 4);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.sdfg");
    let o = run(&[
        "precompute",
        "--mesh",
        s(&a.peg),
        "--sigma",
        "-1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 4);
    assert!(!out.exists());
}

#[test]
fn missing_inputs_are_io_errors() {
    let a = assets();
    let o = run(&[
        "eval",
        "--field",
        &format!("{},{}", s(&a.block_field), "/nonexistent/peg.sdfg"),
    ]);
    assert_eq!(code(&o), 3);
    let junk = a.dir.join("junk.sdfg");
    std::fs::write(&junk, b"not a field").unwrap();
    let o = run(&[
        "eval",
        "--field",
        &format!("{},{}", s(&a.block_field), s(&junk)),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn single_step_sweep_has_one_row() {
    let a = assets();
    let o = run(&[
        "sweep",
        "--field",
        &a.fields(),
        "--axis",
        "x1",
        "--range",
        "1",
        "--steps",
        "1",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert_eq!(lines[0], "x1,re_score,im_score,energy");
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn steps_can_come_from_the_environment() {
    let a = assets();
    let o = bin()
        .args([
            "sweep",
            "--field",
            &a.fields(),
            "--axis",
            "r3",
            "--range",
            "0.5",
        ])
        .env("ASMFIELD_STEPS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn biaxial_sweep_peaks_at_zero_offset() {
    let a = assets();
    let o = run(&[
        "sweep",
        "--field",
        &a.fields(),
        "--axis",
        "x1,x3",
        "--range",
        "1,3",
        "--steps",
        "7",
    ]);
    assert_eq!(code(&o), 0);
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 49);
    let best = rows.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    assert_eq!((best[0], best[1]), (0.0, 0.0));
}

#[test]
fn mismatched_range_count_is_a_config_error() {
    let a = assets();
    let o = run(&[
        "sweep",
        "--field",
        &a.fields(),
        "--axis",
        "x1,x3",
        "--range",
        "1,2,3",
    ]);
    assert_eq!(code(&o), 4);
    let o = run(&[
        "sweep",
        "--field",
        &a.fields(),
        "--axis",
        "x9",
        "--range",
        "1",
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn trace_is_deterministic() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("snap.csv");
    let o = run(&[
        "trajectory",
        "--kind",
        "snap",
        "--seed",
        "3",
        "--out",
        s(&traj),
    ]);
    assert_eq!(code(&o), 0);
    let trace = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "trace",
            "--field",
            &a.fields(),
            "--trajectory",
            s(&traj),
            "--preset",
            "snap",
            "--tick-rate",
            "100",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let first = trace("a.csv");
    assert_eq!(first, trace("b.csv"));
    let lines: Vec<&str> = first.lines().collect();
    assert!(lines[0].starts_with("tick,time_s,proxy_tx"));
    // 5.5 s at 100 Hz plus the starting row
    assert_eq!(lines.len(), 1 + 551);
}

#[test]
fn empty_trajectory_gives_header_only() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("empty.csv");
    std::fs::write(&traj, "time_s,tx,ty,tz,rx,ry,rz\n").unwrap();
    let o = run(&["trace", "--field", &a.fields(), "--trajectory", s(&traj)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("tick,"));
}

#[test]
fn trace_overlay_is_merged_and_validated() {
    let a = assets();
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    std::fs::write(&traj, "0,0,0,1,0,0,0\n0.1,0,0,1,0,0,0\n").unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"tick_rate": 50, "coupling": {"k_t": 20}}"#).unwrap();
    let o = run(&[
        "trace",
        "--field",
        &a.fields(),
        "--trajectory",
        s(&traj),
        "--session",
        s(&good),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1 + 6);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"coupling": {"mass": -1}}"#).unwrap();
    let o = run(&[
        "trace",
        "--field",
        &a.fields(),
        "--trajectory",
        s(&traj),
        "--session",
        s(&bad),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn generate_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(code(&run(&["generate", "--example", "2", "--out", d])), 0);
    assert_eq!(code(&run(&["generate", "--example", "2", "--out", d])), 3);
    assert_eq!(
        code(&run(&["generate", "--example", "2", "--out", d, "--force"])),
        0
    );
    let mesh = asmfield::load_mesh(dir.path().join("peg.obj")).unwrap();
    assert!(mesh.validate().is_accepted());
}

fn http_get(port: u16, path: &str) -> (String, String) {
    let mut st = TcpStream::connect(("127.0.0.1", port)).unwrap();
    st.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(st, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut text = String::new();
    st.read_to_string(&mut text).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    (head.to_string(), body.to_string())
}

fn next_message(ws: &mut tungstenite::WebSocket<TcpStream>) -> WireMessage {
    loop {
        match ws.read().expect("frame arrives") {
            Message::Binary(b) => return WireMessage::decode(&b).unwrap(),
            Message::Close(_) => panic!("closed"),
            _ => continue,
        }
    }
}

#[test]
fn serve_streams_frames_and_mesh_files() {
    let a = assets();
    let mut child = bin()
        .args(["serve", "--field", &a.fields(), "--mesh", &a.meshes()])
        .args(["--port", "0", "--tick-rate", "50", "--max-sessions", "1"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let port: u16 = line
        .trim()
        .rsplit(':')
        .next()
        .unwrap()
        .parse()
        .expect("listening line names the port");

    let (head, body) = http_get(port, "/mesh/fixed.obj");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    let served = asmfield::mesh_io::parse_obj(&body, "fixed").unwrap();
    assert_eq!(
        served.content_hash(),
        asmfield::load_mesh(&a.block).unwrap().content_hash()
    );
    let (head, body) = http_get(port, "/mesh/moving.obj");
    assert!(head.starts_with("HTTP/1.1 200"));
    assert_eq!(
        asmfield::mesh_io::parse_obj(&body, "moving")
            .unwrap()
            .face_count(),
        asmfield::load_mesh(&a.peg).unwrap().face_count()
    );
    let (head, _) = http_get(port, "/mesh/other.obj");
    assert!(head.starts_with("HTTP/1.1 404"), "{head}");

    let stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .unwrap();
    let (mut ws, _) =
        tungstenite::client(format!("ws://127.0.0.1:{port}/session"), stream).unwrap();
    let config = WireMessage::SessionConfig(asmfield::SessionSettings {
        tick_rate: 50.0,
        ..Default::default()
    });
    ws.send(Message::binary(config.encode())).unwrap();
    match next_message(&mut ws) {
        WireMessage::StateFrame { tick, energy, .. } => {
            assert_eq!(tick, 0);
            assert!(energy < 0.0);
        }
        other => panic!("{other:?}"),
    }

    ws.send(Message::binary(vec![3, 0, 0, 0, b'{', b'x', b'}']))
        .unwrap();
    let mut saw_error = false;
    let mut last_tick = 0;
    for _ in 0..20 {
        match next_message(&mut ws) {
            WireMessage::Error { code, .. } => {
                assert_eq!(code, 1);
                saw_error = true;
            }
            WireMessage::StateFrame { tick, .. } => {
                assert!(tick > last_tick);
                last_tick = tick;
            }
            other => panic!("{other:?}"),
        }
    }
    assert!(saw_error);

    // a bare JSON text frame is accepted too
    let pose = WirePose {
        translation: [0.0, 0.0, 0.5],
        rotation: [0.0; 3],
    };
    let update = WireMessage::ProxyUpdate {
        tick: last_tick + 1,
        pose,
    };
    ws.send(Message::text(update.to_json())).unwrap();
    let mut moved = false;
    for _ in 0..25 {
        if let WireMessage::StateFrame { sim_pose, .. } = next_message(&mut ws) {
            moved |= sim_pose.translation[2] > 0.05;
        }
    }
    assert!(moved, "simulated part follows the proxy");

    ws.close(None).unwrap();
    let _ = ws.flush();
    let status = child.wait().unwrap();
    assert!(status.success());
}
