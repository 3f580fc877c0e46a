//! WebSocket session server and the static mesh endpoint.
//!
//! One listening port handles both: `GET /mesh/fixed.obj` and
//! `GET /mesh/moving.obj` return the parts as OBJ, any WebSocket upgrade
//! starts a session. Each connection runs on its own thread.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use asmfield::mesh_io::write_obj;
use asmfield::session::{run_session, Inbound, RunLimits, SystemClock, Transport};
use asmfield::{AffinityGrid, Scene, SessionSettings, TriMesh};
use log::{info, warn};
use tungstenite::{Message, WebSocket};

pub struct MeshAssets {
    fixed: String,
    moving: String,
}

impl MeshAssets {
    pub fn new(fixed: &TriMesh, moving: &TriMesh) -> Self {
        MeshAssets {
            fixed: write_obj(fixed),
            moving: write_obj(moving),
        }
    }

    fn get(&self, path: &str) -> Option<&str> {
        match path {
            "/mesh/fixed.obj" => Some(&self.fixed),
            "/mesh/moving.obj" => Some(&self.moving),
            _ => None,
        }
    }
}

pub fn serve(
    fixed: &AffinityGrid,
    moving: &AffinityGrid,
    settings: &SessionSettings,
    assets: Option<&MeshAssets>,
    port: u16,
    max_sessions: Option<usize>,
) -> io::Result<()> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    eprintln!("listening on ws://{}", listener.local_addr()?);
    listener.set_nonblocking(true)?;
    let ended = AtomicUsize::new(0);
    let scene = Scene::new(fixed, moving);
    std::thread::scope(|s| -> io::Result<()> {
        loop {
            if max_sessions.is_some_and(|m| ended.load(Ordering::SeqCst) >= m) {
                return Ok(());
            }
            let stream = match listener.accept() {
                Ok((st, _)) => st,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            stream.set_nonblocking(false)?;
            let (ended, scene) = (&ended, &scene);
            s.spawn(move || match handle(stream, scene, settings, assets) {
                Ok(true) => {
                    ended.fetch_add(1, Ordering::SeqCst);
                }
                Ok(false) => {}
                Err(e) => warn!("connection ended with an error: {e}"),
            });
        }
    })
}

/// Reads the request head without consuming it.
fn peek_head(stream: &TcpStream) -> io::Result<String> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut buf = vec![0u8; 8192];
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Err(io::Error::new(
                ErrorKind::UnexpectedEof,
                "connection closed before request",
            ));
        }
        let head = String::from_utf8_lossy(&buf[..n]).into_owned();
        if head.contains("\r\n\r\n") || n == buf.len() {
            return Ok(head);
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

/// Returns whether a session ran on this connection.
fn handle(
    mut stream: TcpStream,
    scene: &Scene,
    settings: &SessionSettings,
    assets: Option<&MeshAssets>,
) -> io::Result<bool> {
    let head = peek_head(&stream)?;
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let upgrade = head.lines().any(|l| {
        l.to_ascii_lowercase().starts_with("upgrade:")
            && l.to_ascii_lowercase().contains("websocket")
    });
    if upgrade {
        stream.set_read_timeout(None)?;
        let ws = tungstenite::accept(stream)
            .map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
        ws.get_ref().set_nonblocking(true)?;
        let mut transport = WsTransport { ws };
        let report = run_session(
            scene,
            settings,
            &mut transport,
            &mut SystemClock::default(),
            &RunLimits::default(),
        )
        .map_err(|e| io::Error::other(e.to_string()))?;
        info!(
            "session ended after {} ticks ({} skipped, {:.1} Hz)",
            report.ticks_run, report.ticks_skipped, report.servo_rate_estimate
        );
        let _ = transport.ws.close(None);
        let _ = transport.ws.flush();
        return Ok(true);
    }
    // plain HTTP: drain the head we peeked, answer, close
    let mut sink = vec![0u8; head.len()];
    let _ = stream.read(&mut sink);
    let body = if method == "GET" {
        assets.and_then(|a| a.get(path))
    } else {
        None
    };
    let response = match body {
        Some(b) => format!(
            "HTTP/1.1 200 OK\r\nContent-Type: model/obj\r\nContent-Length: {}\r\nAccess-Control-Allow-Origin: *\r\nConnection: close\r\n\r\n{b}",
            b.len()
        ),
        None => "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_string(),
    };
    stream.write_all(response.as_bytes())?;
    stream.flush()?;
    Ok(false)
}

struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl Transport for WsTransport {
    fn poll(&mut self) -> Inbound {
        let _ = self.ws.flush();
        loop {
            match self.ws.read() {
                Ok(Message::Binary(b)) => return Inbound::Frame(b.to_vec()),
                Ok(Message::Text(t)) => {
                    // browsers may send bare JSON text frames
                    let mut f = (t.len() as u32).to_le_bytes().to_vec();
                    f.extend_from_slice(t.as_bytes());
                    return Inbound::Frame(f);
                }
                Ok(Message::Close(_)) => return Inbound::Closed,
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => {
                    return Inbound::Idle
                }
                Err(_) => return Inbound::Closed,
            }
        }
    }

    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        match self.ws.send(Message::binary(frame.to_vec())) {
            Ok(()) => Ok(()),
            Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => Ok(()),
            Err(e) => Err(io::Error::new(ErrorKind::BrokenPipe, e.to_string())),
        }
    }
}
