//! Session wire protocol.
//!
//! Every message is a UTF-8 JSON object prefixed by its byte length as a
//! little-endian `u32`. The object carries a `type` tag naming the variant.
//! Over a WebSocket each binary frame holds exactly one prefixed message.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Largest accepted payload; anything bigger is treated as malformed.
pub const MAX_MESSAGE_BYTES: usize = 1 << 20;

/// Error codes carried by [`WireMessage::Error`].
pub mod codes {
    /// The payload was not a valid framed JSON message.
    pub const MALFORMED: u32 = 1;
    /// A well-formed message arrived that the receiver does not accept here.
    pub const UNEXPECTED: u32 = 2;
    /// The wrench could not be evaluated; the pose was held.
    pub const EVALUATION: u32 = 3;
    /// The requested configuration is invalid.
    pub const CONFIG: u32 = 4;
}

/// Pose as translation plus rotation vector (axis times angle in radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct WirePose {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl From<&RigidTransform> for WirePose {
    fn from(t: &RigidTransform) -> Self {
        let tr = t.translation();
        let rv = t.rotation_vector();
        WirePose {
            translation: [tr.x, tr.y, tr.z],
            rotation: [rv.x, rv.y, rv.z],
        }
    }
}

impl WirePose {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        if self
            .translation
            .iter()
            .chain(&self.rotation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Protocol("pose has non-finite components".into()));
        }
        Ok(RigidTransform::from_rotation_vector(
            &Vec3::from(self.rotation),
            Vec3::from(self.translation),
        ))
    }
}

/// Virtual coupling between the proxy and the simulated part, plus the
/// inertia surrogate of the simulated part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Coupling {
    /// Translational spring, force per length.
    pub k_t: f64,
    /// Rotational spring, torque per radian.
    pub k_r: f64,
    pub c_t: f64,
    pub c_r: f64,
    pub mass: f64,
    pub inertia: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling {
            k_t: 200.0,
            k_r: 50.0,
            c_t: 10.0,
            c_r: 10.0,
            mass: 0.01,
            inertia: 0.01,
        }
    }
}

impl Coupling {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k_t,
            self.k_r,
            self.c_t,
            self.c_r,
            self.mass,
            self.inertia,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coupling constants must be finite and >= 0: {self:?}"
            )));
        }
        if self.mass <= 0.0 || self.inertia <= 0.0 {
            return Err(Error::InvalidParameter(
                "mass and inertia must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Session parameters sent by the client as the first message.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub gamma_sc: f64,
    pub tick_rate: f64,
    pub coupling: Coupling,
    /// Starting pose of both the proxy and the simulated part.
    pub initial_pose: WirePose,
    /// Keep the simulated orientation fixed (translation-only guidance).
    pub lock_rotation: bool,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            gamma_sc: 1.0,
            tick_rate: 250.0,
            coupling: Coupling::default(),
            initial_pose: WirePose::default(),
            lock_rotation: false,
        }
    }
}

impl SessionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tick rate must be positive, got {}",
                self.tick_rate
            )));
        }
        if !(self.gamma_sc >= 0.0 && self.gamma_sc.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be non-negative, got {}",
                self.gamma_sc
            )));
        }
        self.coupling.validate()?;
        self.initial_pose.to_transform().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    ProxyUpdate {
        tick: u64,
        pose: WirePose,
    },
    StateFrame {
        tick: u64,
        sim_pose: WirePose,
        energy: f64,
        force: [f64; 3],
        torque: [f64; 3],
        servo_rate_estimate: f64,
    },
    SessionConfig(SessionSettings),
    Error {
        code: u32,
        text: String,
    },
}

impl WireMessage {
    pub fn error(code: u32, text: impl Into<String>) -> Self {
        WireMessage::Error {
            code,
            text: text.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad message: {e}")))
    }

    /// Length prefix followed by the JSON payload.
    pub fn encode(&self) -> Vec<u8> {
        let json = self.to_json();
        let mut out = Vec::with_capacity(4 + json.len());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out
    }

    /// Decodes one complete frame; the prefix must match the payload length.
    pub fn decode(frame: &[u8]) -> Result<Self> {
        match split_frame(frame)? {
            Some((payload, rest)) if rest.is_empty() => {
                let text = std::str::from_utf8(payload)
                    .map_err(|_| Error::Protocol("payload is not UTF-8".into()))?;
                Self::from_json(text)
            }
            Some(_) => Err(Error::Protocol("trailing bytes after message".into())),
            None => Err(Error::Protocol("truncated message".into())),
        }
    }
}

/// Splits the first framed message off a byte stream. `Ok(None)` means more
/// bytes are needed.
pub fn split_frame(bytes: &[u8]) -> Result<Option<(&[u8], &[u8])>> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_MESSAGE_BYTES {
        return Err(Error::Protocol(format!(
            "message of {len} bytes exceeds the limit"
        )));
    }
    if bytes.len() < 4 + len {
        return Ok(None);
    }
    Ok(Some((&bytes[4..4 + len], &bytes[4 + len..])))
}
