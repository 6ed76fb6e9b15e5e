//! Wire protocol for plugging external controllers over standard byte
//! streams.
//!
//! Request: a 4-byte big-endian payload length, then the payload — a packed
//! 100x50 bitmap (row-major, most significant bit first, 625 bytes) followed
//! by the current steering angle as an 8-byte big-endian IEEE-754 double.
//! Response: exactly two 8-byte big-endian doubles, acceleration then
//! steering rate. One request per control step; any malformed response
//! aborts the run.

use std::io::{BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use super::{Control, Controller, Observation, SimError};

pub const PROTOCOL_COLS: usize = 100;
pub const PROTOCOL_ROWS: usize = 50;
pub const BITMAP_BYTES: usize = PROTOCOL_COLS * PROTOCOL_ROWS / 8;
pub const REQUEST_PAYLOAD_BYTES: usize = BITMAP_BYTES + 8;
pub const RESPONSE_BYTES: usize = 16;

/// Frame an observation as a length-prefixed request.
pub fn encode_request(obs: &Observation) -> Result<Vec<u8>, SimError> {
    if obs.cols != PROTOCOL_COLS || obs.rows != PROTOCOL_ROWS {
        return Err(SimError::ControllerProtocol(format!(
            "protocol requires a {PROTOCOL_COLS}x{PROTOCOL_ROWS} image, got {}x{}",
            obs.cols, obs.rows
        )));
    }
    debug_assert_eq!(obs.bits.len(), BITMAP_BYTES);
    let mut out = Vec::with_capacity(4 + REQUEST_PAYLOAD_BYTES);
    out.extend_from_slice(&(REQUEST_PAYLOAD_BYTES as u32).to_be_bytes());
    out.extend_from_slice(&obs.bits);
    out.extend_from_slice(&obs.alpha.to_be_bytes());
    Ok(out)
}

/// Decode a request payload (without the length prefix).
pub fn decode_request(payload: &[u8]) -> Result<Observation, SimError> {
    if payload.len() != REQUEST_PAYLOAD_BYTES {
        return Err(SimError::ControllerProtocol(format!(
            "request payload must be {REQUEST_PAYLOAD_BYTES} bytes, got {}",
            payload.len()
        )));
    }
    let bits = payload[..BITMAP_BYTES].to_vec();
    let mut alpha_bytes = [0u8; 8];
    alpha_bytes.copy_from_slice(&payload[BITMAP_BYTES..]);
    Ok(Observation {
        alpha: f64::from_be_bytes(alpha_bytes),
        cols: PROTOCOL_COLS,
        rows: PROTOCOL_ROWS,
        bits,
    })
}

pub fn encode_response(u: &Control) -> [u8; RESPONSE_BYTES] {
    let mut out = [0u8; RESPONSE_BYTES];
    out[..8].copy_from_slice(&u.accel.to_be_bytes());
    out[8..].copy_from_slice(&u.steer_rate.to_be_bytes());
    out
}

pub fn decode_response(bytes: &[u8; RESPONSE_BYTES]) -> Control {
    let mut accel = [0u8; 8];
    let mut steer = [0u8; 8];
    accel.copy_from_slice(&bytes[..8]);
    steer.copy_from_slice(&bytes[8..]);
    Control {
        accel: f64::from_be_bytes(accel),
        steer_rate: f64::from_be_bytes(steer),
    }
}

/// Serve a controller over a pair of byte streams until the requester closes
/// its end. Used by the `stdio-controller` subcommand.
pub fn serve_stdio(
    ctrl: &mut dyn Controller,
    input: &mut dyn Read,
    output: &mut dyn Write,
) -> Result<(), SimError> {
    loop {
        let mut len_bytes = [0u8; 4];
        match input.read_exact(&mut len_bytes) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(SimError::ControllerProtocol(e.to_string())),
        }
        let len = u32::from_be_bytes(len_bytes) as usize;
        if len != REQUEST_PAYLOAD_BYTES {
            return Err(SimError::ControllerProtocol(format!(
                "unexpected request length {len}"
            )));
        }
        let mut payload = vec![0u8; len];
        input
            .read_exact(&mut payload)
            .map_err(|e| SimError::ControllerProtocol(e.to_string()))?;
        let obs = decode_request(&payload)?;
        let u = ctrl.control(&obs)?;
        output
            .write_all(&encode_response(&u))
            .and_then(|()| output.flush())
            .map_err(|e| SimError::ControllerProtocol(e.to_string()))?;
    }
}

/// A controller running in a child process, spoken to over its standard
/// streams. The child is killed on drop.
pub struct ExternalController {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExternalController {
    pub fn spawn(command: &mut Command) -> Result<Self, SimError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| SimError::ControllerProtocol(format!("spawn failed: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| SimError::ControllerProtocol("no child stdin".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| SimError::ControllerProtocol("no child stdout".into()))?;
        Ok(ExternalController {
            child,
            stdin,
            stdout: BufReader::new(stdout),
        })
    }
}

impl Controller for ExternalController {
    fn control(&mut self, obs: &Observation) -> Result<Control, SimError> {
        let req = encode_request(obs)?;
        self.stdin
            .write_all(&req)
            .and_then(|()| self.stdin.flush())
            .map_err(|e| SimError::ControllerProtocol(format!("request write failed: {e}")))?;
        let mut resp = [0u8; RESPONSE_BYTES];
        self.stdout
            .read_exact(&mut resp)
            .map_err(|e| SimError::ControllerProtocol(format!("response read failed: {e}")))?;
        Ok(decode_response(&resp))
    }
}

impl Drop for ExternalController {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
