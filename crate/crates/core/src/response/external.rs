//! Out-of-process response models.
//!
//! The child reads request frames on stdin and answers each with a reply
//! frame on stdout, all little-endian:
//!
//! ```text
//! request: u32 width, u32 height, width*height f64 pixels (row-major)
//! reply:   f64 response, width*height f64 gradient
//! ```

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread::JoinHandle;
use std::time::Duration;

use super::ResponseModel;
use crate::error::{Error, Result};
use crate::render::Image;

/// Largest image side accepted on the wire.
const MAX_SIDE: u32 = 1 << 14;

pub fn encode_request(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * img.len());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    for x in img.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

pub fn decode_request(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 8 {
        return Err(Error::Model("request frame shorter than its header".into()));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::Model(format!("request size {w}x{h} exceeds limit")));
    }
    let n = w as usize * h as usize;
    if bytes.len() != 8 + 8 * n {
        return Err(Error::Model(format!(
            "request frame is {} bytes, expected {}",
            bytes.len(),
            8 + 8 * n
        )));
    }
    Image::new(w as usize, h as usize, f64s(&bytes[8..]))
}

pub fn encode_response(response: f64, gradient: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * gradient.len());
    out.extend_from_slice(&response.to_le_bytes());
    for x in gradient.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Rejects wrong sizes and non-finite values.
pub fn decode_response(bytes: &[u8], width: usize, height: usize) -> Result<(f64, Image)> {
    let n = width * height;
    if bytes.len() != 8 + 8 * n {
        return Err(Error::Model(format!(
            "reply frame is {} bytes, expected {}",
            bytes.len(),
            8 + 8 * n
        )));
    }
    let vals = f64s(bytes);
    if !vals[0].is_finite() {
        return Err(Error::Model(format!("model returned non-finite response {}", vals[0])));
    }
    if vals[1..].iter().any(|x| !x.is_finite()) {
        return Err(Error::Model("model returned a non-finite gradient".into()));
    }
    Ok((vals[0], Image::new(width, height, vals[1..].to_vec())?))
}

/// Reads one request frame. `Ok(None)` on a clean end of stream.
pub fn read_request<R: Read>(reader: &mut R) -> Result<Option<Image>> {
    let mut header = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Model("truncated request header".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Model(format!("reading request: {e}"))),
        }
    }
    let w = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes"));
    let h = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::Model(format!("request size {w}x{h} exceeds limit")));
    }
    let mut body = vec![0u8; 8 * w as usize * h as usize];
    reader
        .read_exact(&mut body)
        .map_err(|e| Error::Model(format!("reading request body: {e}")))?;
    Ok(Some(Image::new(w as usize, h as usize, f64s(&body))?))
}

pub fn write_response<W: Write>(writer: &mut W, response: f64, gradient: &Image) -> Result<()> {
    writer
        .write_all(&encode_response(response, gradient))
        .and_then(|_| writer.flush())
        .map_err(|e| Error::Model(format!("writing reply: {e}")))
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    requests: Sender<usize>,
    replies: Receiver<io::Result<Vec<u8>>>,
    reader: Option<JoinHandle<()>>,
}

impl Session {
    fn shutdown(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        drop(self.requests);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

/// A persistent child process speaking the frame protocol. A timeout or
/// protocol violation kills the child; later calls fail fast.
pub struct ExternalModel {
    command: Vec<String>,
    timeout: Duration,
    session: Mutex<Option<Session>>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalModel {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let Some((program, args)) = command.split_first() else {
            return Err(Error::InvalidParameter("external model command is empty".into()));
        };
        if timeout.is_zero() {
            return Err(Error::InvalidParameter("external model timeout must be > 0".into()));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Model(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (req_tx, req_rx) = mpsc::channel::<usize>();
        let (rep_tx, rep_rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            for len in req_rx {
                let mut buf = vec![0u8; len];
                let res = stdout.read_exact(&mut buf).map(|_| buf);
                let failed = res.is_err();
                if rep_tx.send(res).is_err() || failed {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_vec(),
            timeout,
            session: Mutex::new(Some(Session {
                child,
                stdin,
                requests: req_tx,
                replies: rep_rx,
                reader: Some(reader),
            })),
        })
    }

    fn call(&self, img: &Image) -> Result<(f64, Image)> {
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let Some(session) = guard.as_mut() else {
            return Err(Error::Model("external model is no longer running".into()));
        };
        let result = Self::exchange(session, img, self.timeout);
        if result.is_err() {
            if let Some(s) = guard.take() {
                s.shutdown();
            }
        }
        result
    }

    fn exchange(session: &mut Session, img: &Image, timeout: Duration) -> Result<(f64, Image)> {
        session
            .stdin
            .write_all(&encode_request(img))
            .and_then(|_| session.stdin.flush())
            .map_err(|e| Error::Model(format!("writing request: {e}")))?;
        session
            .requests
            .send(8 + 8 * img.len())
            .map_err(|_| Error::Model("model output stream closed".into()))?;
        match session.replies.recv_timeout(timeout) {
            Ok(Ok(bytes)) => decode_response(&bytes, img.width(), img.height()),
            Ok(Err(e)) => Err(Error::Model(format!("reading reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Model(format!(
                "no reply within {:.3} s",
                timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Model("model output stream closed".into())),
        }
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        let guard = self.session.get_mut().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = guard.take() {
            s.shutdown();
        }
    }
}

impl ResponseModel for ExternalModel {
    fn respond(&self, img: &Image) -> Result<f64> {
        Ok(self.call(img)?.0)
    }

    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        self.call(img)
    }

    fn describe(&self) -> String {
        format!("external {}", self.command.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_roundtrip() {
        let img = Image::new(3, 2, vec![0.0, -1.5, 2.25, f64::MIN_POSITIVE, 7.0, 1e300]).unwrap();
        let bytes = encode_request(&img);
        assert_eq!(&bytes[0..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        let back = decode_request(&bytes).unwrap();
        assert_eq!(back, img);
        let mut cursor = io::Cursor::new(bytes);
        assert_eq!(read_request(&mut cursor).unwrap().unwrap(), img);
        assert!(read_request(&mut cursor).unwrap().is_none());
    }

    #[test]
    fn response_rejects_nan_and_bad_size() {
        let g = Image::filled(2, 2, 0.25);
        let ok = encode_response(0.5, &g);
        assert_eq!(decode_response(&ok, 2, 2).unwrap().0, 0.5);
        assert!(decode_response(&ok, 3, 2).is_err());
        let nan = encode_response(f64::NAN, &g);
        assert!(matches!(decode_response(&nan, 2, 2), Err(Error::Model(_))));
    }

    #[test]
    fn empty_command_rejected() {
        assert!(ExternalModel::spawn(&[], Duration::from_secs(1)).is_err());
    }
}
