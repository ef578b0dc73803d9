//! Samplers running in another process, driven over a line protocol.
//!
//! Requests are written to the child's standard input:
//!
//! ```text
//! SAMPLE <theta> <seed>
//! SAMPLE_BATCH <k>
//! <theta> <seed>        (k lines)
//! ```
//!
//! The child answers every sample with one line holding the estimate, or
//! `ERROR <message>`. Seeds come from the caller's stream, so a sampler that
//! seeds itself from them makes whole runs reproducible.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use rand::RngCore;

use crate::models::{Domain, ModelError, SampleOracle};
use crate::numerics::RngStream;

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

fn external(message: impl Into<String>) -> ModelError {
    ModelError::External(message.into())
}

impl Session {
    fn send(&mut self, text: &str) -> Result<(), ModelError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| external("sampler input closed"))?;
        stdin
            .write_all(text.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| external(format!("writing to sampler: {e}")))
    }

    fn receive(&mut self) -> Result<f64, ModelError> {
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| external(format!("reading from sampler: {e}")))?;
        if n == 0 {
            return Err(external("sampler closed its output"));
        }
        let t = line.trim();
        if let Some(msg) = t.strip_prefix("ERROR") {
            return Err(external(msg.trim().to_string()));
        }
        t.parse()
            .map_err(|_| external(format!("unparseable sampler response {t:?}")))
    }
}

/// A [`SampleOracle`] backed by a child process.
pub struct ExternalSampler {
    command: String,
    domain: Domain,
    session: Mutex<Session>,
}

impl std::fmt::Debug for ExternalSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSampler")
            .field("command", &self.command)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ExternalSampler {
    /// Starts `command`, split on whitespace with no shell involved.
    pub fn spawn(command: &str, domain: Domain) -> Result<Self, ModelError> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| external("empty sampler command"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| external(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            command: command.to_string(),
            domain,
            session: Mutex::new(Session { child, stdin, stdout }),
        })
    }

    fn session(&self) -> Result<std::sync::MutexGuard<'_, Session>, ModelError> {
        self.session
            .lock()
            .map_err(|_| external("sampler session poisoned by an earlier failure"))
    }
}

impl SampleOracle for ExternalSampler {
    fn name(&self) -> &str {
        "external"
    }

    fn domain(&self) -> Domain {
        self.domain
    }

    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        let seed = rng.next_u64();
        let mut s = self.session()?;
        s.send(&format!("SAMPLE {theta} {seed}\n"))?;
        s.receive()
    }

    fn draw_batch(&self, thetas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
        if thetas.len() < 2 {
            return thetas.iter().map(|&t| self.draw(t, rng)).collect();
        }
        let mut request = format!("SAMPLE_BATCH {}\n", thetas.len());
        for &t in thetas {
            request.push_str(&format!("{t} {}\n", rng.next_u64()));
        }
        let mut s = self.session()?;
        s.send(&request)?;
        thetas.iter().map(|_| s.receive()).collect()
    }
}

impl Drop for ExternalSampler {
    fn drop(&mut self) {
        let Ok(s) = self.session.get_mut() else { return };
        s.stdin.take();
        for _ in 0..100 {
            if let Ok(Some(_)) = s.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = s.child.kill();
        let _ = s.child.wait();
    }
}

fn answer(oracle: &dyn SampleOracle, theta: Option<&str>, seed: Option<&str>) -> String {
    let theta = theta.and_then(|t| t.parse::<f64>().ok());
    let seed = seed.and_then(|s| s.parse::<u64>().ok());
    match (theta, seed) {
        (Some(theta), Some(seed)) => {
            let mut rng = RngStream::new(seed, 0);
            match oracle.draw(theta, &mut rng) {
                Ok(v) => format!("{v}"),
                Err(e) => format!("ERROR {e}"),
            }
        }
        _ => "ERROR expected <theta> <seed>".to_string(),
    }
}

/// Answers protocol requests from `input` until it ends. Each sample uses a
/// fresh stream seeded from its request line.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn SampleOracle, input: R, mut out: W) -> io::Result<()> {
    let mut lines = input.lines();
    while let Some(line) = lines.next() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => continue,
            Some("SAMPLE") => writeln!(out, "{}", answer(oracle, parts.next(), parts.next()))?,
            Some("SAMPLE_BATCH") => match parts.next().and_then(|k| k.parse::<usize>().ok()) {
                Some(k) => {
                    for _ in 0..k {
                        let Some(item) = lines.next() else { break };
                        let item = item?;
                        let mut p = item.split_whitespace();
                        writeln!(out, "{}", answer(oracle, p.next(), p.next()))?;
                    }
                }
                None => writeln!(out, "ERROR expected SAMPLE_BATCH <k>")?,
            },
            Some(other) => writeln!(out, "ERROR unknown request {other:?}")?,
        }
        out.flush()?;
    }
    Ok(())
}
