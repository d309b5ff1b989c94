use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::protocol::{all_scores, decode_response, encode_request, read_frame, single_scores, write_frame, ScoresPayload};
use super::{ScoreKind, ScorerError, DEFAULT_RETRIES};
use crate::Image;

struct Running {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// Scorer running as a child process that speaks length-prefixed frames on
/// stdin/stdout. The process is started lazily, calls are serialized, and a
/// process that dies is restarted on the next attempt.
pub struct SubprocessScorer {
    command: String,
    retries: usize,
    process: Mutex<Option<Running>>,
}

impl std::fmt::Debug for SubprocessScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessScorer").field("command", &self.command).finish()
    }
}

impl SubprocessScorer {
    pub fn new(command: &str) -> Self {
        SubprocessScorer { command: command.to_string(), retries: DEFAULT_RETRIES, process: Mutex::new(None) }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn score(&self, images: &[Image], target: usize, kind: ScoreKind) -> Result<Vec<f64>, ScorerError> {
        let payload = encode_request(images, target, kind, false)?;
        single_scores(self.exchange(&payload)?)
    }

    pub fn score_all(&self, images: &[Image], kind: ScoreKind) -> Result<Vec<Vec<f64>>, ScorerError> {
        let payload = encode_request(images, 0, kind, true)?;
        all_scores(self.exchange(&payload)?)
    }

    fn spawn(&self) -> Result<Running, ScorerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::transport(format!("cannot start '{}': {e}", self.command)))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Running { child, stdin, stdout })
    }

    fn exchange(&self, payload: &[u8]) -> Result<ScoresPayload, ScorerError> {
        let mut guard = self.process.lock().unwrap();
        let mut last = None;
        for attempt in 0..=self.retries {
            if guard.is_none() {
                *guard = Some(self.spawn()?);
            }
            let running = guard.as_mut().unwrap();
            let io = write_frame(&mut running.stdin, payload).and_then(|_| read_frame(&mut running.stdout));
            match io {
                Ok(bytes) => return decode_response(&bytes),
                Err(e) => {
                    log::warn!("subprocess scorer failed (attempt {attempt}): {e}");
                    if let Some(mut dead) = guard.take() {
                        let _ = dead.child.kill();
                        let _ = dead.child.wait();
                    }
                    last = Some(ScorerError::transport(e.to_string()));
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl Drop for SubprocessScorer {
    fn drop(&mut self) {
        if let Some(mut running) = self.process.get_mut().unwrap().take() {
            drop(running.stdin);
            let _ = running.child.kill();
            let _ = running.child.wait();
        }
    }
}
