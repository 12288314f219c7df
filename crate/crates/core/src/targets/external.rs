use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use nalgebra::DMatrix;

use super::LogDensity;
use crate::error::{Result, VipsError};

/// A target served by a child process over a line protocol.
///
/// Each request is one line `id x_1 … x_D`; the process answers with one
/// line `id value`. Requests are issued one at a time and ids increase
/// monotonically, so a mismatched id is reported as an error.
pub struct ExternalTarget {
    dim: usize,
    command: String,
    io: Mutex<Channel>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
    line: String,
}

impl std::fmt::Debug for ExternalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalTarget")
            .field("dim", &self.dim)
            .field("command", &self.command)
            .finish()
    }
}

impl ExternalTarget {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str, dim: usize) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            dim,
            command: command.to_string(),
            io: Mutex::new(Channel {
                child,
                stdin,
                stdout,
                next_id: 0,
                line: String::new(),
            }),
        })
    }
}

impl Channel {
    fn request(&mut self, x: &[f64]) -> std::result::Result<f64, String> {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = id.to_string();
        for v in x {
            msg.push(' ');
            msg.push_str(&v.to_string());
        }
        msg.push('\n');
        self.stdin
            .write_all(msg.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| format!("write failed: {e}"))?;
        self.line.clear();
        let n = self
            .stdout
            .read_line(&mut self.line)
            .map_err(|e| format!("read failed: {e}"))?;
        if n == 0 {
            return Err("external target closed its output".into());
        }
        let mut parts = self.line.split_whitespace();
        let got_id: u64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed response {:?}", self.line.trim()))?;
        if got_id != id {
            return Err(format!("response id {got_id} does not match request {id}"));
        }
        parts
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| format!("malformed response {:?}", self.line.trim()))
    }
}

impl LogDensity for ExternalTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut io = self.io.lock().expect("external target lock poisoned");
        samples
            .row_iter()
            .map(|row| {
                let x: Vec<f64> = row.iter().copied().collect();
                io.request(&x)
                    .map_err(|message| VipsError::TargetEvaluation { message, sample: x })
            })
            .collect()
    }

    fn name(&self) -> &str {
        "external"
    }
}

impl Drop for ExternalTarget {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Echoes the first coordinate back as the log density.
    const FIRST: &str = r#"while read id x rest; do echo "$id $x"; done"#;

    #[test]
    fn round_trip_through_shell() {
        let t = ExternalTarget::spawn(FIRST, 2).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.25, 2.0, -3.0, 0.5]);
        let v = t.log_density(&x).unwrap();
        assert_eq!(v, vec![0.0, 1.25, -3.0]);
        let v = t.log_density(&x.rows(1, 1).into_owned()).unwrap();
        assert_eq!(v, vec![1.25]);
    }

    #[test]
    fn dead_process_reports_the_sample() {
        let t = ExternalTarget::spawn("true", 1).unwrap();
        let err = t.log_density(&DMatrix::from_element(1, 1, 4.0)).unwrap_err();
        match err {
            VipsError::TargetEvaluation { sample, .. } => assert_eq!(sample, vec![4.0]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
