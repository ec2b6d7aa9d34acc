use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::Deserialize;

use super::{Pos, Token, Tokenizer};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct WireToken {
    surface: String,
    #[serde(default)]
    normalized: Option<String>,
    #[serde(default)]
    pos: String,
}

#[derive(Deserialize)]
struct WireResponse {
    tokens: Vec<WireToken>,
}

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// External morphological analyzer speaking line-delimited JSON:
/// `{"text": ...}` in, `{"tokens": [{"surface","normalized","pos"}]}` out.
///
/// Requests through one handle are serialized. Any protocol or process
/// failure is fatal and reports what the plugin wrote to stderr.
pub struct SubprocessTokenizer {
    child: Mutex<Child>,
    pipes: Mutex<Pipes>,
    stderr: Arc<Mutex<String>>,
    program: String,
}

impl SubprocessTokenizer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Tokenizer {
                message: format!("cannot start {program}: {e}"),
                stderr: String::new(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock()
                    .unwrap()
                    .push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });
        Ok(SubprocessTokenizer {
            child: Mutex::new(child),
            pipes: Mutex::new(Pipes { stdin, stdout }),
            stderr,
            program: program.to_owned(),
        })
    }

    fn fail(&self, message: String) -> Error {
        // Give the process a moment to exit so its stderr is drained.
        let mut child = self.child.lock().unwrap();
        let status = match child.try_wait() {
            Ok(Some(s)) => Some(s),
            _ => {
                thread::sleep(std::time::Duration::from_millis(100));
                child.try_wait().ok().flatten()
            }
        };
        if status.is_none() {
            let _ = child.kill();
            let _ = child.wait();
        }
        thread::sleep(std::time::Duration::from_millis(20));
        Error::Tokenizer {
            message: format!("{}: {message}", self.program),
            stderr: self.stderr.lock().unwrap().trim().to_owned(),
        }
    }
}

impl Tokenizer for SubprocessTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let request = serde_json::json!({ "text": text }).to_string();
        let line = {
            let mut pipes = self.pipes.lock().unwrap();
            if let Err(e) = writeln!(pipes.stdin, "{request}").and_then(|_| pipes.stdin.flush()) {
                drop(pipes);
                return Err(self.fail(format!("write failed: {e}")));
            }
            let mut line = String::new();
            match pipes.stdout.read_line(&mut line) {
                Ok(0) => {
                    drop(pipes);
                    return Err(self.fail("plugin closed its output".into()));
                }
                Ok(_) => line,
                Err(e) => {
                    drop(pipes);
                    return Err(self.fail(format!("read failed: {e}")));
                }
            }
        };
        let resp: WireResponse = serde_json::from_str(&line)
            .map_err(|e| self.fail(format!("bad response {:?}: {e}", line.trim_end())))?;
        resp.tokens
            .into_iter()
            .map(|t| {
                let normalized = t.normalized.unwrap_or_else(|| t.surface.clone());
                if normalized.is_empty() {
                    return Err(self.fail(format!("empty normalized form for {:?}", t.surface)));
                }
                Ok(Token::new(t.surface, normalized, Pos::from_tag(&t.pos)))
            })
            .collect()
    }
}

impl Drop for SubprocessTokenizer {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
