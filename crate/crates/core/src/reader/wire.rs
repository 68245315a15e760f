//! Newline-delimited JSON reader protocol.
//!
//! ```text
//! request:  {"id": string, "question": string, "paragraph": string, "lang": "en"|"zh"}
//! response: {"id": string, "start_char": int, "end_char": int, "score": float}
//!       or  {"id": string, "no_answer": true, "score": float}
//! ```
//!
//! One object per line. Responses may arrive in any order and are matched
//! to requests by `id`. Offsets count Unicode scalar values of the request's
//! `paragraph`.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Reader, ReaderError, ReaderRequest, SpanPrediction};
use crate::text::Lang;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub question: String,
    pub paragraph: String,
    pub lang: Lang,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireResponse {
    Span {
        id: String,
        start_char: usize,
        end_char: usize,
        score: f64,
    },
    NoAnswer {
        id: String,
        score: f64,
    },
}

#[derive(Serialize)]
struct SpanLine<'a> {
    id: &'a str,
    start_char: usize,
    end_char: usize,
    score: f64,
}

#[derive(Serialize)]
struct NoAnswerLine<'a> {
    id: &'a str,
    no_answer: bool,
    score: f64,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    id: &'a str,
    error: &'a str,
}

impl WireResponse {
    pub fn id(&self) -> &str {
        match self {
            WireResponse::Span { id, .. } | WireResponse::NoAnswer { id, .. } => id,
        }
    }

    /// The response as one JSON line, without the newline.
    pub fn to_line(&self) -> String {
        match self {
            WireResponse::Span {
                id,
                start_char,
                end_char,
                score,
            } => serde_json::to_string(&SpanLine {
                id,
                start_char: *start_char,
                end_char: *end_char,
                score: *score,
            }),
            WireResponse::NoAnswer { id, score } => serde_json::to_string(&NoAnswerLine {
                id,
                no_answer: true,
                score: *score,
            }),
        }
        .expect("response serializes")
    }

    /// Parses one response line. On failure returns the request id, when
    /// one could be recovered, and the reason.
    pub fn parse(line: &str) -> Result<WireResponse, (Option<String>, String)> {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| (None, format!("invalid JSON: {e}")))?;
        let obj = value.as_object().ok_or((None, "not a JSON object".to_string()))?;
        let id = obj
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or((None, "missing string `id`".to_string()))?
            .to_string();
        let fail = |reason: String| (Some(id.clone()), reason);
        if let Some(err) = obj.get("error") {
            return Err(fail(format!("reader error: {err}")));
        }
        let score = obj
            .get("score")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| fail("missing numeric `score`".into()))?;
        if obj.get("no_answer").and_then(|v| v.as_bool()) == Some(true) {
            return Ok(WireResponse::NoAnswer { id, score });
        }
        let offset = |key: &str| {
            obj.get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| fail(format!("missing non-negative integer `{key}`")))
        };
        let start_char = offset("start_char")?;
        let end_char = offset("end_char")?;
        if end_char <= start_char {
            return Err(fail(format!("empty span [{start_char}, {end_char})")));
        }
        Ok(WireResponse::Span {
            id,
            start_char,
            end_char,
            score,
        })
    }
}

/// Serves the protocol on a byte stream until EOF. Unparseable requests get
/// an `{"id", "error"}` line and the loop continues.
pub fn serve<R, W, F>(input: R, output: W, mut handler: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&WireRequest) -> WireResponse,
{
    let mut output = BufWriter::new(output);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<WireRequest>(&line) {
            Ok(request) => handler(&request).to_line(),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
                    .unwrap_or_default();
                serde_json::to_string(&ErrorLine {
                    id: &id,
                    error: &e.to_string(),
                })
                .expect("error line serializes")
            }
        };
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

struct Connection {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    broken: Option<ReaderError>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        drop(self.writer.take());
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client side of the protocol over a child process's stdio or TCP.
pub struct WireReader {
    conn: Mutex<Connection>,
    timeout: Duration,
    max_in_flight: usize,
    seq: AtomicU64,
}

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const DEFAULT_IN_FLIGHT: usize = 32;

fn pump<R: BufRead + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl WireReader {
    /// Talks to a reader over an arbitrary pair of streams.
    pub fn from_streams<W, R>(writer: W, reader: R) -> WireReader
    where
        W: Write + Send + 'static,
        R: BufRead + Send + 'static,
    {
        Self::with_connection(Connection {
            writer: Some(Box::new(BufWriter::new(writer))),
            lines: pump(reader),
            child: None,
            socket: None,
            broken: None,
        })
    }

    /// Starts `command` (split with POSIX shell quoting rules) and talks to
    /// it over its stdin/stdout. Its stderr is inherited.
    pub fn spawn(command: &str) -> Result<WireReader, ReaderError> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| ReaderError::InvalidInput(format!("cannot parse reader command `{command}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ReaderError::Transport(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self::with_connection(Connection {
            writer: Some(Box::new(BufWriter::new(stdin))),
            lines: pump(BufReader::new(stdout)),
            child: Some(child),
            socket: None,
            broken: None,
        }))
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<WireReader, ReaderError> {
        let stream = TcpStream::connect(addr).map_err(|e| ReaderError::Transport(format!("connect: {e}")))?;
        let clone = |s: &TcpStream| s.try_clone().map_err(|e| ReaderError::Transport(e.to_string()));
        let read_half = clone(&stream)?;
        let socket = clone(&stream)?;
        Ok(Self::with_connection(Connection {
            writer: Some(Box::new(BufWriter::new(stream))),
            lines: pump(BufReader::new(read_half)),
            child: None,
            socket: Some(socket),
            broken: None,
        }))
    }

    fn with_connection(conn: Connection) -> WireReader {
        WireReader {
            conn: Mutex::new(conn),
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: DEFAULT_IN_FLIGHT,
            seq: AtomicU64::new(0),
        }
    }

    /// Longest wait for any single response.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Requests sent but not yet answered, at most.
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn exchange(
        &self,
        conn: &mut Connection,
        requests: &[ReaderRequest<'_>],
        ids: &[String],
        results: &mut [Option<Result<Option<SpanPrediction>, ReaderError>>],
    ) -> Result<(), ReaderError> {
        let mut pending: HashMap<&str, usize> = HashMap::new();
        let mut next = 0;
        let mut done = 0;
        while done < requests.len() {
            let writer = conn
                .writer
                .as_mut()
                .ok_or_else(|| ReaderError::Transport("connection closed".into()))?;
            let mut wrote = false;
            while next < requests.len() && pending.len() < self.max_in_flight {
                let r = &requests[next];
                let line = serde_json::to_string(&WireRequest {
                    id: ids[next].clone(),
                    question: r.question.to_string(),
                    paragraph: r.paragraph.text.clone(),
                    lang: r.lang,
                })
                .expect("request serializes");
                writer
                    .write_all(line.as_bytes())
                    .and_then(|_| writer.write_all(b"\n"))
                    .map_err(|e| ReaderError::Transport(format!("request {}: {e}", ids[next])))?;
                pending.insert(&ids[next], next);
                next += 1;
                wrote = true;
            }
            if wrote {
                writer
                    .flush()
                    .map_err(|e| ReaderError::Transport(format!("flush: {e}")))?;
            }

            let line = match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ReaderError::Transport(format!("read: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    let oldest = pending.values().min().copied().unwrap_or(next.saturating_sub(1));
                    return Err(ReaderError::Timeout {
                        id: ids[oldest].clone(),
                        timeout_ms: self.timeout.as_millis() as u64,
                    });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ReaderError::Transport("reader closed its output".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let (id, outcome) = match WireResponse::parse(&line) {
                Ok(resp) => {
                    let prediction = match &resp {
                        WireResponse::Span {
                            start_char,
                            end_char,
                            score,
                            ..
                        } => Some(SpanPrediction {
                            start_char: *start_char,
                            end_char: *end_char,
                            reader_score: *score,
                        }),
                        WireResponse::NoAnswer { .. } => None,
                    };
                    (resp.id().to_string(), Ok(prediction))
                }
                Err((Some(id), reason)) => (
                    id.clone(),
                    Err(ReaderError::Malformed { id, reason }),
                ),
                Err((None, reason)) => {
                    return Err(ReaderError::Malformed {
                        id: "?".into(),
                        reason: format!("{reason}: {line}"),
                    })
                }
            };
            let slot = pending.remove(id.as_str()).ok_or_else(|| ReaderError::Malformed {
                id: id.clone(),
                reason: "response to an unknown or already answered request".into(),
            })?;
            results[slot] = Some(outcome);
            done += 1;
        }
        Ok(())
    }
}

impl Reader for WireReader {
    fn read_batch(&self, requests: &[ReaderRequest<'_>]) -> Vec<Result<Option<SpanPrediction>, ReaderError>> {
        let mut conn = match self.conn.lock() {
            Ok(c) => c,
            Err(poisoned) => poisoned.into_inner(),
        };
        if let Some(err) = &conn.broken {
            return requests.iter().map(|_| Err(err.clone())).collect();
        }
        let ids: Vec<String> = requests
            .iter()
            .map(|_| format!("r{}", self.seq.fetch_add(1, Ordering::Relaxed)))
            .collect();
        let mut results = vec![None; requests.len()];
        if let Err(fatal) = self.exchange(&mut conn, requests, &ids, &mut results) {
            // Late answers would be misattributed; the connection is done.
            conn.broken = Some(fatal.clone());
            for slot in results.iter_mut().filter(|s| s.is_none()) {
                *slot = Some(Err(fatal.clone()));
            }
        }
        results.into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}
