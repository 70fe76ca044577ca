//! Adapter for a scorer living in another process.
//!
//! Newline-delimited JSON, one request per line, one response per line.
//!
//! ```text
//! → {"version":1,"id":0,"op":"hello"}
//! ← {"version":1,"id":0,"vocab_size":5000}
//! → {"version":1,"id":7,"op":"score","query_tokens":[..],"context_tokens":[..],"allowed_tokens":[..]}
//! ← {"version":1,"id":7,"logprobs":[..dense..]}          or
//! ← {"version":1,"id":7,"logprobs":{"12":-0.3,"40":-1.9}} (sparse over allowed_tokens)
//! ← {"version":1,"id":7,"error":"message"}
//! ```
//!
//! `allowed_tokens` is omitted when the full distribution is wanted. Sparse
//! responses leave every unlisted token at probability zero.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ScorerError, TokenScorer};
use crate::corpus::{Query, TokenId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// `host:port` of a listening peer.
    Tcp(String),
    /// Program and arguments; the peer speaks over its stdin/stdout.
    Command(Vec<String>),
}

#[derive(Serialize)]
struct Request<'a> {
    version: u32,
    id: u64,
    op: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    query_tokens: Option<&'a [TokenId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    context_tokens: Option<&'a [TokenId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    allowed_tokens: Option<&'a [TokenId]>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LogProbs {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

#[derive(Deserialize)]
struct Response {
    version: Option<u32>,
    id: Option<u64>,
    #[serde(default)]
    vocab_size: Option<usize>,
    #[serde(default)]
    logprobs: Option<LogProbs>,
    #[serde(default)]
    error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    broken: bool,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

pub struct ExternalScorer {
    conn: Mutex<Connection>,
    vocab_size: usize,
    timeout: Duration,
    latencies_ms: Mutex<Vec<f64>>,
}

fn transport(e: impl std::fmt::Display) -> ScorerError {
    ScorerError::Transport(e.to_string())
}

fn spawn_reader<R: std::io::Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl ExternalScorer {
    /// Connects, performs the hello exchange and checks the vocabulary size.
    pub fn connect(endpoint: &Endpoint, expected_vocab: usize, timeout: Duration) -> Result<Self, ScorerError> {
        let conn = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                let _ = stream.set_nodelay(true);
                let reader = stream.try_clone().map_err(transport)?;
                Connection {
                    writer: Box::new(stream),
                    lines: spawn_reader(reader),
                    child: None,
                    next_id: 0,
                    broken: false,
                }
            }
            Endpoint::Command(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| ScorerError::Config("empty scorer command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(transport)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    next_id: 0,
                    broken: false,
                }
            }
        };
        let scorer = Self {
            conn: Mutex::new(conn),
            vocab_size: expected_vocab,
            timeout,
            latencies_ms: Mutex::new(Vec::new()),
        };
        let hello = scorer.call("hello", None, None, None)?;
        match hello.vocab_size {
            Some(v) if v == expected_vocab => Ok(scorer),
            Some(found) => Err(ScorerError::VocabMismatch {
                expected: expected_vocab,
                found,
            }),
            None => Err(ScorerError::Protocol("hello response lacks vocab_size".into())),
        }
    }

    /// Round-trip time of every call so far, in milliseconds.
    pub fn latencies_ms(&self) -> Vec<f64> {
        self.latencies_ms.lock().unwrap().clone()
    }

    fn call(
        &self,
        op: &str,
        query: Option<&[TokenId]>,
        context: Option<&[TokenId]>,
        allowed: Option<&[TokenId]>,
    ) -> Result<Response, ScorerError> {
        let mut conn = self.conn.lock().unwrap();
        if conn.broken {
            return Err(ScorerError::Transport(
                "connection unusable after an earlier failure".into(),
            ));
        }
        let id = conn.next_id;
        conn.next_id += 1;
        let req = Request {
            version: PROTOCOL_VERSION,
            id,
            op,
            query_tokens: query,
            context_tokens: context,
            allowed_tokens: allowed,
        };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let started = Instant::now();
        let sent = conn.writer.write_all(line.as_bytes()).and_then(|_| conn.writer.flush());
        if let Err(e) = sent {
            conn.broken = true;
            return Err(transport(e));
        }
        let reply = match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => {
                conn.broken = true;
                return Err(transport(e));
            }
            Err(RecvTimeoutError::Timeout) => {
                conn.broken = true;
                return Err(ScorerError::Timeout {
                    after_ms: self.timeout.as_millis() as u64,
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                conn.broken = true;
                return Err(ScorerError::Transport("peer closed the connection".into()));
            }
        };
        self.latencies_ms
            .lock()
            .unwrap()
            .push(started.elapsed().as_secs_f64() * 1e3);
        let resp: Response = serde_json::from_str(&reply).map_err(|e| {
            conn.broken = true;
            ScorerError::Protocol(format!("malformed response: {e}"))
        })?;
        if resp.version != Some(PROTOCOL_VERSION) {
            conn.broken = true;
            return Err(ScorerError::Protocol(format!(
                "expected version {PROTOCOL_VERSION}, got {:?}",
                resp.version
            )));
        }
        if resp.id != Some(id) {
            conn.broken = true;
            return Err(ScorerError::Protocol(format!(
                "response id {:?} for request {id}",
                resp.id
            )));
        }
        if let Some(err) = resp.error {
            return Err(ScorerError::Protocol(format!("peer error: {err}")));
        }
        Ok(resp)
    }

    fn logprobs(&self, resp: Response, wanted: Option<&[TokenId]>) -> Result<Vec<f64>, ScorerError> {
        let lp = resp
            .logprobs
            .ok_or_else(|| ScorerError::Protocol("response lacks logprobs".into()))?;
        let dense = match lp {
            LogProbs::Dense(v) => {
                if v.len() != self.vocab_size {
                    return Err(ScorerError::VocabMismatch {
                        expected: self.vocab_size,
                        found: v.len(),
                    });
                }
                v
            }
            LogProbs::Sparse(map) => {
                let mut v = vec![f64::NEG_INFINITY; self.vocab_size];
                for (k, x) in map {
                    let t: usize = k
                        .parse()
                        .map_err(|_| ScorerError::Protocol(format!("bad token key {k:?}")))?;
                    if t >= self.vocab_size {
                        return Err(ScorerError::VocabMismatch {
                            expected: self.vocab_size,
                            found: t + 1,
                        });
                    }
                    v[t] = x;
                }
                v
            }
        };
        if dense.iter().any(|x| x.is_nan() || *x > 1e-9) {
            return Err(ScorerError::Protocol(
                "log-probabilities must be <= 0 and not NaN".into(),
            ));
        }
        Ok(match wanted {
            Some(tokens) => tokens
                .iter()
                .map(|&t| dense.get(t as usize).copied().unwrap_or(f64::NEG_INFINITY))
                .collect(),
            None => dense,
        })
    }
}

impl TokenScorer for ExternalScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score_next(&self, query: &Query, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let resp = self.call("score", Some(&query.text_tokens), Some(context), None)?;
        self.logprobs(resp, None)
    }

    fn score_tokens(&self, query: &Query, context: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let resp = self.call("score", Some(&query.text_tokens), Some(context), Some(tokens))?;
        self.logprobs(resp, Some(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    /// Serves `reply(request_json)` for every line on one connection.
    fn serve(reply: impl Fn(&serde_json::Value) -> Option<String> + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut w = stream.try_clone().unwrap();
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let req: serde_json::Value = serde_json::from_str(&line).unwrap();
                match reply(&req) {
                    Some(mut out) => {
                        out.push('\n');
                        if w.write_all(out.as_bytes()).is_err() {
                            break;
                        }
                    }
                    None => thread::sleep(Duration::from_secs(5)),
                }
            }
        });
        addr
    }

    fn uniform(vocab: usize) -> impl Fn(&serde_json::Value) -> Option<String> {
        move |req| {
            let id = req["id"].as_u64().unwrap();
            Some(if req["op"] == "hello" {
                format!("{{\"version\":1,\"id\":{id},\"vocab_size\":{vocab}}}")
            } else {
                let lp = -(vocab as f64).ln();
                serde_json::json!({"version": 1, "id": id, "logprobs": vec![lp; vocab]}).to_string()
            })
        }
    }

    fn query() -> Query {
        let kb =
            crate::corpus::KnowledgeBase::ingest(vec![crate::corpus::RawDocument::new("", "a b")], Default::default())
                .unwrap();
        Query::from_text("q", "a", &kb).unwrap()
    }

    #[test]
    fn uniform_peer() {
        let addr = serve(uniform(4));
        let s = ExternalScorer::connect(&Endpoint::Tcp(addr), 4, Duration::from_secs(2)).unwrap();
        let v = s.score_next(&query(), &[2]).unwrap();
        assert_eq!(v.len(), 4);
        assert!(crate::scorer::logsumexp(&v).abs() < 1e-12);
        assert_eq!(s.score_tokens(&query(), &[], &[3]).unwrap().len(), 1);
        assert_eq!(s.latencies_ms().len(), 3);
    }

    #[test]
    fn vocab_mismatch_at_hello() {
        let addr = serve(uniform(9));
        let err = ExternalScorer::connect(&Endpoint::Tcp(addr), 4, Duration::from_secs(2))
            .err()
            .unwrap();
        assert_eq!(err, ScorerError::VocabMismatch { expected: 4, found: 9 });
    }

    #[test]
    fn malformed_response_is_protocol_error() {
        let addr = serve(|req| {
            let id = req["id"].as_u64().unwrap();
            Some(if req["op"] == "hello" {
                format!("{{\"version\":1,\"id\":{id},\"vocab_size\":4}}")
            } else {
                "this is not json".to_owned()
            })
        });
        let s = ExternalScorer::connect(&Endpoint::Tcp(addr), 4, Duration::from_secs(2)).unwrap();
        assert!(matches!(s.score_next(&query(), &[]), Err(ScorerError::Protocol(_))));
        // the connection is not reused after a violation
        assert!(matches!(s.score_next(&query(), &[]), Err(ScorerError::Transport(_))));
    }

    #[test]
    fn missing_version_is_protocol_error() {
        let addr = serve(|req| Some(format!("{{\"id\":{},\"vocab_size\":4}}", req["id"])));
        let err = ExternalScorer::connect(&Endpoint::Tcp(addr), 4, Duration::from_secs(2))
            .err()
            .unwrap();
        assert!(matches!(err, ScorerError::Protocol(_)));
    }

    #[test]
    fn timeout_surfaces() {
        let addr = serve(|req| {
            let id = req["id"].as_u64().unwrap();
            (req["op"] == "hello").then(|| format!("{{\"version\":1,\"id\":{id},\"vocab_size\":4}}"))
        });
        let s = ExternalScorer::connect(&Endpoint::Tcp(addr), 4, Duration::from_millis(100)).unwrap();
        assert_eq!(s.score_next(&query(), &[]), Err(ScorerError::Timeout { after_ms: 100 }));
    }

    #[test]
    fn sparse_response() {
        let addr = serve(|req| {
            let id = req["id"].as_u64().unwrap();
            Some(if req["op"] == "hello" {
                format!("{{\"version\":1,\"id\":{id},\"vocab_size\":6}}")
            } else {
                format!("{{\"version\":1,\"id\":{id},\"logprobs\":{{\"3\":-0.5,\"4\":-1.0}}}}")
            })
        });
        let s = ExternalScorer::connect(&Endpoint::Tcp(addr), 6, Duration::from_secs(2)).unwrap();
        assert_eq!(
            s.score_tokens(&query(), &[], &[3, 4, 5]).unwrap(),
            vec![-0.5, -1.0, f64::NEG_INFINITY]
        );
    }

    #[test]
    fn command_endpoint() {
        let script = r#"
import sys, json, math
for line in sys.stdin:
    r = json.loads(line)
    if r["op"] == "hello":
        out = {"version": 1, "id": r["id"], "vocab_size": 5}
    else:
        out = {"version": 1, "id": r["id"], "logprobs": [-math.log(5)] * 5}
    print(json.dumps(out), flush=True)
"#;
        let ep = Endpoint::Command(vec!["python3".into(), "-c".into(), script.into()]);
        let s = match ExternalScorer::connect(&ep, 5, Duration::from_secs(10)) {
            Ok(s) => s,
            Err(ScorerError::Transport(e)) => {
                eprintln!("python3 unavailable, skipping: {e}");
                return;
            }
            Err(e) => panic!("{e}"),
        };
        assert_eq!(s.score_next(&query(), &[2, 3]).unwrap().len(), 5);
    }
}
