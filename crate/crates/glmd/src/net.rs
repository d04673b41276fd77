//! Coordinator and worker over TCP.
//!
//! The coordinator accepts `K` connections, reads one HELLO from each, then
//! drives the rounds through [`SocketTransport`], which implements the same
//! [`Transport`] trait as the in-process evaluator. Replies are gathered
//! concurrently, one scoped thread per connection, and aggregated in
//! ascending worker order after all of them have arrived.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use glmd_core::distributed::{run_method, LocalFit, LocalScoreFisher, Method, Shard};
use glmd_core::solver::FitOptions;
use glmd_core::transport::{worker_local_fit, worker_score_fisher};
use glmd_core::wire::{self, Message, HEADER_LEN};
use glmd_core::{DistributedEstimate, Error, FamilyKind, GlmFamily, Matrix, SpdMatrix, Transport};

pub const ABORT_PROTOCOL: u16 = 1;
pub const ABORT_NUMERICAL: u16 = 2;
pub const ABORT_TRANSPORT: u16 = 3;
pub const ABORT_OTHER: u16 = 4;

pub const HANDSHAKE_TIMEOUT_ENV: &str = "GLMD_HANDSHAKE_TIMEOUT_S";
pub const ROUND_TIMEOUT_ENV: &str = "GLMD_ROUND_TIMEOUT_S";

type Result<T> = std::result::Result<T, Error>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeouts {
    pub handshake: Duration,
    pub round: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            handshake: Duration::from_secs(30),
            round: Duration::from_secs(300),
        }
    }
}

impl Timeouts {
    /// Defaults overridden by the environment, in whole or fractional seconds.
    pub fn from_env() -> std::result::Result<Self, String> {
        let mut t = Timeouts::default();
        if let Some(s) = env_seconds(HANDSHAKE_TIMEOUT_ENV)? {
            t.handshake = s;
        }
        if let Some(s) = env_seconds(ROUND_TIMEOUT_ENV)? {
            t.round = s;
        }
        Ok(t)
    }
}

fn env_seconds(var: &str) -> std::result::Result<Option<Duration>, String> {
    match std::env::var(var) {
        Ok(v) => parse_seconds(&v).map(Some).map_err(|e| format!("{var}: {e}")),
        Err(_) => Ok(None),
    }
}

pub fn parse_seconds(s: &str) -> std::result::Result<Duration, String> {
    let secs: f64 = s.trim().parse().map_err(|_| format!("not a number of seconds: {s:?}"))?;
    if !(secs > 0.0 && secs.is_finite()) {
        return Err(format!("timeout must be positive: {s:?}"));
    }
    Ok(Duration::from_secs_f64(secs))
}

pub fn abort_code(e: &Error) -> u16 {
    if e.is_numerical() {
        ABORT_NUMERICAL
    } else if matches!(e, Error::Protocol { .. }) {
        ABORT_PROTOCOL
    } else if e.is_transport() {
        ABORT_TRANSPORT
    } else {
        ABORT_OTHER
    }
}

fn transport_err(worker: Option<u32>, message: impl Into<String>) -> Error {
    Error::Transport {
        worker,
        message: message.into(),
    }
}

fn io_err(worker: Option<u32>, e: io::Error) -> Error {
    let message = match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => "timed out".to_string(),
        ErrorKind::UnexpectedEof => "connection closed".to_string(),
        _ => e.to_string(),
    };
    transport_err(worker, message)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&wire::encode(msg))?;
    w.flush()
}

/// Reads one frame. IO failures become transport errors tagged with
/// `worker`; malformed bytes become protocol errors.
pub fn read_message<R: Read>(r: &mut R, worker: Option<u32>) -> Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| io_err(worker, e))?;
    let h = wire::decode_header(&header)?;
    let mut payload = vec![0u8; h.payload_len as usize];
    r.read_exact(&mut payload).map_err(|e| io_err(worker, e))?;
    wire::decode_payload(h, &payload)
}

fn to_spd(worker: u32, fisher: Matrix) -> Result<SpdMatrix> {
    SpdMatrix::new(fisher).map_err(|e| transport_err(Some(worker), format!("invalid Fisher matrix: {e}")))
}

struct Connection {
    worker_id: u32,
    n_k: u64,
    stream: TcpStream,
}

/// The coordinator's side of `K` worker connections.
pub struct SocketTransport {
    conns: Vec<Connection>,
    family: FamilyKind,
    p: usize,
    round_timeout: Duration,
}

impl SocketTransport {
    /// Accepts connections until `k` distinct workers have said HELLO.
    ///
    /// Every worker must report worker id below `k`, the coordinator's
    /// family and a common `p` (equal to `expected_p` when given).
    pub fn accept(
        listener: &TcpListener,
        k: usize,
        family: FamilyKind,
        expected_p: Option<usize>,
        timeouts: Timeouts,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one worker".into()));
        }
        let deadline = Instant::now() + timeouts.handshake;
        listener
            .set_nonblocking(true)
            .map_err(|e| io_err(None, e))?;
        let mut conns: Vec<Connection> = Vec::with_capacity(k);
        let mut p = expected_p;
        let result = (|| {
            while conns.len() < k {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    return Err(transport_err(
                        None,
                        format!("handshake timed out with {} of {k} workers", conns.len()),
                    ));
                }
                let (mut stream, peer) = match listener.accept() {
                    Ok(s) => s,
                    Err(e) if e.kind() == ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                        continue;
                    }
                    Err(e) => return Err(io_err(None, e)),
                };
                stream.set_nonblocking(false).map_err(|e| io_err(None, e))?;
                stream.set_nodelay(true).ok();
                stream
                    .set_read_timeout(Some(remaining))
                    .map_err(|e| io_err(None, e))?;
                let hello = read_message(&mut stream, None)?;
                let Message::Hello {
                    worker_id,
                    n_k,
                    p: wp,
                    family: wf,
                } = hello
                else {
                    return Err(Error::Protocol {
                        offset: 5,
                        reason: format!("expected HELLO from {peer}"),
                    });
                };
                let mut reject = |msg: String| {
                    let _ = write_message(
                        &mut stream,
                        &Message::Abort {
                            code: ABORT_PROTOCOL,
                            message: msg.clone(),
                        },
                    );
                    transport_err(Some(worker_id), msg)
                };
                if worker_id as usize >= k {
                    return Err(reject(format!("worker id {worker_id} outside 0..{k}")));
                }
                if conns.iter().any(|c| c.worker_id == worker_id) {
                    return Err(reject(format!("duplicate worker id {worker_id}")));
                }
                if wf != family {
                    return Err(reject(format!("family {wf} differs from {family}")));
                }
                if wp == 0 || p.is_some_and(|p| p != wp as usize) {
                    return Err(reject(format!("dimension {wp} differs from {}", p.unwrap_or(0))));
                }
                p = Some(wp as usize);
                log::info!("worker {worker_id} joined from {peer} with {n_k} rows");
                conns.push(Connection {
                    worker_id,
                    n_k,
                    stream,
                });
            }
            Ok(())
        })();
        let _ = listener.set_nonblocking(false);
        conns.sort_by_key(|c| c.worker_id);
        let mut t = SocketTransport {
            conns,
            family,
            p: p.unwrap_or(0),
            round_timeout: timeouts.round,
        };
        if let Err(e) = result {
            t.abort(abort_code(&e), &e.to_string());
            return Err(e);
        }
        for c in &t.conns {
            c.stream
                .set_read_timeout(Some(t.round_timeout))
                .map_err(|e| io_err(Some(c.worker_id), e))?;
        }
        Ok(t)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    /// Best-effort ABORT to every worker.
    pub fn abort(&mut self, code: u16, message: &str) {
        let msg = Message::Abort {
            code,
            message: message.to_string(),
        };
        for c in &mut self.conns {
            let _ = write_message(&mut c.stream, &msg);
        }
    }

    fn broadcast(&mut self, msg: &Message) -> Result<()> {
        let frame = wire::encode(msg);
        for c in &mut self.conns {
            c.stream
                .write_all(&frame)
                .and_then(|_| c.stream.flush())
                .map_err(|e| io_err(Some(c.worker_id), e))?;
        }
        Ok(())
    }

    /// One message from every worker, read concurrently, in worker order.
    /// The first failure in worker order is reported.
    fn gather<T, F>(&mut self, parse: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u32, u64, Message) -> Result<T> + Sync,
    {
        let parse = &parse;
        let replies: Vec<Result<T>> = thread::scope(|s| {
            let handles: Vec<_> = self
                .conns
                .iter_mut()
                .map(|c| {
                    s.spawn(move || {
                        let msg = read_message(&mut c.stream, Some(c.worker_id))?;
                        if let Message::Abort { code, message } = msg {
                            return Err(transport_err(
                                Some(c.worker_id),
                                format!("worker aborted (code {code}): {message}"),
                            ));
                        }
                        parse(c.worker_id, c.n_k, msg)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(transport_err(None, "reader thread panicked"))))
                .collect()
        });
        replies.into_iter().collect()
    }
}

fn unexpected(worker: u32, wanted: &str, got: &Message) -> Error {
    transport_err(
        Some(worker),
        format!("expected {wanted}, received {:?}", got.msg_type()),
    )
}

impl Transport for SocketTransport {
    fn workers(&self) -> usize {
        self.conns.len()
    }

    fn local_fits(&mut self) -> Result<Vec<LocalFit>> {
        let p = self.p;
        self.gather(|worker_id, n_k, msg| match msg {
            Message::LocalFit {
                converged,
                iterations,
                beta,
                fisher,
            } => {
                if beta.len() != p {
                    return Err(transport_err(Some(worker_id), format!("LOCAL_FIT has dimension {}", beta.len())));
                }
                Ok(LocalFit {
                    worker_id,
                    local_n: n_k,
                    converged,
                    iterations,
                    estimate: beta,
                    fisher: to_spd(worker_id, fisher)?,
                })
            }
            other => Err(unexpected(worker_id, "LOCAL_FIT", &other)),
        })
    }

    fn local_score_fisher(&mut self, beta: &[f64]) -> Result<Vec<LocalScoreFisher>> {
        self.broadcast(&Message::BroadcastBeta { beta: beta.to_vec() })?;
        let p = self.p;
        self.gather(|worker_id, _, msg| match msg {
            Message::LocalScoreFisher { score, fisher } => {
                if score.len() != p {
                    return Err(transport_err(
                        Some(worker_id),
                        format!("LOCAL_SCORE_FISHER has dimension {}", score.len()),
                    ));
                }
                Ok(LocalScoreFisher {
                    worker_id,
                    score,
                    fisher: to_spd(worker_id, fisher)?,
                })
            }
            other => Err(unexpected(worker_id, "LOCAL_SCORE_FISHER", &other)),
        })
    }

    fn publish(&mut self, method: Method, estimate: &[f64]) -> Result<()> {
        self.broadcast(&Message::Result {
            method,
            beta: estimate.to_vec(),
        })
    }
}

/// Accepts `k` workers on `listener` and runs `method`. On failure every
/// worker is sent ABORT before the error is returned.
pub fn coordinator_run(
    listener: &TcpListener,
    family: FamilyKind,
    k: usize,
    method: Method,
    timeouts: Timeouts,
) -> Result<DistributedEstimate> {
    if method == Method::Global {
        return Err(Error::InvalidArgument(
            "the global estimator cannot run over workers".into(),
        ));
    }
    let mut t = SocketTransport::accept(listener, k, family, None, timeouts)?;
    match run_method(method, &mut t) {
        Ok(est) => Ok(est),
        Err(e) => {
            log::error!("aborting run: {e}");
            t.abort(abort_code(&e), &e.to_string());
            Err(e)
        }
    }
}

/// The worker state machine over an established stream: HELLO, LOCAL_FIT,
/// then either RESULT or a BROADCAST_BETA / LOCAL_SCORE_FISHER exchange
/// followed by RESULT. Returns the final estimate.
pub fn worker_session<S: Read + Write>(
    stream: &mut S,
    family: FamilyKind,
    shard: &Shard,
    opts: &FitOptions,
) -> Result<(Method, Vec<f64>)> {
    let fam = GlmFamily::from(family);
    let p = shard.data.p();
    let me = Some(shard.worker_id);
    let send = |s: &mut S, m: &Message| write_message(s, m).map_err(|e| io_err(me, e));
    send(
        stream,
        &Message::Hello {
            worker_id: shard.worker_id,
            n_k: shard.data.n() as u64,
            p: p as u32,
            family,
        },
    )?;

    let fail = |s: &mut S, e: Error| -> Error {
        if !matches!(e, Error::Transport { .. }) {
            let _ = write_message(
                s,
                &Message::Abort {
                    code: abort_code(&e),
                    message: e.to_string(),
                },
            );
        }
        e
    };

    let fit = match worker_local_fit(fam, shard, opts) {
        Ok(f) => f,
        Err(e) => return Err(fail(stream, e)),
    };
    send(
        stream,
        &Message::LocalFit {
            converged: fit.converged,
            iterations: fit.iterations,
            beta: fit.estimate,
            fisher: fit.fisher.into_matrix(),
        },
    )?;

    loop {
        let msg = match read_message(stream, None) {
            Ok(m) => m,
            Err(e) => return Err(fail(stream, e)),
        };
        match msg {
            Message::BroadcastBeta { beta } => {
                if beta.len() != p {
                    let e = Error::Protocol {
                        offset: HEADER_LEN,
                        reason: format!("broadcast has dimension {}, expected {p}", beta.len()),
                    };
                    return Err(fail(stream, e));
                }
                let sf = match worker_score_fisher(fam, shard, &beta) {
                    Ok(sf) => sf,
                    Err(e) => return Err(fail(stream, e)),
                };
                send(
                    stream,
                    &Message::LocalScoreFisher {
                        score: sf.score,
                        fisher: sf.fisher.into_matrix(),
                    },
                )?;
            }
            Message::Result { method, beta } => {
                if beta.len() != p {
                    return Err(Error::Protocol {
                        offset: HEADER_LEN + 1,
                        reason: format!("result has dimension {}, expected {p}", beta.len()),
                    });
                }
                return Ok((method, beta));
            }
            Message::Abort { code, message } => {
                return Err(transport_err(
                    None,
                    format!("coordinator aborted (code {code}): {message}"),
                ));
            }
            other => {
                let e = Error::Protocol {
                    offset: 5,
                    reason: format!("unexpected {:?} from coordinator", other.msg_type()),
                };
                return Err(fail(stream, e));
            }
        }
    }
}

/// Connects to `addr`, retrying until the handshake timeout, then runs the
/// worker session.
pub fn worker_run(
    addr: &str,
    family: FamilyKind,
    shard: &Shard,
    opts: &FitOptions,
    timeouts: Timeouts,
) -> Result<(Method, Vec<f64>)> {
    let me = Some(shard.worker_id);
    let deadline = Instant::now() + timeouts.handshake;
    let targets: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| transport_err(me, format!("cannot resolve {addr}: {e}")))?
        .collect();
    let mut stream = connect_until(&targets, deadline).map_err(|e| {
        transport_err(me, format!("cannot reach coordinator at {addr}: {e}"))
    })?;
    stream.set_nodelay(true).ok();
    stream
        .set_read_timeout(Some(timeouts.round))
        .map_err(|e| io_err(me, e))?;
    worker_session(&mut stream, family, shard, opts)
}

fn connect_until(targets: &[SocketAddr], deadline: Instant) -> io::Result<TcpStream> {
    let mut last = io::Error::new(ErrorKind::AddrNotAvailable, "no addresses");
    loop {
        for t in targets {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let attempt = remaining.clamp(Duration::from_millis(10), Duration::from_secs(1));
            match TcpStream::connect_timeout(t, attempt) {
                Ok(s) => return Ok(s),
                Err(e) => last = e,
            }
        }
        if Instant::now() >= deadline {
            return Err(last);
        }
        thread::sleep(Duration::from_millis(50));
    }
}
