use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::Message;

use super::protocol::{encode_message, read_payload, Incoming, ProtocolError, WireMessage};
use super::session::{error_reply, Session, SessionConfig, SourceRegistry};

const ACCEPT_POLL: Duration = Duration::from_millis(20);
const IDLE_POLL: Duration = Duration::from_millis(50);
const CONTINUOUS_POLL: Duration = Duration::from_millis(2);

#[derive(Default)]
struct Shared {
    shutdown: AtomicBool,
    streams: Mutex<Vec<TcpStream>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::Acquire)
    }

    fn track(&self, stream: &TcpStream) {
        if let Ok(s) = stream.try_clone() {
            self.streams.lock().unwrap_or_else(|e| e.into_inner()).push(s);
        }
    }

    fn spawn(&self, name: String, f: impl FnOnce() + Send + 'static) {
        match thread::Builder::new().name(name).spawn(f) {
            Ok(h) => self.workers.lock().unwrap_or_else(|e| e.into_inner()).push(h),
            Err(e) => log::error!("spawning connection thread: {e}"),
        }
    }
}

/// A running frame server. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    acceptors: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    /// Address of the framed TCP listener.
    pub fn local_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    /// Address of the websocket gateway, if one was started.
    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Stop accepting, close every session, and wait for all threads.
    pub fn shutdown(self) {
        self.shared.shutdown.store(true, Ordering::Release);
        for s in self.shared.streams.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        for h in self.acceptors {
            let _ = h.join();
        }
        let workers: Vec<_> = self.shared.workers.lock().unwrap_or_else(|e| e.into_inner()).drain(..).collect();
        for h in workers {
            let _ = h.join();
        }
    }

    /// Block until the server stops (it only stops via `shutdown` from another handle user).
    pub fn wait(self) {
        for h in self.acceptors {
            let _ = h.join();
        }
    }
}

/// Bind the framed TCP listener and, optionally, the websocket gateway, and
/// serve each connection with its own [`Session`] on its own thread.
pub fn start_server(
    addr: impl ToSocketAddrs,
    ws_addr: Option<SocketAddr>,
    config: SessionConfig,
) -> io::Result<ServerHandle> {
    let registry = Arc::new(SourceRegistry::new());
    let shared = Arc::new(Shared::default());
    let tcp = TcpListener::bind(addr)?;
    let tcp_addr = tcp.local_addr()?;
    let ws = ws_addr.map(TcpListener::bind).transpose()?;
    let ws_addr = ws.as_ref().map(TcpListener::local_addr).transpose()?;

    let mut acceptors = Vec::new();
    {
        let (shared, registry, config) = (shared.clone(), registry.clone(), config.clone());
        acceptors.push(thread::Builder::new().name("oocv-accept".into()).spawn(move || {
            accept_loop(tcp, &shared, |stream, shared| {
                let (registry, config, s2) = (registry.clone(), config.clone(), shared.clone());
                shared.spawn("oocv-session".into(), move || {
                    serve_tcp(stream, Session::with_registry(config, registry), &s2)
                });
            })
        })?);
    }
    if let Some(ws) = ws {
        let (shared, registry) = (shared.clone(), registry.clone());
        acceptors.push(thread::Builder::new().name("oocv-ws-accept".into()).spawn(move || {
            accept_loop(ws, &shared, |stream, shared| {
                let (registry, config, s2) = (registry.clone(), config.clone(), shared.clone());
                shared.spawn("oocv-ws-session".into(), move || {
                    serve_ws(stream, Session::with_registry(config, registry), &s2)
                });
            })
        })?);
    }
    log::info!("serving frames on {tcp_addr}{}", ws_addr.map(|a| format!(", websocket on {a}")).unwrap_or_default());
    Ok(ServerHandle { tcp_addr, ws_addr, shared, acceptors })
}

/// Serve until the process is killed.
pub fn run_server(addr: impl ToSocketAddrs, ws_addr: Option<SocketAddr>, config: SessionConfig) -> io::Result<()> {
    start_server(addr, ws_addr, config)?.wait();
    Ok(())
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>, on_conn: impl Fn(TcpStream, &Arc<Shared>)) {
    if let Err(e) = listener.set_nonblocking(true) {
        log::error!("listener: {e}");
        return;
    }
    while !shared.stopping() {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                shared.track(&stream);
                on_conn(stream, shared);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_tcp(stream: TcpStream, mut session: Session, shared: &Shared) {
    let Ok(mut reader) = stream.try_clone() else { return };
    let (tx, rx) = mpsc::channel();
    let reader_thread = thread::spawn(move || loop {
        match read_payload(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(m).is_err() {
                    break;
                }
            }
            Ok(None) => break,
            Err(e) => {
                log::debug!("session read: {e}");
                break;
            }
        }
    });
    let mut writer = BufWriter::new(stream);
    while !shared.stopping() {
        let poll = if session.is_continuous() { CONTINUOUS_POLL } else { IDLE_POLL };
        let mut replies = match rx.recv_timeout(poll) {
            Ok(Incoming::Payload(p)) => session.handle_payload(&p),
            Ok(Incoming::Oversize(len)) => vec![error_reply(None, ProtocolError::TooLarge(len))],
            Err(RecvTimeoutError::Timeout) => Vec::new(),
            Err(RecvTimeoutError::Disconnected) => break,
        };
        replies.extend(session.tick().unwrap_or_default());
        if write_all(&mut writer, &replies).is_err() {
            break;
        }
    }
    let _ = writer.get_ref().shutdown(std::net::Shutdown::Both);
    let _ = reader_thread.join();
}

fn write_all(w: &mut impl Write, replies: &[WireMessage]) -> io::Result<()> {
    if replies.is_empty() {
        return Ok(());
    }
    for r in replies {
        w.write_all(&encode_message(r))?;
    }
    w.flush()
}

/// Websocket gateway: each binary message carries exactly the bytes of one
/// or more framed messages, and each reply is sent as one binary message.
/// Text messages are accepted as bare JSON control messages.
fn serve_ws(stream: TcpStream, mut session: Session, shared: &Shared) {
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("websocket handshake: {e}");
            return;
        }
    };
    while !shared.stopping() {
        let poll = if session.is_continuous() { CONTINUOUS_POLL } else { IDLE_POLL };
        if ws.get_ref().set_read_timeout(Some(poll)).is_err() {
            break;
        }
        let mut replies = match ws.read() {
            Ok(Message::Binary(b)) => session.handle_bytes(&b),
            Ok(Message::Text(t)) => match serde_json::from_str(t.as_str()) {
                Ok(v) => session.handle_command(&v),
                Err(e) => vec![error_reply(None, ProtocolError::InvalidJson(e.to_string()))],
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => Vec::new(),
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                Vec::new()
            }
            Err(e) => {
                log::debug!("websocket read: {e}");
                break;
            }
        };
        replies.extend(session.tick().unwrap_or_default());
        let mut failed = false;
        for r in &replies {
            if ws.send(Message::Binary(encode_message(r).into())).is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}
