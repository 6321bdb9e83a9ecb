use std::io::BufReader;
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame};
use super::{inbox, Endpoint, Inbox, Link, Message, Rank, TransportError};

#[derive(Debug, Clone)]
pub struct TcpOptions {
    pub host: IpAddr,
    /// The master listens here, worker `r` on `base_port + r`.
    pub base_port: u16,
    /// How long a first send keeps retrying to connect.
    pub connect_timeout: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            base_port: 47000,
            connect_timeout: Duration::from_secs(10),
        }
    }
}

impl TcpOptions {
    pub fn addr_of(&self, rank: Rank) -> Result<SocketAddr, TransportError> {
        let port = u16::try_from(self.base_port as usize + rank)
            .map_err(|_| TransportError::Usage(format!("port for rank {rank} exceeds 65535")))?;
        Ok(SocketAddr::new(self.host, port))
    }
}

struct TcpShared {
    me: Rank,
    world: usize,
    opts: TcpOptions,
    inbox: Inbox,
    out: Vec<Mutex<Option<TcpStream>>>,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
    closed: Arc<AtomicBool>,
}

impl TcpShared {
    fn connect(&self, to: Rank) -> Result<TcpStream, TransportError> {
        let addr = self.opts.addr_of(to)?;
        let deadline = Instant::now() + self.opts.connect_timeout;
        loop {
            match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) if Instant::now() >= deadline || self.closed.load(Ordering::SeqCst) => {
                    return Err(TransportError::Link {
                        to,
                        reason: format!("connect to {addr}: {e}"),
                    });
                }
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }
}

impl Link for TcpShared {
    fn send(&self, from: Rank, to: Rank, msg: Message) -> Result<(), TransportError> {
        debug_assert_eq!(from, self.me);
        if to >= self.world {
            return Err(TransportError::Routing { to, world: self.world });
        }
        if self.closed.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        if to == self.me {
            self.inbox.deliver(msg);
            return Ok(());
        }
        let mut slot = self.out[to].lock().expect("stream lock");
        if slot.is_none() {
            *slot = Some(self.connect(to)?);
        }
        let stream = slot.as_mut().expect("connected");
        if let Err(e) = write_frame(stream, &msg) {
            *slot = None;
            return Err(TransportError::Link {
                to,
                reason: e.to_string(),
            });
        }
        Ok(())
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn close(&self, _me: Rank) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        for s in &self.out {
            if let Some(s) = s.lock().expect("stream lock").take() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        for s in self.accepted.lock().expect("accept lock").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        // wake the accept loop so it notices the flag
        if let Ok(addr) = self.opts.addr_of(self.me) {
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
        }
    }

    fn is_closed(&self, _me: Rank) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

fn spawn_reader(stream: TcpStream, inbox: Inbox, closed: Arc<AtomicBool>) {
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            match read_frame(&mut r) {
                Ok(Some(m)) => {
                    if !inbox.deliver(m) {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    if !closed.load(Ordering::SeqCst) {
                        log::debug!("tcp reader stopped: {e}");
                    }
                    break;
                }
            }
        }
    });
}

/// Binds `base_port + rank` and returns the endpoint. Connections to peers
/// are opened on first send.
pub fn tcp_endpoint(rank: Rank, world: usize, opts: TcpOptions) -> Result<Endpoint, TransportError> {
    if rank >= world {
        return Err(TransportError::Routing { to: rank, world });
    }
    let addr = opts.addr_of(rank)?;
    let listener = TcpListener::bind(addr).map_err(|e| TransportError::Startup(format!("bind {addr}: {e}")))?;
    let (inbox, control, data) = inbox();
    let closed = Arc::new(AtomicBool::new(false));
    let accepted = Arc::new(Mutex::new(Vec::new()));
    {
        let inbox = inbox.clone();
        let closed = closed.clone();
        let accepted = accepted.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if closed.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        log::debug!("accept failed: {e}");
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    accepted.lock().expect("accept lock").push(c);
                }
                spawn_reader(stream, inbox.clone(), closed.clone());
            }
        });
    }
    let shared = TcpShared {
        me: rank,
        world,
        out: (0..world).map(|_| Mutex::new(None)).collect(),
        opts,
        inbox,
        accepted,
        closed,
    };
    Ok(Endpoint::new(rank, Arc::new(shared), control, data))
}
