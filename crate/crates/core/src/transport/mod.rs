//! Message passing between the master (rank 0) and the workers.
//!
//! An [`Endpoint`] is one process' view of the network. Incoming messages are
//! split into a control queue and a data queue so heartbeats and status
//! queries stay deliverable while a gather is blocked on the data plane.
//! Two backends implement [`Link`]: in-process channels and TCP sockets.

mod frame;
mod gather;
mod inproc;
mod tcp;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

pub use frame::{decode_frame, encode_frame, read_frame, write_frame, PayloadReader, PayloadWriter, HEADER_LEN};
pub use gather::{gather, GatherFailure, Gatherer};
pub use inproc::InProcNetwork;
pub use tcp::{tcp_endpoint, TcpOptions};

pub type Rank = usize;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("rank {to} is outside the context (world size {world})")]
    Routing { to: Rank, world: usize },
    #[error("link to rank {to} failed: {reason}")]
    Link { to: Rank, reason: String },
    #[error("endpoint closed")]
    Closed,
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("stale epoch from rank {rank}: got {got}, expected {expected}")]
    StaleEpoch { rank: Rank, got: u32, expected: u32 },
    #[error("gather for epoch {} aborted, missing ranks {:?}", .0.epoch, .0.missing)]
    GatherAborted(Box<GatherFailure>),
    #[error("gather for epoch {epoch} timed out waiting for {missing:?}")]
    GatherTimeout { epoch: u32, missing: Vec<Rank> },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("startup error: {0}")]
    Startup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    RunTask = 1,
    GetStatus = 2,
    StatusReport = 3,
    Heartbeat = 4,
    HeartbeatAck = 5,
    CenterExchange = 6,
    FinalResult = 7,
    Shutdown = 8,
    Config = 9,
    PeerFailed = 10,
}

impl Tag {
    pub const ALL: [Tag; 10] = [
        Tag::RunTask,
        Tag::GetStatus,
        Tag::StatusReport,
        Tag::Heartbeat,
        Tag::HeartbeatAck,
        Tag::CenterExchange,
        Tag::FinalResult,
        Tag::Shutdown,
        Tag::Config,
        Tag::PeerFailed,
    ];

    pub fn from_u8(b: u8) -> Result<Tag, TransportError> {
        Tag::ALL
            .iter()
            .copied()
            .find(|t| *t as u8 == b)
            .ok_or(TransportError::UnknownTag(b))
    }

    /// Bulk model traffic; everything else is control.
    pub fn is_data(self) -> bool {
        matches!(self, Tag::CenterExchange | Tag::FinalResult)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: Tag,
    pub sender: Rank,
    /// Training epoch, or a sequence number for heartbeats.
    pub epoch: u32,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: Tag, epoch: u32, payload: Vec<u8>) -> Self {
        Self {
            tag,
            sender: 0,
            epoch,
            payload,
        }
    }

    pub fn empty(tag: Tag) -> Self {
        Self::new(tag, 0, Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    /// Every process.
    World,
    /// Active workers only; never includes the master.
    Local,
    /// Master plus all workers, for collecting results.
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommContext {
    pub kind: ContextKind,
    /// Sorted, deduplicated.
    pub members: Vec<Rank>,
}

impl CommContext {
    pub fn world(size: usize) -> Self {
        Self {
            kind: ContextKind::World,
            members: (0..size).collect(),
        }
    }

    pub fn global(size: usize) -> Self {
        Self {
            kind: ContextKind::Global,
            members: (0..size).collect(),
        }
    }

    pub fn local(ranks: impl IntoIterator<Item = Rank>) -> Result<Self, TransportError> {
        let members: BTreeSet<Rank> = ranks.into_iter().collect();
        if members.contains(&0) {
            return Err(TransportError::Usage("the master cannot join a LOCAL context".into()));
        }
        Ok(Self {
            kind: ContextKind::Local,
            members: members.into_iter().collect(),
        })
    }

    pub fn contains(&self, r: Rank) -> bool {
        self.members.binary_search(&r).is_ok()
    }

    pub fn without(&self, gone: &BTreeSet<Rank>) -> Self {
        Self {
            kind: self.kind,
            members: self.members.iter().copied().filter(|r| !gone.contains(r)).collect(),
        }
    }
}

/// Outgoing half of a backend. Must be callable from several threads.
pub trait Link: Send + Sync {
    fn send(&self, from: Rank, to: Rank, msg: Message) -> Result<(), TransportError>;
    fn world_size(&self) -> usize;
    /// Stops all traffic from and to this endpoint.
    fn close(&self, me: Rank);
    fn is_closed(&self, me: Rank) -> bool;
}

/// Routes a received message into the queue for its plane.
#[derive(Debug, Clone)]
pub(crate) struct Inbox {
    control: Sender<Message>,
    data: Sender<Message>,
}

impl Inbox {
    pub(crate) fn deliver(&self, msg: Message) -> bool {
        let q = if msg.tag.is_data() { &self.data } else { &self.control };
        q.send(msg).is_ok()
    }
}

pub(crate) fn inbox() -> (Inbox, Receiver<Message>, Receiver<Message>) {
    let (ctx, crx) = crossbeam_channel::unbounded();
    let (dtx, drx) = crossbeam_channel::unbounded();
    (
        Inbox {
            control: ctx,
            data: dtx,
        },
        crx,
        drx,
    )
}

/// One rank's handle on the network. Clones share the same queues; each
/// plane should have a single consumer.
#[derive(Clone)]
pub struct Endpoint {
    rank: Rank,
    link: Arc<dyn Link>,
    control: Receiver<Message>,
    data: Receiver<Message>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("rank", &self.rank)
            .field("world", &self.link.world_size())
            .finish()
    }
}

impl Endpoint {
    pub(crate) fn new(rank: Rank, link: Arc<dyn Link>, control: Receiver<Message>, data: Receiver<Message>) -> Self {
        Self {
            rank,
            link,
            control,
            data,
        }
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.link.world_size()
    }

    /// Point-to-point send; stamps the sender rank.
    pub fn send(&self, to: Rank, mut msg: Message) -> Result<(), TransportError> {
        let world = self.world_size();
        if to >= world {
            return Err(TransportError::Routing { to, world });
        }
        msg.sender = self.rank;
        self.link.send(self.rank, to, msg)
    }

    /// Send restricted to `ctx`; control messages may always go to the master.
    pub fn send_in(&self, ctx: &CommContext, to: Rank, msg: Message) -> Result<(), TransportError> {
        let to_master = to == 0 && !msg.tag.is_data();
        if !ctx.contains(to) && !to_master {
            return Err(TransportError::Routing {
                to,
                world: ctx.members.len(),
            });
        }
        self.send(to, msg)
    }

    /// Next message from either plane, or `None` on timeout.
    pub fn recv(&self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        if let Ok(m) = self.control.try_recv() {
            return Ok(Some(m));
        }
        if let Ok(m) = self.data.try_recv() {
            return Ok(Some(m));
        }
        crossbeam_channel::select! {
            recv(self.control) -> m => m.map(Some).map_err(|_| TransportError::Closed),
            recv(self.data) -> m => m.map(Some).map_err(|_| TransportError::Closed),
            default(timeout) => self.timed_out(),
        }
    }

    pub fn recv_control(&self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        match from_timeout(self.control.recv_timeout(timeout))? {
            Some(m) => Ok(Some(m)),
            None => self.timed_out(),
        }
    }

    pub fn recv_data(&self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        match from_timeout(self.data.recv_timeout(timeout))? {
            Some(m) => Ok(Some(m)),
            None => self.timed_out(),
        }
    }

    /// A timeout on a closed endpoint is reported as `Closed`.
    fn timed_out(&self) -> Result<Option<Message>, TransportError> {
        if self.is_closed() {
            Err(TransportError::Closed)
        } else {
            Ok(None)
        }
    }

    pub fn control_queue(&self) -> &Receiver<Message> {
        &self.control
    }

    pub fn data_queue(&self) -> &Receiver<Message> {
        &self.data
    }

    pub fn close(&self) {
        self.link.close(self.rank);
    }

    pub fn is_closed(&self) -> bool {
        self.link.is_closed(self.rank)
    }
}

fn from_timeout(r: Result<Message, RecvTimeoutError>) -> Result<Option<Message>, TransportError> {
    match r {
        Ok(m) => Ok(Some(m)),
        Err(RecvTimeoutError::Timeout) => Ok(None),
        Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
    }
}

/// Sends identical configuration bytes to every other member of `ctx`.
pub fn broadcast_config(ep: &Endpoint, ctx: &CommContext, config: &[u8]) -> Result<(), TransportError> {
    if config.is_empty() {
        return Err(TransportError::Usage("empty configuration".into()));
    }
    let mut undelivered = Vec::new();
    for &r in ctx.members.iter().filter(|&&r| r != ep.rank()) {
        if let Err(e) = ep.send(r, Message::new(Tag::Config, 0, config.to_vec())) {
            log::warn!("config not delivered to rank {r}: {e}");
            undelivered.push(r);
        }
    }
    if undelivered.is_empty() {
        Ok(())
    } else {
        Err(TransportError::Startup(format!("config not delivered to ranks {undelivered:?}")))
    }
}

/// Ranks declared failed, shared between a worker's control loop and its
/// training thread.
#[derive(Debug, Clone, Default)]
pub struct PeerHealth {
    failed: Arc<RwLock<BTreeSet<Rank>>>,
}

impl PeerHealth {
    pub fn mark_failed(&self, r: Rank) {
        self.failed.write().expect("health lock").insert(r);
    }

    pub fn is_failed(&self, r: Rank) -> bool {
        self.failed.read().expect("health lock").contains(&r)
    }

    pub fn failed(&self) -> BTreeSet<Rank> {
        self.failed.read().expect("health lock").clone()
    }
}

/// Contributions of a gather keyed by rank.
pub type Contributions = BTreeMap<Rank, Vec<u8>>;
