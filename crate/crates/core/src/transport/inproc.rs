use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::{inbox, Endpoint, Inbox, Link, Message, Rank, TransportError};

struct Peer {
    inbox: Inbox,
    closed: AtomicBool,
}

struct Shared {
    peers: Vec<Peer>,
}

impl Link for Shared {
    fn send(&self, from: Rank, to: Rank, msg: Message) -> Result<(), TransportError> {
        let peer = self.peers.get(to).ok_or(TransportError::Routing {
            to,
            world: self.peers.len(),
        })?;
        if self.is_closed(from) {
            return Err(TransportError::Closed);
        }
        if peer.closed.load(Ordering::SeqCst) || !peer.inbox.deliver(msg) {
            return Err(TransportError::Link {
                to,
                reason: "peer closed".into(),
            });
        }
        Ok(())
    }

    fn world_size(&self) -> usize {
        self.peers.len()
    }

    fn close(&self, me: Rank) {
        if let Some(p) = self.peers.get(me) {
            p.closed.store(true, Ordering::SeqCst);
        }
    }

    fn is_closed(&self, me: Rank) -> bool {
        self.peers.get(me).is_none_or(|p| p.closed.load(Ordering::SeqCst))
    }
}

/// Channel-backed network for threads of one process.
pub struct InProcNetwork;

impl InProcNetwork {
    /// Endpoints for ranks `0..world`, in rank order.
    pub fn create(world: usize) -> Vec<Endpoint> {
        let mut peers = Vec::with_capacity(world);
        let mut queues = Vec::with_capacity(world);
        for _ in 0..world {
            let (inbox, control, data) = inbox();
            peers.push(Peer {
                inbox,
                closed: AtomicBool::new(false),
            });
            queues.push((control, data));
        }
        let shared: Arc<dyn Link> = Arc::new(Shared { peers });
        queues
            .into_iter()
            .enumerate()
            .map(|(rank, (c, d))| Endpoint::new(rank, shared.clone(), c, d))
            .collect()
    }
}
