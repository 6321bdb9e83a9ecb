use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::{CommContext, Contributions, Endpoint, Message, PeerHealth, Rank, Tag, TransportError};

/// What a gather had collected when a member failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherFailure {
    pub epoch: u32,
    /// Failed members whose contribution never arrived.
    pub missing: Vec<Rank>,
    /// Contributions that did arrive, including the caller's.
    pub partial: Contributions,
}

/// Epoch-tagged all-to-all exchange over a LOCAL context. Contributions that
/// arrive early for a later epoch are kept until that epoch's gather.
#[derive(Debug)]
pub struct Gatherer {
    buffered: BTreeMap<u32, Contributions>,
    poll: Duration,
}

impl Default for Gatherer {
    fn default() -> Self {
        Self {
            buffered: BTreeMap::new(),
            poll: Duration::from_millis(20),
        }
    }
}

impl Gatherer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sends `contribution` to every other live member and blocks until each
    /// member's contribution for `epoch` has arrived. Members declared failed
    /// in `health` are not waited for; if any of them is missing the gather
    /// ends with [`TransportError::GatherAborted`].
    pub fn gather(
        &mut self,
        ep: &Endpoint,
        ctx: &CommContext,
        contribution: &[u8],
        epoch: u32,
        health: &PeerHealth,
        timeout: Option<Duration>,
    ) -> Result<Contributions, TransportError> {
        let me = ep.rank();
        if !ctx.contains(me) {
            return Err(TransportError::Usage(format!("rank {me} is not in the gather context")));
        }
        let mut got: Contributions = BTreeMap::from([(me, contribution.to_vec())]);
        for &r in ctx.members.iter().filter(|&&r| r != me) {
            if health.is_failed(r) {
                continue;
            }
            if let Err(e) = ep.send_in(ctx, r, Message::new(Tag::CenterExchange, epoch, contribution.to_vec())) {
                log::warn!("rank {me}: epoch {epoch} contribution to rank {r} not sent: {e}");
            }
        }
        self.buffered.retain(|&e, _| e >= epoch);
        if let Some(early) = self.buffered.remove(&epoch) {
            got.extend(early.into_iter().filter(|(r, _)| ctx.contains(*r)));
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let missing: Vec<Rank> = ctx.members.iter().copied().filter(|r| !got.contains_key(r)).collect();
            if missing.is_empty() {
                return Ok(got);
            }
            if missing.iter().all(|&r| health.is_failed(r)) {
                return Err(TransportError::GatherAborted(Box::new(GatherFailure {
                    epoch,
                    missing,
                    partial: got,
                })));
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(TransportError::GatherTimeout { epoch, missing });
            }
            if ep.is_closed() {
                return Err(TransportError::Closed);
            }
            let Some(msg) = ep.recv_data(self.poll)? else {
                continue;
            };
            if msg.tag != Tag::CenterExchange {
                log::warn!("rank {me}: ignoring {:?} from rank {} during gather", msg.tag, msg.sender);
                continue;
            }
            if !ctx.contains(msg.sender) || health.is_failed(msg.sender) {
                log::debug!("rank {me}: dropping contribution from rank {} outside the context", msg.sender);
                continue;
            }
            if msg.epoch < epoch {
                return Err(TransportError::StaleEpoch {
                    rank: msg.sender,
                    got: msg.epoch,
                    expected: epoch,
                });
            }
            let slot = if msg.epoch == epoch {
                &mut got
            } else {
                self.buffered.entry(msg.epoch).or_default()
            };
            if slot.insert(msg.sender, msg.payload).is_some() {
                log::warn!("rank {me}: duplicate contribution from rank {} for epoch {}", msg.sender, msg.epoch);
            }
        }
    }
}

/// One-shot gather without failure tracking or buffering across calls.
pub fn gather(ep: &Endpoint, ctx: &CommContext, contribution: &[u8], epoch: u32) -> Result<Contributions, TransportError> {
    Gatherer::new().gather(ep, ctx, contribution, epoch, &PeerHealth::default(), None)
}

#[cfg(test)]
mod tests {
    use super::super::InProcNetwork;
    use super::*;
    use std::thread;

    #[test]
    fn single_member_returns_own() {
        let eps = InProcNetwork::create(2);
        let ctx = CommContext::local([1]).unwrap();
        let out = gather(&eps[1], &ctx, b"me", 1).unwrap();
        assert_eq!(out, BTreeMap::from([(1, b"me".to_vec())]));
    }

    #[test]
    fn all_members_receive_identical_maps() {
        let eps = InProcNetwork::create(5);
        let ctx = CommContext::local([1, 2, 3, 4]).unwrap();
        let handles: Vec<_> = eps
            .into_iter()
            .skip(1)
            .map(|ep| {
                let ctx = ctx.clone();
                thread::spawn(move || {
                    let mine = vec![ep.rank() as u8; ep.rank()];
                    gather(&ep, &ctx, &mine, 3).unwrap()
                })
            })
            .collect();
        let maps: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let expect: Contributions = (1..=4).map(|r| (r, vec![r as u8; r])).collect();
        for m in maps {
            assert_eq!(m, expect);
        }
    }

    #[test]
    fn stale_epoch_names_rank() {
        let eps = InProcNetwork::create(3);
        let ctx = CommContext::local([1, 2]).unwrap();
        eps[2].send(1, Message::new(Tag::CenterExchange, 1, vec![0])).unwrap();
        match gather(&eps[1], &ctx, b"x", 2) {
            Err(TransportError::StaleEpoch { rank: 2, got: 1, expected: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn future_epochs_are_buffered() {
        let eps = InProcNetwork::create(3);
        let ctx = CommContext::local([1, 2]).unwrap();
        eps[2].send(1, Message::new(Tag::CenterExchange, 2, b"b".to_vec())).unwrap();
        eps[2].send(1, Message::new(Tag::CenterExchange, 1, b"a".to_vec())).unwrap();
        let mut g = Gatherer::new();
        let h = PeerHealth::default();
        assert_eq!(g.gather(&eps[1], &ctx, b"1", 1, &h, None).unwrap()[&2], b"a");
        assert_eq!(g.gather(&eps[1], &ctx, b"1", 2, &h, None).unwrap()[&2], b"b");
    }

    #[test]
    fn failure_aborts_with_partial() {
        let eps = InProcNetwork::create(4);
        let ctx = CommContext::local([1, 2, 3]).unwrap();
        eps[2].send(1, Message::new(Tag::CenterExchange, 5, b"two".to_vec())).unwrap();
        let health = PeerHealth::default();
        let h2 = health.clone();
        let marker = thread::spawn(move || {
            thread::sleep(Duration::from_millis(50));
            h2.mark_failed(3);
        });
        let err = Gatherer::new()
            .gather(&eps[1], &ctx, b"one", 5, &health, Some(Duration::from_secs(5)))
            .unwrap_err();
        marker.join().unwrap();
        match err {
            TransportError::GatherAborted(f) => {
                assert_eq!(f.missing, vec![3]);
                assert_eq!(f.partial.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeout_lists_missing() {
        let eps = InProcNetwork::create(3);
        let ctx = CommContext::local([1, 2]).unwrap();
        let err = Gatherer::new()
            .gather(&eps[1], &ctx, b"x", 1, &PeerHealth::default(), Some(Duration::from_millis(60)))
            .unwrap_err();
        assert!(matches!(err, TransportError::GatherTimeout { epoch: 1, ref missing } if missing == &vec![2]));
    }
}
