use std::collections::BTreeMap;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::transport::{Endpoint, Message, Rank, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatConfig {
    #[serde(with = "millis")]
    pub interval: Duration,
    /// Consecutive unanswered heartbeats before a rank is declared failed.
    pub misses: u32,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self {
            interval: Duration::from_secs(2),
            misses: 3,
        }
    }
}

impl HeartbeatConfig {
    pub fn timeout(&self) -> Duration {
        self.interval * self.misses
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.interval.is_zero() {
            return Err("heartbeat interval must be > 0".into());
        }
        if self.misses < 2 {
            return Err("heartbeat timeout must exceed one interval (misses >= 2)".into());
        }
        Ok(())
    }

    /// Longest delay between a worker going silent and its failure event.
    pub fn detection_bound(&self) -> Duration {
        self.interval * (self.misses + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LivenessEvent {
    Failed { rank: Rank, silent_for: Duration },
}

enum Command {
    Ack(Rank),
    Retire(Rank),
    Stop,
}

struct Watch {
    outstanding: bool,
    misses: u32,
    last_ack: Instant,
}

/// Background thread that pings workers and reports each silent rank once.
pub struct HeartbeatMonitor {
    commands: Sender<Command>,
    handle: Option<JoinHandle<()>>,
}

impl HeartbeatMonitor {
    /// Starts monitoring `ranks`. Acknowledgements must be forwarded with
    /// [`HeartbeatMonitor::ack`] by whoever consumes the control queue.
    pub fn start(ep: Endpoint, ranks: Vec<Rank>, cfg: HeartbeatConfig, events: Sender<LivenessEvent>) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded();
        let handle = thread::Builder::new()
            .name("heartbeat".into())
            .spawn(move || monitor_loop(ep, ranks, cfg, rx, events))
            .expect("spawn heartbeat thread");
        Self {
            commands: tx,
            handle: Some(handle),
        }
    }

    pub fn ack(&self, rank: Rank) {
        let _ = self.commands.send(Command::Ack(rank));
    }

    /// Stops watching a rank that finished normally.
    pub fn retire(&self, rank: Rank) {
        let _ = self.commands.send(Command::Retire(rank));
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let _ = self.commands.send(Command::Stop);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HeartbeatMonitor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn monitor_loop(ep: Endpoint, ranks: Vec<Rank>, cfg: HeartbeatConfig, rx: Receiver<Command>, events: Sender<LivenessEvent>) {
    let now = Instant::now();
    let mut watched: BTreeMap<Rank, Watch> = ranks
        .into_iter()
        .map(|r| {
            (
                r,
                Watch {
                    outstanding: false,
                    misses: 0,
                    last_ack: now,
                },
            )
        })
        .collect();
    let ticker = crossbeam_channel::tick(cfg.interval);
    let mut seq: u32 = 0;
    let beat = |watched: &mut BTreeMap<Rank, Watch>, seq: u32| {
        for (&r, w) in watched.iter_mut() {
            if let Err(e) = ep.send(r, Message::new(Tag::Heartbeat, seq, Vec::new())) {
                log::debug!("heartbeat to rank {r} not sent: {e}");
            }
            w.outstanding = true;
        }
    };
    beat(&mut watched, seq);
    loop {
        crossbeam_channel::select! {
            recv(rx) -> cmd => match cmd {
                Ok(Command::Ack(r)) => {
                    if let Some(w) = watched.get_mut(&r) {
                        w.outstanding = false;
                        w.misses = 0;
                        w.last_ack = Instant::now();
                    }
                }
                Ok(Command::Retire(r)) => {
                    watched.remove(&r);
                }
                Ok(Command::Stop) | Err(_) => return,
            },
            recv(ticker) -> _ => {
                let mut failed = Vec::new();
                for (&r, w) in watched.iter_mut() {
                    if w.outstanding {
                        w.misses += 1;
                    }
                    if w.misses >= cfg.misses {
                        failed.push((r, w.last_ack.elapsed()));
                    }
                }
                for (rank, silent_for) in failed {
                    watched.remove(&rank);
                    log::warn!("rank {rank} missed {} heartbeats, declared failed", cfg.misses);
                    if events.send(LivenessEvent::Failed { rank, silent_for }).is_err() {
                        return;
                    }
                }
                seq = seq.wrapping_add(1);
                beat(&mut watched, seq);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::InProcNetwork;

    fn fast() -> HeartbeatConfig {
        HeartbeatConfig {
            interval: Duration::from_millis(30),
            misses: 3,
        }
    }

    #[test]
    fn defaults_and_validation() {
        let d = HeartbeatConfig::default();
        assert_eq!(d.interval, Duration::from_secs(2));
        assert_eq!(d.timeout(), Duration::from_secs(6));
        assert!(d.timeout() > d.interval);
        assert!(HeartbeatConfig { misses: 1, ..d }.validate().is_err());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"interval":2000,"misses":3}"#);
    }

    #[test]
    fn silent_rank_fails_once_and_responsive_never() {
        let eps = InProcNetwork::create(3);
        let (tx, rx) = crossbeam_channel::unbounded();
        let mon = HeartbeatMonitor::start(eps[0].clone(), vec![1, 2], fast(), tx);
        let start = Instant::now();
        // rank 1 answers every heartbeat, rank 2 never does
        while start.elapsed() < Duration::from_millis(400) {
            while let Ok(m) = eps[1].control_queue().try_recv() {
                assert_eq!(m.tag, Tag::Heartbeat);
                mon.ack(1);
            }
            thread::sleep(Duration::from_millis(2));
        }
        mon.stop();
        let events: Vec<_> = rx.try_iter().collect();
        assert_eq!(events.len(), 1, "{events:?}");
        let LivenessEvent::Failed { rank, silent_for } = &events[0];
        assert_eq!(*rank, 2);
        assert!(*silent_for <= fast().detection_bound() + Duration::from_millis(50));
    }
}
