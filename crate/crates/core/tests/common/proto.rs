use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use cellgan::grid::CellCoord;
use cellgan::orchestrator::{
    decode_status, encode_peer_failed, encode_run_task, worker_run, FaultPlan, HeartbeatConfig,
    HeartbeatMonitor, LivenessEvent, MasterOptions, RunTask, TraceRecorder, WorkerControl, WorkerOptions, WorkerState,
};
use cellgan::run::run_inproc;
use cellgan::transport::{Endpoint, InProcNetwork, Message, Tag};

fn expect_status(ep: &Endpoint, within: Duration) -> (WorkerState, u32, Duration) {
    let start = Instant::now();
    loop {
        let left = within.saturating_sub(start.elapsed());
        assert!(!left.is_zero(), "no STATUS_REPORT within {within:?}");
        if let Some(m) = ep.recv_control(left).unwrap() {
            if m.tag == Tag::StatusReport {
                let s = decode_status(&m.payload).unwrap();
                return (s.state, s.epoch, start.elapsed());
            }
        }
    }
}

pub fn healthy_run_traces() {
    let cfg = super::small_config("2x2", 2, 1);
    let trace = TraceRecorder::default();
    let master = MasterOptions {
        heartbeat: cfg.heartbeat(),
        ..MasterOptions::default()
    };
    let report = run_inproc(&cfg.job(), &master, |_| WorkerOptions {
        trace: Some(trace.clone()),
        ..WorkerOptions::default()
    })
    .unwrap();
    assert!(report.failed_cells().is_empty());
    for rank in 1..=4 {
        assert_eq!(
            trace.trace_of(rank),
            vec![WorkerState::Inactive, WorkerState::Processing, WorkerState::Finished]
        );
    }
    assert!(trace.all_legal());
}

pub fn paused_worker_detected_once() {
    let hb = HeartbeatConfig {
        interval: Duration::from_millis(100),
        misses: 3,
    };
    let eps = InProcNetwork::create(2);
    let worker_ep = eps[1].clone();
    let worker = thread::spawn(move || {
        worker_run(
            worker_ep,
            WorkerOptions {
                faults: FaultPlan {
                    pause_on_heartbeat: Some((3, Duration::from_secs(2))),
                    ..FaultPlan::default()
                },
                ..WorkerOptions::default()
            },
        )
    });
    let (tx, rx) = crossbeam_channel::unbounded();
    let started = Instant::now();
    let monitor = HeartbeatMonitor::start(eps[0].clone(), vec![1], hb, tx);
    let mut events = Vec::new();
    while started.elapsed() < Duration::from_secs(3) {
        if let Some(m) = eps[0].recv_control(Duration::from_millis(5)).unwrap() {
            if m.tag == Tag::HeartbeatAck {
                monitor.ack(m.sender);
            }
        }
        while let Ok(ev) = rx.try_recv() {
            events.push((ev, started.elapsed()));
        }
    }
    monitor.stop();
    eps[0].send(1, Message::empty(Tag::Shutdown)).unwrap();
    worker.join().unwrap().unwrap();

    assert_eq!(events.len(), 1, "{events:?}");
    let (LivenessEvent::Failed { rank, silent_for }, at) = &events[0];
    assert_eq!(*rank, 1);
    let bound = hb.detection_bound() + Duration::from_millis(500);
    assert!(*silent_for <= bound, "silent for {silent_for:?}");
    // The pause begins with the third heartbeat, two intervals in.
    assert!(*at <= hb.interval * 2 + bound, "detected after {at:?}");
}

pub fn status_during_pending_gather() {
    let cfg = super::small_config("1x2", 1, 4);
    let job = cfg.job();
    let eps = InProcNetwork::create(3);
    let (master, silent) = (eps[0].clone(), eps[2].clone());
    let trace = TraceRecorder::default();
    let worker_ep = eps[1].clone();
    let opts = WorkerOptions {
        trace: Some(trace.clone()),
        ..WorkerOptions::default()
    };
    let worker = thread::spawn(move || worker_run(worker_ep, opts));

    let hello = expect_status(&master, Duration::from_secs(5));
    assert_eq!(hello.0, WorkerState::Inactive);
    master.send(1, Message::new(Tag::Config, 0, job.to_bytes())).unwrap();
    let task = RunTask {
        coord: CellCoord::new(0, 0),
        assignments: BTreeMap::from([(1, CellCoord::new(0, 0)), (2, CellCoord::new(0, 1))]),
    };
    master.send(1, Message::new(Tag::RunTask, 0, encode_run_task(&task))).unwrap();

    // Rank 2 never answers, so rank 1 blocks in its first gather.
    let exchange = silent.recv_data(Duration::from_secs(10)).unwrap().expect("center exchange");
    assert_eq!((exchange.tag, exchange.sender, exchange.epoch), (Tag::CenterExchange, 1, 1));

    master.send(1, Message::empty(Tag::GetStatus)).unwrap();
    let (state, epoch, took) = expect_status(&master, Duration::from_secs(2));
    assert_eq!((state, epoch), (WorkerState::Processing, 1));
    assert!(took < HeartbeatConfig::default().interval, "answered after {took:?}");

    master.send(1, Message::new(Tag::PeerFailed, 0, encode_peer_failed(2))).unwrap();
    let result = master.recv_data(Duration::from_secs(10)).unwrap().expect("final result");
    assert_eq!(result.tag, Tag::FinalResult);
    master.send(1, Message::empty(Tag::Shutdown)).unwrap();
    let exit = worker.join().unwrap().unwrap();
    assert_eq!(exit.state, WorkerState::Finished);
    assert!(trace.all_legal());
}
