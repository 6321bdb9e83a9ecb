//! Wall-clock accounting for the four dominant training routines.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routine {
    Gather,
    Train,
    UpdateGenomes,
    Mutate,
    Other,
}

impl Routine {
    /// The routines reported individually.
    pub const TRACKED: [Routine; 4] = [
        Routine::Gather,
        Routine::Train,
        Routine::UpdateGenomes,
        Routine::Mutate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Routine::Gather => "gather",
            Routine::Train => "train",
            Routine::UpdateGenomes => "update_genomes",
            Routine::Mutate => "mutate",
            Routine::Other => "other",
        }
    }
}

impl fmt::Display for Routine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cumulative seconds per routine plus the overall wall time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub gather: f64,
    pub train: f64,
    pub update_genomes: f64,
    pub mutate: f64,
    pub other: f64,
    pub overall: f64,
}

impl ProfileReport {
    pub fn get(&self, r: Routine) -> f64 {
        match r {
            Routine::Gather => self.gather,
            Routine::Train => self.train,
            Routine::UpdateGenomes => self.update_genomes,
            Routine::Mutate => self.mutate,
            Routine::Other => self.other,
        }
    }

    pub fn add(&mut self, r: Routine, secs: f64) {
        let slot = match r {
            Routine::Gather => &mut self.gather,
            Routine::Train => &mut self.train,
            Routine::UpdateGenomes => &mut self.update_genomes,
            Routine::Mutate => &mut self.mutate,
            Routine::Other => &mut self.other,
        };
        *slot += secs.max(0.0);
    }

    /// Sum of the four tracked routines.
    pub fn routine_sum(&self) -> f64 {
        Routine::TRACKED.iter().map(|&r| self.get(r)).sum()
    }

    /// Per-field maximum; used to combine worker reports so that the result
    /// is comparable with a wall-clock measurement.
    pub fn merge_max<'a>(reports: impl IntoIterator<Item = &'a ProfileReport>) -> ProfileReport {
        let mut out = ProfileReport::default();
        for r in reports {
            out.gather = out.gather.max(r.gather);
            out.train = out.train.max(r.train);
            out.update_genomes = out.update_genomes.max(r.update_genomes);
            out.mutate = out.mutate.max(r.mutate);
            out.other = out.other.max(r.other);
            out.overall = out.overall.max(r.overall);
        }
        out
    }

    pub fn merge_sum<'a>(reports: impl IntoIterator<Item = &'a ProfileReport>) -> ProfileReport {
        let mut out = ProfileReport::default();
        for r in reports {
            for routine in [Routine::Gather, Routine::Train, Routine::UpdateGenomes, Routine::Mutate, Routine::Other] {
                out.add(routine, r.get(routine));
            }
            out.overall += r.overall;
        }
        out
    }
}

/// Accumulates section timings into a [`ProfileReport`].
///
/// Sections may nest; time spent in an inner section is charged to the inner
/// routine only.
#[derive(Debug)]
pub struct Profiler {
    report: ProfileReport,
    started: Instant,
    // child time accumulated by each open section
    open: Vec<f64>,
}

impl Default for Profiler {
    fn default() -> Self {
        Self::new()
    }
}

impl Profiler {
    pub fn new() -> Self {
        Self {
            report: ProfileReport::default(),
            started: Instant::now(),
            open: Vec::new(),
        }
    }

    pub fn section<R>(&mut self, routine: Routine, f: impl FnOnce(&mut Profiler) -> R) -> R {
        let start = Instant::now();
        self.open.push(0.0);
        let out = f(self);
        let elapsed = start.elapsed().as_secs_f64();
        let child = self.open.pop().unwrap_or(0.0);
        self.report.add(routine, elapsed - child);
        if let Some(parent) = self.open.last_mut() {
            *parent += elapsed;
        }
        out
    }

    /// Adds externally measured time, e.g. from a worker thread.
    pub fn record(&mut self, routine: Routine, secs: f64) {
        self.report.add(routine, secs);
        if let Some(parent) = self.open.last_mut() {
            *parent += secs.max(0.0);
        }
    }

    /// Snapshot with `overall` set to the time since construction.
    pub fn report(&self) -> ProfileReport {
        let mut r = self.report.clone();
        r.overall = self.started.elapsed().as_secs_f64();
        r
    }

    pub fn finish(self) -> ProfileReport {
        self.report()
    }
}

/// Speedup `baseline / parallel` and acceleration `1 - parallel / baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub speedup: f64,
    /// Percentage reduction of execution time.
    pub acceleration_pct: f64,
}

impl Ratio {
    fn of(baseline: f64, parallel: f64, what: &'static str) -> Result<Self, DataError> {
        if parallel <= 0.0 {
            return Err(DataError::UndefinedRatio(what));
        }
        Ok(Self {
            speedup: baseline / parallel,
            acceleration_pct: if baseline > 0.0 {
                100.0 * (1.0 - parallel / baseline)
            } else {
                0.0
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    /// `None` where the routine took no time in the parallel run.
    pub routines: BTreeMap<Routine, Option<Ratio>>,
    pub overall: Ratio,
}

pub fn speedup(baseline: &ProfileReport, parallel: &ProfileReport) -> Result<SpeedupReport, DataError> {
    let overall = Ratio::of(baseline.overall, parallel.overall, "overall")?;
    let routines = Routine::TRACKED
        .iter()
        .map(|&r| (r, Ratio::of(baseline.get(r), parallel.get(r), r.name()).ok()))
        .collect();
    Ok(SpeedupReport { routines, overall })
}
