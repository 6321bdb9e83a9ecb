//! Toroidal grid layout, five-cell neighborhoods and the cell/rank mapping.
//!
//! The neighborhood is the cell itself plus its North, East, South and West
//! neighbors with wraparound. Older literature on this training scheme calls
//! it a "Moore" neighborhood; the shape is what is usually named von Neumann.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rank reserved for the master process; cells start at rank 1.
pub const MASTER_RANK: usize = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("invalid grid \"{0}\": expected RxC with R, C >= 1")]
    Parse(String),
    #[error("coordinate ({row}, {col}) outside {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("rank {rank} is not a cell rank of a grid with {cells} cells")]
    InvalidRank { rank: usize, cells: usize },
    #[error("grid needs {needed} workers but only {available} are available")]
    Capacity { needed: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCoord {
    pub row: usize,
    pub col: usize,
}

impl CellCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

impl From<(usize, usize)> for CellCoord {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::Parse(format!("{rows}x{cols}")));
        }
        Ok(Self { rows, cols })
    }

    pub fn square(m: usize) -> Result<Self, GridError> {
        Self::new(m, m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Population size `rows * cols`.
    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellCoord> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| CellCoord::new(r, c)))
    }

    pub fn contains(&self, c: CellCoord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    fn check(&self, c: CellCoord) -> Result<(), GridError> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds {
                row: c.row,
                col: c.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Row-major index of a cell, starting at 0.
    pub fn index_of(&self, c: CellCoord) -> Result<usize, GridError> {
        self.check(c)?;
        Ok(c.row * self.cols + c.col)
    }

    /// Worst-case hop count between two cells: `rows/2 + cols/2`.
    pub fn diameter(&self) -> usize {
        self.rows / 2 + self.cols / 2
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSpec {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::Parse(s.to_string());
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        Self::new(rows, cols).map_err(|_| bad())
    }
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A cell and its distinct neighbors, ordered center, N, E, S, W.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: CellCoord,
    pub members: Vec<CellCoord>,
}

impl Neighborhood {
    /// Sub-population size `s`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: CellCoord) -> bool {
        self.members.contains(&c)
    }

    /// Members other than the center.
    pub fn neighbors(&self) -> impl Iterator<Item = CellCoord> + '_ {
        self.members.iter().copied().filter(move |&c| c != self.center)
    }

    pub fn position(&self, c: CellCoord) -> Option<usize> {
        self.members.iter().position(|&m| m == c)
    }
}

pub fn neighborhood(spec: &GridSpec, c: CellCoord) -> Result<Neighborhood, GridError> {
    spec.check(c)?;
    let (rows, cols) = (spec.rows, spec.cols);
    let candidates = [
        c,
        CellCoord::new((c.row + rows - 1) % rows, c.col),
        CellCoord::new(c.row, (c.col + 1) % cols),
        CellCoord::new((c.row + 1) % rows, c.col),
        CellCoord::new(c.row, (c.col + cols - 1) % cols),
    ];
    let mut members = Vec::with_capacity(5);
    for m in candidates {
        if !members.contains(&m) {
            members.push(m);
        }
    }
    Ok(Neighborhood { center: c, members })
}

/// Cells whose neighborhoods contain `c`, found by scanning the whole grid.
pub fn overlap_neighbors(spec: &GridSpec, c: CellCoord) -> Result<BTreeSet<CellCoord>, GridError> {
    spec.check(c)?;
    let mut out = BTreeSet::new();
    for other in spec.cells() {
        if neighborhood(spec, other)?.contains(c) {
            out.insert(other);
        }
    }
    Ok(out)
}

pub fn coord_to_rank(spec: &GridSpec, c: CellCoord) -> Result<usize, GridError> {
    Ok(spec.index_of(c)? + 1)
}

pub fn rank_to_coord(spec: &GridSpec, rank: usize) -> Result<CellCoord, GridError> {
    let cells = spec.cell_count();
    if rank == MASTER_RANK || rank > cells {
        return Err(GridError::InvalidRank { rank, cells });
    }
    let i = rank - 1;
    Ok(CellCoord::new(i / spec.cols, i % spec.cols))
}

/// Row-major rank assignment for every cell.
pub fn default_assignments(spec: &GridSpec) -> BTreeMap<usize, CellCoord> {
    spec.cells().enumerate().map(|(i, c)| (i + 1, c)).collect()
}

/// Rank reassignment produced by [`reconfigure`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MigrationPlan {
    /// Ranks whose coordinate changes, with the new coordinate.
    pub moves: BTreeMap<usize, CellCoord>,
    /// Ranks that no longer host a cell.
    pub inactive: BTreeSet<usize>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.moves.is_empty() && self.inactive.is_empty()
    }
}

/// Plans the move from `old` to `new`: ranks `1..=new.cell_count()` take the
/// new cells in row-major order, any other live rank becomes inactive.
pub fn reconfigure(
    old: &GridSpec,
    new: &GridSpec,
    live_assignments: &BTreeMap<usize, CellCoord>,
    available_workers: usize,
) -> Result<MigrationPlan, GridError> {
    let needed = new.cell_count();
    if needed > available_workers {
        return Err(GridError::Capacity {
            needed,
            available: available_workers,
        });
    }
    for c in live_assignments.values() {
        old.check(*c)?;
    }
    let mut plan = MigrationPlan::default();
    for (&rank, &current) in live_assignments {
        if rank >= 1 && rank <= needed {
            let target = rank_to_coord(new, rank)?;
            if target != current {
                plan.moves.insert(rank, target);
            }
        } else {
            plan.inactive.insert(rank);
        }
    }
    // Ranks that were idle before but are needed now.
    for rank in 1..=needed {
        if !live_assignments.contains_key(&rank) {
            plan.moves.insert(rank, rank_to_coord(new, rank)?);
        }
    }
    Ok(plan)
}
