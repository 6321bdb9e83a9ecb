use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::grid::{CellCoord, GridSpec};
use crate::transport::Rank;

/// A machine and the number of processes it can host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub name: String,
    pub slots: usize,
}

/// Single-node inventory with one slot per process.
pub fn local_inventory(world: usize) -> Vec<NodeInfo> {
    vec![NodeInfo {
        name: "localhost".into(),
        slots: world,
    }]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// Worker rank to grid cell; ranks `1..=cells` in row-major order.
    pub assignments: BTreeMap<Rank, CellCoord>,
    /// Node index of every rank, master included.
    pub nodes: BTreeMap<Rank, usize>,
}

impl Placement {
    pub fn workers_per_node(&self, node_count: usize) -> Vec<usize> {
        let mut counts = vec![0; node_count];
        for (&rank, &n) in &self.nodes {
            if rank != 0 {
                counts[n] += 1;
            }
        }
        counts
    }
}

/// Puts the master on the first node, then deals the cells in row-major
/// order round-robin over nodes that still have free slots.
pub fn compute_placement(grid: &GridSpec, nodes: &[NodeInfo]) -> Result<Placement, OrchestratorError> {
    let needed = grid.cell_count() + 1;
    let available: usize = nodes.iter().map(|n| n.slots).sum();
    if available < needed {
        return Err(OrchestratorError::Capacity { needed, available });
    }
    let mut free: Vec<usize> = nodes.iter().map(|n| n.slots).collect();
    let master_node = free.iter().position(|&s| s > 0).expect("capacity checked");
    free[master_node] -= 1;
    let mut placement = Placement {
        assignments: BTreeMap::new(),
        nodes: BTreeMap::from([(0, master_node)]),
    };
    let mut next = 0;
    for (i, coord) in grid.cells().enumerate() {
        while free[next % nodes.len()] == 0 {
            next += 1;
        }
        let node = next % nodes.len();
        free[node] -= 1;
        next += 1;
        placement.assignments.insert(i + 1, coord);
        placement.nodes.insert(i + 1, node);
    }
    Ok(placement)
}
