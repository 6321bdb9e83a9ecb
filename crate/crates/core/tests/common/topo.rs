use std::collections::BTreeSet;

use cellgan::grid::{
    coord_to_rank, default_assignments, neighborhood, overlap_neighbors, rank_to_coord, CellCoord, GridSpec,
};

/// Neighborhood by signed offsets with Euclidean wrap-around.
pub fn oracle_neighborhood(rows: usize, cols: usize, r: usize, c: usize) -> Vec<CellCoord> {
    let offsets: [(i64, i64); 5] = [(0, 0), (-1, 0), (0, 1), (1, 0), (0, -1)];
    let mut out: Vec<CellCoord> = Vec::new();
    for (dr, dc) in offsets {
        let cell = CellCoord::new(
            (r as i64 + dr).rem_euclid(rows as i64) as usize,
            (c as i64 + dc).rem_euclid(cols as i64) as usize,
        );
        if !out.contains(&cell) {
            out.push(cell);
        }
    }
    out
}

/// Compares every mapping of a `rows x cols` grid against the oracle.
pub fn check_grid(rows: usize, cols: usize) -> Result<(), String> {
    let spec = GridSpec::new(rows, cols).map_err(|e| e.to_string())?;
    let all: Vec<CellCoord> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| CellCoord::new(r, c)))
        .collect();
    let fail = |what: &str, cell: CellCoord| Err(format!("{rows}x{cols} {what} of {cell}"));
    for (i, &cell) in all.iter().enumerate() {
        let rank = i + 1;
        let got = neighborhood(&spec, cell).map_err(|e| e.to_string())?;
        if got.members != oracle_neighborhood(rows, cols, cell.row, cell.col) || got.center != cell {
            return fail("neighborhood", cell);
        }
        let overlap: BTreeSet<CellCoord> = all
            .iter()
            .copied()
            .filter(|o| oracle_neighborhood(rows, cols, o.row, o.col).contains(&cell))
            .collect();
        if overlap_neighbors(&spec, cell).ok() != Some(overlap) {
            return fail("overlap", cell);
        }
        if coord_to_rank(&spec, cell).ok() != Some(rank) || rank_to_coord(&spec, rank).ok() != Some(cell) {
            return fail("rank mapping", cell);
        }
    }
    if rank_to_coord(&spec, 0).is_ok() || rank_to_coord(&spec, all.len() + 1).is_ok() {
        return Err(format!("{rows}x{cols} accepts out-of-range ranks"));
    }
    let assigned = default_assignments(&spec);
    if assigned.len() != all.len() || assigned.iter().any(|(&r, &c)| coord_to_rank(&spec, c).ok() != Some(r)) {
        return Err(format!("{rows}x{cols} default assignments"));
    }
    Ok(())
}
