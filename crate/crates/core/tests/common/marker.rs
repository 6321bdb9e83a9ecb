use std::collections::BTreeMap;
use std::sync::Arc;

use cellgan::coevolution::{CoevoError, Evaluator};
use cellgan::data::Dataset;
use cellgan::grid::{overlap_neighbors, CellCoord, GridSpec};
use cellgan::losses::LossKind;
use cellgan::nn::{Batch, MlpParams};
use cellgan::orchestrator::CellRunner;

const MARK: f32 = 7.0;

fn is_marker(p: &MlpParams) -> bool {
    let last = p.layers.last().unwrap();
    last.biases[0] == MARK && p.layers.iter().all(|l| l.weights.iter().all(|&w| w == 0.0))
}

/// Marker generators score 0, everything else 1.
struct MarkerEvaluator;

impl Evaluator for MarkerEvaluator {
    fn generator_fitness(&self, gen: &MlpParams, _: &[&MlpParams], _: LossKind, _: &Batch, _: u64) -> Result<f64, CoevoError> {
        Ok(if is_marker(gen) { 0.0 } else { 1.0 })
    }

    fn discriminator_fitness(&self, _: &MlpParams, _: &[&MlpParams], _: LossKind, _: &Batch, _: u64) -> Result<f64, CoevoError> {
        Ok(1.0)
    }
}

/// Exchange rounds until every center holds the marker planted at (0, 0).
pub fn rounds_to_saturate(rows: usize, cols: usize) -> usize {
    let mut cfg = super::small_config(&format!("{rows}x{cols}"), 1, 9);
    cfg.batches_per_epoch = 0;
    let job = cfg.job();
    let grid = GridSpec::new(rows, cols).unwrap();
    let dataset = Dataset::load(&job.dataset).unwrap();
    let coords: Vec<CellCoord> = grid.cells().collect();
    let mut runners: Vec<CellRunner> = coords
        .iter()
        .map(|&c| CellRunner::new(&job, c, dataset.clone(), Arc::new(MarkerEvaluator)).unwrap())
        .collect();
    let mut marker = MlpParams::zeros(&job.generator).unwrap();
    marker.layers.last_mut().unwrap().biases[0] = MARK;
    runners[0].cell.center_gen = marker;
    let index: BTreeMap<CellCoord, usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    for round in 0..=rows * cols {
        // A training pass with no batches only re-selects the centers.
        for r in runners.iter_mut() {
            r.train_epoch().unwrap();
        }
        let marked = runners.iter().filter(|r| is_marker(&r.cell.center_gen)).count();
        assert!(marked >= 1, "marker lost after {round} rounds");
        if marked == runners.len() {
            return round;
        }
        let contributions: Vec<Vec<u8>> = runners.iter().map(|r| r.contribution()).collect();
        for (i, r) in runners.iter_mut().enumerate() {
            for c in overlap_neighbors(&grid, coords[i]).unwrap() {
                if c != coords[i] {
                    r.absorb_bytes(&contributions[index[&c]]).unwrap();
                }
            }
        }
    }
    panic!("marker never saturated {rows}x{cols}");
}
