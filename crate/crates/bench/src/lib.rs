//! Seeded inputs shared by the micro-benchmarks.

use lss_core::{CellPredictions, Grid, LogitGrid, ObjectTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_logits(side: usize, seed: u64) -> LogitGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..side * side).map(|_| rng.random_range(-4.0..4.0)).collect();
    LogitGrid::new(Grid::new(side, values).expect("square grid"), seed).expect("finite logits")
}

pub fn random_predictions(side: usize, seed: u64) -> (CellPredictions, ObjectTarget) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = CellPredictions::zeros(side);
    for v in preds.depth.values_mut() {
        *v = rng.random_range(5.0..50.0);
    }
    for v in preds.log_uncertainty.values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for d in &mut preds.dims {
        *d = [
            rng.random_range(1.0..2.0),
            rng.random_range(1.0..2.0),
            rng.random_range(3.0..5.0),
        ];
    }
    for o in &mut preds.orientation {
        for c in &mut o.confidence {
            *c = rng.random_range(-2.0..2.0);
        }
        for r in &mut o.residual {
            *r = rng.random_range(-0.3..0.3);
        }
    }
    let target = ObjectTarget {
        depth: 25.0,
        dims: [1.5, 1.6, 3.9],
        yaw: 0.7,
        offset: [0.2, -0.4],
    };
    (preds, target)
}
