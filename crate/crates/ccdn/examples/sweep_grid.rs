//! Sweeps the excitation-block count over a miniature grid and prints the
//! CSV the command-line tool would write. Each grid point is the median
//! final error over the listed seeds, reported on the occluded evaluation
//! split and on an occlusion-free one.

use ccdn::cli::{sweep_csv, sweep_excitations};
use ccdn::config::RunConfig;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.model.channels = 4;
    cfg.model.input_size = 32;
    cfg.data.train_count = 64;
    cfg.data.eval_count = 32;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.eval_batch = 16;

    let rows = sweep_excitations(&cfg, &[1, 2], &[0], |msg| eprintln!("{msg}"))
        .expect("sweep failed");
    print!("{}", sweep_csv("excitations", &rows));
}
