//! Exports per-stage attention activation maps for one evaluation image as
//! PGM files: the two hourglass outputs and the fused map, one file per
//! excitation block.
//!
//! Usage: cargo run --example activation_maps [out_dir]

use ccdn::config::RunConfig;
use ccdn::data::{save_pnm, synth_generate};
use ccdn::eval::{activation_map, Stage};
use ccdn::model::Model;
use ccdn::train::train;
use std::path::PathBuf;

fn main() {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "activations".into()).into();
    std::fs::create_dir_all(&out).unwrap();

    let mut cfg = RunConfig::default();
    cfg.seed = 2;
    cfg.model.channels = 4;
    cfg.model.excitations = 2;
    cfg.model.input_size = 32;
    cfg.data.train_count = 96;
    cfg.data.eval_count = 8;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.eval_batch = 8;

    let train_set = synth_generate(&cfg.train_spec()).unwrap();
    let eval_set = synth_generate(&cfg.eval_spec()).unwrap();
    let mut model = Model::build(cfg.model.clone(), cfg.seed).unwrap();
    train(&mut model, &train_set, &eval_set, &cfg.train_config(), |_| {}).unwrap();

    let image = &eval_set[0].image;
    save_pnm(&out.join("input.pgm"), image).unwrap();

    for stage in [Stage::Last, Stage::Prev, Stage::Fused] {
        for p in 0..cfg.model.excitations {
            let map = activation_map(&mut model, image, stage, p).unwrap();
            // Maps are upsampled to the input side and min-max scaled, so
            // they land in [0,1] and write directly.
            let name = format!("{}_p{p}.pgm", stage_tag(stage));
            save_pnm(&out.join(&name), &map).unwrap();
            let lo = map.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("{name}: range [{lo:.3}, {hi:.3}]");
        }
    }
    println!("\nwrote maps and input.pgm under {}", out.display());
}

fn stage_tag(stage: Stage) -> &'static str {
    match stage {
        Stage::Last => "last",
        Stage::Prev => "prev",
        Stage::Fused => "fused",
    }
}
