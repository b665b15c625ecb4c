//! Trains a tiny model, round-trips it through a checkpoint file, and
//! evaluates the reloaded copy on occluded and clean splits. The checkpoint
//! carries the full model configuration, so evaluation needs nothing else.

use ccdn::checkpoint::{load_model, save_checkpoint};
use ccdn::config::RunConfig;
use ccdn::data::synth_generate;
use ccdn::eval;
use ccdn::model::Model;
use ccdn::train::train;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 4;
    cfg.model.channels = 4;
    cfg.model.input_size = 32;
    cfg.data.train_count = 160;
    cfg.data.eval_count = 40;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.eval_batch = 20;

    let train_set = synth_generate(&cfg.train_spec()).unwrap();
    let mut model = Model::build(cfg.model.clone(), cfg.seed).unwrap();
    let eval_occluded = synth_generate(&cfg.eval_spec()).unwrap();
    train(&mut model, &train_set, &eval_occluded, &cfg.train_config(), |_| {}).unwrap();

    let dir = std::env::temp_dir().join("ccdn-eval-demo");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ck");
    save_checkpoint(&model, &path, cfg.epochs as u32).unwrap();
    let (mut reloaded, epoch) = load_model(&path).unwrap();
    println!("checkpoint {} (epoch {epoch})", path.display());

    let mut clean_spec = cfg.eval_spec();
    clean_spec.occlusion_prob = 0.0;
    let eval_clean = synth_generate(&clean_spec).unwrap();

    for (name, set) in [("occluded", &eval_occluded), ("clean", &eval_clean)] {
        let per_image = eval::model_nmes(&mut reloaded, set, cfg.eval_batch).unwrap();
        let r = eval::summarize(per_image, 11).unwrap();
        println!("\n{name} split: nme {:.4}, failure rate {:.4}", r.mean_nme, r.failure_rate);
        println!("  ced: {}", r.ced.iter().map(|(t, f)| format!("{t:.2}:{f:.2}")).collect::<Vec<_>>().join(" "));
    }
}
