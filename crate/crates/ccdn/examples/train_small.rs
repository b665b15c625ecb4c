//! End-to-end training of a reduced model on a reduced dataset. Finishes in
//! well under a minute and shows the per-epoch loss split: coordinate
//! regression plus the three weighted decorrelation terms.

use ccdn::config::RunConfig;
use ccdn::data::synth_generate;
use ccdn::eval;
use ccdn::model::Model;
use ccdn::train::train;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.model.channels = 4;
    cfg.model.excitations = 2;
    cfg.model.input_size = 32;
    cfg.data.train_count = 128;
    cfg.data.eval_count = 48;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.eval_batch = 16;
    cfg.validate().expect("config invalid");

    let train_set = synth_generate(&cfg.train_spec()).expect("train data");
    let eval_set = synth_generate(&cfg.eval_spec()).expect("eval data");
    let mut model = Model::build(cfg.model.clone(), cfg.seed).expect("build");

    let before = eval::model_nmes(&mut model, &eval_set, cfg.eval_batch).expect("eval");
    println!("untrained nme {:.4}", mean(&before));

    train(&mut model, &train_set, &eval_set, &cfg.train_config(), |row| {
        println!(
            "epoch {}  loss {:.4}  nme {:.4}  (qt {:.4}  qt1 {:.4}  qg {:.4})",
            row.epoch, row.train_loss, row.eval_nme, row.loss_qt, row.loss_qt1, row.loss_qg
        );
    })
    .expect("training failed");

    let after = eval::model_nmes(&mut model, &eval_set, cfg.eval_batch).expect("eval");
    println!("trained nme   {:.4}", mean(&after));
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
