//! Trains a small model on the synthetic long-tailed corpus and reports
//! test metrics per frequency bucket.
//!
//! Pass an epoch count as the first argument (default 20).

use secaps::data::{gen_synthetic, SyntheticSpec};
use secaps::model::{ModelConfig, SeqCapsConfig};
use secaps::train::{bucketize_charges, evaluate_split, train, EncodedSplit, TrainConfig};

fn main() -> secaps::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let spec = SyntheticSpec::default();
    let data = gen_synthetic(&spec)?;

    let mut model = ModelConfig::new(spec.vocab_size + 2, spec.num_classes);
    model.embed_dim = 16;
    model.max_len = 30;
    model.layers = vec![
        SeqCapsConfig { caps_num: 8, caps_dim: 8, routing_iters: 3, lstm_hidden: 16 },
        SeqCapsConfig { caps_num: 4, caps_dim: 8, routing_iters: 3, lstm_hidden: 16 },
    ];
    model.fc1_dim = 64;
    model.fc2_dim = 32;
    let cfg = TrainConfig { learning_rate: 0.005, epochs, ..TrainConfig::default() };
    println!("{} parameters, {epochs} epochs", model.parameter_count());

    let (outcome, vocab) = train(&data, &model, &cfg)?;
    for e in &outcome.log {
        let mf = e.valid.as_ref().map_or(f64::NAN, |r| r.macro_f1);
        println!("epoch {:>3} loss {:.5} valid mf {mf:.4}", e.epoch, e.mean_loss);
    }

    let test = EncodedSplit::encode(&data.test, &vocab, data.labels(), model.max_len)?;
    let report = evaluate_split(&test, &outcome.params, &model)?;
    let buckets = bucketize_charges(&data.train_frequencies(), &report.class_f1())?;
    println!(
        "best epoch {} test acc {:.4} mp {:.4} mr {:.4} mf {:.4}",
        outcome.best_epoch, report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    );
    for (name, b) in [("low", &buckets.low), ("medium", &buckets.medium), ("high", &buckets.high)] {
        println!("{name:<6} {} classes, mean F1 {:?}", b.classes.len(), b.macro_f1);
    }
    Ok(())
}
