//! Scores a fixed set of predictions and groups per-class F1 by how often
//! each class occurs in training.

use secaps::train::{bucketize_charges, evaluate_metrics, metrics_json};

fn main() -> secaps::Result<()> {
    let gold = [0, 0, 0, 0, 1, 1, 1, 2, 2, 3];
    let pred = [0, 0, 1, 0, 1, 1, 0, 2, 3, 3];
    let report = evaluate_metrics(&pred, &gold, 4)?;
    println!(
        "acc {:.4} mp {:.4} mr {:.4} mf {:.4}",
        report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    );
    for c in &report.per_class {
        println!("class {} p {:.3} r {:.3} f1 {:.3} support {}", c.class, c.precision, c.recall, c.f1, c.support);
    }

    let train_counts = [500, 60, 8, 3];
    let buckets = bucketize_charges(&train_counts, &report.class_f1())?;
    println!("{}", metrics_json(&report, Some(&buckets)));
    Ok(())
}
