//! Tabulates focal loss against cross entropy for a range of confidences.

use secaps::model::focal_loss;

fn main() -> secaps::Result<()> {
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "p", "ce", "g=1", "g=2", "g=5");
    for p in [0.05, 0.2, 0.5, 0.8, 0.95, 0.99] {
        let probs = [p, 1.0 - p];
        let ce = focal_loss(&probs, 0, 0.0, 1.0)?;
        let f: Vec<f64> = [1.0, 2.0, 5.0]
            .iter()
            .map(|&g| focal_loss(&probs, 0, g, 1.0))
            .collect::<secaps::Result<_>>()?;
        println!("{p:>6.2} {ce:>10.5} {:>10.5} {:>10.5} {:>10.5}", f[0], f[1], f[2]);
    }
    // easy examples are down-weighted far more than hard ones
    let ratio = |p: f64| focal_loss(&[p, 1.0 - p], 0, 2.0, 0.25).unwrap() / focal_loss(&[p, 1.0 - p], 0, 0.0, 1.0).unwrap();
    println!("FL/CE at p=0.1: {:.4}, at p=0.9: {:.6}", ratio(0.1), ratio(0.9));
    Ok(())
}
