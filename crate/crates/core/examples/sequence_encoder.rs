//! Runs the LSTM over a short capsule sequence and pools it with attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secaps::capsule::CapsuleSet;
use secaps::sequence::{attention_pool, attention_weights, lstm_forward, AttentionParams, LstmParams};

fn main() -> secaps::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = CapsuleSet::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.5, 0.5, 0.0],
    ])?;
    let lstm = LstmParams::init(3, 4, 1.0, &mut rng);
    let h = lstm_forward(&seq, &lstm)?;
    for t in 0..h.count() {
        println!("h[{t}] = {:+.4?}", h.vector(t));
    }

    // reversing the input changes every hidden state: order matters
    let reversed: Vec<Vec<f64>> = (0..seq.count()).rev().map(|t| seq.vector(t).to_vec()).collect();
    let hr = lstm_forward(&CapsuleSet::from_rows(&reversed)?, &lstm)?;
    println!("last state reversed = {:+.4?}", hr.vector(hr.count() - 1));

    let att = AttentionParams::init(3, 1.0, &mut rng);
    let alpha = attention_weights(&seq, &att)?;
    let ctx = attention_pool(&seq, &att)?;
    println!("alpha = {alpha:.4?} (sum {:.6})", alpha.iter().sum::<f64>());
    println!("context = {ctx:.4?}");
    Ok(())
}
