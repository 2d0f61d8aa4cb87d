//! Saves a freshly initialized model, reloads it and checks that the
//! predictions agree, then shows what a damaged file reports.

use secaps::model::{predict, ModelConfig, ModelParams};
use secaps::train::Checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ModelConfig::new(50, 4);
    config.embed_dim = 8;
    config.max_len = 6;
    let mut params = ModelParams::init(&config)?;
    // the file stores f32, so round first to make the trip exact
    params.round_to_f32();

    let ck = Checkpoint {
        params,
        config,
        labels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        vocabulary: vec![],
    };
    let dir = std::env::temp_dir().join("secaps-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    ck.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!("{} parameters, identical after reload: {}", back.params.parameter_count(), back == ck);

    let tokens = [3, 7, 11, 2];
    println!(
        "prediction before {} after {}",
        predict(&tokens, &ck.params, &ck.config)?,
        predict(&tokens, &back.params, &back.config)?
    );

    let bytes = std::fs::read(&path)?;
    println!("truncated: {}", Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).unwrap_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    println!("bad magic: {}", Checkpoint::from_bytes(&bad).unwrap_err());
    Ok(())
}
