//! Saving and reloading weights and training checkpoints.
//!
//! cargo run --release --example weights_io

use softseg::io::{
    decode_weights, encode_weights, load_checkpoint, load_weights_for, save_checkpoint, save_weights, weights_hash,
    Checkpoint,
};
use softseg::models::ModelWeights;
use softseg::tensor::OptimizerState;

fn main() -> softseg::Result<()> {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();

    let weights = ModelWeights::new(5, 42)?;
    println!("K={} with {} parameters, hash {}", weights.k(), weights.num_parameters(), weights_hash(&weights));

    let bytes = encode_weights(&weights);
    assert_eq!(encode_weights(&decode_weights(&bytes)?), bytes);
    let path = dir.join("weights.sseg");
    save_weights(&weights, &path)?;
    println!("{} bytes at {}", bytes.len(), path.display());
    match load_weights_for(&path, 7) {
        Ok(_) => println!("unexpected: K=7 accepted"),
        Err(e) => println!("loading for K=7 fails: {e}"),
    }

    let shapes: Vec<Vec<usize>> = weights.parameters().iter().map(|t| t.shape().to_vec()).collect();
    let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let ck = Checkpoint {
        weights: weights.clone(),
        optimizer: OptimizerState::new(&refs, 2e-4, 0.0, 0.99, 1e-8),
        step: 0,
        extra: serde_json::json!({"note": "example"}),
    };
    let ck_path = dir.join("checkpoint.sseg");
    save_checkpoint(&ck, &ck_path)?;
    let back = load_checkpoint(&ck_path)?;
    println!("checkpoint step {}, weights hash {}", back.step, weights_hash(&back.weights));
    Ok(())
}
