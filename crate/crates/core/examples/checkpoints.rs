//! Saving and loading a model, and what a damaged file looks like.
//!
//! ```text
//! cargo run --release --example checkpoints
//! ```

use pointsfda::backbone::{init_params, BackboneConfig};
use pointsfda::checkpoint::{config_path, load_model, save_model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pointsfda-checkpoints");
    let path = dir.join("model.ckpt");
    let config = BackboneConfig::desk();
    let params = init_params(&config)?;
    save_model(&params, &config, &path)?;
    let bytes = std::fs::read(&path)?;
    println!(
        "{} tensors, {} scalars, {} bytes; config beside it in {}",
        params.len(),
        params.num_scalars(),
        bytes.len(),
        config_path(&path).display()
    );

    let (back, back_config) = load_model(&path)?;
    println!("reloaded identically: {}", back == params && back_config == config);

    let mut broken = bytes;
    broken[9] ^= 0xff;
    let bad = dir.join("broken.ckpt");
    std::fs::write(&bad, broken)?;
    std::fs::copy(config_path(&path), config_path(&bad))?;
    match load_model(&bad) {
        Ok(_) => println!("damaged file loaded?!"),
        Err(e) => println!("damaged file rejected: {e}"),
    }
    Ok(())
}
