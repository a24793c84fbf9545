//! Writes the bundled intensity model to `<dir>/intensity.{json,bin}`.
//!
//!     cargo run -p sentinel-core --example write_reference_model -- models

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    std::fs::create_dir_all(&dir)?;
    let (manifest, blob) = sentinel_core::reference::intensity_model().to_bytes();
    std::fs::write(dir.join("intensity.json"), manifest)?;
    std::fs::write(dir.join("intensity.bin"), blob)?;
    println!("wrote {}", dir.join("intensity.json").display());
    Ok(())
}
