//! Writes a matrix in the FMAT format, reads it back and shows the bytes.
//!
//! Run with `cargo run --example fmat_io`.

use taskdistill::{io, Matrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.1])?;
    let bytes = io::encode_fmat(&m)?;
    println!("{} bytes", bytes.len());
    for chunk in bytes.chunks(4) {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        println!("  {}", hex.join(" "));
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("m.fmat");
    io::write_fmat(&path, &m)?;
    let back = io::read_fmat(&path)?;
    // values are stored as f32, so 0.1 comes back rounded
    println!("read back: {:?}", back.as_slice());

    match io::decode_fmat(&bytes[..20], &path) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => unreachable!("truncated payload must be rejected"),
    }
    Ok(())
}
