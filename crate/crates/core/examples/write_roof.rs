//! Writes the default roof to `data/roof.obj` (or the path given as the
//! first argument).

use shellopt::shapes::{roof, RoofShape};

fn main() -> std::io::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/roof.obj".into());
    let mesh = roof(&RoofShape::default());
    if let Some(dir) = std::path::Path::new(&path).parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, mesh.to_obj(&mesh.positions))?;
    println!("wrote {path}: {} vertices, {} faces", mesh.positions.len(), mesh.faces.len());
    Ok(())
}
