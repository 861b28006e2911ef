//! Mean projection length of four_corners generations.

use rectilab::experiments::{favard_sweep, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = favard_sweep(&GeneratorSpec::FourCorners { generation: 1 }, &[2, 3, 4, 5], 64)?;
    for row in rows {
        println!("generation {}: mean {:.4}, min {:.4}, max {:.4}", row.generation, row.mean_projection, row.min_projection, row.max_projection);
    }
    Ok(())
}
