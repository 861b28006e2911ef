//! Width Carleson ratio width(D(Q0))/μ(Q0) across lattice depths.

use rectilab::cubes::build_lattice;
use rectilab::pointset::{circle, four_corners};
use rectilab::width::{width_carleson, WidthParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = [("circle", circle([0.5, 0.5], 0.3, 2f64.powi(-9))?), ("four corners(4)", four_corners(4)?)];
    for (name, cloud) in &sets {
        for depth in 3..=6 {
            let lattice = build_lattice(cloud, 0, depth)?;
            let root = lattice.root().ok_or("empty lattice")?;
            let r = width_carleson(cloud, &lattice, root, &WidthParams::default(), 17)?;
            println!("{name:<16} depth {depth}: {:.3} ± {:.3}", r.ratio, r.std_error);
        }
    }
    Ok(())
}
