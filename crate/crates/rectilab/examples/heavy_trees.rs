//! Heavy-tree decomposition of four_corners with its property report.

use rectilab::beta::{beta_lattice, BetaKind, BetaMethod};
use rectilab::cubes::build_lattice;
use rectilab::heavytrees::{build_heavy_trees, verify_properties, HeavyParams};
use rectilab::pointset::four_corners;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cloud = four_corners(5)?;
    let lattice = build_lattice(&cloud, 0, 8)?;
    let betas = beta_lattice(&cloud, &lattice, BetaKind::Beta1, BetaMethod::Pca)?;
    let params = HeavyParams { epsilon: 0.05, per_tree: 1, tops: 2 };
    let root = lattice.root().ok_or("empty lattice")?;
    let forest = build_heavy_trees(&lattice, &betas, params, root, cloud.weights())?;
    println!(
        "hypothesis {:?}: μ(E_Q0) = {:.3} of μ(Q0) = {:.3}; {} trees, {} retained, {} heavy",
        forest.status,
        forest.high_set_mass,
        forest.q0_mass,
        forest.all_trees.len(),
        forest.retained.len(),
        forest.heavy.len()
    );
    let flags: Vec<bool> = (0..lattice.len()).map(|q| betas.value(q) >= params.epsilon).collect();
    let report = verify_properties(&forest, &lattice, &flags, cloud.weights());
    println!("properties: mass {} coverage {} count {} top mass {} multiplicity {}", report.mass, report.coverage, report.count, report.top_mass, report.multiplicity);
    Ok(())
}
