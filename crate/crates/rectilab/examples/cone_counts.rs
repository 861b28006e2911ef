//! Mass fraction of a set seen by many cone scales in every tested direction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rectilab::cones::cone_count_profile;
use rectilab::pointset::{four_corners, tent_graph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sets = [("tent graph", tent_graph(1.0, 2f64.powi(-8))?), ("four corners(4)", four_corners(4)?)];
    for (name, cloud) in &sets {
        let profile = cone_count_profile(cloud, cloud.weights(), 0.5, 3, 8, 36, 8, &mut rng)?;
        println!("{name:<16} fraction with ≥ {} cone scales: {:.3} over {} planes (mesh {:.3})", profile.threshold, profile.fraction, profile.planes, profile.mesh);
    }
    Ok(())
}
