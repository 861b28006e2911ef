//! Shadow lengths and the big-projections margin for a few planar sets.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rectilab::grassmann::Subspace;
use rectilab::pointset::{four_corners, pbp_margin, projection_measure, segment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let res = 2f64.powi(-9);
    let sets = [("segment", segment(&[0.25, 0.5], &[0.75, 0.5], res)?), ("four corners(4)", four_corners(4)?)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, cloud) in &sets {
        let ball = cloud.enclosing_ball();
        let shadows: Vec<String> = (0..4)
            .map(|k| projection_measure(cloud, &Subspace::planar_line(k as f64 * PI / 4.0), &ball, cloud.resolution()).map(|m| format!("{m:.3}")))
            .collect::<Result<_, _>>()?;
        let witness = pbp_margin(cloud, &ball, 0.1, 16, &mut rng)?;
        println!("{name:<16} shadows at 0, π/4, π/2, 3π/4: {shadows:?}; PBP margin {:.4}", witness.margin);
    }
    Ok(())
}
