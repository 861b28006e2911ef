//! Build each canonical set and report its size and an Ahlfors-regularity estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rectilab::experiments::GeneratorSpec;
use rectilab::pointset::estimate_regularity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let res = 2f64.powi(-8);
    let sets = [
        GeneratorSpec::FourCorners { generation: 4 },
        GeneratorSpec::Hrycak { m: 3 },
        GeneratorSpec::Segment { length: 0.5, resolution: res },
        GeneratorSpec::Circle { radius: 0.3, resolution: res },
        GeneratorSpec::Graph { lipschitz: 1.0, resolution: res },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in &sets {
        let cloud = spec.build()?;
        let report = estimate_regularity(&cloud, 200, &mut rng);
        println!("{:<18} {:>6} points, diameter {:.3}, C0 ≈ {:.3}", spec.label(), cloud.len(), cloud.diameter(), report.c0_estimate);
    }
    Ok(())
}
