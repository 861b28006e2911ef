//! Haar subspaces, the operator-norm metric and the annihilating plane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rectilab::grassmann::{annihilating_plane, metric, sample_haar};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = sample_haar(4, 2, &mut rng)?;
    let b = sample_haar(4, 2, &mut rng)?;
    println!("d(V1, V2) = {:.4}", metric(&a, &b)?);

    let z = a.complement().embed(&[0.6, 0.8]);
    let tilted: Vec<f64> = z.iter().zip(a.embed(&[0.05, 0.0])).map(|(x, y)| x + y).collect();
    let plane = annihilating_plane(&tilted, &a, 0.5)?;
    let residual: f64 = plane.project(&tilted)?.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("π_V'(z) = {residual:.2e}, d(V, V') = {:.4}", metric(&a, &plane)?);
    Ok(())
}
