//! Heavy cubes for a tall ball family, with the per-generation trace.

use rectilab::stopping::{heavy_cubes, unit_ball_volume, BallFamily, StoppingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = 2f64.powi(-6);
    let height = 0.1 / (unit_ball_volume(2) * r * r);
    let family = BallFamily::new(2, vec![vec![0.3, 0.3], vec![0.7, 0.4], vec![0.5, 0.8]], vec![r; 3], vec![height; 3])?;
    let config = StoppingConfig { threshold: 64.0, density: 1.0, gamma: 1.0, mass_constant: 1.0, dimensional_constant: 2.0, guarantee: true };
    let run = heavy_cubes(&family, &config, 8)?;
    println!("outcome {:?}, ‖f‖₁ = {:.3}, reduced threshold {}", run.outcome, run.l1_norm, run.reduced_threshold);
    for g in &run.generations {
        println!("  generation {} N_k = {}: {} heavy, {} light", g.k, g.threshold, g.heavy.len(), g.light.len());
    }
    println!("Σ‖f_R‖₁ = {:.4} (target {:.4}), density check {}", run.heavy_mass(), config.mass_target(), run.density_check);
    Ok(())
}
