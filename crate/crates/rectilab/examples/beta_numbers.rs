//! β₁ and β∞ on single balls, then the weak-geometric-lemma sum on a lattice.

use rectilab::beta::{beta1, beta_inf, beta_lattice, wgl_sum, BetaKind, BetaMethod};
use rectilab::cubes::build_lattice;
use rectilab::pointset::{four_corners, tent_graph, Ball};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = tent_graph(1.0, 2f64.powi(-9))?;
    for i in [graph.len() / 4, graph.len() / 2] {
        let center = graph.point(i).to_vec();
        let ball = Ball::new(center.clone(), 0.1);
        let b1 = beta1(&graph, &ball, BetaMethod::PcaRefined)?;
        let binf = beta_inf(&graph, &ball, BetaMethod::PcaRefined)?;
        println!("tent graph at {center:.3?}: β₁ = {:.4}, β∞ = {:.4}", b1.value, binf.value);
    }

    let cloud = four_corners(4)?;
    let lattice = build_lattice(&cloud, 0, 6)?;
    let betas = beta_lattice(&cloud, &lattice, BetaKind::Beta1, BetaMethod::Pca)?;
    let root = lattice.root().ok_or("empty lattice")?;
    let ratio = wgl_sum(&lattice, &betas, 0.05, root);
    println!("four corners: WGL sum / μ(Q0) at ε = 0.05 is {ratio:.3}");
    Ok(())
}
