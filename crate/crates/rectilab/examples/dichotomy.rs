//! PBP, WGL and cone statistics by depth for a graph and for four_corners.

use rectilab::experiments::{run_dichotomy, DichotomyConfig, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = [GeneratorSpec::Graph { lipschitz: 1.0, resolution: 2f64.powi(-8) }, GeneratorSpec::FourCorners { generation: 4 }];
    for set in sets {
        let report = run_dichotomy(&DichotomyConfig::new(set, vec![3, 4, 5], 0.05, 11))?;
        for row in &report.rows {
            println!("{:<16} depth {} WGL {:.3} PBP margin {:.4} cone fraction {:.3}", row.set, row.depth, row.wgl_ratio, row.pbp_margin, row.cone_fraction);
        }
        println!("  trend matches expectation: {}", report.trend.matches_expectation);
    }
    Ok(())
}
