//! Checks tape gradients of every classification head against central
//! differences, with gating noise off.
//!
//! ```text
//! cargo run --example gradcheck_heads -- [coords per parameter]
//! ```

use moedep::moe::{HeadConfig, HeadKind};
use moedep::tensor::GradCheckConfig;
use moedep::train::check_head;

fn main() -> moedep::Result<()> {
    let coords = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(50);
    let cfg = GradCheckConfig {
        coords_per_param: coords,
        ..Default::default()
    };
    let mut all = true;
    for kind in HeadKind::ALL {
        let report = check_head(&HeadConfig::new(kind), 4, 0.1, 17, &cfg)?;
        println!("== {kind}");
        println!("{report}");
        all &= report.passed();
    }
    println!(
        "{}",
        if all {
            "all heads PASS"
        } else {
            "some heads FAIL"
        }
    );
    Ok(())
}
