//! Masked copies of a partial scan, as used by the consistency term.
//!
//! ```text
//! cargo run --release --example masked_views
//! ```

use pointsfda::masking::{build_masked_set, MaskMeta, MaskStrategy};
use pointsfda::synthetic::{make_complete_shape, virtual_scan, Category, Occlusion, ScanConfig, ShapeSpec};

fn main() -> pointsfda::Result<()> {
    let shape = make_complete_shape(&ShapeSpec::new(Category::BoxTable), 4)?;
    let c = shape.centroid();
    let scan = virtual_scan(&shape, [c[0] + 3.0, c[1] + 1.0, c[2]], Occlusion::Halfspace, &ScanConfig::default(), 4)?;
    let partial = scan.cloud;
    println!("partial scan: {} points", partial.len());

    for strategy in [MaskStrategy::partition(), MaskStrategy::view()] {
        let set = build_masked_set(&partial, 3, strategy, 11)?;
        println!("\n{} masking, k = {}", strategy.name(), set.k());
        for (cloud, meta) in set.clouds.iter().zip(&set.meta) {
            let what = match meta {
                MaskMeta::Original => "original".to_string(),
                MaskMeta::Octant { id, fallback: false } => format!("octant {id} removed"),
                MaskMeta::Octant { fallback: true, .. } => "no admissible octant, unmasked".to_string(),
                MaskMeta::View { anchor, removed } => format!("{removed} points around #{anchor} removed"),
            };
            println!("  {:>5} points  {what}", cloud.len());
        }
    }
    Ok(())
}
