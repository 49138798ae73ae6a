//! Chamfer distances and farthest point sampling on a procedural shape.
//!
//! ```text
//! cargo run --release --example chamfer_and_fps
//! ```

use pointsfda::geometry::{cd, downsample_random, fps_cloud, normalize_to_unit_cube, ucd};
use pointsfda::synthetic::{make_complete_shape, Category, ShapeSpec};

fn main() -> pointsfda::Result<()> {
    let chair = make_complete_shape(&ShapeSpec::new(Category::PanelChair).with_points(4096), 1)?;
    let lamp = make_complete_shape(&ShapeSpec::new(Category::TubeLamp).with_points(4096), 1)?;
    let (chair, _) = normalize_to_unit_cube(&chair)?;
    let (lamp, _) = normalize_to_unit_cube(&lamp)?;

    // A random half of the chair is still close to the chair; the lamp is not.
    let half = downsample_random(&chair, 2048, 9)?;
    println!("cd(chair, half chair) = {:.6}", cd(&chair, &half)?);
    println!("cd(chair, lamp)       = {:.6}", cd(&chair, &lamp)?);

    // The one-sided distance only asks whether the first cloud is covered.
    println!(
        "ucd(half -> chair) = {:.2e}, ucd(chair -> half) = {:.2e}",
        ucd(&half, &chair)?,
        ucd(&chair, &half)?
    );

    println!("\nsamples   fps cd     random cd");
    for k in [32, 128, 512] {
        let f = fps_cloud(&chair, k, 0)?;
        let r = downsample_random(&chair, k, 3)?;
        println!("{k:>7}   {:.6}   {:.6}", cd(&chair, &f)?, cd(&chair, &r)?);
    }
    Ok(())
}
