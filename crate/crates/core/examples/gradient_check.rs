//! Checks the backbone's analytic gradients against central differences.
//!
//! The loss here is the partial-match term on a toy-sized network; swap in
//! any other graph to check it the same way.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use pointsfda::backbone::{forward_graph, init_params, BackboneConfig};
use pointsfda::gradcheck::{finite_diff_check, CheckConfig, Evaluation};
use pointsfda::graph::Graph;
use pointsfda::losses::l_partial;
use pointsfda::synthetic::{make_complete_shape, Category, ShapeSpec};
use pointsfda::ParameterSet;

fn main() -> pointsfda::Result<()> {
    let config = BackboneConfig::toy();
    let params = init_params(&config)?;
    let input = make_complete_shape(&ShapeSpec::new(Category::TubeLamp).with_points(24), 2)?;

    let loss = |p: &ParameterSet| {
        let mut g = Graph::new();
        let bound = g.bind(p);
        let x = g.cloud(&input);
        let out = forward_graph(&mut g, &bound, &config, x)?;
        let l = l_partial(&mut g, &input, &[out.fine])?;
        Evaluation::from_graph(&g, l, &bound)
    };
    let report = finite_diff_check(loss, &params, CheckConfig::default())?;
    for p in &report.params {
        println!("{:<16} checked {:>4}  excluded {:>3}  max rel err {:.2e}", p.name, p.checked, p.excluded.len(), p.max_rel_error);
    }
    println!(
        "\n{} coordinates checked, {} excluded at kinks; {}",
        report.checked(),
        report.excluded(),
        if report.passed() { "passed" } else { "FAILED" }
    );
    Ok(())
}
