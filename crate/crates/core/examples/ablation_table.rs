//! Runs one ablation on a small benchmark and prints the table.
//!
//! ```text
//! cargo run --release --example ablation_table            # variants A-E and the full method
//! cargo run --release --example ablation_table -- k-sweep
//! ```
//!
//! Kinds: `table`, `k-sweep`, `fps-sweep`, `mask-sweep`, or a single variant.

use pointsfda::backbone::BackboneConfig;
use pointsfda::synthetic::{gen_dataset, Dataset, DatasetRequest, Domain, Split, SplitCounts};
use pointsfda::train::{
    format_table, pretrain_source, run_ablation, AblationData, AblationKind, AdaptConfig, PretrainConfig,
};

fn main() -> pointsfda::Result<()> {
    let kind: AblationKind = std::env::args().nth(1).as_deref().unwrap_or("table").parse()?;

    let req = DatasetRequest::benchmark(
        7,
        SplitCounts { train: 60, val: 6, test: 4 },
        SplitCounts { train: 16, val: 4, test: 8 },
    );
    let dir = std::env::temp_dir().join("pointsfda-ablation");
    gen_dataset(&req, &dir)?;
    let ds = Dataset::open(&dir)?;

    let backbone = BackboneConfig {
        encoder_widths: vec![16, 32, 64],
        global_dim: 64,
        coarse_hidden: 64,
        coarse_count: 32,
        expansion: 8,
        refine_hidden: 16,
        input_points: 256,
        ..BackboneConfig::desk()
    };
    let pre = pretrain_source(
        &backbone,
        &ds.labeled(Domain::Source, Split::Train)?,
        &ds.labeled(Domain::Source, Split::Val)?,
        &PretrainConfig { epochs: 20, ..Default::default() },
    )?;

    let test = ds.labeled(Domain::Target, Split::Test)?;
    let train = ds.partials(Domain::Target, Split::Train);
    let val = ds.partials(Domain::Target, Split::Val);
    let data = AblationData {
        source: &pre.params,
        backbone: &backbone,
        train: &train,
        val: Some(&val),
        test: &test,
    };
    let base = AdaptConfig { steps: 300, fps_n: 128, ..AdaptConfig::desk() };
    let report = run_ablation(kind, &base, &data)?;
    println!("{kind} ablation\n{}", format_table(&report.all()));
    Ok(())
}
