//! The whole recipe: generate data, pretrain on the labeled source domain,
//! then adapt to unlabeled target scans without touching the source again.
//!
//! ```text
//! cargo run --release --example source_free_adaptation          # under a minute
//! cargo run --release --example source_free_adaptation -- desk  # the full desk benchmark, ~10 min
//! ```
//!
//! The desk scale is the configuration the acceptance run measures.

use std::time::Instant;

use pointsfda::backbone::BackboneConfig;
use pointsfda::synthetic::{gen_dataset, Dataset, DatasetRequest, Domain, Split, SplitCounts};
use pointsfda::train::{adapt, evaluate, format_table, pretrain_source, AdaptConfig, PretrainConfig};

fn main() -> pointsfda::Result<()> {
    let desk = std::env::args().nth(1).as_deref() == Some("desk");
    let (req, backbone, pretrain, run) = if desk {
        let req = DatasetRequest::benchmark(
            2024,
            SplitCounts { train: 200, val: 20, test: 20 },
            SplitCounts { train: 200, val: 20, test: 50 },
        );
        (req, BackboneConfig::desk(), PretrainConfig::default(), AdaptConfig::desk())
    } else {
        let req = DatasetRequest::benchmark(
            2024,
            SplitCounts { train: 60, val: 6, test: 4 },
            SplitCounts { train: 16, val: 4, test: 8 },
        );
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
        let pretrain = PretrainConfig { epochs: 20, ..Default::default() };
        let run = AdaptConfig { steps: 300, fps_n: 128, ..AdaptConfig::desk() };
        (req, backbone, pretrain, run)
    };

    let dir = std::env::temp_dir().join(if desk { "pointsfda-desk" } else { "pointsfda-quick" });
    let start = Instant::now();
    gen_dataset(&req, &dir)?;
    let ds = Dataset::open(&dir)?;
    println!("data ready in {:.1}s", start.elapsed().as_secs_f64());

    let src_train = ds.labeled(Domain::Source, Split::Train)?;
    let src_val = ds.labeled(Domain::Source, Split::Val)?;
    let pre = pretrain_source(&backbone, &src_train, &src_val, &pretrain)?;
    println!(
        "pretrained in {:.1}s: source val cd x1e4 {:.2} -> {:.2}",
        pre.wall_clock_s,
        pre.initial_val_cd * 1e4,
        pre.epochs[pre.best_epoch].val_cd * 1e4
    );

    // From here on only target partials may be read.
    ds.access_log().clear();
    let train = ds.partials(Domain::Target, Split::Train);
    let val = ds.partials(Domain::Target, Split::Val);
    let out = adapt(&pre.params, &backbone, &train, Some(&val), &run)?;
    println!(
        "adapted for {} steps in {:.1}s (kept step {}); reads: {} target, {} source",
        out.history.len(),
        out.wall_clock_s,
        out.selected_step,
        ds.access_log().count(Domain::Target),
        ds.access_log().count(Domain::Source)
    );

    let test = ds.labeled(Domain::Target, Split::Test)?;
    let before = evaluate(&pre.params, &backbone, &test, "source model", "")?;
    let after = evaluate(&out.selected, &backbone, &test, "adapted", "")?;
    println!("\n{}", format_table(&[before, after]));
    Ok(())
}
