//! Realized file bpp against model cross-entropy on a directory of images,
//! with the published rates shown as citations.
//!
//! cargo run --release --example evaluate -- [image dir] [checkpoint]

use mspc::checkpoint;
use mspc::codec::report::RATE_REFERENCE;
use mspc::codec::{Codec, EncodeOptions};
use mspc::grouping::GroupingMethod;
use mspc::net::{ModelWeights, NetConfig, Profile};
use mspc::train::{evaluate, Dataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).cloned().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/natural").into());
    let (model, hash) = match args.get(2) {
        Some(p) => checkpoint::load(p)?,
        None => {
            let m = ModelWeights::init(NetConfig::new(8, 2, 2, 2, GroupingMethod::FixedA), 0)?;
            let h = checkpoint::model_hash(&m);
            (m, h)
        }
    };
    let profile = Profile::for_config(&model.config, 496);
    let codec = Codec::with_hash(&model, hash);
    let data = Dataset::from_dir(&dir)?;
    let report = evaluate(&data, &codec, &EncodeOptions::new(profile.clone()))?;

    println!("{:<28} {:>8} {:>8} {:>8}", "image", "bpp", "ce", "bound");
    for i in &report.images {
        println!("{:<28} {:>8.3} {:>8.3} {:>8.3}", i.name, i.bpp, i.cross_entropy_bpp, i.overhead_bound_bpp);
    }
    println!("profile {}: {:.3} bpp ({:.3} bits/subpixel), cross-entropy {:.3}", profile.name, report.bpp, report.bits_per_subpixel, report.cross_entropy_bpp);
    for (level, bpp) in &report.level_bpp {
        println!("  scale {}: {:.3} bpp", level - 1, bpp);
    }
    println!("published (citation only):");
    for c in RATE_REFERENCE {
        println!("  {:<8} {:<11} {:.2}", c.method, c.dataset, c.value);
    }
    Ok(())
}
