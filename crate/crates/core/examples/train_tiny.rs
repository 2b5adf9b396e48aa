//! Train a tiny model on 16x16 crops for a short time and save the
//! best-validation checkpoint with its CSV log.
//!
//! cargo run --release --example train_tiny -- [image dir] [seconds]

use std::time::Duration;

use mspc::grouping::GroupingMethod;
use mspc::net::{ModelWeights, NetConfig, Profile};
use mspc::train::{self, Dataset, TrainConfig, TrainOutputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).cloned().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/natural").into());
    let seconds: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(30.0);

    let data = Dataset::from_dir(&dir)?;
    let config = NetConfig::new(8, 2, 2, 2, GroupingMethod::FixedA);
    let profile = Profile::custom("tiny", &config, 64)?;
    let mut model = ModelWeights::init(config, 0)?;

    let mut tc = TrainConfig::new(profile);
    tc.lr = 2e-3;
    tc.crop = 16;
    tc.batch = 4;
    tc.patience = 10;
    tc.epochs = 1000;
    tc.time_budget = Some(Duration::from_secs_f64(seconds));

    let out_dir = std::env::temp_dir();
    let outputs = TrainOutputs {
        checkpoint: Some(out_dir.join("mspc_tiny.mspc")),
        log: Some(out_dir.join("mspc_tiny.csv")),
    };
    println!("{} images from {dir}, {seconds} s budget", data.len());
    let report = train::train(&mut model, &tc, &data, &outputs, |e| {
        println!("epoch {:>3}: train {:.3} val {:.3} bpp, lr {:.0e}, {} clipped", e.epoch, e.train_bpp, e.val_bpp, e.lr, e.clipped);
    })?;
    println!(
        "best held-out {:.3} bpp + {:.3} constant after {} steps",
        report.best_val_bpp, report.constant_bpp, report.steps
    );
    println!("checkpoint {}", outputs.checkpoint.unwrap().display());
    println!("log        {}", outputs.log.unwrap().display());
    Ok(())
}
