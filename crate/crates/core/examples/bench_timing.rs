//! Encode and decode timing in seconds per 32x32 pixels for each preset on
//! one 64x64 image.

use std::time::Instant;

use mspc::codec::report::{per_32x32, TIMING_REFERENCE};
use mspc::codec::{Codec, EncodeOptions};
use mspc::net::{ModelWeights, Profile};
use mspc::Image8;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut img = Image8::new(64, 64);
    for r in 0..64 {
        for c in 0..64 {
            img.set(r, c, [(r * 4) as u8, (c * 4) as u8, ((r * c) % 256) as u8]);
        }
    }
    let runs = 3;
    for profile in Profile::presets() {
        let model = ModelWeights::init(profile.net_config(), 0)?;
        let codec = Codec::new(&model);
        let opts = EncodeOptions::new(profile.clone());
        let bytes = codec.encode(&img, &opts)?.bytes;
        codec.decode(&bytes)?;

        let t = Instant::now();
        for _ in 0..runs {
            codec.encode(&img, &opts)?;
        }
        let enc = t.elapsed().as_secs_f64() / runs as f64;
        let t = Instant::now();
        for _ in 0..runs {
            codec.decode(&bytes)?;
        }
        let dec = t.elapsed().as_secs_f64() / runs as f64;
        println!(
            "{:<7} encode {:.4} s/32x32, decode {:.4} s/32x32",
            profile.name,
            per_32x32(enc, 64, 64),
            per_32x32(dec, 64, 64)
        );
    }
    println!("published GPU figures (citation only):");
    for c in TIMING_REFERENCE {
        println!("  {:<7} {:<20} {}", c.method, c.metric, c.value);
    }
    Ok(())
}
