//! Encode an image with a seeded (untrained) model, decode it and compare.
//!
//! cargo run --release --example codec_round_trip -- [image.png|image.ppm] [grouping]

use mspc::codec::{Codec, EncodeOptions};
use mspc::grouping::GroupingMethod;
use mspc::net::{ModelWeights, NetConfig, Profile};
use mspc::Image8;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let img = match args.get(1) {
        Some(path) => Image8::load(path)?,
        None => {
            let mut img = Image8::new(48, 40);
            for r in 0..40 {
                for c in 0..48 {
                    img.set(r, c, [(r * 6) as u8, (c * 5) as u8, ((r + c) * 3) as u8]);
                }
            }
            img
        }
    };
    let grouping: GroupingMethod = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(GroupingMethod::FixedB);

    // A small network keeps the example quick; the presets work the same way.
    let config = NetConfig::new(16, 3, 2, 3, grouping);
    let model = ModelWeights::init(config.clone(), 1)?;
    let profile = Profile::custom("demo", &config, 64)?;
    let codec = Codec::new(&model);
    let opts = EncodeOptions::new(profile).with_grouping(grouping);

    let encoded = codec.encode(&img, &opts)?;
    let decoded = codec.decode(&encoded.bytes)?;
    assert_eq!(decoded, img, "round trip must be lossless");

    let r = &encoded.report;
    println!("{}x{} image, grouping {grouping}", img.width(), img.height());
    println!("container: {} bytes ({} header, {} patches)", r.file_bytes, r.header_bytes, r.patches.len());
    println!("bpp {:.3}, bits/subpixel {:.3}, model cross-entropy {:.3} bpp", r.bpp(), r.bits_per_subpixel(), r.cross_entropy_bpp());
    for (level, bits) in r.level_bits() {
        println!("  scale {} coded with {:.0} bits", level - 1, bits);
    }
    println!("decoded image is identical");
    Ok(())
}
