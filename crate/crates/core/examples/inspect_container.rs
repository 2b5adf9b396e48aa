//! Parse a container's header and patch table, then show how a damaged
//! payload is caught.

use mspc::checkpoint;
use mspc::codec::container::Container;
use mspc::codec::{Codec, EncodeOptions};
use mspc::grouping::GroupingMethod;
use mspc::net::{ModelWeights, NetConfig, Profile};
use mspc::Image8;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = NetConfig::new(8, 2, 1, 2, GroupingMethod::Dynamic);
    let model = ModelWeights::init(config.clone(), 3)?;
    let profile = Profile::custom("demo", &config, 24)?;
    let img = Image8::filled(50, 30, [200, 40, 90]);
    let bytes = Codec::new(&model).encode(&img, &EncodeOptions::new(profile))?.bytes;

    let c = Container::parse(&bytes)?;
    let h = &c.header;
    println!("{}x{}, {} scales, grouping {}, groups {:?}, patch {}", h.width, h.height, h.scales, h.grouping, h.groups, h.patch);
    println!("model {}", checkpoint::hex(&h.model_hash));
    for (i, e) in c.entries.iter().enumerate() {
        println!("  patch {i}: payload {:>4} raw {:>3} crc {:08x}", e.payload_len, e.raw_len, e.crc);
    }

    let mut damaged = bytes.clone();
    let n = damaged.len();
    damaged[n - 1] ^= 1;
    let (c, header_ok) = Container::parse_unverified(&damaged)?;
    println!("after flipping the last byte: header crc ok = {header_ok}, bad patches = {:?}", c.bad_patches());
    match Codec::new(&model).decode(&damaged) {
        Ok(_) => println!("decoded anyway"),
        Err(e) => println!("decode refuses: {e}"),
    }
    Ok(())
}
