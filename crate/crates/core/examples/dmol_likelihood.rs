//! Discretized logistic mixtures: pmfs, code lengths and the entropy bound
//! used for dynamic grouping.

use mspc::dmol::{self, DmolParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = 2;
    // [logits | means r,g,b | log scales r,g,b | coupling], K entries each
    let raw = vec![
        0.5, -0.5, // logits
        -0.2, 0.4, // red means
        0.1, 0.1, // green means
        0.3, -0.6, // blue means
        -3.0, -2.0, // red log scales
        -3.5, -3.0, // green
        -2.5, -4.0, // blue
        0.2, 0.0, 0.1, 0.3, -0.1, 0.0, // coupling
    ];
    assert_eq!(raw.len(), dmol::params_per_pixel(k));
    let params = DmolParams::from_raw(&raw, k)?;
    let pmfs = params.pmfs()?;
    for (c, pmf) in pmfs.iter().enumerate() {
        let mode = (0..256).max_by(|&a, &b| pmf[a].total_cmp(&pmf[b])).unwrap();
        println!("channel {c}: sum {:.12}, mode {mode} (p = {:.4})", pmf.iter().sum::<f64>(), pmf[mode]);
    }
    for rgb in [[102u8, 140, 166], [0, 255, 128]] {
        let nll = params.neg_log_likelihood(rgb);
        println!("{rgb:?}: {:.3} bits ({} floored)", nll.total(), nll.floored);
    }
    println!("entropy bound score {:.4} nats", params.entropy_score());

    let flat = DmolParams::from_raw(&dmol::flat_raw_params(), 256)?;
    println!("flat mixture: {:.6} bits per pixel", flat.neg_log_likelihood([17, 200, 99]).total());
    Ok(())
}
