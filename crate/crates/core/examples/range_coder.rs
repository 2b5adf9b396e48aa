//! Quantize pmfs to 16-bit frequency tables, range-code a sequence and
//! compare the stream length with the ideal code length.

use mspc::coder::{quantize_pmf, RangeDecoder, RangeEncoder, MAX_QUANTIZATION_LOSS_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tables = Vec::new();
    let mut symbols = Vec::new();
    for _ in 0..5000 {
        let centre = rng.gen_range(0.0..256.0f64);
        let width = rng.gen_range(0.5..20.0f64);
        let mut pmf = [0.0; 256];
        for (v, p) in pmf.iter_mut().enumerate() {
            *p = (-((v as f64 - centre) / width).powi(2)).exp() + 1e-9;
        }
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= s);
        let table = quantize_pmf(&pmf)?;
        let sym = (centre + rng.gen_range(-width..width)).clamp(0.0, 255.0) as u8;
        tables.push(table);
        symbols.push(sym);
    }

    let mut enc = RangeEncoder::new();
    for (t, &s) in tables.iter().zip(&symbols) {
        enc.encode(t, s)?;
    }
    let bytes = enc.finish()?;
    let ideal: f64 = tables.iter().zip(&symbols).map(|(t, &s)| t.bits(s)).sum();

    let mut dec = RangeDecoder::new(&bytes)?;
    for (t, &s) in tables.iter().zip(&symbols) {
        assert_eq!(dec.decode(t)?, s);
    }
    println!("{} symbols: {} bytes = {} bits, ideal {:.1} bits, overhead {:.1} bits", symbols.len(), bytes.len(), 8 * bytes.len(), ideal, 8.0 * bytes.len() as f64 - ideal);
    println!("worst-case quantization loss per symbol: {MAX_QUANTIZATION_LOSS_BITS:.5} bits");
    Ok(())
}
