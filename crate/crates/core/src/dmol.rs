//! Discretized mixture of logistics over 8-bit subpixels.
//!
//! Per pixel the network emits `10·K` raw values laid out as
//! `[logits K | means 3K | log_scales 3K | coupling 3K]`, channel-major within
//! each block. Mixture weights are shared by the three channels. The mean of
//! G is shifted by a `tanh` multiple of the R mean, the mean of B by multiples
//! of the R and G means, so all three channel distributions are known before
//! any value of the pixel is decoded.

use crate::error::{Error, Result};

/// Lower clamp applied to every log scale.
pub const LOG_SCALE_MIN: f64 = -7.0;

/// Probabilities below this are floored before taking the logarithm.
pub const PROB_FLOOR: f64 = 2.168_404_344_971_009e-19; // 2^-62

const HALF_BIN: f64 = 1.0 / 255.0;

pub const fn params_per_pixel(mixtures: usize) -> usize {
    10 * mixtures
}

/// Maps an 8-bit value onto the normalized grid `2v/255 − 1`.
#[inline]
pub fn normalize(v: u8) -> f64 {
    2.0 * v as f64 / 255.0 - 1.0
}

/// Upper edge of bin `v` (lower edge of bin `v + 1`) in normalized space.
#[inline]
fn edge(v: usize) -> f64 {
    (2 * v + 1) as f64 / 255.0 - 1.0
}

/// `e^x` for `x ≤ 0`, branch-free so loops over it vectorize. Arguments below
/// −708 are clamped; relative error is a few ulp.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding and subtracting 1.5·2^52 rounds to the nearest integer
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-708.0);
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor terms to r^12, grouped (Estrin) to shorten the dependency chain
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let b0 = (1.0 + r) + r2 * (0.5 + r * (1.0 / 6.0));
    let b1 = (1.0 / 24.0 + r * (1.0 / 120.0)) + r2 * (1.0 / 720.0 + r * (1.0 / 5_040.0));
    let b2 = (1.0 / 40_320.0 + r * (1.0 / 362_880.0)) + r2 * (1.0 / 3_628_800.0 + r * (1.0 / 39_916_800.0));
    let b3 = 1.0 / 479_001_600.0;
    let p = (b0 + r4 * b1) + r8 * (b2 + r4 * b3);
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

/// `(σ(t), σ(−t))` without overflow.
#[inline(always)]
fn sigmoid_pair(t: f64) -> (f64, f64) {
    let e = exp_nonpositive(-t.abs());
    let big = 1.0 / (1.0 + e);
    let small = e * big;
    if t >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

/// Mass one logistic component puts into bin `v`; the edge bins take the tails.
#[inline]
fn component_bin(v: usize, mean: f64, scale: f64) -> f64 {
    let inv = 1.0 / scale;
    if v == 0 {
        sigmoid_pair((edge(0) - mean) * inv).0
    } else if v == 255 {
        sigmoid_pair((edge(254) - mean) * inv).1
    } else {
        let (sa, _) = sigmoid_pair((edge(v) - mean) * inv);
        let (_, snb) = sigmoid_pair((edge(v - 1) - mean) * inv);
        // σ(a) − σ(b) = (1 − e^{b−a}) σ(a) σ(−b), free of cancellation.
        -(-2.0 * HALF_BIN / scale).exp_m1() * sa * snb
    }
}

/// Probability of bin `v` under the mixture. Shared by [`discretized_pmf`] and
/// the likelihood so both agree to the last bit.
pub fn bin_probability(v: u8, means: &[f64], scales: &[f64], weights: &[f64]) -> f64 {
    means
        .iter()
        .zip(scales)
        .zip(weights)
        .fold(0.0, |acc, ((&m, &s), &w)| acc + w * component_bin(v as usize, m, s))
}

/// Full 256-bin pmf of one channel.
///
/// Evaluates each edge sigmoid once per component but combines them exactly
/// as [`bin_probability`] does, so `pmf[v]` equals `bin_probability(v, …)`
/// bit for bit.
pub fn discretized_pmf(means: &[f64], scales: &[f64], weights: &[f64]) -> Result<[f64; 256]> {
    if means.len() != weights.len() || scales.len() != weights.len() {
        return Err(Error::shape("discretized_pmf", means.len(), (scales.len(), weights.len())));
    }
    let mut pmf = [0.0; 256];
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { accumulate_pmf_avx512(means, scales, weights, &mut pmf) };
        } else if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            unsafe { accumulate_pmf_avx2(means, scales, weights, &mut pmf) };
        } else {
            accumulate_pmf(means, scales, weights, &mut pmf);
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    accumulate_pmf(means, scales, weights, &mut pmf);
    if pmf.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("discretized_pmf".into()));
    }
    Ok(pmf)
}

// Wider vector units change only the instruction selection: every element is
// computed by the same IEEE operations (no contraction into FMA), so all
// paths produce identical bits.
#[inline(always)]
fn accumulate_pmf(means: &[f64], scales: &[f64], weights: &[f64], pmf: &mut [f64; 256]) {
    let mut below = [0.0; 255];
    let mut above = [0.0; 255];
    for ((&mean, &scale), &w) in means.iter().zip(scales).zip(weights) {
        let inv = 1.0 / scale;
        for e in 0..255 {
            (below[e], above[e]) = sigmoid_pair((edge(e) - mean) * inv);
        }
        let width = -(-2.0 * HALF_BIN / scale).exp_m1();
        pmf[0] += w * below[0];
        for v in 1..255 {
            pmf[v] += w * (width * below[v] * above[v - 1]);
        }
        pmf[255] += w * above[254];
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_pmf_avx2(means: &[f64], scales: &[f64], weights: &[f64], pmf: &mut [f64; 256]) {
    accumulate_pmf(means, scales, weights, pmf)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn accumulate_pmf_avx512(means: &[f64], scales: &[f64], weights: &[f64], pmf: &mut [f64; 256]) {
    accumulate_pmf(means, scales, weights, pmf)
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Couples channel means: G follows R, B follows R and G.
pub fn channel_means(raw_means: &[Vec<f64>; 3], coupling: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
    let k = raw_means[0].len();
    let mut out = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    for i in 0..k {
        let r = raw_means[0][i];
        let g = raw_means[1][i] + coupling[0][i].tanh() * r;
        let b = raw_means[2][i] + coupling[1][i].tanh() * r + coupling[2][i].tanh() * g;
        out[0][i] = r;
        out[1][i] = g;
        out[2][i] = b;
    }
    out
}

/// Upper bound (nats) on the differential entropy of a logistic mixture:
/// weight entropy plus the weighted component entropies `ln s + 2`.
pub fn entropy_upper_bound(weights: &[f64], scales: &[f64]) -> f64 {
    weights
        .iter()
        .zip(scales)
        .map(|(&w, &s)| {
            let h = if w > 0.0 { -w * w.ln() } else { 0.0 };
            h + w * (s.ln() + 2.0)
        })
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NllResult {
    /// Code length per channel in bits.
    pub bits: [f64; 3],
    /// Channels whose probability hit [`PROB_FLOOR`].
    pub floored: u32,
}

impl NllResult {
    pub fn total(&self) -> f64 {
        self.bits.iter().sum()
    }
}

/// Decoded per-pixel parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DmolParams {
    pub logits: Vec<f64>,
    pub means: [Vec<f64>; 3],
    pub log_scales: [Vec<f64>; 3],
    pub coupling: [Vec<f64>; 3],
}

impl DmolParams {
    pub fn from_raw(raw: &[f64], mixtures: usize) -> Result<Self> {
        let k = mixtures;
        if k == 0 || raw.len() != params_per_pixel(k) {
            return Err(Error::shape("DmolParams", raw.len(), params_per_pixel(k)));
        }
        let block = |start: usize| -> [Vec<f64>; 3] {
            [0, 1, 2].map(|c| raw[start + c * k..start + (c + 1) * k].to_vec())
        };
        Ok(DmolParams {
            logits: raw[..k].to_vec(),
            means: block(k),
            log_scales: block(4 * k),
            coupling: block(7 * k),
        })
    }

    pub fn to_raw(&self) -> Vec<f64> {
        let mut raw = self.logits.clone();
        for block in [&self.means, &self.log_scales, &self.coupling] {
            for c in block {
                raw.extend_from_slice(c);
            }
        }
        raw
    }

    pub fn mixtures(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn effective_means(&self) -> [Vec<f64>; 3] {
        channel_means(&self.means, &self.coupling)
    }

    /// Clamped scales of channel `c`.
    pub fn scales(&self, c: usize) -> Vec<f64> {
        self.log_scales[c].iter().map(|&l| l.max(LOG_SCALE_MIN).exp()).collect()
    }

    pub fn pmfs(&self) -> Result<[[f64; 256]; 3]> {
        let w = self.weights();
        let mu = self.effective_means();
        Ok([
            discretized_pmf(&mu[0], &self.scales(0), &w)?,
            discretized_pmf(&mu[1], &self.scales(1), &w)?,
            discretized_pmf(&mu[2], &self.scales(2), &w)?,
        ])
    }

    pub fn neg_log_likelihood(&self, rgb: [u8; 3]) -> NllResult {
        let w = self.weights();
        let mu = self.effective_means();
        let mut res = NllResult::default();
        for c in 0..3 {
            let p = bin_probability(rgb[c], &mu[c], &self.scales(c), &w);
            res.bits[c] = if p < PROB_FLOOR {
                res.floored += 1;
                -PROB_FLOOR.log2()
            } else {
                -p.log2()
            };
        }
        res
    }

    /// Mean over channels of [`entropy_upper_bound`]; the dynamic grouping score.
    pub fn entropy_score(&self) -> f64 {
        let w = self.weights();
        (0..3).map(|c| entropy_upper_bound(&w, &self.scales(c))).sum::<f64>() / 3.0
    }
}

/// Bits of `rgb` under raw parameters, plus the gradient of the summed bits
/// with respect to every raw parameter (written into `grad`).
pub fn nll_with_grad(raw: &[f64], mixtures: usize, rgb: [u8; 3], grad: &mut [f64]) -> NllResult {
    let k = mixtures;
    debug_assert_eq!(raw.len(), params_per_pixel(k));
    grad.iter_mut().for_each(|g| *g = 0.0);
    let params = DmolParams::from_raw(raw, k).expect("raw length checked by caller");
    let w = params.weights();
    let mu = params.effective_means();
    let ln2 = std::f64::consts::LN_2;

    let mut res = NllResult::default();
    // dBits/dμ (effective) per channel and component
    let mut d_mu = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut comp = vec![0.0; k];
    for c in 0..3 {
        let scales = params.scales(c);
        let v = rgb[c] as usize;
        for i in 0..k {
            comp[i] = component_bin(v, mu[c][i], scales[i]);
        }
        let p = bin_probability(rgb[c], &mu[c], &scales, &w);
        if p < PROB_FLOOR {
            res.floored += 1;
            res.bits[c] = -PROB_FLOOR.log2();
            continue;
        }
        res.bits[c] = -p.log2();
        let dbits_dp = -1.0 / (p * ln2);
        for i in 0..k {
            grad[i] += dbits_dp * w[i] * (comp[i] - p);
            let s = scales[i];
            let (d_mean, d_ls) = if v == 0 {
                let a = (edge(0) - mu[c][i]) / s;
                let (sa, sna) = sigmoid_pair(a);
                (-sa * sna / s, -a * sa * sna)
            } else if v == 255 {
                let b = (edge(254) - mu[c][i]) / s;
                let (sb, snb) = sigmoid_pair(b);
                (sb * snb / s, b * sb * snb)
            } else {
                let a = (edge(v) - mu[c][i]) / s;
                let b = (edge(v - 1) - mu[c][i]) / s;
                let (sa, sna) = sigmoid_pair(a);
                let (sb, snb) = sigmoid_pair(b);
                let (da, db) = (sa * sna, sb * snb);
                ((db - da) / s, -a * da + b * db)
            };
            d_mu[c][i] = dbits_dp * w[i] * d_mean;
            if params.log_scales[c][i] >= LOG_SCALE_MIN {
                grad[4 * k + c * k + i] = dbits_dp * w[i] * d_ls;
            }
        }
    }
    for i in 0..k {
        let (t0, t1, t2) = (
            params.coupling[0][i].tanh(),
            params.coupling[1][i].tanh(),
            params.coupling[2][i].tanh(),
        );
        let g_b = d_mu[2][i];
        let g_g = d_mu[1][i] + g_b * t2;
        let g_r = d_mu[0][i] + g_g * t0 + g_b * t1;
        grad[k + i] = g_r;
        grad[2 * k + i] = g_g;
        grad[3 * k + i] = g_b;
        grad[7 * k + i] = g_g * mu[0][i] * (1.0 - t0 * t0);
        grad[8 * k + i] = g_b * mu[0][i] * (1.0 - t1 * t1);
        grad[9 * k + i] = g_b * mu[1][i] * (1.0 - t2 * t2);
    }
    res
}

/// Raw parameters of a 256-component mixture with one minimum-scale component
/// centred on every bin and equal weights: a numerically flat pmf.
pub fn flat_raw_params() -> Vec<f64> {
    let k = 256;
    let mut raw = vec![0.0; params_per_pixel(k)];
    for c in 0..3 {
        for v in 0..k {
            raw[k + c * k + v] = normalize(v as u8);
            raw[4 * k + c * k + v] = LOG_SCALE_MIN;
        }
    }
    raw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: f64, log_scale: f64) -> DmolParams {
        DmolParams {
            logits: vec![0.0],
            means: [vec![mean], vec![mean], vec![mean]],
            log_scales: [vec![log_scale], vec![log_scale], vec![log_scale]],
            coupling: [vec![0.0], vec![0.0], vec![0.0]],
        }
    }

    #[test]
    fn zero_coupling_keeps_raw_means() {
        let means = [vec![0.1, -0.3], vec![0.5, 0.2], vec![-0.7, 0.9]];
        let coupling = [vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]];
        assert_eq!(channel_means(&means, &coupling), means);
    }

    #[test]
    fn saturated_coupling_copies_red_mean() {
        let means = [vec![0.5], vec![0.0], vec![0.0]];
        let coupling = [vec![20.0], vec![0.0], vec![0.0]];
        let mu = channel_means(&means, &coupling);
        assert!((mu[1][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn collapsed_logistic_hits_its_bin() {
        let pmf = discretized_pmf(&[normalize(128)], &[1e-6], &[1.0]).unwrap();
        assert!(pmf[128] >= 1.0 - 1e-9);
    }

    #[test]
    fn wide_logistic_is_flat_inside() {
        let pmf = discretized_pmf(&[0.0], &[1e6], &[1.0]).unwrap();
        let inner = &pmf[1..255];
        let max = inner.iter().copied().fold(f64::MIN, f64::max);
        let min = inner.iter().copied().fold(f64::MAX, f64::min);
        assert!(max / min <= 1.0 + 1e-3);
    }

    #[test]
    fn collapsed_nll_is_near_zero() {
        let p = single(normalize(77), -30.0);
        // the clamp at −7 keeps ~2.7% of the mass outside the bin
        let bits = p.neg_log_likelihood([77, 77, 77]);
        assert!(bits.total() < 3.0 * 0.04, "{bits:?}");
        assert_eq!(bits.floored, 0);
    }

    #[test]
    fn flat_mixture_costs_eight_bits() {
        let p = DmolParams::from_raw(&flat_raw_params(), 256).unwrap();
        for v in [0u8, 1, 100, 254, 255] {
            let r = p.neg_log_likelihood([v, v, v]);
            for b in r.bits {
                assert!((b - 8.0).abs() < 1e-4, "{v}: {b}");
            }
        }
    }

    #[test]
    fn nll_matches_pmf() {
        let raw: Vec<f64> = (0..30).map(|i| ((i * 37 % 17) as f64 - 8.0) / 9.0).collect();
        let p = DmolParams::from_raw(&raw, 3).unwrap();
        let pmfs = p.pmfs().unwrap();
        let rgb = [3, 200, 128];
        let r = p.neg_log_likelihood(rgb);
        for c in 0..3 {
            assert_eq!(r.bits[c], -pmfs[c][rgb[c] as usize].log2());
        }
    }

    #[test]
    fn far_tail_is_floored_and_counted() {
        let p = single(-1.0, -7.0);
        let r = p.neg_log_likelihood([255, 255, 255]);
        assert_eq!(r.floored, 3);
        assert_eq!(r.bits, [62.0; 3]);
    }

    #[test]
    fn single_unit_logistic_bound_is_two_nats() {
        assert!((entropy_upper_bound(&[1.0], &[1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn raw_layout_round_trips() {
        let raw: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(DmolParams::from_raw(&raw, 5).unwrap().to_raw(), raw);
        assert!(DmolParams::from_raw(&raw, 4).is_err());
    }
}
