//! Code-length accounting and published reference figures.

use serde::Serialize;

/// Bits spent on one group step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GroupBits {
    pub step: usize,
    pub pixels: usize,
    /// Σ −log₂ of the quantized table entries.
    pub ideal_bits: f64,
    /// Σ −log₂ of the unquantized model probabilities.
    pub model_bits: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LevelBits {
    /// Level `i` codes scale `i − 1`.
    pub level: usize,
    pub groups: Vec<GroupBits>,
}

impl LevelBits {
    pub fn ideal_bits(&self) -> f64 {
        self.groups.iter().map(|g| g.ideal_bits).sum()
    }

    pub fn model_bits(&self) -> f64 {
        self.groups.iter().map(|g| g.model_bits).sum()
    }
}

/// Accounting for one arithmetic-coded patch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PatchStats {
    pub payload_bytes: usize,
    pub raw_bytes: usize,
    pub symbols: u64,
    pub ideal_bits: f64,
    pub model_bits: f64,
    /// Likelihood evaluations clamped at the probability floor.
    pub floored: u64,
    pub levels: Vec<LevelBits>,
}

impl PatchStats {
    /// Realized payload bits minus the ideal quantized code length.
    pub fn overhead_bits(&self) -> f64 {
        self.payload_bytes as f64 * 8.0 - self.ideal_bits
    }
}

/// Size and model accounting for one encoded image.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CodeReport {
    pub width: usize,
    pub height: usize,
    pub file_bytes: usize,
    pub header_bytes: usize,
    pub patches: Vec<PatchStats>,
}

impl CodeReport {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn bpp(&self) -> f64 {
        8.0 * self.file_bytes as f64 / self.pixels() as f64
    }

    pub fn bits_per_subpixel(&self) -> f64 {
        self.bpp() / 3.0
    }

    pub fn payload_bytes(&self) -> usize {
        self.patches.iter().map(|p| p.payload_bytes).sum()
    }

    pub fn raw_bytes(&self) -> usize {
        self.patches.iter().map(|p| p.raw_bytes).sum()
    }

    pub fn ideal_bits(&self) -> f64 {
        self.patches.iter().map(|p| p.ideal_bits).sum()
    }

    /// Cross-entropy of the model (unquantized) plus the raw coarsest scale,
    /// per original pixel.
    pub fn cross_entropy_bpp(&self) -> f64 {
        let model: f64 = self.patches.iter().map(|p| p.model_bits).sum();
        (model + 8.0 * self.raw_bytes() as f64) / self.pixels() as f64
    }

    /// Per-level bits summed over patches, finest level first.
    pub fn level_bits(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for p in &self.patches {
            for l in &p.levels {
                match out.iter_mut().find(|(lv, _)| *lv == l.level) {
                    Some(e) => e.1 += l.ideal_bits(),
                    None => out.push((l.level, l.ideal_bits())),
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Upper bound on `file bits − ideal bits`: 64 bits per stream plus the
    /// header and the raw coarsest scales.
    pub fn overhead_bound_bits(&self) -> f64 {
        64.0 * self.patches.len() as f64 + 8.0 * (self.header_bytes + self.raw_bytes()) as f64
    }

    /// Upper bound on `file bits − model cross-entropy bits`: 64 bits per
    /// stream, the header, and the worst per-symbol quantization loss.
    pub fn accounting_bound_bits(&self) -> f64 {
        let symbols: u64 = self.patches.iter().map(|p| p.symbols).sum();
        64.0 * self.patches.len() as f64
            + 8.0 * self.header_bytes as f64
            + crate::coder::MAX_QUANTIZATION_LOSS_BITS * symbols as f64
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "width": self.width,
            "height": self.height,
            "file_bytes": self.file_bytes,
            "header_bytes": self.header_bytes,
            "payload_bytes": self.payload_bytes(),
            "raw_bytes": self.raw_bytes(),
            "bpp": self.bpp(),
            "bits_per_subpixel": self.bits_per_subpixel(),
            "cross_entropy_bpp": self.cross_entropy_bpp(),
            "ideal_bits": self.ideal_bits(),
            "patches": self.patches.len(),
            "level_bits": self.level_bits().iter().map(|(l, b)| serde_json::json!({"level": l, "bits": b})).collect::<Vec<_>>(),
        })
    }
}

/// A published figure shown next to measured ones; never compared against.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Citation {
    pub method: &'static str,
    pub dataset: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

const fn cite(method: &'static str, dataset: &'static str, metric: &'static str, value: f64) -> Citation {
    Citation {
        method,
        dataset,
        metric,
        value,
    }
}

/// Grouping comparison on CIFAR-10 (bpp).
pub const GROUPING_REFERENCE: [Citation; 4] = [
    cite("random", "CIFAR-10", "bpp", 10.83),
    cite("fixed_a", "CIFAR-10", "bpp", 10.66),
    cite("fixed_b", "CIFAR-10", "bpp", 10.45),
    cite("dynamic", "CIFAR-10", "bpp", 10.60),
];

/// Compression rates (bpp) of the three profiles and the strongest prior
/// context model.
pub const RATE_REFERENCE: [Citation; 8] = [
    cite("SReC", "ImageNet64", "bpp", 12.90),
    cite("SReC", "OpenImage", "bpp", 8.10),
    cite("normal", "ImageNet64", "bpp", 11.89),
    cite("normal", "OpenImage", "bpp", 8.14),
    cite("big", "ImageNet64", "bpp", 11.78),
    cite("big", "OpenImage", "bpp", 7.88),
    cite("extra", "ImageNet64", "bpp", 11.33),
    cite("extra", "OpenImage", "bpp", 7.48),
];

/// Seconds per 32×32 pixels on a 256×256 image, GPU.
pub const TIMING_REFERENCE: [Citation; 8] = [
    cite("SReC", "256x256", "encode_s_per_32x32", 0.025),
    cite("SReC", "256x256", "decode_s_per_32x32", 0.025),
    cite("normal", "256x256", "encode_s_per_32x32", 0.031),
    cite("normal", "256x256", "decode_s_per_32x32", 0.029),
    cite("big", "256x256", "encode_s_per_32x32", 0.052),
    cite("big", "256x256", "decode_s_per_32x32", 0.049),
    cite("extra", "256x256", "encode_s_per_32x32", 0.074),
    cite("extra", "256x256", "decode_s_per_32x32", 0.070),
];

/// Seconds per 32×32 pixels from a wall time on an `h×w` image.
pub fn per_32x32(seconds: f64, height: usize, width: usize) -> f64 {
    seconds * 1024.0 / (height * width) as f64
}
