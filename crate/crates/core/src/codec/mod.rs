//! Image encoder and decoder.
//!
//! The image is cut into `patch×patch` tiles, each padded to a multiple of
//! `2^M` by edge replication and coded independently: the coarsest scale as
//! raw bytes, every finer scale with one range-coded stream driven by the
//! progressive loop. Within a group, pixels go in raster order and channels
//! R, G, B.

pub mod container;
pub mod report;

use rayon::prelude::*;

use crate::checkpoint::{self, ModelHash};
use crate::coder::{quantize_pmf, FreqTable, RangeDecoder, RangeEncoder};
use crate::dmol::{DmolParams, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::grouping::{DynamicOrder, GroupSchedule, GroupingMethod, Mask, ScalePlan, SubsetPhase};
use crate::image::{tiles, Image8, Tile};
use crate::net::{ModelWeights, Profile};
use crate::progressive::{self, pixel_params, GroupInfo, GroupSink};
use crate::tensor::{Eval, Ops, Scalar, Tensor};

use container::{Container, Header};
pub use report::{CodeReport, GroupBits, LevelBits, PatchStats};

/// How an image is to be coded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    pub profile: Profile,
    pub grouping: GroupingMethod,
    /// Group count for random and dynamic grouping.
    pub groups: usize,
    pub seed: u64,
    pub patch: usize,
    pub phase: SubsetPhase,
    pub order: DynamicOrder,
    /// Record every coded pixel with its tables.
    pub trace: bool,
}

impl EncodeOptions {
    pub fn new(profile: Profile) -> Self {
        EncodeOptions {
            grouping: profile.grouping,
            groups: 3,
            seed: 0,
            patch: profile.patch,
            phase: SubsetPhase::OddOdd,
            order: DynamicOrder::Descending,
            trace: false,
            profile,
        }
    }

    pub fn with_grouping(mut self, grouping: GroupingMethod) -> Self {
        self.grouping = grouping;
        self
    }

    pub fn schedule(&self) -> GroupSchedule {
        let mut s = GroupSchedule::uniform(self.grouping, self.profile.scales, self.groups, self.seed);
        s.order = self.order;
        s
    }
}

/// One coded pixel as seen by the coder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub level: usize,
    pub step: usize,
    /// Position in the grid of scale `level − 1`.
    pub row: usize,
    pub col: usize,
    pub tables: Box<[FreqTable; 3]>,
}

pub struct Encoded {
    pub bytes: Vec<u8>,
    pub report: CodeReport,
    /// Per patch, when tracing was requested.
    pub traces: Vec<Vec<TraceEntry>>,
}

/// Quantized tables for the three channels of one pixel, plus the pmfs.
fn pixel_tables(raw: &[f64], mixtures: usize) -> Result<([FreqTable; 3], [[f64; 256]; 3])> {
    let pmfs = DmolParams::from_raw(raw, mixtures)?.pmfs()?;
    let tables = [quantize_pmf(&pmfs[0])?, quantize_pmf(&pmfs[1])?, quantize_pmf(&pmfs[2])?];
    Ok((tables, pmfs))
}

/// Shared bookkeeping of the encoder and decoder sinks.
#[derive(Default)]
struct Ledger {
    stats: PatchStats,
    trace: Option<Vec<TraceEntry>>,
}

impl Ledger {
    fn begin_level(&mut self, level: usize) {
        self.stats.levels.push(LevelBits {
            level,
            groups: Vec::new(),
        });
    }

    fn record(&mut self, info: GroupInfo, row: usize, col: usize, tables: &[FreqTable; 3], pmfs: &[[f64; 256]; 3], rgb: [u8; 3]) {
        let level = self.stats.levels.last_mut().expect("level started");
        if level.groups.last().map(|g| g.step) != Some(info.step) {
            level.groups.push(GroupBits {
                step: info.step,
                ..Default::default()
            });
        }
        let g = level.groups.last_mut().expect("group pushed");
        g.pixels += 1;
        for c in 0..3 {
            let ideal = tables[c].bits(rgb[c]);
            let p = pmfs[c][rgb[c] as usize];
            let model = if p < PROB_FLOOR {
                self.stats.floored += 1;
                -PROB_FLOOR.log2()
            } else {
                -p.log2()
            };
            g.ideal_bits += ideal;
            g.model_bits += model;
            self.stats.ideal_bits += ideal;
            self.stats.model_bits += model;
        }
        self.stats.symbols += 3;
        if let Some(t) = &mut self.trace {
            t.push(TraceEntry {
                level: info.level,
                step: info.step,
                row,
                col,
                tables: Box::new(tables.clone()),
            });
        }
    }
}

struct EncodeSink<'s> {
    scales: &'s [Image8],
    mixtures: usize,
    encoder: RangeEncoder,
    ledger: Ledger,
}

impl<'s, T: Scalar, O: Ops<T>> GroupSink<T, O> for EncodeSink<'s> {
    fn begin_level(&mut self, level: usize) -> Result<()> {
        self.ledger.begin_level(level);
        Ok(())
    }

    fn group(&mut self, ops: &mut O, p: &O::V, info: GroupInfo, groups: &[Mask], values: &mut [Image8]) -> Result<()> {
        let p: &Tensor<T> = ops.value(p);
        let truth = &self.scales[info.level - 1];
        let mut raw = vec![0.0; p.shape().c];
        for (r, c) in groups[0].positions() {
            pixel_params(p, 0, r * info.width + c, &mut raw);
            let (tables, pmfs) = pixel_tables(&raw, self.mixtures)?;
            let rgb = truth.get(r, c);
            for ch in 0..3 {
                self.encoder.encode(&tables[ch], rgb[ch])?;
            }
            self.ledger.record(info, r, c, &tables, &pmfs, rgb);
            values[0].set(r, c, rgb);
        }
        Ok(())
    }
}

struct DecodeSink<'d> {
    decoder: RangeDecoder<'d>,
    mixtures: usize,
    ledger: Ledger,
}

impl<'d, T: Scalar, O: Ops<T>> GroupSink<T, O> for DecodeSink<'d> {
    fn begin_level(&mut self, level: usize) -> Result<()> {
        self.ledger.begin_level(level);
        Ok(())
    }

    fn group(&mut self, ops: &mut O, p: &O::V, info: GroupInfo, groups: &[Mask], values: &mut [Image8]) -> Result<()> {
        let p: &Tensor<T> = ops.value(p);
        let mut raw = vec![0.0; p.shape().c];
        for (r, c) in groups[0].positions() {
            pixel_params(p, 0, r * info.width + c, &mut raw);
            let (tables, pmfs) = pixel_tables(&raw, self.mixtures)?;
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                rgb[ch] = self.decoder.decode(&tables[ch])?;
            }
            self.ledger.record(info, r, c, &tables, &pmfs, rgb);
            values[0].set(r, c, rgb);
        }
        Ok(())
    }
}

struct PatchCode {
    payload: Vec<u8>,
    raw: Vec<u8>,
    stats: PatchStats,
    trace: Vec<TraceEntry>,
}

/// A model bound to its checkpoint hash.
pub struct Codec<'m> {
    model: &'m ModelWeights,
    hash: ModelHash,
}

impl<'m> Codec<'m> {
    /// Hashes the serialized model.
    pub fn new(model: &'m ModelWeights) -> Self {
        Codec {
            hash: checkpoint::model_hash(model),
            model,
        }
    }

    /// Uses a hash computed from the checkpoint file.
    pub fn with_hash(model: &'m ModelWeights, hash: ModelHash) -> Self {
        Codec { model, hash }
    }

    pub fn model(&self) -> &ModelWeights {
        self.model
    }

    pub fn hash(&self) -> &ModelHash {
        &self.hash
    }

    fn plan(&self, tile: &Tile, phase: SubsetPhase) -> Result<ScalePlan> {
        let m = 1 << self.model.config.scales;
        ScalePlan::new(tile.height.div_ceil(m) * m, tile.width.div_ceil(m) * m, self.model.config.scales, phase)
    }

    fn encode_patch(&self, patch: &Image8, plan: &ScalePlan, schedule: &GroupSchedule, trace: bool) -> Result<PatchCode> {
        let cfg = &self.model.config;
        let scales = plan.decompose(patch)?;
        let coarsest = scales[plan.scales].clone();
        let mut sink = EncodeSink {
            scales: &scales,
            mixtures: cfg.mixtures,
            encoder: RangeEncoder::new(),
            ledger: Ledger {
                trace: trace.then(Vec::new),
                ..Default::default()
            },
        };
        let mut ops = Eval::new(&self.model.params);
        let out = progressive::run(&mut ops, cfg, plan, schedule, vec![coarsest.clone()], &mut sink)?;
        debug_assert_eq!(&out[0], patch);
        let payload = sink.encoder.finish()?;
        let mut stats = sink.ledger.stats;
        stats.payload_bytes = payload.len();
        stats.raw_bytes = coarsest.data().len();
        Ok(PatchCode {
            payload,
            raw: coarsest.into_raw(),
            stats,
            trace: sink.ledger.trace.unwrap_or_default(),
        })
    }

    pub fn encode(&self, img: &Image8, opts: &EncodeOptions) -> Result<Encoded> {
        let cfg = &self.model.config;
        opts.profile.check(cfg)?;
        if opts.patch == 0 || opts.patch > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("patch size {} outside 1..=65535", opts.patch)));
        }
        if img.width() == 0 || img.height() == 0 || img.width() > u32::MAX as usize || img.height() > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("cannot code a {}x{} image", img.width(), img.height())));
        }
        let schedule = opts.schedule();
        schedule.validate(cfg.scales)?;
        let layout = tiles(img.width(), img.height(), opts.patch);
        let codes: Vec<PatchCode> = layout
            .par_iter()
            .map(|t| {
                let plan = self.plan(t, opts.phase)?;
                let patch = img.crop(t.row, t.col, t.height, t.width)?.pad_to_multiple(1 << cfg.scales);
                self.encode_patch(&patch, &plan, &schedule, opts.trace)
            })
            .collect::<Result<_>>()?;
        let header = Header {
            width: img.width() as u32,
            height: img.height() as u32,
            scales: cfg.scales as u8,
            profile_id: opts.profile.id,
            grouping: opts.grouping,
            phase: opts.phase,
            order: opts.order,
            groups: schedule.groups.iter().map(|&b| b as u8).collect(),
            seed: opts.seed,
            model_hash: self.hash,
            patch: opts.patch as u16,
        };
        let mut payloads = Vec::with_capacity(codes.len());
        let mut raws = Vec::with_capacity(codes.len());
        let mut patches = Vec::with_capacity(codes.len());
        let mut traces = Vec::new();
        for code in codes {
            payloads.push(code.payload);
            raws.push(code.raw);
            patches.push(code.stats);
            if opts.trace {
                traces.push(code.trace);
            }
        }
        let container = Container::new(header, payloads, raws);
        let bytes = container.to_bytes();
        let report = CodeReport {
            width: img.width(),
            height: img.height(),
            file_bytes: bytes.len(),
            header_bytes: container.header_len(),
            patches,
        };
        Ok(Encoded { bytes, report, traces })
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Image8> {
        self.decode_inner(bytes, false).map(|d| d.0)
    }

    /// Decodes and returns the per-patch traces.
    pub fn decode_traced(&self, bytes: &[u8]) -> Result<(Image8, Vec<Vec<TraceEntry>>)> {
        self.decode_inner(bytes, true)
    }

    fn decode_inner(&self, bytes: &[u8], trace: bool) -> Result<(Image8, Vec<Vec<TraceEntry>>)> {
        let cfg = &self.model.config;
        let c = Container::parse(bytes)?;
        let h = &c.header;
        if h.model_hash != self.hash {
            return Err(Error::ModelHash {
                expected: checkpoint::hex(&h.model_hash),
                actual: checkpoint::hex(&self.hash),
            });
        }
        if h.scales as usize != cfg.scales {
            return Err(Error::ProfileMismatch(format!(
                "container has {} scales, checkpoint {}",
                h.scales, cfg.scales
            )));
        }
        let schedule = GroupSchedule {
            method: h.grouping,
            groups: h.groups.iter().map(|&b| b as usize).collect(),
            seed: h.seed,
            order: h.order,
        };
        schedule
            .validate(cfg.scales)
            .map_err(|e| Error::Container(e.to_string()))?;
        let (width, height) = (h.width as usize, h.height as usize);
        let layout = tiles(width, height, h.patch as usize);
        if layout.len() != c.entries.len() {
            return Err(Error::Container(format!(
                "{} patches stored, geometry needs {}",
                c.entries.len(),
                layout.len()
            )));
        }
        if let Some(&i) = c.bad_patches().first() {
            return Err(Error::Checksum(format!("patch {i}")));
        }
        let decoded: Vec<(Image8, Vec<TraceEntry>)> = layout
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let plan = self.plan(t, h.phase)?;
                let (ch, cw) = plan.dims(plan.scales);
                let coarsest = Image8::from_raw(cw, ch, c.raws[i].clone())
                    .map_err(|_| Error::Container(format!("patch {i}: raw scale has wrong length")))?;
                let mut sink = DecodeSink {
                    decoder: RangeDecoder::new(&c.payloads[i])?,
                    mixtures: cfg.mixtures,
                    ledger: Ledger {
                        trace: trace.then(Vec::new),
                        ..Default::default()
                    },
                };
                let mut ops = Eval::new(&self.model.params);
                let mut out = progressive::run(&mut ops, cfg, &plan, &schedule, vec![coarsest], &mut sink)?;
                let full = out.pop().expect("one sample");
                Ok((full.crop(0, 0, t.height, t.width)?, sink.ledger.trace.unwrap_or_default()))
            })
            .collect::<Result<_>>()?;
        let mut img = Image8::new(width, height);
        let mut traces = Vec::new();
        for (t, (patch, tr)) in layout.iter().zip(decoded) {
            img.paste(&patch, t.row, t.col);
            if trace {
                traces.push(tr);
            }
        }
        Ok((img, traces))
    }
}

/// Encodes `img` and reports its code length.
pub fn code_length_report(img: &Image8, codec: &Codec, opts: &EncodeOptions) -> Result<CodeReport> {
    codec.encode(img, opts).map(|e| e.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn tiny_model() -> ModelWeights {
        ModelWeights::init(NetConfig::new(4, 2, 1, 2, GroupingMethod::FixedA), 3).unwrap()
    }

    fn noise(w: usize, h: usize, seed: u64) -> Image8 {
        let mut x = seed;
        let data = (0..w * h * 3)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 56) as u8
            })
            .collect();
        Image8::from_raw(w, h, data).unwrap()
    }

    #[test]
    fn round_trip_all_groupings_with_tiling() {
        let model = tiny_model();
        let codec = Codec::new(&model);
        let profile = Profile::for_config(&model.config, 8);
        let img = noise(13, 10, 1);
        for g in GroupingMethod::ALL {
            let opts = EncodeOptions::new(profile.clone()).with_grouping(g);
            let enc = codec.encode(&img, &opts).unwrap();
            assert_eq!(codec.decode(&enc.bytes).unwrap(), img, "{g}");
            for p in &enc.report.patches {
                assert!(p.overhead_bits() <= 64.0, "{}", p.overhead_bits());
            }
        }
    }

    #[test]
    fn wrong_model_is_rejected_before_decoding() {
        let model = tiny_model();
        let other = ModelWeights::init(model.config.clone(), 4).unwrap();
        let opts = EncodeOptions::new(Profile::for_config(&model.config, 64));
        let bytes = Codec::new(&model).encode(&noise(8, 8, 2), &opts).unwrap().bytes;
        assert!(matches!(Codec::new(&other).decode(&bytes), Err(Error::ModelHash { .. })));
    }

    #[test]
    fn even_subset_round_trips() {
        let model = tiny_model();
        let codec = Codec::new(&model);
        let mut opts = EncodeOptions::new(Profile::for_config(&model.config, 64));
        opts.phase = SubsetPhase::EvenEven;
        let img = noise(9, 7, 5);
        let enc = codec.encode(&img, &opts).unwrap();
        assert_eq!(codec.decode(&enc.bytes).unwrap(), img);
    }
}
