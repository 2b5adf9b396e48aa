//! The scale/group loop shared by the encoder, the decoder and training.
//!
//! For level `i = M..1` the driver upsamples `x⁽ⁱ⁾`, builds the initial
//! context, then for each group runs one network step, hands the parameter map
//! to a [`GroupSink`] and lets the mixer insert the values the sink reports.
//! The encoder's sink codes the truth, the decoder's sink decodes it and the
//! training sink adds likelihood terms to the tape; the loop itself is the
//! same code in all three cases.

use crate::dmol::DmolParams;
use crate::error::Result;
use crate::grouping::{
    dynamic_next_group, static_group_masks, subset_mask, GroupSchedule, GroupingMethod, Mask, ProgressState,
    ScalePlan, SubsetPhase,
};
use crate::image::Image8;
use crate::net::{forward_step, init_scale_context, NetConfig};
use crate::tensor::{Ops, Scalar, Shape, Tensor};

/// Where in the loop a group step happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupInfo {
    /// Level `i`: scale `i − 1` is being coded.
    pub level: usize,
    /// 1-based index of the group within the level.
    pub step: usize,
    /// Height and width of scale `i − 1`.
    pub height: usize,
    pub width: usize,
}

pub trait GroupSink<T: Scalar, O: Ops<T>> {
    /// Consumes the parameter map `p` (`N×Q×H×W`) of one group step.
    ///
    /// `groups[n]` is the group of sample `n`; the sink writes that sample's
    /// values for those positions into `values[n]`.
    fn group(
        &mut self,
        ops: &mut O,
        p: &O::V,
        info: GroupInfo,
        groups: &[Mask],
        values: &mut [Image8],
    ) -> Result<()>;

    /// Called before the first group of each level.
    fn begin_level(&mut self, _level: usize) -> Result<()> {
        Ok(())
    }
}

/// Nearest-neighbour 2× upsampling of `x⁽ⁱ⁾` with the subset positions marked.
pub fn upsample_values(coarse: &Image8, phase: SubsetPhase) -> ProgressState {
    let (h, w) = (coarse.height() * 2, coarse.width() * 2);
    let mut values = Image8::new(w, h);
    for r in 0..h {
        for c in 0..w {
            values.set(r, c, coarse.get(r / 2, c / 2));
        }
    }
    ProgressState::new(values, subset_mask(phase, h, w))
}

/// Normalized `x̂` and the mask channel for a batch of states.
pub fn state_tensors<T: Scalar>(states: &[ProgressState]) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = (states[0].mask.height(), states[0].mask.width());
    let hw = h * w;
    let mut x = Tensor::zeros(Shape::new(states.len(), 3, h, w));
    let mut m = Tensor::zeros(Shape::new(states.len(), 1, h, w));
    // normalized value of every 8-bit level
    let lut: Vec<T> = (0..=255u8).map(|v| T::from_f64(crate::dmol::normalize(v))).collect();
    for (n, st) in states.iter().enumerate() {
        let xd = &mut x.data_mut()[n * 3 * hw..(n + 1) * 3 * hw];
        for (i, px) in st.values.data().chunks_exact(3).enumerate() {
            xd[i] = lut[px[0] as usize];
            xd[hw + i] = lut[px[1] as usize];
            xd[2 * hw + i] = lut[px[2] as usize];
        }
        let md = &mut m.data_mut()[n * hw..(n + 1) * hw];
        for (o, &b) in md.iter_mut().zip(st.mask.bits()) {
            *o = if b { T::one() } else { T::zero() };
        }
    }
    Ok((x, m))
}

/// Raw DMOL parameters of pixel `index` (row-major) of sample `n`.
pub fn pixel_params<T: Scalar>(p: &Tensor<T>, n: usize, index: usize, out: &mut [f64]) {
    let s = p.shape();
    let hw = s.plane();
    let base = n * s.c * hw + index;
    for (ch, o) in out.iter_mut().enumerate() {
        *o = p.data()[base + ch * hw].to_f64();
    }
}

/// Dynamic-grouping scores for every pixel of sample `n`; processed pixels
/// score zero.
pub fn entropy_scores<T: Scalar>(p: &Tensor<T>, n: usize, mixtures: usize, processed: &Mask) -> Result<Vec<f64>> {
    let mut raw = vec![0.0; p.shape().c];
    let mut scores = vec![0.0; processed.bits().len()];
    for (i, (score, &done)) in scores.iter_mut().zip(processed.bits()).enumerate() {
        if !done {
            pixel_params(p, n, i, &mut raw);
            *score = DmolParams::from_raw(&raw, mixtures)?.entropy_score();
        }
    }
    Ok(scores)
}

/// Runs levels `M..1` starting from the coarsest scale of every sample and
/// returns the reconstructed full-resolution images.
pub fn run<T: Scalar, O: Ops<T>, S: GroupSink<T, O>>(
    ops: &mut O,
    config: &NetConfig,
    plan: &ScalePlan,
    schedule: &GroupSchedule,
    coarsest: Vec<Image8>,
    sink: &mut S,
) -> Result<Vec<Image8>> {
    schedule.validate(plan.scales)?;
    let batch = coarsest.len();
    let mut current = coarsest;
    let mut context: Option<O::V> = None;
    for level in (1..=plan.scales).rev() {
        sink.begin_level(level)?;
        let (h, w) = plan.dims(level - 1);
        let mut states: Vec<ProgressState> = current.iter().map(|x| upsample_values(x, plan.phase)).collect();
        let mut z = init_scale_context(ops, config, level, context.as_ref(), batch, h, w)?;
        let total = schedule.groups_at(level);
        let static_masks = match schedule.method {
            GroupingMethod::Dynamic => None,
            method => {
                let masks = static_group_masks(method, plan.phase, h, w, level, schedule.seed, total)?;
                Some(masks.into_iter().filter(|m| !m.is_empty()).collect::<Vec<_>>())
            }
        };
        let mut buffers: Vec<Image8> = states.iter().map(|s| s.values.clone()).collect();
        let mut step = 0;
        while states.iter().any(|s| s.mask.count() < h * w) {
            step += 1;
            let (x, m) = state_tensors::<T>(&states)?;
            let x = ops.constant(x);
            let m = ops.constant(m);
            let out = forward_step(ops, config, level, &x, &m, &z)?;
            let groups: Vec<Mask> = match &static_masks {
                Some(masks) => vec![masks[step - 1].clone(); batch],
                None => {
                    let p = ops.value(&out.p);
                    let mut groups = Vec::with_capacity(batch);
                    for (n, st) in states.iter().enumerate() {
                        let scores = entropy_scores(p, n, config.mixtures, &st.mask)?;
                        groups.push(dynamic_next_group(&scores, &st.mask, total, step, schedule.order)?);
                    }
                    groups
                }
            };
            let info = GroupInfo {
                level,
                step,
                height: h,
                width: w,
            };
            sink.group(ops, &out.p, info, &groups, &mut buffers)?;
            for ((st, g), buf) in states.iter_mut().zip(&groups).zip(&buffers) {
                st.mixer_update(g, buf)?;
            }
            z = out.z;
        }
        current = states.into_iter().map(|s| s.values).collect();
        context = Some(z);
    }
    Ok(current)
}
