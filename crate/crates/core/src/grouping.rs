//! Scale decomposition, pixel grouping and the progressive mixer state.
//!
//! Scale `i` keeps every second row and column of scale `i − 1` (odd/odd
//! positions by default), so decomposition is pure coordinate selection.
//! Coding scale `i − 1` given scale `i` visits its remaining three quarters in
//! `B_i` ordered groups.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image8;

/// Which cell of every 2×2 block is carried to the next coarser scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SubsetPhase {
    /// Odd row, odd column.
    #[default]
    OddOdd,
    /// Even row, even column: plain nearest-neighbour downsampling.
    EvenEven,
}

impl SubsetPhase {
    fn offset(self) -> usize {
        match self {
            SubsetPhase::OddOdd => 1,
            SubsetPhase::EvenEven => 0,
        }
    }

    /// Pattern coordinates: shifts the grid so the subset always sits at odd/odd.
    #[inline]
    fn local(self, row: usize, col: usize) -> (usize, usize) {
        match self {
            SubsetPhase::OddOdd => (row, col),
            SubsetPhase::EvenEven => (row + 1, col + 1),
        }
    }

    #[inline]
    pub fn is_subset(self, row: usize, col: usize) -> bool {
        let (r, c) = self.local(row, col);
        r % 2 == 1 && c % 2 == 1
    }
}

/// Dimensions of every scale of one (padded) patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePlan {
    pub height: usize,
    pub width: usize,
    pub scales: usize,
    pub phase: SubsetPhase,
}

impl ScalePlan {
    pub fn new(height: usize, width: usize, scales: usize, phase: SubsetPhase) -> Result<Self> {
        let m = 1usize << scales;
        if scales == 0 || height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} is not divisible by 2^{scales}"
            )));
        }
        Ok(ScalePlan {
            height,
            width,
            scales,
            phase,
        })
    }

    /// `(height, width)` of scale `i` (0 is the full image).
    pub fn dims(&self, scale: usize) -> (usize, usize) {
        (self.height >> scale, self.width >> scale)
    }

    /// Values of the next coarser scale.
    pub fn subset(&self, img: &Image8) -> Image8 {
        let o = self.phase.offset();
        let (h, w) = (img.height() / 2, img.width() / 2);
        let mut out = Image8::new(w, h);
        for r in 0..h {
            for c in 0..w {
                out.set(r, c, img.get(2 * r + o, 2 * c + o));
            }
        }
        out
    }

    /// `[x⁽⁰⁾, x⁽¹⁾, …, x⁽ᴹ⁾]`.
    pub fn decompose(&self, img: &Image8) -> Result<Vec<Image8>> {
        if (img.height(), img.width()) != (self.height, self.width) {
            return Err(Error::shape(
                "decompose",
                (img.height(), img.width()),
                (self.height, self.width),
            ));
        }
        let mut out = vec![img.clone()];
        for _ in 0..self.scales {
            let next = self.subset(out.last().expect("non-empty"));
            out.push(next);
        }
        Ok(out)
    }

    /// Full-resolution coordinate of pixel (`row`, `col`) of scale `scale`.
    pub fn to_full(&self, scale: usize, row: usize, col: usize) -> (usize, usize) {
        let o = self.phase.offset();
        let (mut r, mut c) = (row, col);
        for _ in 0..scale {
            r = 2 * r + o;
            c = 2 * c + o;
        }
        (r, c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupingMethod {
    Random,
    FixedA,
    FixedB,
    Dynamic,
}

impl GroupingMethod {
    pub const ALL: [GroupingMethod; 4] = [
        GroupingMethod::Random,
        GroupingMethod::FixedA,
        GroupingMethod::FixedB,
        GroupingMethod::Dynamic,
    ];

    pub fn id(self) -> u8 {
        match self {
            GroupingMethod::Random => 0,
            GroupingMethod::FixedA => 1,
            GroupingMethod::FixedB => 2,
            GroupingMethod::Dynamic => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id() == id)
            .ok_or(Error::UnknownGrouping(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupingMethod::Random => "random",
            GroupingMethod::FixedA => "fixed_a",
            GroupingMethod::FixedB => "fixed_b",
            GroupingMethod::Dynamic => "dynamic",
        }
    }

    /// Group count of the fixed tile patterns.
    pub fn fixed_groups(self) -> Option<usize> {
        match self {
            GroupingMethod::FixedA => Some(3),
            GroupingMethod::FixedB => Some(6),
            _ => None,
        }
    }
}

impl fmt::Display for GroupingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GroupingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "a" && *m == GroupingMethod::FixedA) || (s == "b" && *m == GroupingMethod::FixedB))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown grouping `{s}`")))
    }
}

/// Processing order for dynamic grouping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DynamicOrder {
    /// Highest entropy bound first.
    #[default]
    Descending,
    Ascending,
}

/// Everything needed to reproduce the group order on both sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSchedule {
    pub method: GroupingMethod,
    /// `B_i` for scales `1..=M` (index `i − 1`).
    pub groups: Vec<usize>,
    pub seed: u64,
    pub order: DynamicOrder,
}

impl GroupSchedule {
    /// Fixed patterns dictate their own group count; random and dynamic use
    /// `groups` at every scale.
    pub fn uniform(method: GroupingMethod, scales: usize, groups: usize, seed: u64) -> Self {
        let b = method.fixed_groups().unwrap_or(groups);
        GroupSchedule {
            method,
            groups: vec![b; scales],
            seed,
            order: DynamicOrder::Descending,
        }
    }

    pub fn groups_at(&self, scale: usize) -> usize {
        self.groups[scale - 1]
    }

    pub fn validate(&self, scales: usize) -> Result<()> {
        if self.groups.len() != scales {
            return Err(Error::InvalidArgument(format!(
                "{} group counts for {scales} scales",
                self.groups.len()
            )));
        }
        for &b in &self.groups {
            if b == 0 || b > u8::MAX as usize {
                return Err(Error::InvalidArgument(format!("group count {b} out of range 1..=255")));
            }
            if let Some(fixed) = self.method.fixed_groups() {
                if b != fixed {
                    return Err(Error::InvalidArgument(format!(
                        "{} uses {fixed} groups, schedule says {b}",
                        self.method
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Binary mask over an `h×w` grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                m.bits[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set positions in raster order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based draw in `0..groups` keyed by seed, scale and coordinate.
fn random_group(seed: u64, scale: usize, row: usize, col: usize, groups: usize) -> usize {
    let key = ((scale as u64) << 48) ^ ((row as u64) << 24) ^ col as u64;
    let h = splitmix64(seed ^ splitmix64(key));
    ((h as u128 * groups as u128) >> 64) as usize
}

/// Zero-based group of a pixel under a static method, `None` for subset pixels.
pub fn static_group_index(
    method: GroupingMethod,
    phase: SubsetPhase,
    row: usize,
    col: usize,
    scale: usize,
    seed: u64,
    groups: usize,
) -> Result<Option<usize>> {
    if phase.is_subset(row, col) {
        return Ok(None);
    }
    let (r, c) = phase.local(row, col);
    let g = match method {
        GroupingMethod::FixedA => match (r % 2, c % 2) {
            (0, 0) => 0,
            (0, 1) => 1,
            _ => 2,
        },
        GroupingMethod::FixedB => match (r % 2, c % 4) {
            (1, 2) => 0,
            (0, 2) => 1,
            (0, 1) => 2,
            (0, 3) => 3,
            (0, 0) => 4,
            _ => 5,
        },
        GroupingMethod::Random => random_group(seed, scale, row, col, groups),
        GroupingMethod::Dynamic => {
            return Err(Error::InvalidArgument("dynamic grouping has no static masks".into()))
        }
    };
    Ok(Some(g))
}

/// Ordered group masks for one `h×w` scale grid.
pub fn static_group_masks(
    method: GroupingMethod,
    phase: SubsetPhase,
    height: usize,
    width: usize,
    scale: usize,
    seed: u64,
    groups: usize,
) -> Result<Vec<Mask>> {
    if height % 2 != 0 || width % 2 != 0 {
        return Err(Error::InvalidArgument(format!("scale grid {height}x{width} has odd dims")));
    }
    let b = method.fixed_groups().unwrap_or(groups);
    if b == 0 {
        return Err(Error::InvalidArgument("zero groups".into()));
    }
    let mut masks = vec![Mask::empty(height, width); b];
    for r in 0..height {
        for c in 0..width {
            if let Some(g) = static_group_index(method, phase, r, c, scale, seed, b)? {
                masks[g].set(r, c, true);
            }
        }
    }
    Ok(masks)
}

/// Mask of the subset pixels of an `h×w` grid.
pub fn subset_mask(phase: SubsetPhase, height: usize, width: usize) -> Mask {
    Mask::from_fn(height, width, |r, c| phase.is_subset(r, c))
}

/// Picks group `step` (1-based) of `total` from per-pixel scores.
///
/// Takes `⌈remaining / (total − step + 1)⌉` unprocessed pixels by score,
/// breaking ties by raster position.
pub fn dynamic_next_group(
    scores: &[f64],
    processed: &Mask,
    total: usize,
    step: usize,
    order: DynamicOrder,
) -> Result<Mask> {
    if scores.len() != processed.bits.len() {
        return Err(Error::shape("dynamic_next_group", scores.len(), processed.bits.len()));
    }
    if step == 0 || step > total {
        return Err(Error::InvalidArgument(format!("group step {step} outside 1..={total}")));
    }
    let mut remaining: Vec<usize> = (0..scores.len()).filter(|&i| !processed.bits[i]).collect();
    if remaining.is_empty() {
        return Err(Error::EmptyRemainder);
    }
    let take = remaining.len().div_ceil(total - step + 1);
    remaining.sort_by(|&a, &b| {
        let by_score = match order {
            DynamicOrder::Descending => scores[b].total_cmp(&scores[a]),
            DynamicOrder::Ascending => scores[a].total_cmp(&scores[b]),
        };
        by_score.then(a.cmp(&b))
    });
    let mut mask = Mask::empty(processed.height, processed.width);
    for &i in &remaining[..take] {
        mask.bits[i] = true;
    }
    Ok(mask)
}

/// Values and mask of one scale while its groups are processed.
///
/// Positions with the mask set hold true (encoder) or decoded (decoder)
/// values and are never written again.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgressState {
    pub values: Image8,
    pub mask: Mask,
    pub step: usize,
}

impl ProgressState {
    pub fn new(values: Image8, mask: Mask) -> Self {
        ProgressState { values, mask, step: 0 }
    }

    /// Overwrites the group's positions with `truth` and marks them known.
    pub fn mixer_update(&mut self, group: &Mask, truth: &Image8) -> Result<()> {
        if (group.height, group.width) != (self.mask.height, self.mask.width)
            || (truth.height(), truth.width()) != (self.mask.height, self.mask.width)
        {
            return Err(Error::shape(
                "mixer_update",
                (self.mask.height, self.mask.width),
                (group.height, group.width),
            ));
        }
        if let Some((row, col)) = group.positions().find(|&(r, c)| self.mask.get(r, c)) {
            return Err(Error::MaskOverlap { row, col });
        }
        for (r, c) in group.positions() {
            self.values.set(r, c, truth.get(r, c));
            self.mask.set(r, c, true);
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(method: GroupingMethod, r: usize, c: usize) -> Option<usize> {
        static_group_index(method, SubsetPhase::OddOdd, r, c, 1, 0, 3)
            .unwrap()
            .map(|g| g + 1)
    }

    #[test]
    fn pattern_a_cells() {
        use GroupingMethod::FixedA;
        assert_eq!(idx(FixedA, 0, 0), Some(1));
        assert_eq!(idx(FixedA, 0, 1), Some(2));
        assert_eq!(idx(FixedA, 1, 0), Some(3));
        assert_eq!(idx(FixedA, 1, 1), None);
    }

    #[test]
    fn pattern_b_cells() {
        use GroupingMethod::FixedB;
        assert_eq!(idx(FixedB, 1, 2), Some(1));
        assert_eq!(idx(FixedB, 0, 3), Some(4));
        assert_eq!(idx(FixedB, 1, 1), None);
    }

    #[test]
    fn unknown_method_id() {
        assert!(matches!(GroupingMethod::from_id(9), Err(Error::UnknownGrouping(9))));
    }

    #[test]
    fn decompose_4x4_one_scale() {
        let data: Vec<u8> = (0..48).collect();
        let img = Image8::from_raw(4, 4, data).unwrap();
        let plan = ScalePlan::new(4, 4, 1, SubsetPhase::OddOdd).unwrap();
        let xs = plan.decompose(&img).unwrap();
        assert_eq!(xs[1].width(), 2);
        assert_eq!(xs[1].get(0, 0), img.get(1, 1));
        assert_eq!(xs[1].get(1, 1), img.get(3, 3));
        assert_eq!(xs[1].get(0, 1), img.get(1, 3));
    }

    #[test]
    fn nested_coordinates() {
        let plan = ScalePlan::new(8, 8, 2, SubsetPhase::OddOdd).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let (fr, fc) = plan.to_full(2, r, c);
                let (r1, c1) = ((fr - 1) / 2, (fc - 1) / 2);
                assert_eq!(plan.to_full(1, r1, c1), (fr, fc));
            }
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        assert!(ScalePlan::new(6, 8, 2, SubsetPhase::OddOdd).is_err());
    }

    #[test]
    fn dynamic_takes_top_half() {
        let processed = Mask::empty(2, 2);
        let g = dynamic_next_group(&[3.0, 1.0, 2.0, 0.0], &processed, 2, 1, DynamicOrder::Descending).unwrap();
        assert_eq!(g.positions().collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn dynamic_ties_follow_raster_order() {
        let processed = Mask::empty(3, 3);
        let g = dynamic_next_group(&[1.0; 9], &processed, 4, 1, DynamicOrder::Descending).unwrap();
        assert_eq!(g.positions().collect::<Vec<_>>(), vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn dynamic_single_group_takes_all() {
        let mut processed = Mask::empty(2, 3);
        processed.set(1, 1, true);
        let scores = [5.0, -1.0, 0.0, 2.0, 9.0, 7.0];
        let g = dynamic_next_group(&scores, &processed, 1, 1, DynamicOrder::Descending).unwrap();
        assert_eq!(g.count(), 5);
        assert!(!g.get(1, 1));
    }

    #[test]
    fn dynamic_empty_remainder() {
        let processed = Mask::from_fn(2, 2, |_, _| true);
        assert!(matches!(
            dynamic_next_group(&[0.0; 4], &processed, 3, 1, DynamicOrder::Descending),
            Err(Error::EmptyRemainder)
        ));
    }

    #[test]
    fn mixer_rejects_overlap_and_keeps_others() {
        let truth = Image8::filled(2, 2, [9, 9, 9]);
        let mut st = ProgressState::new(Image8::new(2, 2), subset_mask(SubsetPhase::OddOdd, 2, 2));
        let before = st.clone();
        st.mixer_update(&Mask::empty(2, 2), &truth).unwrap();
        assert_eq!((st.values.clone(), st.mask.clone()), (before.values, before.mask));
        let bad = Mask::from_fn(2, 2, |r, c| r == 1 && c == 1);
        assert!(matches!(st.mixer_update(&bad, &truth), Err(Error::MaskOverlap { row: 1, col: 1 })));
        let good = Mask::from_fn(2, 2, |r, c| r == 0 && c == 0);
        st.mixer_update(&good, &truth).unwrap();
        assert_eq!(st.values.get(0, 0), [9, 9, 9]);
        assert_eq!(st.values.get(0, 1), [0, 0, 0]);
    }
}
