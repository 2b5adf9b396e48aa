//! Print the group layout of every grouping method on a small grid, and the
//! scale decomposition of an 8x8 image.

use mspc::grouping::{dynamic_next_group, static_group_masks, DynamicOrder, GroupingMethod, Mask, ScalePlan, SubsetPhase};
use mspc::Image8;

fn show(masks: &[Mask], h: usize, w: usize) {
    for r in 0..h {
        let row: Vec<String> = (0..w)
            .map(|c| match masks.iter().position(|m| m.get(r, c)) {
                Some(g) => (g + 1).to_string(),
                None => "x".into(),
            })
            .collect();
        println!("    {}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (4, 8);
    for method in [GroupingMethod::FixedA, GroupingMethod::FixedB, GroupingMethod::Random] {
        println!("{method} (x = carried to the coarser scale)");
        show(&static_group_masks(method, SubsetPhase::OddOdd, h, w, 1, 7, 3)?, h, w);
    }

    // Dynamic grouping: highest score first, ties in raster order.
    let scores = [3.0, 1.0, 2.0, 0.0];
    let processed = Mask::empty(2, 2);
    let first = dynamic_next_group(&scores, &processed, 2, 1, DynamicOrder::Descending)?;
    println!("dynamic, scores {scores:?}, 2 groups: first group {:?}", first.positions().collect::<Vec<_>>());

    let mut img = Image8::new(8, 8);
    for r in 0..8 {
        for c in 0..8 {
            img.set(r, c, [(10 * r + c) as u8, 0, 0]);
        }
    }
    let plan = ScalePlan::new(8, 8, 2, SubsetPhase::OddOdd)?;
    for (i, scale) in plan.decompose(&img)?.iter().enumerate() {
        let reds: Vec<u8> = scale.data().chunks(3).map(|p| p[0]).collect();
        println!("scale {i}: {}x{} red = {:?}", scale.width(), scale.height(), reds);
    }
    Ok(())
}
