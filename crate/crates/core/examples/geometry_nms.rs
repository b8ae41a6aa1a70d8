//! Anchors, offset encoding and greedy non-maximum suppression.

use txspot::geometry::{decode_offsets, encode_offsets, generate_anchors, iou, nms, AnchorSet, BBox};

fn main() -> txspot::Result<()> {
    let set = AnchorSet::default();
    let anchors = generate_anchors(4, 6, &set);
    println!("{} anchors per cell, {} on a 4x6 map", set.per_cell(), anchors.len());

    let gt = BBox::new(40.0, 12.0, 130.0, 34.0);
    let best = anchors
        .iter()
        .max_by(|a, b| iou(a, &gt).total_cmp(&iou(b, &gt)))
        .expect("anchors exist");
    let delta = encode_offsets(&gt, best)?;
    let back = decode_offsets(&delta, best)?;
    println!("best anchor {best:?} iou {:.3}", iou(best, &gt));
    println!("offsets {:?} decode back to {back:?}", delta.to_array());

    let boxes = vec![
        (BBox::new(10.0, 10.0, 60.0, 30.0), 0.9),
        (BBox::new(12.0, 11.0, 62.0, 31.0), 0.8),
        (BBox::new(100.0, 10.0, 150.0, 30.0), 0.7),
        (BBox::new(11.0, 9.0, 58.0, 29.0), 0.95),
    ];
    println!("nms(0.3) keeps {:?}", nms(&boxes, 0.3));
    Ok(())
}
