//! Width jitter and word-centred crop-and-rescale.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;
use crate::synthdata::Annotation;
use crate::tensor::Float;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Width ratios drawn uniformly.
    pub ratios: Vec<Float>,
    pub crop_prob: Float,
    /// Context kept around the union of word boxes when cropping.
    pub pad: usize,
    /// Shorter side after a crop.
    pub short_side: usize,
    /// Cap on the longer side, as a multiple of `short_side`.
    pub max_long: Float,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { ratios: vec![1.0, 0.8], crop_prob: 0.5, pad: 100, short_side: 256, max_long: 2.0 }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn none() -> Self {
        AugmentConfig { ratios: vec![1.0], crop_prob: 0.0, ..AugmentConfig::default() }
    }
}

/// A map `x' = sx·(x − ox)`, `y' = sy·(y − oy)` applied to boxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub ox: Float,
    pub oy: Float,
    pub sx: Float,
    pub sy: Float,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { ox: 0.0, oy: 0.0, sx: 1.0, sy: 1.0 };

    pub fn apply(&self, b: &BBox) -> BBox {
        BBox::new(
            (b.x1 - self.ox) * self.sx,
            (b.y1 - self.oy) * self.sy,
            (b.x2 - self.ox) * self.sx,
            (b.y2 - self.oy) * self.sy,
        )
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        Affine {
            ox: self.ox + next.ox / self.sx,
            oy: self.oy + next.oy / self.sy,
            sx: self.sx * next.sx,
            sy: self.sy * next.sy,
        }
    }
}

fn resize_with_map(image: &Image, w: usize, h: usize) -> Result<(Image, Affine)> {
    let map = Affine { ox: 0.0, oy: 0.0, sx: w as Float / image.width() as Float, sy: h as Float / image.height() as Float };
    if w == image.width() && h == image.height() {
        return Ok((image.clone(), map));
    }
    Ok((image.resize(w, h)?, map))
}

/// Random augmentation; also returns the map applied to the boxes. The
/// image is resampled to integer sizes, so box scales are the realised
/// size ratios rather than the nominal ones.
pub fn augment_with_map<R: Rng + ?Sized>(
    image: &Image,
    anns: &[Annotation],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Image, Vec<Annotation>, Affine)> {
    if cfg.ratios.is_empty() || cfg.ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Config("augment: width ratios must be positive".into()));
    }
    let r = cfg.ratios[rng.random_range(0..cfg.ratios.len())];
    let w = ((image.width() as Float * r).round() as usize).max(1);
    let (mut img, mut map) = resize_with_map(image, w, image.height())?;
    if !anns.is_empty() && rng.random_bool(cfg.crop_prob.clamp(0.0, 1.0) as f64) {
        let u = anns.iter().skip(1).fold(map.apply(&anns[0].bbox), |acc, a| acc.union(&map.apply(&a.bbox)));
        let pad = cfg.pad as Float;
        let x0 = (u.x1 - pad).floor().max(0.0) as usize;
        let y0 = (u.y1 - pad).floor().max(0.0) as usize;
        let x1 = ((u.x2 + pad).ceil() as usize).min(img.width());
        let y1 = ((u.y2 + pad).ceil() as usize).min(img.height());
        let cropped = img.crop(x0, y0, x1, y1)?;
        map = map.then(&Affine { ox: x0 as Float, oy: y0 as Float, sx: 1.0, sy: 1.0 });
        let (cw, ch) = (cropped.width() as Float, cropped.height() as Float);
        let target = cfg.short_side as Float;
        let mut f = target / cw.min(ch);
        if cw.max(ch) * f > cfg.max_long * target {
            f = cfg.max_long * target / cw.max(ch);
        }
        let nw = ((cw * f).round() as usize).max(1);
        let nh = ((ch * f).round() as usize).max(1);
        let (resized, m) = resize_with_map(&cropped, nw, nh)?;
        img = resized;
        map = map.then(&m);
    }
    let out = anns.iter().map(|a| Annotation { bbox: map.apply(&a.bbox), text: a.text.clone() }).collect();
    Ok((img, out, map))
}

pub fn augment<R: Rng + ?Sized>(
    image: &Image,
    anns: &[Annotation],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Image, Vec<Annotation>)> {
    augment_with_map(image, anns, cfg, rng).map(|(i, a, _)| (i, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{covers, generate_image, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_when_ratio_one_and_no_crop() {
        let spec = SceneSpec::default();
        let s = generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (img, anns) = augment(&s.image, &s.annotations, &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(img, s.image);
        assert_eq!(anns, s.annotations);
    }

    #[test]
    fn width_ratio_scales_x_only() {
        let spec = SceneSpec { width: 250, ..SceneSpec::default() };
        let s = generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let cfg = AugmentConfig { ratios: vec![0.8], crop_prob: 0.0, ..AugmentConfig::default() };
        let (img, anns) = augment(&s.image, &s.annotations, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((img.width(), img.height()), (200, s.image.height()));
        for (a, b) in s.annotations.iter().zip(&anns) {
            assert!((b.bbox.x1 - 0.8 * a.bbox.x1).abs() < 1e-9 && (b.bbox.x2 - 0.8 * a.bbox.x2).abs() < 1e-9);
            assert_eq!((b.bbox.y1, b.bbox.y2), (a.bbox.y1, a.bbox.y2));
        }
    }

    #[test]
    fn transformed_boxes_contain_glyph_pixels() {
        let spec = SceneSpec::default();
        let cfg = AugmentConfig { crop_prob: 1.0, pad: 10, short_side: 96, ..AugmentConfig::default() };
        for seed in 0..30 {
            let s = generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let bg = s.image.get(0, 0);
            let (img, anns, map) = augment_with_map(&s.image, &s.annotations, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (a, b) in s.annotations.iter().zip(&anns) {
                for y in 0..s.image.height() {
                    for x in 0..s.image.width() {
                        if covers(&a.bbox, x, y) && s.image.get(x, y) != bg {
                            let px = map.apply(&BBox::new(x as Float, y as Float, (x + 1) as Float, (y + 1) as Float));
                            assert!(b.bbox.contains(&px), "seed {seed}");
                        }
                    }
                }
                assert!(b.bbox.x1 >= 0.0 && b.bbox.y1 >= 0.0);
                assert!(b.bbox.x2 <= img.width() as Float + 1e-9 && b.bbox.y2 <= img.height() as Float + 1e-9);
            }
            if !s.annotations.is_empty() {
                assert!(img.width().min(img.height()) == 96 || img.width().max(img.height()) == 192);
            }
        }
    }
}
