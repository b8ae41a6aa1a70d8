//! Multi-scale inference: detections pooled across scales, merged by NMS
//! on textness, then recognised from the features of their own scale.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::backbone::STRIDE;
use crate::error::{Error, Result};
use crate::evalproto::{match_detections, Counts, Detection, EvalConfig, EvalResult};
use crate::geometry::{clip_box, generate_anchors, nms, BBox, BoxDelta};
use crate::image::Image;
use crate::model::Model;
use crate::synthdata::Dataset;
use crate::tdn::refine;
use crate::tensor::{Float, Graph, Var};
use crate::tpn::{generate_proposals, textness, ProposalConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SpotConfig {
    /// Shorter-side targets, one pass per entry.
    pub scales: Vec<usize>,
    pub nms_iou: Float,
    pub score_min: Float,
    pub proposals: ProposalConfig,
    pub dump_attention: bool,
}

impl Default for SpotConfig {
    fn default() -> Self {
        SpotConfig {
            scales: vec![256, 384, 512],
            nms_iou: 0.3,
            score_min: 0.5,
            proposals: ProposalConfig::default(),
            dump_attention: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpotWord {
    pub bbox: BBox,
    pub text: String,
    pub score: Float,
    /// One row per decoding step, each a distribution over columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<Float>>>,
}

/// Seconds spent per pipeline stage, summed over scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timing {
    pub features: Float,
    pub proposals: Float,
    pub encoding: Float,
    pub detection: Float,
    pub recognition: Float,
    pub total: Float,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpotResult {
    pub width: usize,
    pub height: usize,
    pub words: Vec<SpotWord>,
    pub timing: Timing,
}

/// Resize so the shorter side equals `target`; returns the realised
/// per-axis factors.
pub fn rescale(image: &Image, target: usize) -> Result<(Image, Float, Float)> {
    let (w, h) = (image.width(), image.height());
    if target == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    if w.min(h) == target {
        return Ok((image.clone(), 1.0, 1.0));
    }
    let f = target as Float / w.min(h) as Float;
    let nw = ((w as Float * f).round() as usize).max(STRIDE);
    let nh = ((h as Float * f).round() as usize).max(STRIDE);
    let out = image.resize(nw, nh)?;
    Ok((out, nw as Float / w as Float, nh as Float / h as Float))
}

struct ScalePass {
    graph: Graph,
    features: Var,
}

struct Candidate {
    /// Box in original image coordinates.
    bbox: BBox,
    /// Box in its scale's coordinates.
    local: BBox,
    score: Float,
    pass: usize,
}

fn secs(d: Duration) -> Float {
    d.as_secs_f64() as Float
}

fn detect_scale(model: &Model, image: &Image, target: usize, cfg: &SpotConfig, t: &mut Timing) -> Result<(ScalePass, Vec<Candidate>)> {
    let store = &model.store;
    let clock = Instant::now();
    let (img, sx, sy) = rescale(image, target)?;
    let mut g = Graph::new();
    let x = g.input(img.to_tensor(STRIDE));
    let features = model.backbone.extract_features(&mut g, store, x)?;
    t.features += secs(clock.elapsed());

    let clock = Instant::now();
    let out = model.tpn.forward(&mut g, store, features)?;
    let anchors = generate_anchors(out.grid.fh, out.grid.fw, &model.config.tpn.anchors);
    let props = generate_proposals(
        g.value(out.scores),
        g.value(out.deltas),
        &out.grid,
        &anchors,
        img.width(),
        img.height(),
        &cfg.proposals,
    )?;
    t.proposals += secs(clock.elapsed());

    let mut cands = Vec::new();
    if !props.is_empty() {
        let clock = Instant::now();
        let mut rows = Vec::with_capacity(props.len());
        for p in &props {
            rows.push(model.rfe.encode_box(&mut g, store, features, &p.bbox)?.code);
        }
        t.encoding += secs(clock.elapsed());

        let clock = Instant::now();
        let m = g.stack_rows(&rows)?;
        let (logits, deltas) = model.tdn.forward_rows(&mut g, store, m)?;
        let (lv, dv) = (g.value(logits), g.value(deltas));
        for (k, p) in props.iter().enumerate() {
            let local = refine(&p.bbox, &BoxDelta::from_slice(&dv[4 * k..4 * k + 4]), img.width(), img.height())?;
            if local.width() <= 0.0 || local.height() <= 0.0 {
                continue;
            }
            let back = clip_box(&local.scaled(1.0 / sx, 1.0 / sy), image.width(), image.height());
            cands.push(Candidate { bbox: back, local, score: textness(lv[2 * k], lv[2 * k + 1]), pass: 0 });
        }
        t.detection += secs(clock.elapsed());
    }
    let pass = ScalePass { graph: g, features };
    Ok((pass, cands))
}

pub fn spot(model: &Model, image: &Image, cfg: &SpotConfig) -> Result<SpotResult> {
    if cfg.scales.is_empty() {
        return Err(Error::Config("spot: no scales".into()));
    }
    let start = Instant::now();
    let mut timing = Timing::default();
    let mut passes = Vec::with_capacity(cfg.scales.len());
    let mut cands = Vec::new();
    for (i, &s) in cfg.scales.iter().enumerate() {
        let (pass, mut c) = detect_scale(model, image, s, cfg, &mut timing)?;
        c.iter_mut().for_each(|c| c.pass = i);
        passes.push(pass);
        cands.extend(c);
    }

    let clock = Instant::now();
    let scored: Vec<(BBox, Float)> = cands.iter().map(|c| (c.bbox, c.score)).collect();
    let keep: Vec<usize> = nms(&scored, cfg.nms_iou).into_iter().filter(|&i| cands[i].score >= cfg.score_min).collect();
    timing.detection += secs(clock.elapsed());

    let clock = Instant::now();
    let mut words = Vec::with_capacity(keep.len());
    for i in keep {
        let c = &cands[i];
        let pass = &mut passes[c.pass];
        let store = &model.store;
        let code = model.rfe.encode_box(&mut pass.graph, store, pass.features, &c.local)?;
        let ctx = model.trn.encode_context(&mut pass.graph, store, code.context)?;
        let dec = model.trn.decode_greedy(&mut pass.graph, store, &ctx)?;
        words.push(SpotWord {
            bbox: c.bbox,
            text: dec.text,
            score: c.score,
            attention: cfg.dump_attention.then_some(dec.attention),
        });
    }
    timing.recognition = secs(clock.elapsed());
    words.sort_by(|a, b| b.score.total_cmp(&a.score));
    timing.total = secs(start.elapsed());
    Ok(SpotResult { width: image.width(), height: image.height(), words, timing })
}

/// Transcribe given boxes of `image` at its native scale.
pub fn read_boxes(model: &Model, image: &Image, boxes: &[BBox]) -> Result<Vec<String>> {
    let store = &model.store;
    let mut g = Graph::new();
    let x = g.input(image.to_tensor(STRIDE));
    let features = model.backbone.extract_features(&mut g, store, x)?;
    boxes
        .iter()
        .map(|b| {
            let code = model.rfe.encode_box(&mut g, store, features, b)?;
            let ctx = model.trn.encode_context(&mut g, store, code.context)?;
            Ok(model.trn.decode_greedy(&mut g, store, &ctx)?.text)
        })
        .collect()
}

/// Spot every sample and score the pooled counts. Images run in parallel;
/// the result does not depend on the thread count.
pub fn evaluate(model: &Model, data: &Dataset, spot_cfg: &SpotConfig, eval_cfg: &EvalConfig) -> Result<EvalResult> {
    eval_cfg.validate()?;
    let per_image = data
        .samples
        .par_iter()
        .map(|s| {
            let r = spot(model, &s.image, spot_cfg)?;
            let dets: Vec<Detection> =
                r.words.into_iter().map(|w| Detection { bbox: w.bbox, text: w.text, score: w.score }).collect();
            Ok(match_detections(&dets, &s.annotations, eval_cfg)?.counts())
        })
        .collect::<Result<Vec<Counts>>>()?;
    let mut total = Counts::default();
    for c in per_image {
        total += c;
    }
    Ok(EvalResult::from_counts(total, Vec::new()))
}

/// Draw each word box as a one-pixel outline.
pub fn annotate(image: &Image, words: &[SpotWord], color: crate::image::Rgb) -> Image {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return out;
    }
    for word in words {
        let b = &word.bbox;
        let x0 = (b.x1.floor().max(0.0) as usize).min(w - 1);
        let y0 = (b.y1.floor().max(0.0) as usize).min(h - 1);
        let x1 = ((b.x2.ceil() as usize).saturating_sub(1)).clamp(x0, w - 1);
        let y1 = ((b.y2.ceil() as usize).saturating_sub(1)).clamp(y0, h - 1);
        for x in x0..=x1 {
            out.set(x, y0, color);
            out.set(x, y1, color);
        }
        for y in y0..=y1 {
            out.set(x0, y, color);
            out.set(x1, y, color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn blank_image_yields_no_words_with_a_suppressive_threshold() {
        let m = Model::new(ModelConfig::desk(), 0).unwrap();
        let img = Image::new(96, 48, [40, 90, 200]);
        let cfg = SpotConfig { scales: vec![48], score_min: 1.1, proposals: ProposalConfig { top_n: 10, ..Default::default() }, ..Default::default() };
        let r = spot(&m, &img, &cfg).unwrap();
        assert!(r.words.is_empty());
        let t = r.timing;
        assert!(t.features + t.proposals + t.encoding + t.detection + t.recognition <= t.total + 1e-9);
    }

    #[test]
    fn attention_rows_are_distributions_and_words_sorted() {
        let m = Model::new(ModelConfig::desk(), 1).unwrap();
        let img = Image::new(96, 48, [200, 200, 200]);
        let cfg = SpotConfig {
            scales: vec![48, 64],
            score_min: 0.0,
            dump_attention: true,
            proposals: ProposalConfig { top_n: 8, ..Default::default() },
            ..Default::default()
        };
        let r = spot(&m, &img, &cfg).unwrap();
        assert!(!r.words.is_empty());
        for w in r.words.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for w in &r.words {
            assert!(w.bbox.x1 >= 0.0 && w.bbox.y1 >= 0.0 && w.bbox.x2 <= 96.0 && w.bbox.y2 <= 48.0);
            for row in w.attention.as_ref().unwrap() {
                assert!((row.iter().sum::<Float>() - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(spot(&m, &img, &cfg).unwrap().words, r.words);
    }

    #[test]
    fn rescale_maps_back_within_half_pixel() {
        let img = Image::new(200, 100, [0; 3]);
        for target in [64, 128, 150, 333] {
            let (out, sx, sy) = rescale(&img, target).unwrap();
            assert_eq!(out.height(), target);
            let b = BBox::new(13.0, 20.0, 97.0, 41.0);
            let back = b.scaled(sx, sy).scaled(1.0 / sx, 1.0 / sy);
            for (a, c) in [(b.x1, back.x1), (b.y1, back.y1), (b.x2, back.x2), (b.y2, back.y2)] {
                assert!((a - c).abs() < 0.5);
            }
        }
    }
}
