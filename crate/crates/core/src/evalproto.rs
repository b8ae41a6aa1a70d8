//! End-to-end and word-spotting scoring with don't-care ground truth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::synthdata::Annotation;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    EndToEnd,
    WordSpotting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correction {
    Off,
    /// Snap to the nearest lexicon entry within this edit distance.
    Nearest(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: Float,
    pub case_insensitive: bool,
    /// Ground-truth words shorter than this are don't-care.
    pub min_word_length: usize,
    pub protocol: Protocol,
    pub lexicon: Option<Vec<String>>,
    pub correction: Correction,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            case_insensitive: true,
            min_word_length: 3,
            protocol: Protocol::EndToEnd,
            lexicon: None,
            correction: Correction::Off,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!("iou_threshold {} must lie in (0, 1)", self.iou_threshold)));
        }
        let has_lexicon = self.lexicon.as_ref().is_some_and(|l| !l.is_empty());
        if self.protocol == Protocol::WordSpotting && !has_lexicon {
            return Err(Error::Config("word spotting needs a non-empty lexicon".into()));
        }
        if self.correction != Correction::Off && !has_lexicon {
            return Err(Error::Config("lexicon correction needs a non-empty lexicon".into()));
        }
        Ok(())
    }

    fn fold(&self, s: &str) -> String {
        if self.case_insensitive {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub text: String,
    pub score: Float,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Match {
    pub det: usize,
    pub gt: usize,
    pub iou: Float,
}

/// Raw counts; they add across images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ignored += o.ignored;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub precision: Float,
    pub recall: Float,
    pub f: Float,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored: usize,
    /// No ground truth was considered, so recall is reported as 0.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
    #[serde(skip)]
    pub matches: Vec<Match>,
}

impl EvalResult {
    pub fn from_counts(c: Counts, matches: Vec<Match>) -> Self {
        let precision = if c.tp + c.fp > 0 { c.tp as Float / (c.tp + c.fp) as Float } else { 0.0 };
        let considered = c.tp + c.fn_;
        let recall = if considered > 0 { c.tp as Float / considered as Float } else { 0.0 };
        let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        EvalResult {
            precision,
            recall,
            f,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            ignored: c.ignored,
            recall_undefined: considered == 0,
            matches,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts { tp: self.tp, fp: self.fp, fn_: self.fn_, ignored: self.ignored }
    }
}

/// Short or non-alphanumeric ground truth is don't-care.
pub fn is_ignored(text: &str, min_len: usize) -> bool {
    text.chars().count() < min_len || !text.chars().all(|c| c.is_alphanumeric())
}

/// `considered[i]` is false for don't-care ground truth, including words
/// missing from the lexicon.
pub fn word_spotting_filter(gts: &[Annotation], lexicon: &[String], cfg: &EvalConfig) -> Result<Vec<bool>> {
    if lexicon.is_empty() {
        return Err(Error::Config("word spotting needs a non-empty lexicon".into()));
    }
    let lex: Vec<String> = lexicon.iter().map(|w| cfg.fold(w)).collect();
    Ok(gts
        .iter()
        .map(|g| !is_ignored(&g.text, cfg.min_word_length) && lex.contains(&cfg.fold(&g.text)))
        .collect())
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Nearest lexicon entry (ties: lexicographically smallest) if within
/// `max_d` edits, else `word` unchanged.
pub fn lexicon_correct(word: &str, lexicon: &[String], max_d: usize) -> String {
    let best = lexicon.iter().map(|w| (levenshtein(word, w), w)).min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    match best {
        Some((d, w)) if d <= max_d => w.clone(),
        _ => word.to_string(),
    }
}

/// Greedy matching in descending score order (ties by index). A detection
/// matches an unmatched considered ground truth with IoU above the
/// threshold and an equal transcription, taking the highest IoU; one that
/// only overlaps don't-care ground truth counts neither way.
pub fn match_detections(dets: &[Detection], gts: &[Annotation], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let empty = Vec::new();
    let lexicon = cfg.lexicon.as_ref().unwrap_or(&empty);
    let considered: Vec<bool> = match cfg.protocol {
        Protocol::EndToEnd => gts.iter().map(|g| !is_ignored(&g.text, cfg.min_word_length)).collect(),
        Protocol::WordSpotting => word_spotting_filter(gts, lexicon, cfg)?,
    };
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let gt_text: Vec<String> = gts.iter().map(|g| cfg.fold(&g.text)).collect();
    let mut taken = vec![false; gts.len()];
    let mut counts = Counts { ignored: considered.iter().filter(|c| !**c).count(), ..Default::default() };
    let mut matches = Vec::new();
    for d in order {
        let word = match cfg.correction {
            Correction::Off => dets[d].text.clone(),
            Correction::Nearest(k) => lexicon_correct(&cfg.fold(&dets[d].text), lexicon, k),
        };
        let word = cfg.fold(&word);
        let mut best: Option<(usize, Float)> = None;
        let mut dont_care = false;
        for (j, g) in gts.iter().enumerate() {
            let o = iou(&dets[d].bbox, &g.bbox);
            if o <= cfg.iou_threshold {
                continue;
            }
            if !considered[j] {
                dont_care = true;
            } else if !taken[j] && gt_text[j] == word && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        match best {
            Some((j, o)) => {
                taken[j] = true;
                counts.tp += 1;
                matches.push(Match { det: d, gt: j, iou: o });
            }
            None if dont_care => {}
            None => counts.fp += 1,
        }
    }
    counts.fn_ = considered.iter().filter(|c| **c).count() - counts.tp;
    Ok(EvalResult::from_counts(counts, matches))
}
