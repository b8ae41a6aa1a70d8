//! Synthetic word images with exact box and transcription ground truth.

pub mod font;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::{Image, Rgb};
use crate::kv::KvFile;
use crate::tensor::Float;
use font::{GLYPH_H, GLYPH_W};

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.txt");
const MAX_ATTEMPTS: usize = 100;

pub fn builtin_lexicon() -> Vec<String> {
    BUILTIN_LEXICON.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// A word and its tight pixel box. Coordinates are pixel edges, so a box
/// covering columns `x..x+w` has `x1 = x`, `x2 = x + w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of words attempted per image.
    pub words: (usize, usize),
    /// Inclusive range of integer glyph scales.
    pub scale: (usize, usize),
    /// 1: pure colour background; 2: clutter outside word boxes.
    pub level: u8,
    /// Minimum luma difference between text and background, in 0..=255.
    pub min_contrast: Float,
    /// Free pixels kept between word boxes and the canvas edge.
    pub margin: usize,
    /// Clutter shapes per level-2 image.
    pub clutter: usize,
    /// Level-2 per-pixel noise amplitude.
    pub noise: u8,
    /// Where the lexicon came from; `builtin` or a path.
    pub lexicon_source: String,
    #[serde(skip)]
    pub lexicon: Vec<String>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 256,
            height: 128,
            words: (1, 4),
            scale: (2, 3),
            level: 1,
            min_contrast: 80.0,
            margin: 2,
            clutter: 12,
            noise: 24,
            lexicon_source: "builtin".into(),
            lexicon: builtin_lexicon(),
        }
    }
}

impl SceneSpec {
    pub fn with_lexicon(mut self, words: Vec<String>, source: &str) -> Result<Self> {
        self.lexicon = normalize_lexicon(words)?;
        self.lexicon_source = source.to_string();
        self.validate()?;
        Ok(self)
    }

    /// Parse a `key = value` spec. Relative lexicon paths resolve against
    /// `base`.
    pub fn parse(mut kv: KvFile, base: &Path) -> Result<Self> {
        let d = SceneSpec::default();
        let mut spec = SceneSpec {
            width: kv.get_or("width", d.width)?,
            height: kv.get_or("height", d.height)?,
            words: kv.range("words", d.words)?,
            scale: kv.range("scale", d.scale)?,
            level: kv.get_or("level", d.level)?,
            min_contrast: kv.get_or("min_contrast", d.min_contrast)?,
            margin: kv.get_or("margin", d.margin)?,
            clutter: kv.get_or("clutter", d.clutter)?,
            noise: kv.get_or("noise", d.noise)?,
            ..d
        };
        match kv.raw("lexicon") {
            None => {}
            Some(s) if s == "builtin" => {}
            Some(p) => {
                let path = base.join(&p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                spec.lexicon = normalize_lexicon(text.lines().map(String::from).collect())?;
                spec.lexicon_source = p;
            }
        }
        if let Some(n) = kv.get::<usize>("lexicon_size")? {
            spec.lexicon.truncate(n);
        }
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        SceneSpec::parse(KvFile::load(path)?, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene spec: {m}")));
        if !(1..=2).contains(&self.level) {
            return bad("level must be 1 or 2");
        }
        if !(self.min_contrast > 0.0 && self.min_contrast <= 255.0) {
            return bad("min_contrast must be in (0, 255]");
        }
        if self.width == 0 || self.height == 0 {
            return bad("canvas must be non-empty");
        }
        if self.scale.0 == 0 {
            return bad("scale must be at least 1");
        }
        if self.words.1 > 0 && self.lexicon.is_empty() {
            return bad("lexicon is empty");
        }
        Ok(())
    }

    pub fn mean_words(&self) -> Float {
        (self.words.0 + self.words.1) as Float / 2.0
    }

    pub fn lexicon_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.lexicon {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowercase, drop blanks and duplicates, and reject unrenderable words.
fn normalize_lexicon(words: Vec<String>) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for w in words {
        let w = w.trim().to_lowercase();
        if w.is_empty() || out.contains(&w) {
            continue;
        }
        if let Some(c) = w.chars().find(|&c| !font::has_glyph(c)) {
            return Err(Error::Config(format!("lexicon word `{w}` has unsupported character {c:?}")));
        }
        out.push(w.chars().map(font::symbol).collect());
    }
    Ok(out)
}

/// Pixel size of `word` at `scale`: glyphs separated by one blank column.
pub fn word_size(word: &str, scale: usize) -> (usize, usize) {
    let n = word.chars().count();
    ((n * (GLYPH_W + 1)).saturating_sub(1) * scale, GLYPH_H * scale)
}

/// Stamp `word` with its top-left corner at `pos`.
pub fn render_word(word: &str, scale: usize, color: Rgb, pos: (usize, usize), canvas: &mut Image) -> Result<Annotation> {
    if word.is_empty() || scale == 0 {
        return Err(Error::contract("render_word: empty word or zero scale"));
    }
    let masks = word
        .chars()
        .map(|c| font::glyph(c).ok_or_else(|| Error::contract(format!("render_word: no glyph for {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = word_size(word, scale);
    let (x0, y0) = pos;
    if x0 + w > canvas.width() || y0 + h > canvas.height() {
        return Err(Error::Placement(format!(
            "word `{word}` ({w}×{h}) at ({x0},{y0}) exceeds {}×{} canvas",
            canvas.width(),
            canvas.height()
        )));
    }
    for (k, rows) in masks.iter().enumerate() {
        let gx = x0 + k * (GLYPH_W + 1) * scale;
        for y in 0..h {
            for x in 0..GLYPH_W * scale {
                if font::pixel(rows, x / scale, y / scale) {
                    canvas.set(gx + x, y0 + y, color);
                }
            }
        }
    }
    let text = word.chars().map(font::symbol).collect();
    Ok(Annotation {
        bbox: BBox::new(x0 as Float, y0 as Float, (x0 + w) as Float, (y0 + h) as Float),
        text,
    })
}

pub fn luma(c: Rgb) -> Float {
    0.299 * c[0] as Float + 0.587 * c[1] as Float + 0.114 * c[2] as Float
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

/// A text colour at least `min` luma away from `bg`. Falls back to black
/// or white, whichever is further, if random draws keep failing.
fn contrasting_color<R: Rng + ?Sized>(rng: &mut R, bg: Rgb, min: Float) -> Rgb {
    for _ in 0..MAX_ATTEMPTS {
        let c = random_color(rng);
        if (luma(c) - luma(bg)).abs() >= min {
            return c;
        }
    }
    if luma(bg) >= 127.5 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

/// Whether pixel `(x, y)` lies inside `b`.
pub fn covers(b: &BBox, x: usize, y: usize) -> bool {
    let (fx, fy) = (x as Float + 0.5, y as Float + 0.5);
    fx > b.x1 && fx < b.x2 && fy > b.y1 && fy < b.y2
}

fn overlaps(a: &BBox, b: &BBox, gap: Float) -> bool {
    a.x1 < b.x2 + gap && b.x1 < a.x2 + gap && a.y1 < b.y2 + gap && b.y1 < a.y2 + gap
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub annotations: Vec<Annotation>,
    /// Words the sampler tried to place.
    pub requested: usize,
}

/// One synthetic image. The main stream consumes the same draws at both
/// levels; clutter uses a separate stream seeded from it, so the level-2
/// image equals its level-1 twin inside every word box.
pub fn generate_image<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let bg = random_color(rng);
    let mut image = Image::new(spec.width, spec.height, bg);
    let requested = rng.random_range(spec.words.0..=spec.words.1);
    let mut annotations: Vec<Annotation> = Vec::with_capacity(requested);
    let m = spec.margin;
    for _ in 0..requested {
        let word = &spec.lexicon[rng.random_range(0..spec.lexicon.len())];
        let color = contrasting_color(rng, bg, spec.min_contrast);
        for _ in 0..MAX_ATTEMPTS {
            let scale = rng.random_range(spec.scale.0..=spec.scale.1);
            let (w, h) = word_size(word, scale);
            if w + 2 * m > spec.width || h + 2 * m > spec.height {
                continue;
            }
            let x = rng.random_range(m..=spec.width - m - w);
            let y = rng.random_range(m..=spec.height - m - h);
            let cand = BBox::new(x as Float, y as Float, (x + w) as Float, (y + h) as Float);
            if annotations.iter().any(|a| overlaps(&a.bbox, &cand, m as Float)) {
                continue;
            }
            annotations.push(render_word(word, scale, color, (x, y), &mut image)?);
            break;
        }
    }
    let clutter_seed: u64 = rng.random();
    if spec.level == 2 {
        add_clutter(&mut image, &annotations, spec, clutter_seed);
    }
    Ok(Scene { image, annotations, requested })
}

fn add_clutter(image: &mut Image, words: &[Annotation], spec: &SceneSpec, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (image.width(), image.height());
    let mut layer = image.clone();
    for _ in 0..spec.clutter {
        let c = random_color(&mut rng);
        let (cx, cy) = (rng.random_range(0..w) as Float, rng.random_range(0..h) as Float);
        let rx = rng.random_range(2.0..(w as Float / 4.0).max(3.0));
        let ry = rng.random_range(2.0..(h as Float / 4.0).max(3.0));
        let ellipse = rng.random_bool(0.5);
        let (x0, x1) = ((cx - rx).max(0.0) as usize, ((cx + rx) as usize).min(w - 1));
        let (y0, y1) = ((cy - ry).max(0.0) as usize, ((cy + ry) as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (u, v) = ((x as Float - cx) / rx, (y as Float - cy) / ry);
                if !ellipse || u * u + v * v <= 1.0 {
                    layer.set(x, y, c);
                }
            }
        }
    }
    let amp = spec.noise as i16;
    for y in 0..h {
        for x in 0..w {
            let p = layer.get(x, y);
            let n = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
            if !words.iter().any(|a| covers(&a.bbox, x, y)) {
                image.set(x, y, p.map(|v| (v as i16 + n).clamp(0, 255) as u8));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub words: usize,
    pub requested: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SceneSpec,
    pub seed: u64,
    pub count: usize,
    pub lexicon_size: usize,
    pub lexicon_sha256: String,
    pub images: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn total_words(&self) -> usize {
        self.images.iter().map(|e| e.words).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    image: String,
    x1: Float,
    y1: Float,
    x2: Float,
    y2: Float,
    text: String,
}

pub const MANIFEST: &str = "manifest.json";
pub const ANNOTATIONS: &str = "annotations.jsonl";

pub fn image_name(index: usize) -> String {
    format!("img_{index:05}.ppm")
}

/// Write `count` images, `annotations.jsonl` and `manifest.json` into
/// `out_dir`. Image `i` is generated from seed `seed + i`.
pub fn generate_dataset(spec: &SceneSpec, count: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scenes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let scene = generate_image(spec, &mut rng)?;
            scene.image.write_ppm(&out_dir.join(image_name(i)))?;
            Ok((scene.annotations, scene.requested))
        })
        .collect::<Result<Vec<_>>>()?;
    let ann_path = out_dir.join(ANNOTATIONS);
    let mut lines = String::new();
    let mut images = Vec::with_capacity(count);
    for (i, (anns, requested)) in scenes.into_iter().enumerate() {
        let file = image_name(i);
        for a in &anns {
            let line = AnnotationLine {
                image: file.clone(),
                x1: a.bbox.x1,
                y1: a.bbox.y1,
                x2: a.bbox.x2,
                y2: a.bbox.y2,
                text: a.text.clone(),
            };
            lines.push_str(&serde_json::to_string(&line).expect("annotation serializes"));
            lines.push('\n');
        }
        images.push(ManifestEntry { file, words: anns.len(), requested });
    }
    fs::write(&ann_path, lines).map_err(|e| Error::io(&ann_path, e))?;
    let manifest = Manifest {
        spec: spec.clone(),
        seed,
        count,
        lexicon_size: spec.lexicon.len(),
        lexicon_sha256: spec.lexicon_hash(),
        images,
    };
    let man_path = out_dir.join(MANIFEST);
    let mut f = fs::File::create(&man_path).map_err(|e| Error::io(&man_path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::Format { path: man_path.clone(), msg: e.to_string() })?;
    f.write_all(b"\n").map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Image,
    pub annotations: Vec<Annotation>,
}

/// A directory written by [`generate_dataset`], or any directory holding
/// PPM images plus an `annotations.jsonl` in the same format. Without a
/// manifest the image list is every `.ppm` file, sorted by name.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let man_path = root.join(MANIFEST);
        let names: Vec<String> = if man_path.exists() {
            let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Format { path: man_path.clone(), msg: e.to_string() })?;
            m.images.into_iter().map(|e| e.file).collect()
        } else {
            let mut v: Vec<String> = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".ppm"))
                .collect();
            v.sort();
            v
        };
        let ann_path = root.join(ANNOTATIONS);
        let f = fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let mut by_image: std::collections::HashMap<String, Vec<Annotation>> = Default::default();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&ann_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let a: AnnotationLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format { path: ann_path.clone(), msg: format!("line {}: {e}", n + 1) })?;
            let bbox = BBox::new(a.x1, a.y1, a.x2, a.y2);
            if !bbox.is_valid() || bbox.area() <= 0.0 {
                return Err(Error::Format { path: ann_path.clone(), msg: format!("line {}: degenerate box", n + 1) });
            }
            by_image.entry(a.image).or_default().push(Annotation { bbox, text: a.text });
        }
        let samples = names
            .into_iter()
            .map(|name| {
                let image = Image::read_ppm(&root.join(&name))?;
                let annotations = by_image.remove(&name).unwrap_or_default();
                Ok(Sample { name, image, annotations })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(orphan) = by_image.keys().next() {
            return Err(Error::Format { path: ann_path, msg: format!("annotations for unknown image {orphan}") });
        }
        Ok(Dataset { root: root.to_path_buf(), samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trn::Vocab;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn one_letter_box_is_the_cell() {
        let mut img = Image::new(20, 20, [0; 3]);
        let a = render_word("k", 1, [255; 3], (3, 4), &mut img).unwrap();
        assert_eq!(a.bbox, BBox::new(3.0, 4.0, 8.0, 11.0));
        assert_eq!(a.text, "k");
    }

    #[test]
    fn two_letters_at_scale_two() {
        let mut img = Image::new(40, 20, [0; 3]);
        let a = render_word("ab", 2, [255; 3], (0, 0), &mut img).unwrap();
        assert_eq!((a.bbox.width(), a.bbox.height()), (22.0, 14.0));
        assert!(matches!(render_word("ab", 2, [255; 3], (20, 0), &mut img), Err(Error::Placement(_))));
    }

    #[test]
    fn rendered_pixels_lie_in_tight_box() {
        let lex = builtin_lexicon();
        let mut r = rng(5);
        for _ in 0..100 {
            let word = &lex[r.random_range(0..lex.len())];
            let scale = r.random_range(1..=3);
            let (w, h) = word_size(word, scale);
            let mut img = Image::new(w + 10, h + 10, [0; 3]);
            let a = render_word(word, scale, [255; 3], (5, 5), &mut img).unwrap();
            let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if img.get(x, y) == [255; 3] {
                        lo = (lo.0.min(x), lo.1.min(y));
                        hi = (hi.0.max(x + 1), hi.1.max(y + 1));
                    }
                }
            }
            let tight = BBox::new(lo.0 as Float, lo.1 as Float, hi.0 as Float, hi.1 as Float);
            assert_eq!(tight, a.bbox, "{word}");
            assert_eq!(Vocab::decode(&Vocab::encode(&a.text).unwrap()), a.text);
        }
    }

    #[test]
    fn zero_words_is_constant() {
        let spec = SceneSpec { words: (0, 0), ..Default::default() };
        let s = generate_image(&spec, &mut rng(1)).unwrap();
        assert!(s.annotations.is_empty());
        let c = s.image.get(0, 0);
        assert!(s.image.raw().chunks(3).all(|p| p == c));
    }

    #[test]
    fn level_one_background_is_constant_and_contrast_holds() {
        let spec = SceneSpec::default();
        for seed in 0..20 {
            let s = generate_image(&spec, &mut rng(seed)).unwrap();
            let bg = s.image.get(0, 0);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let inside = s.annotations.iter().any(|a| covers(&a.bbox, x, y));
                    let p = s.image.get(x, y);
                    if !inside {
                        assert_eq!(p, bg);
                    } else if p != bg {
                        assert!((luma(p) - luma(bg)).abs() >= spec.min_contrast);
                    }
                }
            }
        }
    }

    #[test]
    fn level_two_differs_only_outside_boxes() {
        let l1 = SceneSpec::default();
        let l2 = SceneSpec { level: 2, ..SceneSpec::default() };
        let mut any_diff = false;
        for seed in 0..10 {
            let a = generate_image(&l1, &mut rng(seed)).unwrap();
            let b = generate_image(&l2, &mut rng(seed)).unwrap();
            assert_eq!(a.annotations, b.annotations);
            for y in 0..l1.height {
                for x in 0..l1.width {
                    if a.annotations.iter().any(|w| covers(&w.bbox, x, y)) {
                        assert_eq!(a.image.get(x, y), b.image.get(x, y));
                    } else {
                        any_diff |= a.image.get(x, y) != b.image.get(x, y);
                    }
                }
            }
        }
        assert!(any_diff);
    }

    #[test]
    fn mean_words_matches_spec() {
        let spec = SceneSpec::default();
        let total: usize = (0..200).map(|i| generate_image(&spec, &mut rng(i)).unwrap().annotations.len()).sum();
        let mean = total as Float / 200.0;
        assert!((mean - spec.mean_words()).abs() <= 0.2 * spec.mean_words(), "{mean}");
    }

    #[test]
    fn dataset_is_reproducible_and_loadable() {
        let spec = SceneSpec { level: 2, ..SceneSpec::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = generate_dataset(&spec, 10, 42, a.path()).unwrap();
        generate_dataset(&spec, 10, 42, b.path()).unwrap();
        for name in std::iter::once(MANIFEST.to_string()).chain([ANNOTATIONS.to_string()]).chain(m.images.iter().map(|e| e.file.clone())) {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
        }
        let lines = fs::read_to_string(a.path().join(ANNOTATIONS)).unwrap().lines().count();
        assert_eq!(m.total_words(), lines);
        let ds = Dataset::load(a.path()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.samples.iter().map(|s| s.annotations.len()).sum::<usize>(), lines);
        let mut r = rng(42);
        assert_eq!(ds.samples[0].image, generate_image(&spec, &mut r).unwrap().image);
    }

    #[test]
    fn spec_parsing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("words.txt"), "Alpha\nbeta\n\nalpha\n").unwrap();
        let kv = KvFile::parse("width = 64\nwords = 2\nlevel = 2\nlexicon = words.txt", "t").unwrap();
        let s = SceneSpec::parse(kv, dir.path()).unwrap();
        assert_eq!((s.width, s.words, s.level), (64, (2, 2), 2));
        assert_eq!(s.lexicon, vec!["alpha", "beta"]);
        let kv = KvFile::parse("colour = red", "t").unwrap();
        assert!(SceneSpec::parse(kv, dir.path()).is_err());
        let kv = KvFile::parse("level = 3", "t").unwrap();
        assert!(SceneSpec::parse(kv, dir.path()).is_err());
        let kv = KvFile::parse("min_contrast = 0", "t").unwrap();
        assert!(SceneSpec::parse(kv, dir.path()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn boxes_never_overlap(seed in any::<u64>(), level in 1u8..=2) {
            let spec = SceneSpec { level, words: (3, 6), ..SceneSpec::default() };
            let s = generate_image(&spec, &mut rng(seed)).unwrap();
            for (i, a) in s.annotations.iter().enumerate() {
                prop_assert!(a.bbox.area() > 0.0);
                for b in &s.annotations[i + 1..] {
                    prop_assert_eq!(crate::geometry::iou(&a.bbox, &b.bbox), 0.0);
                }
            }
        }
    }
}
