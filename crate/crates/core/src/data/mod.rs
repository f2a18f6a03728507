//! Synthetic word images, dataset specs and the evaluation filter.
//!
//! Every image is a pure function of its label, seed and [`NoiseSpec`]:
//! glyphs from the embedded [`GlyphAtlas`] are drawn light on a dark ground
//! with jittered spacing and baseline, then resized to 32×100.

mod atlas;
mod io;

pub use atlas::{GlyphAtlas, GLYPH_HEIGHT, GLYPH_WIDTH};
pub use io::{load_directory, load_resized, read_pgm, write_dataset, write_pgm, LoadReport, SkippedLine};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::GrayImage;
use rand::Rng;

use crate::ctc::{Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::init::RngSeed;
use crate::tensor::Tensor;

pub const IMAGE_HEIGHT: usize = 32;
pub const IMAGE_WIDTH: usize = 100;
pub const MAX_LABEL_LEN: usize = 12;

const CELL: usize = 3;
const CANVAS_HEIGHT: usize = 32;

/// Optional corruption applied after resizing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Fraction of pixels forced to 0 or 255.
    pub salt_pepper: f64,
    /// Peak-to-peak amplitude of a linear background ramp, as a fraction of
    /// the 0..255 range.
    pub gradient: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            salt_pepper: 0.02,
            gradient: 0.15,
        }
    }
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        salt_pepper: 0.0,
        gradient: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.salt_pepper) || !(0.0..=1.0).contains(&self.gradient) {
            return Err(Error::InvalidArgument(format!(
                "noise parameters must lie in [0, 1], got salt_pepper={} gradient={}",
                self.salt_pepper, self.gradient
            )));
        }
        Ok(())
    }
}

/// Where a sample came from and how it was distorted.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub seed: Option<RngSeed>,
    pub noise: NoiseSpec,
    pub background: u8,
    pub foreground: u8,
    pub source: Option<PathBuf>,
}

/// A 32×100 grayscale image and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Row-major 8-bit pixels.
    pub pixels: Vec<u8>,
    pub label: LabelSequence,
    pub meta: SampleMeta,
}

/// Maps 0..=255 onto [-1, 1].
pub fn normalize_pixel(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

impl Sample {
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| normalize_pixel(p)).collect()
    }

    /// `[1, 1, 32, 100]` input tensor.
    pub fn image(&self) -> Tensor {
        batch_images(std::slice::from_ref(self))
    }
}

/// Stacks samples into a `[B, 1, 32, 100]` tensor.
pub fn batch_images<S: std::borrow::Borrow<Sample>>(samples: &[S]) -> Tensor {
    let mut data = Vec::with_capacity(samples.len() * IMAGE_HEIGHT * IMAGE_WIDTH);
    for s in samples {
        data.extend(s.borrow().pixels.iter().map(|&p| normalize_pixel(p)));
    }
    Tensor::new(&[samples.len(), 1, IMAGE_HEIGHT, IMAGE_WIDTH], data).expect("fixed image size")
}

/// True iff the label has at least three symbols, all alphanumeric.
pub fn evaluation_filter(label: &LabelSequence) -> bool {
    let alphabet = Alphabet::alphanumeric();
    label.len() >= 3 && label.as_slice().iter().all(|&c| c < alphabet.len())
}

fn check_label(label: &LabelSequence) -> Result<()> {
    if label.is_empty() || label.len() > MAX_LABEL_LEN {
        return Err(Error::InvalidArgument(format!(
            "label length {} outside [1, {MAX_LABEL_LEN}]",
            label.len()
        )));
    }
    let alphabet = Alphabet::alphanumeric();
    if let Some(&c) = label.as_slice().iter().find(|&&c| c >= alphabet.len()) {
        return Err(Error::InvalidArgument(format!("class {c} is not alphanumeric")));
    }
    Ok(())
}

/// Renders `label` deterministically from `seed`.
pub fn render(label: &LabelSequence, seed: RngSeed, noise: NoiseSpec) -> Result<Sample> {
    check_label(label)?;
    noise.validate()?;
    let mut rng = seed.rng();
    let atlas = GlyphAtlas;
    let background: u8 = rng.random_range(20..=70);
    let foreground: u8 = rng.random_range(180..=240);

    let glyph_w = GLYPH_WIDTH * CELL;
    let glyph_h = GLYPH_HEIGHT * CELL;
    let left = rng.random_range(2..=8usize);
    let right = rng.random_range(2..=8usize);
    let gaps: Vec<usize> = (1..label.len()).map(|_| rng.random_range(1..=5)).collect();
    let top = rng.random_range(4..=7usize);
    let width = left + right + label.len() * glyph_w + gaps.iter().sum::<usize>();

    let mut canvas = vec![background; width * CANVAS_HEIGHT];
    let mut x = left;
    for (i, &class) in label.as_slice().iter().enumerate() {
        let y0 = top + rng.random_range(0..=2usize) - 1;
        debug_assert!(y0 + glyph_h <= CANVAS_HEIGHT);
        for r in 0..glyph_h {
            for c in 0..glyph_w {
                if atlas.ink(class, r / CELL, c / CELL) {
                    canvas[(y0 + r) * width + x + c] = foreground;
                }
            }
        }
        x += glyph_w + gaps.get(i).copied().unwrap_or(0);
    }

    let img = GrayImage::from_raw(width as u32, CANVAS_HEIGHT as u32, canvas).expect("canvas size");
    let resized = imageops::resize(&img, IMAGE_WIDTH as u32, IMAGE_HEIGHT as u32, FilterType::Triangle);
    let mut pixels = resized.into_raw();
    apply_noise(&mut pixels, noise, &mut rng);

    Ok(Sample {
        pixels,
        label: label.clone(),
        meta: SampleMeta {
            seed: Some(seed),
            noise,
            background,
            foreground,
            source: None,
        },
    })
}

fn apply_noise(pixels: &mut [u8], noise: NoiseSpec, rng: &mut impl Rng) {
    if noise.gradient > 0.0 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        // project the corners to scale the ramp to [-0.5, 0.5]
        let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|(u, v)| u * dx + v * dy);
        let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let amp = noise.gradient * 255.0;
        for (i, p) in pixels.iter_mut().enumerate() {
            let u = (i % IMAGE_WIDTH) as f64 / (IMAGE_WIDTH - 1) as f64;
            let v = (i / IMAGE_WIDTH) as f64 / (IMAGE_HEIGHT - 1) as f64;
            let t = (u * dx + v * dy - lo) / (hi - lo) - 0.5;
            *p = (*p as f64 + amp * t).round().clamp(0.0, 255.0) as u8;
        }
    }
    if noise.salt_pepper > 0.0 {
        for p in pixels.iter_mut() {
            if rng.random_bool(noise.salt_pepper) {
                *p = if rng.next_u32() & 1 == 0 { 0 } else { 255 };
            }
        }
    }
}

/// Character pool for random labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Charset {
    Digits,
    Letters,
    Alphanumeric,
}

impl Charset {
    fn classes(self) -> std::ops::Range<usize> {
        match self {
            Charset::Digits => 0..10,
            Charset::Letters => 10..36,
            Charset::Alphanumeric => 0..36,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Charset::Digits => "digits",
            Charset::Letters => "letters",
            Charset::Alphanumeric => "alphanumeric",
        }
    }
}

/// Label distribution of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum VocabSpec {
    /// Uniform length in `min_len..=max_len`, uniform symbols.
    Random {
        charset: Charset,
        min_len: usize,
        max_len: usize,
    },
    /// Uniform draws from a fixed list.
    Words(Vec<LabelSequence>),
}

impl VocabSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            VocabSpec::Random { min_len, max_len, .. } => {
                if *min_len == 0 || min_len > max_len || *max_len > MAX_LABEL_LEN {
                    return Err(Error::InvalidArgument(format!(
                        "length range [{min_len}, {max_len}] must satisfy 1 <= min <= max <= {MAX_LABEL_LEN}"
                    )));
                }
            }
            VocabSpec::Words(words) => {
                if words.is_empty() {
                    return Err(Error::InvalidArgument("word list is empty".into()));
                }
                for w in words {
                    check_label(w)?;
                }
            }
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> LabelSequence {
        match self {
            VocabSpec::Random {
                charset,
                min_len,
                max_len,
            } => {
                let len = rng.random_range(*min_len..=*max_len);
                let classes = charset.classes();
                LabelSequence::from_indices((0..len).map(|_| rng.random_range(classes.clone())).collect())
            }
            VocabSpec::Words(words) => words[rng.random_range(0..words.len())].clone(),
        }
    }
}

/// The `index`-th sample of the stream defined by `(vocab, seed, noise)`.
pub fn sample_at(vocab: &VocabSpec, seed: RngSeed, noise: NoiseSpec, index: u64) -> Result<Sample> {
    let s = seed.derive(index);
    let label = vocab.draw(&mut s.derive(0).rng());
    render(&label, s, noise)
}

/// Lazily rendered stream of `count` samples.
pub fn make_dataset_iter(
    vocab: &VocabSpec,
    count: usize,
    seed: RngSeed,
    noise: NoiseSpec,
) -> Result<impl Iterator<Item = Sample> + '_> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be at least 1".into()));
    }
    vocab.validate()?;
    noise.validate()?;
    Ok((0..count as u64).map(move |i| sample_at(vocab, seed, noise, i).expect("validated spec")))
}

/// Renders `count` samples, sharded across threads. The result does not
/// depend on the thread count.
pub fn make_dataset(vocab: &VocabSpec, count: usize, seed: RngSeed, noise: NoiseSpec) -> Result<Vec<Sample>> {
    drop(make_dataset_iter(vocab, count, seed, noise)?);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count);
    let chunk = count.div_ceil(threads);
    let mut out = Vec::with_capacity(count);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let range = (t * chunk).min(count)..((t + 1) * chunk).min(count);
                scope.spawn(move || {
                    range
                        .map(|i| sample_at(vocab, seed, noise, i as u64).expect("validated spec"))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("generator thread panicked"));
        }
    });
    Ok(out)
}

/// Dataset generation parameters, read from flat `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub vocab: VocabSpec,
    /// Source of a `words` vocabulary, kept for echoing.
    pub words_file: Option<PathBuf>,
    pub count: usize,
    pub seed: RngSeed,
    pub noise: NoiseSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            vocab: VocabSpec::Random {
                charset: Charset::Digits,
                min_len: 3,
                max_len: 5,
            },
            words_file: None,
            count: 1000,
            seed: RngSeed(1),
            noise: NoiseSpec::default(),
        }
    }
}

pub const DATASET_KEYS: [&str; 8] = [
    "vocab",
    "words",
    "min_len",
    "max_len",
    "count",
    "seed",
    "salt_pepper",
    "gradient",
];

/// Splits `key=value` lines, skipping blanks and `#` comments. Duplicate keys
/// are errors.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: expected key=value", n + 1),
            });
        };
        let k = k.trim().to_string();
        if out.iter().any(|(_, seen, _)| *seen == k) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: duplicate key {k:?}", n + 1),
            });
        }
        out.push((n + 1, k, v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(origin: &Path, line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("line {line}: invalid value {v:?} for {key}: {e}"),
    })
}

impl DatasetSpec {
    /// Applies `key=value` pairs on top of `self`. A relative `words` path is
    /// resolved against `base`.
    pub fn apply(&mut self, pairs: &[(usize, String, String)], origin: &Path, base: &Path) -> Result<()> {
        let (mut charset, mut min_len, mut max_len) = match &self.vocab {
            VocabSpec::Random {
                charset,
                min_len,
                max_len,
            } => (Some(*charset), *min_len, *max_len),
            VocabSpec::Words(_) => (None, 3, 5),
        };
        for (line, key, v) in pairs {
            match key.as_str() {
                "vocab" => {
                    charset = match v.as_str() {
                        "digits" => Some(Charset::Digits),
                        "letters" => Some(Charset::Letters),
                        "alphanumeric" => Some(Charset::Alphanumeric),
                        "words" => None,
                        _ => {
                            return Err(Error::Parse {
                                path: origin.to_path_buf(),
                                message: format!(
                                    "line {line}: vocab must be digits, letters, alphanumeric or words, got {v:?}"
                                ),
                            })
                        }
                    }
                }
                "words" => self.words_file = Some(base.join(v)),
                "min_len" => min_len = parse_value(origin, *line, key, v)?,
                "max_len" => max_len = parse_value(origin, *line, key, v)?,
                "count" => self.count = parse_value(origin, *line, key, v)?,
                "seed" => self.seed = RngSeed(parse_value(origin, *line, key, v)?),
                "salt_pepper" => self.noise.salt_pepper = parse_value(origin, *line, key, v)?,
                "gradient" => self.noise.gradient = parse_value(origin, *line, key, v)?,
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        message: format!("line {line}: unknown key {key:?}"),
                    })
                }
            }
        }
        self.vocab = match charset {
            Some(charset) => VocabSpec::Random {
                charset,
                min_len,
                max_len,
            },
            None => {
                let Some(path) = &self.words_file else {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        message: "vocab=words needs a words=<file> entry".into(),
                    });
                };
                let lexicon = crate::ctc::Lexicon::load(&Alphabet::alphanumeric(), path)?;
                VocabSpec::Words(lexicon.words().to_vec())
            }
        };
        self.validate()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut spec = DatasetSpec::default();
        let base = origin.parent().unwrap_or(Path::new(""));
        spec.apply(&parse_key_values(text, origin)?, origin, base)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        self.vocab.validate()?;
        self.noise.validate()
    }

    /// Fully resolved `key=value` form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.vocab {
            VocabSpec::Random {
                charset,
                min_len,
                max_len,
            } => {
                writeln!(s, "vocab={}", charset.name()).unwrap();
                writeln!(s, "min_len={min_len}").unwrap();
                writeln!(s, "max_len={max_len}").unwrap();
            }
            VocabSpec::Words(words) => {
                writeln!(s, "vocab=words").unwrap();
                if let Some(p) = &self.words_file {
                    writeln!(s, "words={}", p.display()).unwrap();
                }
                writeln!(s, "# {} words", words.len()).unwrap();
            }
        }
        writeln!(s, "count={}", self.count).unwrap();
        writeln!(s, "seed={}", self.seed.0).unwrap();
        writeln!(s, "salt_pepper={}", self.noise.salt_pepper).unwrap();
        writeln!(s, "gradient={}", self.noise.gradient).unwrap();
        s
    }

    pub fn generate(&self) -> Result<Vec<Sample>> {
        make_dataset(&self.vocab, self.count, self.seed, self.noise)
    }
}
