//! Portable graymap files and labelled image directories.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::{self, FilterType};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageReader};

use super::{evaluation_filter, NoiseSpec, Sample, SampleMeta, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};

/// Writes an 8-bit binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut w)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)?;
    w.flush()?;
    Ok(())
}

/// Reads any PGM (ASCII or binary) as 8-bit gray: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?
        .to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

/// Writes `samples` as `00000.pgm, 00001.pgm, ...` plus `labels.txt`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let alphabet = Alphabet::alphanumeric();
    let width = samples.len().max(1).to_string().len().max(5);
    let mut labels = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:0width$}.pgm");
        write_pgm(&dir.join(&name), IMAGE_WIDTH, IMAGE_HEIGHT, &s.pixels)?;
        labels.push_str(&format!("{name}\t{}\n", alphabet.decode(&s.label)));
    }
    let path = dir.join("labels.txt");
    fs::write(&path, labels)?;
    Ok(path)
}

/// A labels-file line that produced no sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<Sample>,
    pub skipped: Vec<SkippedLine>,
}

impl LoadReport {
    /// One-line summary, e.g. `loaded 98 samples, skipped 2 (lines 4, 9)`.
    pub fn summary(&self) -> String {
        let mut s = format!("loaded {} samples, skipped {}", self.samples.len(), self.skipped.len());
        if !self.skipped.is_empty() {
            let lines: Vec<String> = self.skipped.iter().map(|k| k.line.to_string()).collect();
            s.push_str(&format!(" (lines {})", lines.join(", ")));
        }
        s
    }
}

/// Loads `filename<TAB>label` entries. Image paths are relative to `dir`.
/// Bad lines, unreadable images and labels failing the evaluation filter's
/// character check are skipped and reported rather than aborting the load.
pub fn load_directory(dir: &Path, labels_file: &Path) -> Result<LoadReport> {
    let text = fs::read_to_string(labels_file)?;
    let alphabet = Alphabet::alphanumeric();
    let mut report = LoadReport::default();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut skip = |reason: String| report.skipped.push(SkippedLine { line: line_no, reason });
        let Some((name, label)) = line.split_once('\t') else {
            skip("expected filename<TAB>label".into());
            continue;
        };
        let label = match alphabet.encode(label.trim()) {
            Ok(l) if !l.is_empty() && l.len() <= super::MAX_LABEL_LEN => l,
            Ok(l) => {
                skip(format!("label length {} outside [1, {}]", l.len(), super::MAX_LABEL_LEN));
                continue;
            }
            Err(e) => {
                skip(e.to_string());
                continue;
            }
        };
        debug_assert!(label.len() < 3 || evaluation_filter(&label));
        let path = dir.join(name.trim());
        let pixels = match load_resized(&path) {
            Ok(p) => p,
            Err(e) => {
                skip(format!("{}: {e}", path.display()));
                continue;
            }
        };
        report.samples.push(Sample {
            pixels,
            label,
            meta: SampleMeta {
                seed: None,
                noise: NoiseSpec::NONE,
                background: 0,
                foreground: 0,
                source: Some(path),
            },
        });
    }
    Ok(report)
}

/// Reads a graymap and resizes it to exactly 32×100.
pub fn load_resized(path: &Path) -> Result<Vec<u8>> {
    let (w, h, pixels) = read_pgm(path)?;
    if w == IMAGE_WIDTH && h == IMAGE_HEIGHT {
        return Ok(pixels);
    }
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("decoded size");
    Ok(imageops::resize(&img, IMAGE_WIDTH as u32, IMAGE_HEIGHT as u32, FilterType::Triangle).into_raw())
}
