//! Image/ground-truth manifests.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::maps::{BinaryMask, RgbImage};
use crate::par;
use crate::train::TrainSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub split: Split,
    pub image: PathBuf,
    pub gt: PathBuf,
}

/// Lines of `<split> <image> <gt>`; relative paths resolve against the
/// manifest's directory. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Dataset(format!("line {}: expected `split image gt`", n + 1)));
            }
            entries.push(Entry {
                split: f[0].parse()?,
                image: base.join(f[1]),
                gt: base.join(f[2]),
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        for e in &m.entries {
            for p in [&e.image, &e.gt] {
                if !p.is_file() {
                    return Err(Error::Dataset(format!("{}: listed file does not exist", p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Reads one pair, checking that the dimensions agree.
pub fn load_pair(e: &Entry, gt_threshold: u8) -> Result<(RgbImage, BinaryMask)> {
    let img = RgbImage::load(&e.image)?;
    let gt = BinaryMask::load_with_threshold(&e.gt, gt_threshold)?;
    if (img.width, img.height) != (gt.width, gt.height) {
        return Err(Error::Dataset(format!(
            "{} is {}x{} but {} is {}x{}",
            e.image.display(),
            img.width,
            img.height,
            e.gt.display(),
            gt.width,
            gt.height
        )));
    }
    Ok((img, gt))
}

/// Loads and segments every entry of `split`.
pub fn training_samples(manifest: &DatasetManifest, split: Split, run: &RunConfig) -> Result<Vec<TrainSample>> {
    let entries: Vec<&Entry> = manifest.split(split).collect();
    par::map_slice(&entries, |e| {
        let (img, gt) = load_pair(e, run.eval.gt_threshold)?;
        TrainSample::prepare(img, gt, run.train.input_size, &run.scales, &run.slic)
    })
    .into_iter()
    .collect()
}
