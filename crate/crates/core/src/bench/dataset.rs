use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::pipeline::{parse_trimap, trimap, BACKGROUND_CLASS, FOREGROUND_CLASS};
use crate::resample::{decode_gray, decode_image, GrayImage, LabelMap, RgbImage};

/// One image of a dataset with its trimap and ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub trimap: PathBuf,
    pub truth: PathBuf,
}

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))?;
    for entry in entries {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pairs files of the three directories by file stem, sorted by stem.
///
/// Every stem found in any directory must be present in all three.
pub fn discover(images: &Path, trimaps: &Path, truth: &Path) -> Result<Vec<DatasetEntry>> {
    let dirs = [images, trimaps, truth];
    let maps = dirs
        .iter()
        .map(|d| files_by_stem(d))
        .collect::<Result<Vec<_>>>()?;
    let mut stems: Vec<&String> = maps.iter().flat_map(|m| m.keys()).collect();
    stems.sort();
    stems.dedup();

    let mut missing = Vec::new();
    let mut entries = Vec::new();
    for stem in stems {
        let found: Vec<Option<&PathBuf>> = maps.iter().map(|m| m.get(stem)).collect();
        for (dir, f) in dirs.iter().zip(&found) {
            if f.is_none() {
                missing.push(format!("{}/{stem}.png", dir.display()));
            }
        }
        if let [Some(image), Some(trimap), Some(truth)] = found[..] {
            entries.push(DatasetEntry {
                id: stem.clone(),
                image: image.clone(),
                trimap: trimap.clone(),
                truth: truth.clone(),
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    if entries.is_empty() {
        return Err(Error::MissingFiles(vec![format!(
            "{}/*.png",
            images.display()
        )]));
    }
    Ok(entries)
}

/// Two-class truth: foreground iff the value exceeds 128. The second
/// result flags the ambiguous pixels (exactly 128).
pub fn binarize_truth(truth: &GrayImage) -> (LabelMap, Vec<bool>) {
    let labels = truth
        .data
        .iter()
        .map(|&v| if v > trimap::UNKNOWN { FOREGROUND_CLASS } else { BACKGROUND_CLASS })
        .collect();
    let ambiguous = truth.data.iter().map(|&v| v == trimap::UNKNOWN).collect();
    let map = LabelMap::new(truth.width, truth.height, labels, 2).expect("two-class labels");
    (map, ambiguous)
}

/// A decoded dataset entry ready for evaluation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub seeds: LabelMap,
    pub truth: LabelMap,
    /// Unknown trimap region minus ambiguous truth pixels.
    pub eval_mask: Vec<bool>,
    /// Pixels whose truth is ambiguous; never evaluated.
    pub ambiguous: Vec<bool>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_sample(entry: &DatasetEntry) -> Result<Sample> {
    let image = decode_image(&read(&entry.image)?).map_err(|e| e.in_file(&entry.image))?;
    let tri = decode_gray(&read(&entry.trimap)?).map_err(|e| e.in_file(&entry.trimap))?;
    let (seeds, unknown) = parse_trimap(&tri).map_err(|e| e.in_file(&entry.trimap))?;
    let gt = decode_gray(&read(&entry.truth)?).map_err(|e| e.in_file(&entry.truth))?;
    let dims = [
        (image.width(), image.height()),
        (tri.width, tri.height),
        (gt.width, gt.height),
    ];
    if dims[0] != dims[1] || dims[0] != dims[2] {
        return Err(Error::dim(format!("{}: image, trimap and truth sizes {dims:?}", entry.id)));
    }
    let (truth, ambiguous) = binarize_truth(&gt);
    let eval_mask = unknown.iter().zip(&ambiguous).map(|(&u, &a)| u && !a).collect();
    Ok(Sample {
        id: entry.id.clone(),
        image,
        seeds,
        truth,
        eval_mask,
        ambiguous,
    })
}

/// Loads every entry, in entry order.
pub fn load_dataset(entries: &[DatasetEntry], exec: Execution) -> Result<Vec<Sample>> {
    map_indices(exec, entries.len(), |i| load_sample(&entries[i]))
        .into_iter()
        .collect()
}
