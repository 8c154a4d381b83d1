use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};

use super::{fill_annotation, outline, DataError, Raster, Sample};

pub const ANNOTATION_SUFFIX: &str = "_Annotation";
const SUBDIR: &str = "training_set";

fn read_gray(path: &Path) -> Result<Raster<u8>, DataError> {
    let err = |reason: String| DataError::Read {
        path: path.to_path_buf(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_vec(w as usize, h as usize, img.into_raw()))
}

fn write_gray(path: &Path, r: &Raster<u8>) -> Result<(), DataError> {
    let img = GrayImage::from_raw(r.width() as u32, r.height() as u32, r.data().to_vec())
        .expect("raster dimensions match");
    img.save(path).map_err(|e| DataError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads `<root>/training_set/<id>.png` and `<id>_Annotation.png` pairs,
/// sorted by id. Masks hold the binarized outline, not yet filled.
pub fn load_hc18(root: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let dir = root.as_ref().join(SUBDIR);
    let entries = fs::read_dir(&dir).map_err(|e| DataError::Read {
        path: dir.clone(),
        reason: e.to_string(),
    })?;
    let mut images = BTreeMap::<String, PathBuf>::new();
    let mut annotations = BTreeMap::<String, PathBuf>::new();
    for entry in entries {
        let path = entry
            .map_err(|e| DataError::Read {
                path: dir.clone(),
                reason: e.to_string(),
            })?
            .path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        match stem.strip_suffix(ANNOTATION_SUFFIX) {
            Some(id) => annotations.insert(id.to_string(), path),
            None => images.insert(stem, path),
        };
    }
    if images.is_empty() {
        return Err(DataError::Empty(dir));
    }
    let missing: Vec<String> =
        images.keys().filter(|id| !annotations.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(DataError::MissingAnnotation(missing));
    }
    let orphans: Vec<String> =
        annotations.keys().filter(|id| !images.contains_key(*id)).cloned().collect();
    if !orphans.is_empty() {
        return Err(DataError::OrphanAnnotation(orphans));
    }
    images
        .into_iter()
        .map(|(id, path)| {
            let image = read_gray(&path)?;
            let ann = read_gray(&annotations[&id])?;
            if (ann.width(), ann.height()) != (image.width(), image.height()) {
                return Err(DataError::Read {
                    path: annotations[&id].clone(),
                    reason: "annotation size differs from image".into(),
                });
            }
            Ok(Sample {
                id,
                image: image.map(f32::from),
                mask: ann.map(|v| u8::from(v != 0)),
                split: None,
            })
        })
        .collect()
}

/// [`load_hc18`] followed by [`fill_annotation`] on every outline.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let mut samples = load_hc18(root)?;
    for s in &mut samples {
        s.mask = fill_annotation(&s.mask, &s.id)?;
    }
    Ok(samples)
}

/// Persists samples in the HC18 layout: the image as 8-bit grayscale and the
/// mask as a 255-valued outline.
pub fn write_dataset(samples: &[Sample], root: impl AsRef<Path>) -> Result<PathBuf, DataError> {
    let dir = root.as_ref().join(SUBDIR);
    fs::create_dir_all(&dir).map_err(|e| DataError::Write {
        path: dir.clone(),
        reason: e.to_string(),
    })?;
    for s in samples {
        let img = s.image.map(|v| v.round().clamp(0.0, 255.0) as u8);
        write_gray(&dir.join(format!("{}.png", s.id)), &img)?;
        let ann = outline(&s.mask).map(|v| if v != 0 { 255 } else { 0 });
        write_gray(&dir.join(format!("{}{ANNOTATION_SUFFIX}.png", s.id)), &ann)?;
    }
    Ok(dir)
}
