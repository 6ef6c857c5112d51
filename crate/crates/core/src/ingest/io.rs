use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};
use ndarray::Array2;

use super::IngestError;
use crate::model::{ImageStack, LabelVolume, ScanManifest};

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn slice_name(k: usize, labels: bool) -> String {
    if labels {
        format!("slice_{k:04}_labels.png")
    } else {
        format!("slice_{k:04}.png")
    }
}

fn is_slice_file(name: &str, labels: bool) -> bool {
    let Some(rest) = name.strip_prefix("slice_") else {
        return false;
    };
    let stem = if labels {
        rest.strip_suffix("_labels.png")
    } else {
        rest.strip_suffix(".png")
    };
    stem.is_some_and(|d| d.len() >= 4 && d.bytes().all(|b| b.is_ascii_digit()))
}

fn save_gray(path: &Path, sl: &Array2<u8>) -> Result<(), IngestError> {
    let (h, w) = sl.dim();
    let img = GrayImage::from_raw(w as u32, h as u32, sl.iter().copied().collect()).expect("buffer matches dimensions");
    img.save(path).map_err(|e| IngestError::CorruptImage {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn load_gray(path: &Path) -> Result<Array2<u8>, IngestError> {
    let corrupt = |reason: String| IngestError::CorruptImage {
        path: path.display().to_string(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| corrupt(e.to_string()))?
        .decode()
        .map_err(|e| corrupt(e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_vec((h as usize, w as usize), img.into_raw()).expect("decoded buffer matches dimensions"))
}

fn write_dir(dir: &Path, manifest: &ScanManifest, slices: impl Iterator<Item = Array2<u8>>, labels: bool) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (k, sl) in slices.enumerate() {
        save_gray(&dir.join(slice_name(k, labels)), &sl)?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json() + "\n").map_err(io_err(&path))
}

fn read_dir(dir: &Path, labels: bool) -> Result<(ScanManifest, Vec<Array2<u8>>), IngestError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| IngestError::MalformedManifest(format!("{}: {e}", mpath.display())))?;
    let manifest = ScanManifest::from_json(&text).map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
    let found = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_str().is_some_and(|n| is_slice_file(n, labels)))
        .count();
    if found != manifest.slice_count {
        return Err(IngestError::SliceCountMismatch {
            expected: manifest.slice_count,
            found,
        });
    }
    let mut slices = Vec::with_capacity(found);
    for k in 0..found {
        let path: PathBuf = dir.join(slice_name(k, labels));
        if !path.exists() {
            return Err(IngestError::CorruptImage {
                path: path.display().to_string(),
                reason: "missing slice file".into(),
            });
        }
        slices.push(load_gray(&path)?);
    }
    Ok((manifest, slices))
}

/// Writes `slice_0000.png …` and `manifest.json` into `dir`.
pub fn write_stack(dir: impl AsRef<Path>, stack: &ImageStack) -> Result<(), IngestError> {
    write_dir(dir.as_ref(), stack.manifest(), stack.slices().iter().cloned(), false)
}

pub fn read_stack(dir: impl AsRef<Path>) -> Result<ImageStack, IngestError> {
    let (m, slices) = read_dir(dir.as_ref(), false)?;
    Ok(ImageStack::new(m, slices)?)
}

/// Writes `slice_0000_labels.png …` (class codes as gray values) and
/// `manifest.json` into `dir`.
pub fn write_labels(dir: impl AsRef<Path>, vol: &LabelVolume) -> Result<(), IngestError> {
    let slices = (0..vol.slice_count()).map(|k| vol.slice(k).to_owned());
    write_dir(dir.as_ref(), vol.manifest(), slices, true)
}

pub fn read_labels(dir: impl AsRef<Path>) -> Result<LabelVolume, IngestError> {
    let (m, slices) = read_dir(dir.as_ref(), true)?;
    Ok(LabelVolume::from_slices(m, &slices)?)
}

/// Writes a captured frame sequence as `frame_00000.png …`.
pub fn write_frames(dir: impl AsRef<Path>, frames: &[Array2<u8>]) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        save_gray(&dir.join(format!("frame_{i:05}.png")), f)?;
    }
    Ok(())
}

/// Reads every `*.png` in `dir` in file-name order as one frame sequence.
pub fn read_frames(dir: impl AsRef<Path>) -> Result<Vec<Array2<u8>>, IngestError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::NoFrames);
    }
    paths.iter().map(|p| load_gray(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_phantom, PhantomSpec};

    fn sample() -> (ImageStack, LabelVolume) {
        let m = ScanManifest::new(5, 40, 32, 0.9, 60.0, "io").unwrap();
        synth_phantom(&PhantomSpec::resected(2), &m).unwrap()
    }

    #[test]
    fn stack_and_labels_round_trip() {
        let (stack, labels) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_stack(dir.path().join("s"), &stack).unwrap();
        write_labels(dir.path().join("l"), &labels).unwrap();
        assert_eq!(read_stack(dir.path().join("s")).unwrap(), stack);
        assert_eq!(read_labels(dir.path().join("l")).unwrap(), labels);
        assert!(dir.path().join("l/slice_0004_labels.png").exists());
    }

    #[test]
    fn missing_slice_file_is_a_count_mismatch() {
        let (stack, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_stack(dir.path(), &stack).unwrap();
        fs::remove_file(dir.path().join("slice_0004.png")).unwrap();
        assert!(matches!(
            read_stack(dir.path()),
            Err(IngestError::SliceCountMismatch { expected: 5, found: 4 })
        ));
    }

    #[test]
    fn missing_or_broken_manifest() {
        let (stack, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_stack(dir.path(), &stack).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"slice_count\": 5").unwrap();
        assert!(matches!(read_stack(dir.path()), Err(IngestError::MalformedManifest(_))));
        fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(matches!(read_stack(dir.path()), Err(IngestError::MalformedManifest(_))));
    }

    #[test]
    fn garbage_png_is_corrupt() {
        let (stack, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_stack(dir.path(), &stack).unwrap();
        fs::write(dir.path().join("slice_0002.png"), b"not a png").unwrap();
        assert!(matches!(read_stack(dir.path()), Err(IngestError::CorruptImage { .. })));
    }

    #[test]
    fn frames_round_trip_in_name_order() {
        let frames: Vec<Array2<u8>> = (0..12u8).map(|i| Array2::from_elem((6, 8), i * 10)).collect();
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &frames).unwrap();
        assert_eq!(read_frames(dir.path()).unwrap(), frames);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(read_frames(empty.path()), Err(IngestError::NoFrames)));
    }

    #[test]
    fn slice_file_pattern() {
        assert!(is_slice_file("slice_0012.png", false));
        assert!(!is_slice_file("slice_0012_labels.png", false));
        assert!(is_slice_file("slice_0012_labels.png", true));
        assert!(!is_slice_file("slice_12.png", false));
        assert!(!is_slice_file("manifest.json", false));
    }
}
