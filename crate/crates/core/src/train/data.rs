//! Dataset ingestion: IDX (MNIST binary layout) and PNG class directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn idx_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "t10k",
        }
    }

    fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataFormat {
    #[serde(rename = "idx")]
    Idx,
    #[serde(rename = "png-dir")]
    PngDir,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(DataFormat::Idx),
            "png-dir" => Ok(DataFormat::PngDir),
            other => Err(Error::Config(format!("unknown data format `{other}` (expected idx|png-dir)"))),
        }
    }
}

impl std::fmt::Display for DataFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataFormat::Idx => "idx",
            DataFormat::PngDir => "png-dir",
        })
    }
}

/// Labelled images with pixels in `[0, 1]`.
///
/// Multi-view samples are stored channel-stacked: a sample with `views`
/// views of `C` channels each has `views * C` channels, view 0 first.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
    pub views: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>, split: Split) -> Result<Self> {
        let ds = Dataset { images, labels, class_names, split, views: 1 };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, _, _) = self.images.dims4()?;
        if n == 0 {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if n != self.labels.len() {
            return Err(dim_err!("{n} images but {} labels", self.labels.len()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Validation(format!("label {bad} out of range for {} classes", self.class_names.len())));
        }
        if self.views == 0 || c % self.views != 0 {
            return Err(dim_err!("{c} channels do not split into {} views", self.views));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(C, H, W)` of one view.
    pub fn view_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1] / self.views, s[2], s[3]]
    }

    /// Images at `rows`, cast to the model's scalar type, with labels.
    pub fn batch<T: Scalar>(&self, rows: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let images = self.images.gather_batch(rows)?.cast();
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Ok((images, labels))
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::ingest(path, format!("cannot read: {e}")))
}

/// Parses an IDX3 unsigned-byte image file into `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let header = |at| read_u32_be(&bytes, at).ok_or_else(|| Error::ingest(path, "truncated IDX header"));
    let magic = header(0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::ingest(path, format!("bad IDX image magic {magic:#010x}")));
    }
    let (n, rows, cols) = (header(4)? as usize, header(8)? as usize, header(12)? as usize);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::ingest(
            path,
            format!("header declares {n}x{rows}x{cols} pixels but file holds {}", body.len()),
        ));
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let magic = read_u32_be(&bytes, 0).ok_or_else(|| Error::ingest(path, "truncated IDX header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::ingest(path, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = read_u32_be(&bytes, 4).ok_or_else(|| Error::ingest(path, "truncated IDX header"))? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::ingest(path, format!("header declares {n} labels but file holds {}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair. Class names are the label values
/// `"0"..=max`.
pub fn load_idx_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let raw = read_idx_labels(labels)?;
    if raw.len() != n {
        return Err(Error::ingest(labels, format!("{} labels for {n} images in {}", raw.len(), images.display())));
    }
    if n == 0 {
        return Err(Error::ingest(images, "no samples"));
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels: Vec<usize> = raw.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let images = Tensor::new(vec![n, 1, rows, cols], data)?;
    Dataset::new(images, labels, (0..classes).map(|c| c.to_string()).collect(), split)
}

/// Conventional file locations of a split under a data root.
pub fn split_paths(root: &Path, format: DataFormat, split: Split) -> Vec<PathBuf> {
    match format {
        DataFormat::Idx => vec![
            root.join(format!("{}-images-idx3-ubyte", split.idx_prefix())),
            root.join(format!("{}-labels-idx1-ubyte", split.idx_prefix())),
        ],
        DataFormat::PngDir => vec![root.join(split.dir_name())],
    }
}

/// Loads one split from a data root.
///
/// `idx`: `<root>/train-{images-idx3,labels-idx1}-ubyte` for train and the
/// `t10k-` pair for val. `png-dir`: `<root>/train/<class>/*.png` and
/// `<root>/val/<class>/*.png`.
pub fn load_split(root: &Path, format: DataFormat, split: Split) -> Result<Dataset> {
    let paths = split_paths(root, format, split);
    match format {
        DataFormat::Idx => load_idx_pair(&paths[0], &paths[1], split),
        DataFormat::PngDir => load_png_dir(&paths[0], split),
    }
}

/// Loads both splits and checks they are compatible and disjoint.
pub fn load_pair(root: &Path, format: DataFormat) -> Result<(Dataset, Dataset)> {
    let train = load_split(root, format, Split::Train)?;
    let mut val = load_split(root, format, Split::Val)?;
    if format == DataFormat::PngDir {
        let (t, v) = (&split_paths(root, format, Split::Train)[0], &split_paths(root, format, Split::Val)[0]);
        let canon = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
        if canon(t)? == canon(v)? {
            return Err(Error::ingest(v, "val split resolves to the train directory"));
        }
        if train.class_names != val.class_names {
            return Err(Error::ingest(
                v,
                format!("class directories {:?} differ from train's {:?}", val.class_names, train.class_names),
            ));
        }
    } else {
        // IDX class names come from the labels present; align them.
        let k = train.num_classes().max(val.num_classes());
        let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let mut train = train;
        train.class_names = names.clone();
        val.class_names = names;
        return Ok((train, val));
    }
    Ok((train, val))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::ingest(dir, format!("cannot list directory: {e}")))?;
    let mut entries = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::ingest(dir, format!("cannot list directory: {e}")))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        entries.push(entry.path());
    }
    entries.sort();
    Ok(entries)
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

struct Decoded {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

fn decode_png(path: &Path, want_channels: Option<usize>) -> Result<Decoded> {
    let img = image::open(path).map_err(|e| Error::ingest(path, format!("cannot decode PNG: {e}")))?;
    let gray = matches!(img.color(), ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16);
    let channels = want_channels.unwrap_or(if gray { 1 } else { 3 });
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = planar(&img, channels);
    Ok(Decoded { channels, height, width, pixels })
}

/// `[C, H, W]` floats in `[0, 1]` from an 8-bit conversion of the image.
fn planar(img: &DynamicImage, channels: usize) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0f32; channels * h * w];
    if channels == 1 {
        for (i, p) in img.to_luma8().pixels().enumerate() {
            out[i] = p.0[0] as f32 / 255.0;
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                out[c * h * w + i] = p.0[c] as f32 / 255.0;
            }
        }
    }
    out
}

/// Loads `<dir>/<class>/*.png`; class names are the sorted subdirectory
/// names and files are read in lexicographic order.
///
/// A class entry that is itself a directory is one multi-view sample whose
/// PNGs (sorted) are its views.
pub fn load_png_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::ingest(dir, "no class subdirectories"));
    }
    let mut class_names = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut geometry: Option<(usize, usize, usize, usize)> = None;

    for (label, class_dir) in class_dirs.iter().enumerate() {
        class_names.push(class_dir.file_name().expect("entry has a name").to_string_lossy().into_owned());
        for entry in sorted_entries(class_dir)? {
            let view_files: Vec<PathBuf> = if entry.is_dir() {
                sorted_entries(&entry)?.into_iter().filter(|p| is_png(p)).collect()
            } else if is_png(&entry) {
                vec![entry.clone()]
            } else {
                continue;
            };
            if view_files.is_empty() {
                return Err(Error::ingest(&entry, "multi-view sample directory holds no PNG files"));
            }
            for file in &view_files {
                let want = geometry.map(|g| g.1);
                let img = decode_png(file, want)?;
                let shape = (view_files.len(), img.channels, img.height, img.width);
                match geometry {
                    None => geometry = Some(shape),
                    Some(g) if g != shape => {
                        return Err(Error::ingest(
                            file,
                            format!(
                                "sample is {}x{}x{} with {} views, expected {}x{}x{} with {} views",
                                shape.1, shape.2, shape.3, shape.0, g.1, g.2, g.3, g.0
                            ),
                        ))
                    }
                    Some(_) => {}
                }
                data.extend_from_slice(&img.pixels);
            }
            labels.push(label);
        }
    }
    let Some((views, c, h, w)) = geometry else {
        return Err(Error::ingest(dir, "no PNG images found"));
    };
    let images = Tensor::new(vec![labels.len(), views * c, h, w], data)?;
    let ds = Dataset { images, labels, class_names, split, views };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset as `<dir>/<class>/<index>.png` (single-view only).
pub fn write_png_dir(data: &Dataset, dir: &Path) -> Result<()> {
    let (n, c, h, w) = data.images.dims4()?;
    if data.views != 1 || !(c == 1 || c == 3) {
        return Err(Error::Validation("png-dir export supports single-view 1- or 3-channel data".into()));
    }
    for name in &data.class_names {
        let class_dir = dir.join(name);
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
    }
    let width = n.to_string().len();
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..n {
        let px = &data.images.data()[i * c * h * w..(i + 1) * c * h * w];
        let path = dir.join(&data.class_names[data.labels[i]]).join(format!("{i:0width$}.png"));
        let result = if c == 1 {
            let buf = px.iter().map(|&v| to_byte(v)).collect();
            image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer size matches").save(&path)
        } else {
            let mut buf = Vec::with_capacity(3 * h * w);
            for p in 0..h * w {
                for ch in 0..3 {
                    buf.push(to_byte(px[ch * h * w + p]));
                }
            }
            image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size matches").save(&path)
        };
        result.map_err(|e| Error::ingest(&path, format!("cannot encode PNG: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_idx(dir: &Path, prefix: &str, labels: &[u8]) {
        let pixels: Vec<u8> = (0..labels.len() * 4).map(|i| (i * 17 % 256) as u8).collect();
        write_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")), 2, 2, &pixels).unwrap();
        write_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }

    #[test]
    fn idx_pair_loads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        tiny_idx(dir.path(), "train", &[0, 2, 1]);
        let ds = load_split(dir.path(), DataFormat::Idx, Split::Train).unwrap();
        assert_eq!(ds.images.shape(), &[3, 1, 2, 2]);
        assert_eq!(ds.labels, vec![0, 2, 1]);
        assert_eq!(ds.class_names, vec!["0", "1", "2"]);
        assert_eq!(ds.images.data()[1], 17.0 / 255.0);
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_count_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        tiny_idx(dir.path(), "train", &[0, 1]);
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &[0, 1, 1]).unwrap();
        let err = load_split(dir.path(), DataFormat::Idx, Split::Train).unwrap_err().to_string();
        assert!(err.contains("train-labels-idx1-ubyte"), "{err}");
    }

    #[test]
    fn corrupt_idx_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, [0, 0, 8, 3, 0, 0, 0, 9]).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Ingest { .. })));
    }

    #[test]
    fn empty_png_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png_dir(dir.path(), Split::Train), Err(Error::Ingest { .. })));
        fs::create_dir(dir.path().join("cat")).unwrap();
        assert!(matches!(load_png_dir(dir.path(), Split::Train), Err(Error::Ingest { .. })));
    }

    #[test]
    fn png_dir_round_trip_with_sorted_classes() {
        let dir = tempfile::tempdir().unwrap();
        let images = Tensor::from_fn(&[3, 3, 2, 2], |i| ((i * 37) % 256) as f32 / 255.0);
        let names = vec!["zebra".to_string(), "apple".to_string()];
        let ds = Dataset::new(images, vec![0, 1, 0], names, Split::Train).unwrap();
        write_png_dir(&ds, dir.path()).unwrap();
        let back = load_png_dir(dir.path(), Split::Train).unwrap();
        assert_eq!(back.class_names, vec!["apple", "zebra"]);
        assert_eq!(back.labels, vec![0, 1, 1]);
        // apple holds sample 1; zebra holds samples 0 and 2.
        let px = 12;
        assert_eq!(&back.images.data()[..px], &ds.images.data()[px..2 * px]);
        assert_eq!(&back.images.data()[2 * px..], &ds.images.data()[2 * px..]);
    }

    #[test]
    fn multi_view_samples_stack_channels() {
        let dir = tempfile::tempdir().unwrap();
        for (class, obj) in [("a", "o1"), ("b", "o2")] {
            let d = dir.path().join(class).join(obj);
            fs::create_dir_all(&d).unwrap();
            for v in 0..3u8 {
                image::GrayImage::from_raw(2, 2, vec![v * 10; 4]).unwrap().save(d.join(format!("v{v}.png"))).unwrap();
            }
        }
        let ds = load_png_dir(dir.path(), Split::Val).unwrap();
        assert_eq!(ds.views, 3);
        assert_eq!(ds.images.shape(), &[2, 3, 2, 2]);
        assert_eq!(ds.view_shape(), [1, 2, 2]);
        assert_eq!(ds.images.data()[4], 10.0 / 255.0);
    }
}
