//! Paired two-domain image datasets and the tensors they are served as.
//!
//! Images live in memory as 8-bit RGB at a fixed square size. Batches are
//! materialized on demand as `(count, 3, size, size)` tensors in model range.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Value range a tensor's samples are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelRange {
    /// 8-bit intensities in `[0, 255]`.
    Unit8,
    /// Network range `[-1, 1]`.
    Model,
}

impl PixelRange {
    fn bounds(self) -> (f64, f64) {
        match self {
            PixelRange::Unit8 => (0.0, 255.0),
            PixelRange::Model => (-1.0, 1.0),
        }
    }
}

/// A batch of images, layout `(count, channels, height, width)`, tagged with its value range.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    data: Tensor,
    range: PixelRange,
}

impl ImageTensor {
    /// Wraps `data`, checking rank and that every value lies inside `range`.
    pub fn new(data: Tensor, range: PixelRange) -> Result<Self> {
        if data.rank() != 4 {
            return Err(contract!(
                "image tensor must have rank 4 (count, channels, height, width), got shape {:?}",
                data.dims()
            ));
        }
        let (lo, hi) = range.bounds();
        let flat = data.flatten_all()?.to_dtype(DType::F64)?;
        let min = flat.min(0)?.to_scalar::<f64>()?;
        let max = flat.max(0)?.to_scalar::<f64>()?;
        if min < lo || max > hi || min.is_nan() || max.is_nan() {
            return Err(contract!(
                "values [{min}, {max}] outside {range:?} bounds [{lo}, {hi}]"
            ));
        }
        Ok(Self { data, range })
    }

    /// Stacks 8-bit RGB images (all the same size) into a `Unit8` tensor.
    pub fn from_rgb(images: &[&RgbImage], dtype: DType) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| contract!("cannot build an image tensor from zero images"))?;
        let (w, h) = first.dimensions();
        let (w, h) = (w as usize, h as usize);
        let plane = w * h;
        let mut buf = vec![0f32; images.len() * 3 * plane];
        for (i, img) in images.iter().enumerate() {
            if img.dimensions() != first.dimensions() {
                return Err(contract!(
                    "image {i} is {:?}, expected {:?}",
                    img.dimensions(),
                    first.dimensions()
                ));
            }
            let base = i * 3 * plane;
            for (p, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    buf[base + c * plane + p] = f32::from(px[c]);
                }
            }
        }
        let data = Tensor::from_vec(buf, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self {
            data,
            range: PixelRange::Unit8,
        })
    }

    /// Converts a `Unit8` tensor back to RGB images, rounding to the nearest integer.
    pub fn to_rgb(&self) -> Result<Vec<RgbImage>> {
        if self.range != PixelRange::Unit8 {
            return Err(contract!("to_rgb requires a Unit8 tensor, got {:?}", self.range));
        }
        let (n, c, h, w) = self.data.dims4()?;
        if c != 3 {
            return Err(contract!("to_rgb requires 3 channels, got {c}"));
        }
        let values = self.data.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let plane = h * w;
        Ok((0..n)
            .map(|i| {
                let base = i * 3 * plane;
                RgbImage::from_fn(w as u32, h as u32, |x, y| {
                    let p = y as usize * w + x as usize;
                    let px = |ch: usize| values[base + ch * plane + p].round().clamp(0.0, 255.0) as u8;
                    image::Rgb([px(0), px(1), px(2)])
                })
            })
            .collect())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn range(&self) -> PixelRange {
        self.range
    }

    pub fn dims(&self) -> &[usize] {
        self.data.dims()
    }

    /// Flattened values as `f64`, in `(count, channels, height, width)` order.
    pub fn to_f64_vec(&self) -> Result<Vec<f64>> {
        Ok(self.data.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
    }
}

/// `v ↦ v / 127.5 − 1`.
pub fn to_model_range(img: &ImageTensor) -> Result<ImageTensor> {
    if img.range != PixelRange::Unit8 {
        return Err(contract!("to_model_range expects a Unit8 tensor, got {:?}", img.range));
    }
    Ok(ImageTensor {
        data: img.data.affine(1.0 / 127.5, -1.0)?,
        range: PixelRange::Model,
    })
}

/// Inverse of [`to_model_range`]; clamps to `[0, 255]` and rounds to whole intensities.
pub fn from_model_range(img: &ImageTensor) -> Result<ImageTensor> {
    if img.range != PixelRange::Model {
        return Err(contract!("from_model_range expects a Model tensor, got {:?}", img.range));
    }
    let data = img
        .data
        .affine(127.5, 127.5)?
        .clamp(0f64, 255f64)?
        .round()?;
    Ok(ImageTensor {
        data,
        range: PixelRange::Unit8,
    })
}

/// On-disk arrangement of a paired dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `<root>/<split>A/<name>.<ext>` paired with `<root>/<split>B/<name>.<ext>`.
    SplitFolders,
    /// `<root>/<split>/<name>.<ext>`: left half is domain A, right half domain B.
    CombinedAb,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "split-folders" | "split_folders" => Ok(Layout::SplitFolders),
            "combined-ab" | "combined_ab" | "combined" => Ok(Layout::CombinedAb),
            other => Err(Error::Config(format!(
                "unknown dataset layout `{other}`; valid layouts: split-folders, combined-ab"
            ))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::SplitFolders => "split-folders",
            Layout::CombinedAb => "combined-ab",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`; valid splits: train, test"))),
        }
    }
}

/// How to read a dataset from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub layout: Layout,
    pub image_size: usize,
    /// When set, both split directories are pooled, sorted by name, and the
    /// first `train_count` pairs form the train split; the rest form the test split.
    pub train_count: Option<usize>,
    /// Treat the B-side folder (or right half) as domain A.
    pub swap_domains: bool,
    /// Random horizontal flip of each pair, drawn per epoch.
    pub flip: bool,
}

impl DatasetOptions {
    pub fn new(layout: Layout, image_size: usize) -> Self {
        Self {
            layout,
            image_size,
            train_count: None,
            swap_domains: false,
            flip: false,
        }
    }
}

/// One aligned (domain A, domain B) example.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub name: String,
    pub a_path: PathBuf,
    pub b_path: PathBuf,
    pub a: RgbImage,
    pub b: RgbImage,
}

#[derive(Debug, Clone)]
pub struct PairedDataset {
    name: String,
    split: Split,
    image_size: usize,
    flip: bool,
    pairs: Vec<ImagePair>,
}

impl PairedDataset {
    /// Builds a dataset from already decoded pairs.
    pub fn from_pairs(
        name: impl Into<String>,
        split: Split,
        image_size: usize,
        pairs: Vec<ImagePair>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Pairing("dataset has no image pairs".into()));
        }
        let side = image_size as u32;
        for p in &pairs {
            if p.a.dimensions() != (side, side) || p.b.dimensions() != (side, side) {
                return Err(contract!(
                    "pair `{}` is not {image_size}x{image_size} in both domains",
                    p.name
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            split,
            image_size,
            flip: false,
            pairs,
        })
    }

    pub fn with_flip(mut self, flip: bool) -> Self {
        self.flip = flip;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Visiting order of pair indices for one epoch. Depends only on `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut epoch_rng(seed, epoch));
        order
    }

    /// All pairs once, shuffled by `(seed, epoch)`, in batches of `batch_size`
    /// (the last one may be short).
    pub fn batches(
        &self,
        batch_size: usize,
        seed: u64,
        epoch: usize,
        dtype: DType,
    ) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(contract!("batch_size must be at least 1"));
        }
        let mut rng = epoch_rng(seed, epoch);
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut rng);
        let flips = if self.flip {
            order.iter().map(|_| rng.random_bool(0.5)).collect()
        } else {
            vec![false; order.len()]
        };
        Ok(Batches {
            ds: self,
            order,
            flips,
            pos: 0,
            batch_size,
            dtype,
        })
    }

    /// The pairs at `indices` as a model-range batch, without shuffling or flipping.
    pub fn batch_of(&self, indices: &[usize], dtype: DType) -> Result<PairedBatch> {
        let flips = vec![false; indices.len()];
        make_batch(self, indices, &flips, dtype)
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub fn num_batches(len: usize, batch_size: usize) -> usize {
    len.div_ceil(batch_size)
}

/// Aligned model-range images from both domains.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub names: Vec<String>,
    pub a: ImageTensor,
    pub b: ImageTensor,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub struct Batches<'a> {
    ds: &'a PairedDataset,
    order: Vec<usize>,
    flips: Vec<bool>,
    pos: usize,
    batch_size: usize,
    dtype: DType,
}

impl Batches<'_> {
    /// Pair indices in delivery order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<PairedBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = make_batch(
            self.ds,
            &self.order[self.pos..end],
            &self.flips[self.pos..end],
            self.dtype,
        );
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = num_batches(self.order.len() - self.pos, self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

fn make_batch(
    ds: &PairedDataset,
    indices: &[usize],
    flips: &[bool],
    dtype: DType,
) -> Result<PairedBatch> {
    let mut a_imgs = Vec::with_capacity(indices.len());
    let mut b_imgs = Vec::with_capacity(indices.len());
    let mut names = Vec::with_capacity(indices.len());
    for (&i, &flip) in indices.iter().zip(flips) {
        let pair = ds
            .pairs
            .get(i)
            .ok_or_else(|| contract!("pair index {i} out of range ({} pairs)", ds.pairs.len()))?;
        names.push(pair.name.clone());
        if flip {
            a_imgs.push(std::borrow::Cow::Owned(imageops::flip_horizontal(&pair.a)));
            b_imgs.push(std::borrow::Cow::Owned(imageops::flip_horizontal(&pair.b)));
        } else {
            a_imgs.push(std::borrow::Cow::Borrowed(&pair.a));
            b_imgs.push(std::borrow::Cow::Borrowed(&pair.b));
        }
    }
    let a_refs: Vec<&RgbImage> = a_imgs.iter().map(|c| c.as_ref()).collect();
    let b_refs: Vec<&RgbImage> = b_imgs.iter().map(|c| c.as_ref()).collect();
    Ok(PairedBatch {
        names,
        a: to_model_range(&ImageTensor::from_rgb(&a_refs, dtype)?)?,
        b: to_model_range(&ImageTensor::from_rgb(&b_refs, dtype)?)?,
    })
}

/// Loads one split with default options (no pooling, no domain swap, no flip).
pub fn load_paired_dataset(
    root: &Path,
    layout: Layout,
    split: Split,
    image_size: usize,
) -> Result<PairedDataset> {
    load_paired_dataset_with(root, split, &DatasetOptions::new(layout, image_size))
}

pub fn load_paired_dataset_with(
    root: &Path,
    split: Split,
    opts: &DatasetOptions,
) -> Result<PairedDataset> {
    if opts.image_size == 0 {
        return Err(Error::Config("image_size must be positive".into()));
    }
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }

    let sources = match opts.train_count {
        None => discover(root, opts.layout, split)?,
        Some(train_count) => {
            let mut pooled = Vec::new();
            for s in [Split::Train, Split::Test] {
                if split_exists(root, opts.layout, s) {
                    pooled.extend(discover(root, opts.layout, s)?);
                }
            }
            pooled.sort_by(|x, y| x.name.cmp(&y.name));
            if let Some(w) = pooled.windows(2).find(|w| w[0].name == w[1].name) {
                return Err(Error::Pairing(format!(
                    "pair name `{}` appears in both train and test folders",
                    w[0].name
                )));
            }
            if train_count > pooled.len() {
                return Err(Error::Config(format!(
                    "train_count {train_count} exceeds the {} available pairs",
                    pooled.len()
                )));
            }
            let test = pooled.split_off(train_count);
            match split {
                Split::Train => pooled,
                Split::Test => test,
            }
        }
    };
    if sources.is_empty() {
        return Err(Error::Pairing(format!(
            "no image pairs found for split `{}` under {}",
            split.dir_name(),
            root.display()
        )));
    }

    let size = opts.image_size as u32;
    let layout = opts.layout;
    let mut pairs = sources
        .into_par_iter()
        .map(|src| decode_pair(src, layout, size))
        .collect::<Result<Vec<_>>>()?;
    if opts.swap_domains {
        for p in &mut pairs {
            std::mem::swap(&mut p.a, &mut p.b);
            std::mem::swap(&mut p.a_path, &mut p.b_path);
        }
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(PairedDataset {
        name,
        split,
        image_size: opts.image_size,
        flip: opts.flip,
        pairs,
    })
}

struct PairSource {
    name: String,
    a_path: PathBuf,
    b_path: PathBuf,
}

fn split_exists(root: &Path, layout: Layout, split: Split) -> bool {
    match layout {
        Layout::SplitFolders => root.join(format!("{}A", split.dir_name())).is_dir(),
        Layout::CombinedAb => root.join(split.dir_name()).is_dir(),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Image files in `dir` keyed by file stem, rejecting duplicate stems.
fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Pairing(format!(
                "ambiguous name `{stem}`: both {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn discover(root: &Path, layout: Layout, split: Split) -> Result<Vec<PairSource>> {
    match layout {
        Layout::SplitFolders => {
            let dir_a = root.join(format!("{}A", split.dir_name()));
            let dir_b = root.join(format!("{}B", split.dir_name()));
            let a = images_by_stem(&dir_a)?;
            let mut b = images_by_stem(&dir_b)?;
            let mut out = Vec::with_capacity(a.len());
            for (name, a_path) in a {
                let b_path = b.remove(&name).ok_or_else(|| {
                    Error::Pairing(format!(
                        "{} has no counterpart named `{name}` in {}",
                        a_path.display(),
                        dir_b.display()
                    ))
                })?;
                out.push(PairSource { name, a_path, b_path });
            }
            if let Some((name, b_path)) = b.into_iter().next() {
                return Err(Error::Pairing(format!(
                    "{} has no counterpart named `{name}` in {}",
                    b_path.display(),
                    dir_a.display()
                )));
            }
            Ok(out)
        }
        Layout::CombinedAb => {
            let dir = root.join(split.dir_name());
            Ok(images_by_stem(&dir)?
                .into_iter()
                .map(|(name, path)| PairSource {
                    name,
                    a_path: path.clone(),
                    b_path: path,
                })
                .collect())
        }
    }
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Bilinear resize straight to `size`×`size`; aspect ratio is not preserved.
pub fn resize_square(img: &RgbImage, size: u32) -> RgbImage {
    if img.dimensions() == (size, size) {
        img.clone()
    } else {
        imageops::resize(img, size, size, FilterType::Triangle)
    }
}

fn decode_pair(src: PairSource, layout: Layout, size: u32) -> Result<ImagePair> {
    let (a, b) = match layout {
        Layout::SplitFolders => (open_rgb(&src.a_path)?, open_rgb(&src.b_path)?),
        Layout::CombinedAb => {
            let ab = open_rgb(&src.a_path)?;
            let (w, h) = ab.dimensions();
            if w < 2 || w % 2 != 0 {
                return Err(Error::Pairing(format!(
                    "{} is {w}x{h}; a combined A|B image needs an even width",
                    src.a_path.display()
                )));
            }
            let half = w / 2;
            let a = imageops::crop_imm(&ab, 0, 0, half, h).to_image();
            let b = imageops::crop_imm(&ab, half, 0, half, h).to_image();
            (a, b)
        }
    };
    Ok(ImagePair {
        name: src.name,
        a_path: src.a_path,
        b_path: src.b_path,
        a: resize_square(&a, size),
        b: resize_square(&b, size),
    })
}
