//! Binary pixel masks and ground-truth mask sets.
//!
//! Mask sets live in a directory with `index.json` (id → file, phrase) and
//! one 8-bit grayscale PNG per mask. Any nonzero pixel is foreground.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MASK_INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Row-major bits; `bits.len()` must equal `width * height`.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::dims(
                "mask bits",
                width as usize * height as usize,
                bits.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn area(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn from_image(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y).0[0] != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub phrase: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskSet {
    entries: BTreeMap<u32, MaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    id: u32,
    file: String,
    phrase: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskIndex {
    masks: Vec<IndexEntry>,
}

impl MaskSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u32, phrase: impl Into<String>, mask: BinaryMask) {
        self.entries.insert(
            id,
            MaskEntry {
                phrase: phrase.into(),
                mask,
            },
        );
    }

    pub fn get(&self, id: u32) -> Option<&BinaryMask> {
        self.entries.get(&id).map(|e| &e.mask)
    }

    pub fn entry(&self, id: u32) -> Option<&MaskEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &MaskEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }
}

/// Loads a mask directory; every mask must be `width x height`.
pub fn load_masks(dir: impl AsRef<Path>, width: u32, height: u32) -> Result<MaskSet> {
    let dir = dir.as_ref();
    let index_path = dir.join(MASK_INDEX_FILE);
    if !index_path.is_file() {
        return Err(Error::MissingFile {
            field: "masks/index.json".into(),
            path: index_path,
        });
    }
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: MaskIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: index_path.clone(),
        source,
    })?;

    let mut set = MaskSet::new();
    for entry in index.masks {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::MissingFile {
                field: format!("masks[{}]", entry.id),
                path,
            });
        }
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_luma8();
        if img.dimensions() != (width, height) {
            return Err(Error::MaskResolution {
                id: entry.id,
                expected_w: width,
                expected_h: height,
                actual_w: img.width(),
                actual_h: img.height(),
            });
        }
        if set.contains(entry.id) {
            return Err(Error::invalid(
                "masks/index.json",
                format!("duplicate mask id {}", entry.id),
            ));
        }
        set.insert(entry.id, entry.phrase, BinaryMask::from_image(&img));
    }
    Ok(set)
}

/// Writes `index.json` plus `<id>.png` for every mask.
pub fn save_masks(masks: &MaskSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = MaskIndex { masks: Vec::new() };
    for (id, entry) in masks.iter() {
        let file = format!("{id}.png");
        let path = dir.join(&file);
        entry
            .mask
            .to_image()
            .save(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
        index.masks.push(IndexEntry {
            id,
            file,
            phrase: entry.phrase.clone(),
        });
    }
    let path = dir.join(MASK_INDEX_FILE);
    let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
