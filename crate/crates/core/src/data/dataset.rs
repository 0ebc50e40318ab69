//! Paired datasets of biased and clean slices, their manifests and their
//! on-disk layout.
//!
//! A dataset directory holds `x/`, `y/`, `bias/` and `mask/` subdirectories
//! of single-slice raw volumes named by item id, plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bias::gen_bias;
use super::phantom::gen_phantom;
use super::raw;
use super::volume::Volume;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Clean slice `Y`, biased slice `X = Y * b`, the field `b` and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub clean: Image,
    pub biased: Image,
    pub bias: Image,
    pub tissue_mask: Mask,
    pub background_mask: Mask,
}

pub fn make_phantom(rng: &mut ChaCha8Rng, size: usize) -> Result<Phantom> {
    let p = gen_phantom(rng, size)?;
    let bias = gen_bias(rng, size, Some(&p.tissue_mask))?;
    let biased = p.clean.zip_with(&bias, |y, b| y * b)?;
    Ok(Phantom {
        clean: p.clean,
        biased,
        bias,
        tissue_mask: p.tissue_mask,
        background_mask: p.background_mask,
    })
}

/// Independent per-item seed derived from the dataset seed (SplitMix64).
pub fn item_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn item_id(index: usize) -> String {
    format!("p{index:05}")
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub size: usize,
    pub seed: u64,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Unsupported {
                what: "manifest version",
                detail: m.version.to_string(),
            });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<Phantom>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.items.iter().map(|i| i.id.as_str())
    }
}

/// `n` phantoms with independent anatomy and bias, one RNG stream each.
pub fn make_dataset(seed: u64, n: usize, size: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("a dataset needs at least one item"));
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        size,
        seed,
        items: (0..n)
            .map(|i| ManifestItem {
                id: item_id(i),
                seed: item_seed(seed, i as u64),
            })
            .collect(),
    };
    replay(&manifest)
}

/// Regenerates every item listed in a manifest.
pub fn replay(manifest: &DatasetManifest) -> Result<Dataset> {
    let items = manifest
        .items
        .iter()
        .map(|it| make_phantom(&mut ChaCha8Rng::seed_from_u64(it.seed), manifest.size))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: manifest.clone(),
        items,
    })
}

pub const SUBDIRS: [&str; 4] = ["x", "y", "bias", "mask"];

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::at_path(path))
}

/// Mask volume: 1 = tissue, 0 = background, 0.5 = neither.
fn mask_image(p: &Phantom) -> Image {
    Image::from_fn(p.clean.height(), p.clean.width(), |y, x| {
        if p.tissue_mask.get(y, x) {
            1.0
        } else if p.background_mask.get(y, x) {
            0.0
        } else {
            0.5
        }
    })
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    for sub in SUBDIRS {
        create_dir(&dir.join(sub))?;
    }
    for (item, p) in ds.manifest.items.iter().zip(&ds.items) {
        let file = format!("{}.f32", item.id);
        let seed = Some(item.seed);
        for (sub, img) in [("x", &p.biased), ("y", &p.clean), ("bias", &p.bias)] {
            raw::write_volume(
                &dir.join(sub).join(&file),
                &Volume::from_slices(std::slice::from_ref(img))?,
                seed,
            )?;
        }
        raw::write_volume(
            &dir.join("mask").join(&file),
            &Volume::from_slices(&[mask_image(p)])?,
            seed,
        )?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, ds.manifest.to_json()?).map_err(Error::at_path(&path))
}

/// One stored training pair with optional masks.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredPair {
    pub id: String,
    pub x: Image,
    pub y: Image,
    /// Tissue and background masks, when `mask/` is present.
    pub masks: Option<(Mask, Mask)>,
}

fn single_slice(path: &Path) -> Result<Image> {
    let (v, _) = raw::read_volume(path)?;
    if v.num_slices() != 1 {
        return Err(Error::dim(format!(
            "{} holds {} slices, expected 1",
            path.display(),
            v.num_slices()
        )));
    }
    v.slice(0)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(Error::at_path(&path))?;
    DatasetManifest::from_json(&text)
}

/// Loads the pairs listed in `dir/manifest.json`.
pub fn load_pairs(dir: &Path) -> Result<Vec<StoredPair>> {
    let manifest = read_manifest(dir)?;
    let has_masks = dir.join("mask").is_dir();
    manifest
        .items
        .iter()
        .map(|it| {
            let file = format!("{}.f32", it.id);
            let masks = if has_masks {
                let m = single_slice(&dir.join("mask").join(&file))?;
                let tissue = Mask::from_fn(m.height(), m.width(), |y, x| m.get(y, x) > 0.75);
                let bg = Mask::from_fn(m.height(), m.width(), |y, x| m.get(y, x) < 0.25);
                Some((tissue, bg))
            } else {
                None
            };
            Ok(StoredPair {
                id: it.id.clone(),
                x: single_slice(&dir.join("x").join(&file))?,
                y: single_slice(&dir.join("y").join(&file))?,
                masks,
            })
        })
        .collect()
}

/// Files with the given extension in `dir`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::at_path(dir))? {
        let path = entry.map_err(Error::at_path(dir))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
