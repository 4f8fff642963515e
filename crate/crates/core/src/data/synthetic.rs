//! Deterministic synthetic leaf images.
//!
//! Species set the leaf hue and silhouette; diseases add spot patterns whose
//! size, count and tone depend on the disease index (index 0 is healthy).

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ManifestEntry, PAIR_SEPARATOR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compatibility {
    /// Every species can carry every disease.
    Full,
    /// `mask[species][disease]`.
    Mask(Vec<Vec<bool>>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub species: usize,
    /// Includes "healthy".
    pub diseases: usize,
    #[serde(default = "default_compat")]
    pub compatibility: Compatibility,
    pub images_per_pair: usize,
    #[serde(default = "default_extent")]
    pub extent: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_compat() -> Compatibility {
    Compatibility::Full
}

fn default_extent() -> usize {
    32
}

impl SyntheticSpec {
    pub fn new(species: usize, diseases: usize, images_per_pair: usize, seed: u64) -> Self {
        SyntheticSpec {
            species,
            diseases,
            compatibility: Compatibility::Full,
            images_per_pair,
            extent: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.species == 0 || self.diseases == 0 || self.images_per_pair == 0 {
            return Err(Error::Config(
                "synthetic spec needs >= 1 species, disease and image per pair".into(),
            ));
        }
        if self.extent < 4 {
            return Err(Error::Config(format!(
                "synthetic extent {} is below 4",
                self.extent
            )));
        }
        if let Compatibility::Mask(m) = &self.compatibility {
            if m.len() != self.species || m.iter().any(|r| r.len() != self.diseases) {
                return Err(Error::Config(format!(
                    "compatibility mask must be {}×{}",
                    self.species, self.diseases
                )));
            }
            if !m.iter().flatten().any(|&b| b) {
                return Err(Error::Config("compatibility mask is empty".into()));
            }
        }
        Ok(())
    }

    pub fn allows(&self, species: usize, disease: usize) -> bool {
        match &self.compatibility {
            Compatibility::Full => true,
            Compatibility::Mask(m) => m[species][disease],
        }
    }

    pub fn species_name(k: usize) -> String {
        format!("species{k:02}")
    }

    pub fn disease_name(m: usize) -> String {
        if m == 0 {
            "healthy".into()
        } else {
            format!("disease{m:02}")
        }
    }
}

/// One rendered image, PNG-encoded, with its path relative to the dataset root.
#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub rel_path: PathBuf,
    pub species: String,
    pub disease: String,
    pub png: Vec<u8>,
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Leaf hue in degrees for species `k` of `n`.
pub(crate) fn species_hue(k: usize, n: usize) -> f32 {
    20.0 + 300.0 * k as f32 / n as f32
}

fn render(spec: &SyntheticSpec, k: usize, m: usize, i: usize) -> RgbImage {
    let e = spec.extent as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((k as u64) << 40) | ((m as u64) << 20) | i as u64);

    let brightness = rng.random_range(0.85f32..1.15);
    let angle = k as f32 * 0.7 + rng.random_range(-0.3f32..0.3);
    let cx = e / 2.0 + rng.random_range(-0.04f32..0.04) * e;
    let cy = e / 2.0 + rng.random_range(-0.04f32..0.04) * e;
    let a = 0.42 * e;
    let ecc = if spec.species > 1 {
        k as f32 / (spec.species - 1) as f32
    } else {
        0.0
    };
    let b = a * (0.9 - 0.45 * ecc);
    let (sin, cos) = angle.sin_cos();

    let leaf = hsv(species_hue(k, spec.species), 0.7, 0.75);
    let background = [0.80, 0.76, 0.68];

    // spots in leaf-local coordinates
    let mut spots = Vec::new();
    if m > 0 {
        let count = 2 + m;
        let radius = e * (0.03 + 0.025 * m as f32);
        while spots.len() < count {
            let u = rng.random_range(-0.7f32..0.7) * a;
            let v = rng.random_range(-0.7f32..0.7) * b;
            if (u / a).powi(2) + (v / b).powi(2) <= 0.49 {
                spots.push((u, v, radius));
            }
        }
    }
    let spot_color = if m % 2 == 1 {
        hsv(30.0 + 40.0 * m as f32, 0.8, 0.22)
    } else {
        hsv(50.0 + 40.0 * m as f32, 0.3, 0.97)
    };

    let mut img = RgbImage::new(spec.extent as u32, spec.extent as u32);
    for py in 0..spec.extent {
        for px in 0..spec.extent {
            let dx = px as f32 + 0.5 - cx;
            let dy = py as f32 + 0.5 - cy;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let mut rgb = if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                let on_spot = spots
                    .iter()
                    .any(|&(su, sv, r)| (u - su).powi(2) + (v - sv).powi(2) <= r * r);
                if on_spot {
                    spot_color
                } else {
                    leaf
                }
            } else {
                background
            };
            let noise = rng.random_range(-0.02f32..0.02);
            for c in rgb.iter_mut() {
                *c = (*c * brightness + noise).clamp(0.0, 1.0);
            }
            img.put_pixel(
                px as u32,
                py as u32,
                Rgb(rgb.map(|c| (c * 255.0).round() as u8)),
            );
        }
    }
    img
}

/// Render the whole dataset in memory, in pair-directory layout order.
pub fn render_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticImage>> {
    spec.validate()?;
    let mut out = Vec::new();
    for k in 0..spec.species {
        for m in 0..spec.diseases {
            if !spec.allows(k, m) {
                continue;
            }
            let species = SyntheticSpec::species_name(k);
            let disease = SyntheticSpec::disease_name(m);
            let dir = format!("{species}{PAIR_SEPARATOR}{disease}");
            for i in 0..spec.images_per_pair {
                let img = render(spec, k, m, i);
                let mut png = Vec::new();
                img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
                    .map_err(|e| Error::Dataset(format!("encoding synthetic image: {e}")))?;
                out.push(SyntheticImage {
                    rel_path: Path::new(&dir).join(format!("img{i:04}.png")),
                    species: species.clone(),
                    disease: disease.clone(),
                    png,
                });
            }
        }
    }
    Ok(out)
}

/// Write the synthetic dataset under `out_dir` and return its manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let images = render_synthetic(spec)?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let path = out_dir.join(&img.rel_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(&path, &img.png)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        entries.push(ManifestEntry {
            path,
            species: img.species,
            disease: img.disease,
        });
    }
    Ok(DatasetManifest::new(entries))
}
