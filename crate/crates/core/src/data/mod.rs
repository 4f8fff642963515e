//! Dataset manifests, image ingestion, splitting and batching.

mod image_io;
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{build_spaces, JointLabelSpace};
use crate::tensor::Tensor;

pub use image_io::{bilinear_resize, decode_and_resize, decode_rgb};
pub use synthetic::{
    generate_synthetic, render_synthetic, Compatibility, SyntheticImage, SyntheticSpec,
};

/// Directory separator between species and disease in pair-directory layout.
pub const PAIR_SEPARATOR: &str = "___";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub species: String,
    pub disease: String,
}

/// Every sample of a dataset with its two labels, ordered by path.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(mut entries: Vec<ManifestEntry>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        DatasetManifest { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sub-manifest with the given entries, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// Write as `path,species,disease` CSV; paths are made relative to `base` when possible.
    pub fn write_csv(&self, path: &Path, base: Option<&Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        w.write_record(["path", "species", "disease"])
            .and_then(|_| {
                for e in &self.entries {
                    let p = base
                        .and_then(|b| e.path.strip_prefix(b).ok())
                        .unwrap_or(&e.path);
                    w.write_record([&p.to_string_lossy(), e.species.as_str(), e.disease.as_str()])?;
                }
                w.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `<root>/<Species>___<Disease>/<image>`
    Pairdir,
    /// `path,species,disease` table; `root` is the CSV file or a directory holding `manifest.csv`.
    Csv,
}

/// Split a pair-directory name such as `Tomato___Late_blight`.
pub fn parse_pair_dir(name: &str) -> Result<(String, String)> {
    match name.split_once(PAIR_SEPARATOR) {
        Some((s, d)) if !s.is_empty() && !d.is_empty() => Ok((s.to_owned(), d.to_owned())),
        _ => Err(Error::Dataset(format!(
            "directory name {name:?} is not <Species>{PAIR_SEPARATOR}<Disease>"
        ))),
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm")
    )
}

pub fn load_manifest(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    if !root.exists() {
        return Err(Error::Dataset(format!("{} does not exist", root.display())));
    }
    let manifest = match layout {
        Layout::Pairdir => load_pairdir(root)?,
        Layout::Csv => load_csv(root)?,
    };
    if manifest.is_empty() {
        return Err(Error::Dataset(format!(
            "no samples found under {}",
            root.display()
        )));
    }
    Ok(manifest)
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for entry in rd {
        out.push(
            entry
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
                .path(),
        );
    }
    out.sort();
    Ok(out)
}

fn load_pairdir(root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let (species, disease) = parse_pair_dir(&name)?;
        for file in sorted_dir(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
        {
            entries.push(ManifestEntry {
                path: file,
                species: species.clone(),
                disease: disease.clone(),
            });
        }
    }
    Ok(DatasetManifest::new(entries))
}

fn load_csv(root: &Path) -> Result<DatasetManifest> {
    let file = if root.is_dir() {
        root.join("manifest.csv")
    } else {
        root.to_path_buf()
    };
    let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut rdr = csv::Reader::from_path(&file)
        .map_err(|e| Error::Dataset(format!("{}: {e}", file.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: {e}", file.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("{}: missing column {name:?}", file.display())))
    };
    let (cp, cs, cd) = (col("path")?, col("species")?, col("disease")?);
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec =
            rec.map_err(|e| Error::Dataset(format!("{} row {}: {e}", file.display(), i + 1)))?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_owned();
        let rel = PathBuf::from(field(cp));
        let path = if rel.is_absolute() {
            rel
        } else {
            base.join(rel)
        };
        if !path.exists() {
            return Err(Error::Dataset(format!("{} does not exist", path.display())));
        }
        entries.push(ManifestEntry {
            path,
            species: field(cs),
            disease: field(cd),
        });
    }
    Ok(DatasetManifest::new(entries))
}

/// Train / validation / test fractions plus the shuffling seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be >= 0, got {r:?}"
            )));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder allocation of `n` items over the three ratios; ties favour train.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified split by joint (species, disease) class.
pub fn stratified_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut classes: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries().iter().enumerate() {
        classes
            .entry((e.species.as_str(), e.disease.as_str()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split::default();
    for members in classes.values_mut() {
        members.shuffle(&mut rng);
        let [tr, va, _] = allocate(members.len(), [spec.train, spec.val, spec.test]);
        split.train.extend_from_slice(&members[..tr]);
        split.val.extend_from_slice(&members[tr..tr + va]);
        split.test.extend_from_slice(&members[tr + va..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Seeded shuffle of `indices` cut into batches of `batch_size` (last one may be short).
pub fn batch_indices(indices: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if indices.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot batch an empty index set".into(),
        ));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub plant: Vec<usize>,
    pub disease: Vec<usize>,
}

/// Decoded images plus ordinal labels for every manifest entry.
#[derive(Clone, Debug)]
pub struct Dataset {
    manifest: DatasetManifest,
    spaces: JointLabelSpace,
    images: Tensor,
    plant: Vec<usize>,
    disease: Vec<usize>,
}

impl Dataset {
    /// Decode every entry at `extent`×`extent`. Label spaces are built from the
    /// manifest unless given (e.g. from a checkpoint).
    pub fn load(
        manifest: DatasetManifest,
        spaces: Option<JointLabelSpace>,
        extent: usize,
    ) -> Result<Self> {
        let spaces = match spaces {
            Some(s) => s,
            None => build_spaces(&manifest)?.0,
        };
        let decoded: Vec<Tensor> = manifest
            .entries()
            .par_iter()
            .map(|e| decode_and_resize(&e.path, extent))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(decoded.len() * extent * extent * 3);
        for t in &decoded {
            data.extend_from_slice(t.data());
        }
        let images = Tensor::new(vec![manifest.len(), extent, extent, 3], data)?;
        Self::from_parts(manifest, spaces, images)
    }

    /// Assemble from already-decoded images (N×E×E×3, manifest order).
    pub fn from_parts(
        manifest: DatasetManifest,
        spaces: JointLabelSpace,
        images: Tensor,
    ) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != manifest.len() {
            return Err(Error::Shape(format!(
                "images {:?} do not match {} manifest entries",
                images.shape(),
                manifest.len()
            )));
        }
        let mut plant = Vec::with_capacity(manifest.len());
        let mut disease = Vec::with_capacity(manifest.len());
        for e in manifest.entries() {
            let p = spaces.plant().ordinal(&e.species).ok_or_else(|| {
                Error::LabelMismatch(format!("species {:?} not in label space", e.species))
            })?;
            let d = spaces.disease().ordinal(&e.disease).ok_or_else(|| {
                Error::LabelMismatch(format!("disease {:?} not in label space", e.disease))
            })?;
            plant.push(p);
            disease.push(d);
        }
        Ok(Dataset {
            manifest,
            spaces,
            images,
            plant,
            disease,
        })
    }

    pub fn len(&self) -> usize {
        self.plant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plant.is_empty()
    }

    pub fn extent(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn spaces(&self) -> &JointLabelSpace {
        &self.spaces
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn plant_labels(&self) -> &[usize] {
        &self.plant
    }

    pub fn disease_labels(&self) -> &[usize] {
        &self.disease
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            indices: indices.to_vec(),
            images: self.images.select_rows(indices)?,
            plant: indices.iter().map(|&i| self.plant[i]).collect(),
            disease: indices.iter().map(|&i| self.disease[i]).collect(),
        })
    }

    /// One epoch of seeded batches over `indices`.
    pub fn batches<'a>(
        &'a self,
        indices: &[usize],
        batch_size: usize,
        seed: u64,
    ) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
        let plan = batch_indices(indices, batch_size, seed)?;
        Ok(plan.into_iter().map(move |b| self.batch(&b)))
    }

    /// Fixed-order batches, for evaluation.
    pub fn ordered_batches<'a>(
        &'a self,
        indices: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = Result<Batch>> + 'a {
        indices
            .chunks(batch_size.max(1))
            .map(move |b| self.batch(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub species: String,
    pub disease: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub species: Vec<String>,
    pub diseases: Vec<String>,
    pub matrix: Vec<Vec<bool>>,
}

/// Class distributions of a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub species: BTreeMap<String, usize>,
    pub diseases: BTreeMap<String, usize>,
    pub pairs: Vec<PairCount>,
    pub compatibility: CompatibilityReport,
}

pub fn dataset_stats(manifest: &DatasetManifest) -> Result<DatasetStats> {
    let (space, compat) = build_spaces(manifest)?;
    let mut species = BTreeMap::new();
    let mut diseases = BTreeMap::new();
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for e in manifest.entries() {
        *species.entry(e.species.clone()).or_default() += 1;
        *diseases.entry(e.disease.clone()).or_default() += 1;
        let key = (
            space.plant().ordinal(&e.species).unwrap(),
            space.disease().ordinal(&e.disease).unwrap(),
        );
        *pairs.entry(key).or_default() += 1;
    }
    Ok(DatasetStats {
        samples: manifest.len(),
        species,
        diseases,
        pairs: pairs
            .into_iter()
            .map(|((p, d), count)| PairCount {
                species: space.plant().names()[p].clone(),
                disease: space.disease().names()[d].clone(),
                count,
            })
            .collect(),
        compatibility: CompatibilityReport {
            species: space.plant().names().to_vec(),
            diseases: space.disease().names().to_vec(),
            matrix: compat.rows(),
        },
    })
}
