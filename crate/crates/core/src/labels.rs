//! Species / disease label spaces and the power-set joint encoding.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered set of distinct label names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Label(format!("duplicate label {name:?}")));
            }
        }
        Ok(LabelSpace { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, ordinal: usize) -> Option<&str> {
        self.names.get(ordinal).map(String::as_str)
    }

    pub fn ordinal(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSpace::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.names
    }
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    plant: LabelSpace,
    disease: LabelSpace,
    pairs: Vec<(usize, usize)>,
}

/// Plant and disease spaces plus the observed (plant, disease) pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct JointLabelSpace {
    plant: LabelSpace,
    disease: LabelSpace,
    pairs: Vec<(usize, usize)>,
    pair_index: HashMap<(usize, usize), usize>,
}

impl TryFrom<JointRepr> for JointLabelSpace {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        JointLabelSpace::new(r.plant, r.disease, r.pairs)
    }
}

impl From<JointLabelSpace> for JointRepr {
    fn from(s: JointLabelSpace) -> Self {
        JointRepr {
            plant: s.plant,
            disease: s.disease,
            pairs: s.pairs,
        }
    }
}

impl JointLabelSpace {
    pub fn new(plant: LabelSpace, disease: LabelSpace, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut pair_index = HashMap::with_capacity(pairs.len());
        for (j, &(p, d)) in pairs.iter().enumerate() {
            if p >= plant.len() || d >= disease.len() {
                return Err(Error::Label(format!(
                    "pair ({p}, {d}) out of range for {}×{} labels",
                    plant.len(),
                    disease.len()
                )));
            }
            if pair_index.insert((p, d), j).is_some() {
                return Err(Error::Label(format!("duplicate pair ({p}, {d})")));
            }
        }
        Ok(JointLabelSpace {
            plant,
            disease,
            pairs,
            pair_index,
        })
    }

    pub fn plant(&self) -> &LabelSpace {
        &self.plant
    }

    pub fn disease(&self) -> &LabelSpace {
        &self.disease
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of joint classes.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Size of the joint space if every combination were possible.
    pub fn worst_case_len(&self) -> usize {
        self.plant.len() * self.disease.len()
    }

    /// Joint ordinal of `(plant, disease)`, or `None` when the pair was never observed.
    pub fn join(&self, plant: usize, disease: usize) -> Result<Option<usize>> {
        if plant >= self.plant.len() || disease >= self.disease.len() {
            return Err(Error::Label(format!(
                "ordinals ({plant}, {disease}) out of range for {}×{} labels",
                self.plant.len(),
                self.disease.len()
            )));
        }
        Ok(self.pair_index.get(&(plant, disease)).copied())
    }

    pub fn split(&self, joint: usize) -> Result<(usize, usize)> {
        self.pairs.get(joint).copied().ok_or_else(|| {
            Error::Label(format!(
                "joint ordinal {joint} out of range for {} pairs",
                self.pairs.len()
            ))
        })
    }

    /// Lookup by names, e.g. `("Apple", "Black_rot")`.
    pub fn join_names(&self, plant: &str, disease: &str) -> Option<usize> {
        let p = self.plant.ordinal(plant)?;
        let d = self.disease.ordinal(disease)?;
        self.pair_index.get(&(p, d)).copied()
    }

    pub fn pair_name(&self, joint: usize) -> Option<String> {
        let (p, d) = *self.pairs.get(joint)?;
        Some(format!("{} {}", self.plant.names[p], self.disease.names[d]))
    }

    pub fn compatibility(&self) -> CompatibilityMatrix {
        let mut cells = vec![false; self.worst_case_len()];
        for &(p, d) in &self.pairs {
            cells[p * self.disease.len() + d] = true;
        }
        CompatibilityMatrix {
            plants: self.plant.len(),
            diseases: self.disease.len(),
            cells,
        }
    }
}

/// Which species/disease combinations occur in a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityMatrix {
    plants: usize,
    diseases: usize,
    cells: Vec<bool>,
}

impl CompatibilityMatrix {
    pub fn get(&self, plant: usize, disease: usize) -> bool {
        self.cells[plant * self.diseases + disease]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.plants, self.diseases)
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn rows(&self) -> Vec<Vec<bool>> {
        self.cells
            .chunks(self.diseases)
            .map(<[bool]>::to_vec)
            .collect()
    }
}

/// Build the label spaces from a manifest.
///
/// Names are ordered lexicographically; pairs by (plant, disease) ordinal.
pub fn build_spaces(manifest: &DatasetManifest) -> Result<(JointLabelSpace, CompatibilityMatrix)> {
    if manifest.is_empty() {
        return Err(Error::Dataset("manifest has no entries".into()));
    }
    let mut plants = BTreeSet::new();
    let mut diseases = BTreeSet::new();
    for e in manifest.entries() {
        if e.species.is_empty() || e.disease.is_empty() {
            return Err(Error::Label(format!(
                "sample {} has an empty label",
                e.path.display()
            )));
        }
        plants.insert(e.species.as_str());
        diseases.insert(e.disease.as_str());
    }
    let plant = LabelSpace::new(plants.into_iter().map(str::to_owned).collect())?;
    let disease = LabelSpace::new(diseases.into_iter().map(str::to_owned).collect())?;
    let pairs: BTreeSet<(usize, usize)> = manifest
        .entries()
        .iter()
        .map(|e| {
            (
                plant.ordinal(&e.species).unwrap(),
                disease.ordinal(&e.disease).unwrap(),
            )
        })
        .collect();
    let space = JointLabelSpace::new(plant, disease, pairs.into_iter().collect())?;
    let compat = space.compatibility();
    Ok((space, compat))
}

/// A 1×`size` row with a single 1.0 at `ordinal`.
pub fn one_hot(ordinal: usize, size: usize) -> Result<Tensor> {
    one_hot_rows(&[ordinal], size)
}

/// One row per ordinal.
pub fn one_hot_rows(ordinals: &[usize], size: usize) -> Result<Tensor> {
    let mut data = vec![0.0f32; ordinals.len() * size];
    for (r, &o) in ordinals.iter().enumerate() {
        if o >= size {
            return Err(Error::Label(format!(
                "ordinal {o} out of range for {size} classes"
            )));
        }
        data[r * size + o] = 1.0;
    }
    Tensor::new(vec![ordinals.len(), size], data)
}
