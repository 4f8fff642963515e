//! Randomized label-space and metric checks shared by the property and
//! acceptance suites.

use std::collections::BTreeSet;

use gsmo_core::data::{DatasetManifest, ManifestEntry};
use gsmo_core::labels::{build_spaces, JointLabelSpace, LabelSpace};
use gsmo_core::metrics::{confusion, joint_eval, scores, TargetScores};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;

/// Random manifest; with `full` every species carries every disease.
pub fn random_manifest(seed: u64, full: bool) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let species = rng.random_range(1..=8usize);
    let diseases = rng.random_range(1..=8usize);
    let mut entries = Vec::new();
    for s in 0..species {
        for d in 0..diseases {
            if !full && rng.random_bool(0.5) && !(s == 0 && d == 0) {
                continue;
            }
            for i in 0..rng.random_range(1..=3) {
                entries.push(ManifestEntry {
                    path: format!("sp{s}___dz{d}/{i}.png").into(),
                    species: format!("sp{s}"),
                    disease: format!("dz{d}"),
                });
            }
        }
    }
    entries.shuffle(&mut rng);
    DatasetManifest::new(entries)
}

/// Every observed pair joins to a unique ordinal that splits back to it;
/// every ordinal splits to an observed pair.
pub fn check_bijection(manifest: &DatasetManifest, full: bool) -> Result<(), String> {
    let (space, compat) = build_spaces(manifest).map_err(|e| e.to_string())?;
    let observed: BTreeSet<(usize, usize)> = manifest
        .entries()
        .iter()
        .map(|e| {
            (
                space.plant().ordinal(&e.species).unwrap(),
                space.disease().ordinal(&e.disease).unwrap(),
            )
        })
        .collect();
    if space.len() != observed.len() {
        return Err(format!(
            "{} joint classes for {} observed pairs",
            space.len(),
            observed.len()
        ));
    }
    let mut seen = BTreeSet::new();
    for &(p, d) in &observed {
        let j = space
            .join(p, d)
            .map_err(|e| e.to_string())?
            .ok_or(format!("observed pair ({p}, {d}) does not join"))?;
        if space.split(j).map_err(|e| e.to_string())? != (p, d) {
            return Err(format!("({p}, {d}) -> {j} does not round-trip"));
        }
        if !seen.insert(j) {
            return Err(format!("ordinal {j} assigned twice"));
        }
        if !compat.get(p, d) {
            return Err(format!("compatibility misses ({p}, {d})"));
        }
    }
    for j in 0..space.len() {
        let (p, d) = space.split(j).map_err(|e| e.to_string())?;
        if space.join(p, d).map_err(|e| e.to_string())? != Some(j) {
            return Err(format!("ordinal {j} does not round-trip"));
        }
    }
    for p in 0..space.plant().len() {
        for d in 0..space.disease().len() {
            let joined = space.join(p, d).map_err(|e| e.to_string())?;
            if joined.is_some() != observed.contains(&(p, d)) {
                return Err(format!("unobserved pair ({p}, {d}) joined"));
            }
        }
    }
    if compat.count_true() != observed.len() {
        return Err("compatibility count differs from observed pairs".into());
    }
    if full && space.len() != space.worst_case_len() {
        return Err(format!(
            "full product gave {} joint classes, expected {}",
            space.len(),
            space.worst_case_len()
        ));
    }
    Ok(())
}

pub struct PredictionCase {
    pub space: JointLabelSpace,
    pub truth: Vec<(usize, usize)>,
    pub pred: Vec<(usize, usize)>,
}

/// Random joint truths and predictions with at most 20 joint classes and 1000 samples.
/// Predictions may fall on unobserved pairs.
pub fn random_case(seed: u64) -> PredictionCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kp = rng.random_range(1..=5usize);
    let kd = rng.random_range(1..=4usize);
    let names =
        |p: &str, k: usize| LabelSpace::new((0..k).map(|i| format!("{p}{i}")).collect()).unwrap();
    let mut all: Vec<(usize, usize)> = (0..kp).flat_map(|p| (0..kd).map(move |d| (p, d))).collect();
    all.shuffle(&mut rng);
    let kept = rng.random_range(1..=all.len());
    let mut pairs = all[..kept].to_vec();
    pairs.sort_unstable();
    let n = rng.random_range(1..=1000usize);
    // Skewed predictions: mostly right, sometimes anything.
    let accuracy = rng.random_range(0.0..1.0);
    let truth: Vec<(usize, usize)> = (0..n)
        .map(|_| pairs[rng.random_range(0..pairs.len())])
        .collect();
    let pred = truth
        .iter()
        .map(|&(p, d)| {
            let p = if rng.random_bool(accuracy) {
                p
            } else {
                rng.random_range(0..kp)
            };
            let d = if rng.random_bool(accuracy) {
                d
            } else {
                rng.random_range(0..kd)
            };
            (p, d)
        })
        .collect();
    PredictionCase {
        space: JointLabelSpace::new(names("p", kp), names("d", kd), pairs).unwrap(),
        truth,
        pred,
    }
}

fn compare(target: &str, got: &TargetScores, want: &oracle::OracleScores) -> Result<(), String> {
    let pairs = [
        ("accuracy", got.accuracy, want.accuracy),
        ("precision", got.precision, want.precision),
        ("recall", got.recall, want.recall),
        ("f1", got.f1, want.f1),
        ("fpr", got.fpr, want.fpr),
    ];
    for (name, g, w) in pairs {
        if (g - w).abs() > 1e-12 {
            return Err(format!("{target} {name}: {g} vs oracle {w}"));
        }
    }
    Ok(())
}

/// Library metrics against the brute-force oracle, plus the joint-accuracy bound.
pub fn check_case(case: &PredictionCase) -> Result<(), String> {
    let report = joint_eval(&case.truth, &case.pred, &case.space).map_err(|e| e.to_string())?;
    let kp = case.space.plant().len();
    let kd = case.space.disease().len();
    let col =
        |v: &[(usize, usize)], f: fn(&(usize, usize)) -> usize| v.iter().map(f).collect::<Vec<_>>();
    let (tp, pp) = (col(&case.truth, |x| x.0), col(&case.pred, |x| x.0));
    let (td, pd) = (col(&case.truth, |x| x.1), col(&case.pred, |x| x.1));
    compare("plant", &report.plant, &oracle::scores(&tp, &pp, kp))?;
    compare("disease", &report.disease, &oracle::scores(&td, &pd, kd))?;

    // Joint classes by linear search; unobserved predictions share one extra class.
    let code = |x: &(usize, usize)| {
        case.space
            .pairs()
            .iter()
            .position(|p| p == x)
            .unwrap_or(case.space.len())
    };
    let tj: Vec<usize> = case.truth.iter().map(code).collect();
    let pj: Vec<usize> = case.pred.iter().map(code).collect();
    compare(
        "both",
        &report.both,
        &oracle::scores(&tj, &pj, case.space.len() + 1),
    )?;
    let both_by_hand = case
        .truth
        .iter()
        .zip(&case.pred)
        .filter(|(t, p)| t == p)
        .count() as f64
        / case.truth.len() as f64;
    if (report.both.accuracy - both_by_hand).abs() > 1e-12 {
        return Err(format!(
            "both accuracy {} vs {both_by_hand}",
            report.both.accuracy
        ));
    }
    if report.both.accuracy > report.plant.accuracy.min(report.disease.accuracy) {
        return Err(format!(
            "both accuracy {} exceeds min(plant {}, disease {})",
            report.both.accuracy, report.plant.accuracy, report.disease.accuracy
        ));
    }

    // Single-target confusion with up to 20 classes.
    let k = kp * kd;
    let flat_t: Vec<usize> = case.truth.iter().map(|&(p, d)| p * kd + d).collect();
    let flat_p: Vec<usize> = case.pred.iter().map(|&(p, d)| p * kd + d).collect();
    let cm = confusion(&flat_t, &flat_p, k).map_err(|e| e.to_string())?;
    compare("flat", &scores(&cm), &oracle::scores(&flat_t, &flat_p, k))?;
    for c in 0..k {
        let truth_count = flat_t.iter().filter(|&&t| t == c).count() as u64;
        if cm.row_sum(c) != truth_count {
            return Err(format!(
                "class {c}: TP+FN {} vs {truth_count} true samples",
                cm.row_sum(c)
            ));
        }
    }
    Ok(())
}
