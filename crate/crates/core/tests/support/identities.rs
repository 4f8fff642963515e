//! Special cases of the weighted stacked loss against the simpler models'
//! own losses, with parameters shared.

use gsmo_core::autodiff::{Mode, Tape};
use gsmo_core::models::{HeadKind, ModelParams, ParamGroup};
use gsmo_core::training::{total_loss, BalanceWeights, TrainTargets};
use gsmo_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grads::{random_tensor, small_config, small_spaces};

fn loss_bits(
    model: &ModelParams,
    images: &Tensor,
    targets: &TrainTargets,
    w: &BalanceWeights,
    mode: Mode,
) -> u32 {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, images, mode).unwrap();
    let l = total_loss(&mut tape, &pass.outputs, targets, w).unwrap();
    tape.value(l).item().unwrap().to_bits()
}

/// Checks (1,0,1,0) against multi-output, (1,0,0,0) against single-plant and
/// (0,0,1,0) against single-disease, in both modes. Returns one line per comparison.
pub fn reduction_identities(seed: u64, batch: usize) -> Result<Vec<String>, String> {
    let spaces = small_spaces();
    let cfg = small_config(16);
    let gsmo = ModelParams::init(HeadKind::Gsmo, &cfg, &spaces, seed).unwrap();
    let derived = |kind: HeadKind, groups: &[ParamGroup]| {
        let mut m = ModelParams::init(kind, &cfg, &spaces, seed.wrapping_add(99)).unwrap();
        m.load_groups_from(&gsmo, groups).unwrap();
        m
    };
    let multi = derived(
        HeadKind::MultiOutput,
        &[
            ParamGroup::Backbone,
            ParamGroup::PlantBranch,
            ParamGroup::DiseaseBranch,
        ],
    );
    let plant = derived(
        HeadKind::SinglePlant,
        &[ParamGroup::Backbone, ParamGroup::PlantBranch],
    );
    let disease = derived(
        HeadKind::SingleDisease,
        &[ParamGroup::Backbone, ParamGroup::DiseaseBranch],
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = random_tensor(&mut rng, &[batch, 16, 16, 3], 1.0);
    let pl: Vec<usize> = (0..batch).map(|i| (i + seed as usize) % 3).collect();
    let dl: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % 2).collect();
    let targets = TrainTargets::new(&pl, &dl, &spaces).unwrap();
    let any = BalanceWeights::UNWEIGHTED;
    let cases = [
        (
            "(1,0,1,0) vs multi-output",
            BalanceWeights::new(1.0, 0.0, 1.0, 0.0),
            &multi,
        ),
        (
            "(1,0,0,0) vs single-plant",
            BalanceWeights::new(1.0, 0.0, 0.0, 0.0),
            &plant,
        ),
        (
            "(0,0,1,0) vs single-disease",
            BalanceWeights::new(0.0, 0.0, 1.0, 0.0),
            &disease,
        ),
    ];
    let mut lines = Vec::new();
    for mode in [Mode::Train, Mode::Eval] {
        for (name, w, other) in &cases {
            let a = loss_bits(&gsmo, &images, &targets, w, mode);
            let b = loss_bits(other, &images, &targets, &any, mode);
            if a != b {
                return Err(format!(
                    "{name} ({mode:?}): {} vs {}",
                    f32::from_bits(a),
                    f32::from_bits(b)
                ));
            }
            lines.push(format!(
                "{name} ({mode:?}): {} bit-identical",
                f32::from_bits(a)
            ));
        }
    }
    Ok(lines)
}
