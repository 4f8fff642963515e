//! Instrumented runs for the stopping rule.

use gsmo_core::models::{HeadKind, ModelParams};
use gsmo_core::training::{fit, BalanceWeights, FitOptions, FitOutcome, TrainConfig};

use super::fixtures::{model_config, tiny};

/// Validation loss decreases through epoch `plateau_after`, then stays flat.
pub fn plateau_run(plateau_after: usize, config: &TrainConfig) -> FitOutcome {
    let fx = tiny();
    let cfg = model_config(8, 4, 8);
    let model =
        ModelParams::init(HeadKind::MultiOutput, &cfg, fx.data.spaces(), config.seed).unwrap();
    let forced = move |epoch: usize, _measured: f64| {
        if epoch <= plateau_after {
            100.0 - epoch as f64
        } else {
            100.0 - plateau_after as f64
        }
    };
    let options = FitOptions {
        val_loss_override: Some(&forced),
        stop_at_val_f1: None,
    };
    fit(
        model,
        config,
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
        &options,
    )
    .unwrap()
}
