//! Losses, the PI-regulated adversarial balance and the training
//! procedures that move a perception policy from the simulated render
//! domain to the shifted pseudo-real one.

mod augment;
mod losses;
mod pi;
mod train;

pub use augment::{augment, brightness_range, WHITE_BALANCE_RANGE};
pub use losses::{
    loss_confusion, loss_control, loss_discriminator, loss_encoder_adv, loss_perception_sup,
};
pub use pi::{PiController, DEFAULT_SETPOINT, GAMMA_MAX, INTEGRAL_CLAMP, K_I, K_P};
pub use train::{
    adapt_adt, adapt_confusion, adapt_supervised, finetune_e2e, mix_perception_gradients,
    pretrain_perception, train_control, AdaptConfig, AdtConfig, AdtOutcome, ControlTrainConfig,
    ControlTrainResult, E2EConfig, E2eDatasets, E2eOutcome, E2eVariant, PiMeasurement,
    PretrainConfig, PretrainResult, TrainLog, TrainLogRow,
};
