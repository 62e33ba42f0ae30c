//! Training: losses, optimizer, pseudo color encoding, pseudo ground-truth
//! providers and the extrapolation schedule.

pub mod adam;
pub mod config;
pub mod encoder;
pub mod losses;
pub mod objective;
pub mod optim;
pub mod provider;
pub mod schedule;

pub use adam::{Adam, AdamConfig};
pub use config::{LearningRates, LossWeights, TrainConfig};
pub use encoder::{EncodeCache, PseudoColorEncoder, ENCODER_HIDDEN};
pub use losses::{l1_with_grad, loss_nll, loss_photometric, NllTerms, PhotometricTerms, BCE_EPS, LOG_EPS};
pub use objective::{total_loss, LossOutput, LossTerms, TrainItem};
pub use optim::SceneOptimizer;
pub use provider::{checked_generate, BiasProvider, IdentityProvider, MaskedNoiseProvider, PseudoGtProvider};
pub use schedule::{mean_psnr, mean_psnr_against, phase_at, run_schedule, shifts_at, IterationLog, Phase, Trainer};

#[cfg(test)]
mod tests;
