//! Instance-field training: losses with analytic gradients, the optimizer
//! and the training loops for instance logits and radiance.

mod adam;
mod backprop;
mod footprint;
mod loss;
mod radiance;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backprop::{backprop_appearance, backprop_ray, GradientBuffer};
pub use footprint::RayFootprint;
pub use loss::{
    appearance_loss, depth_similarity, instance_loss, pair_weights, regularization_loss, LossGrad,
    Normalization, RegPatch,
};
pub use radiance::{fit_radiance, RadianceConfig, RadianceLogRecord};
pub use train::{
    train_instance_field, FootprintCache, LogRecord, TrainConfig, TrainOutcome, TrainView,
};
