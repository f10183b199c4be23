//! Paired image-to-image translation with adversarial, cycle-consistency and
//! cyclic-synthesized losses.
//!
//! Two generators (`G_AB`, `G_BA`) translate between image domains A and B; two
//! PatchGAN discriminators (`D_A`, `D_B`) score realism per patch. The
//! cyclic-synthesized loss ties each generator's output on a real image to its
//! output on the other generator's synthesized image.

pub mod data;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod objectives;
pub mod trainer;

pub use data::{
    from_model_range, load_paired_dataset, load_paired_dataset_with, to_model_range,
    DatasetOptions, ImagePair, ImageTensor, Layout, PairedBatch, PairedDataset, PixelRange, Split,
};
pub use error::{Error, Result};
pub use metrics::{MetricKind, MetricReport};
pub use networks::{
    Direction, DiscriminatorConfig, GeneratorConfig, Identity, ModelBundle, ModelConfig,
    Precision, Translator,
};
pub use objectives::{LossBreakdown, LossWeights, Method, ObjectiveSpec};
pub use trainer::{Checkpoint, TrainConfig, Trainer};
