//! Meta-configuration → explicit configuration compiler.

mod full;
mod meta;
mod pipeline;
mod transforms;
mod weighting;

pub use full::{ConfigError, FullConfig};
pub use meta::{
    load_meta, parse_corpus_stats, AdapterSpec, AllocationSettings, AutoencoderSpec, CorpusProbe,
    FsCorpus, LinkCosts, LoadError, LoadedMeta, MemoryCorpus, MetaConfig, NoiseKind,
};
pub use pipeline::{generate, GenerateError, Stage};
pub use transforms::{assign_adapters, assign_transforms, FILTER, PREFIX, SUBWORD};
pub use weighting::{assign_curriculum, compute_weights, CurriculumStage, WeightError};
