//! Contrastive sample construction: candidate selection, clustering,
//! the memory bank and diffusion-noised negatives.

pub mod bank;
pub mod diffusion;
pub mod kmeans;
pub mod select;

pub use bank::{MemoryBank, MemoryBankEntry};
pub use diffusion::{diffuse, diffuse_chain, diffuse_with_noise, DiffusionSchedule};
pub use kmeans::{assign_cluster, kmeans_fit, KMeans};
pub use select::{
    add_diffused_negatives, select_contrastive, BatchRow, CandidatePool, ContrastiveSet,
    DiffusedNegative, PoolItem, Provenance,
};
