//! Data plumbing: truth-table categorization, the preprocessing chain,
//! subset assembly, train/test splitting, the synthetic renderer, and the
//! on-disk dataset cache.

pub mod cache;
pub mod catalog;
pub mod preprocess;
pub mod subset;
pub mod synth;

pub use cache::{load_dataset, save_dataset, DatasetCache};
pub use catalog::{categorize, Catalog, CatalogRow, Category, ColumnAliases, ResolvedColumns};
pub use preprocess::{augment_rotate, preprocess, preprocess_raw};
pub use subset::{build_subset, split, stratified_split_indices, ImageSource, LabeledDataset, SubsetSpec};
pub use synth::{synth_dataset, synth_galaxy, synth_galaxy_noisy, DEFAULT_NOISE_SIGMA};
