//! Synthetic source and target benchmark domains.

pub mod dataset;
pub mod domain;
pub mod pcfile;
pub mod scan;
pub mod shapes;

pub use dataset::{
    gen_dataset, AccessLog, Dataset, DatasetManifest, DatasetRequest, Domain, LabeledSample,
    PartialSource, Sample, Split, SplitCounts,
};
pub use domain::{apply_domain, DomainSpec};
pub use scan::{virtual_scan, Occlusion, ScanConfig};
pub use shapes::{make_complete_shape, Category, ShapeSpec};
