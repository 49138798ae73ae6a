//! On-disk benchmark: generation, manifest, loading and read auditing.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{cd, downsample_random, PointCloud};
use crate::rng::{derive_seed, rng};
use crate::synthetic::domain::{apply_domain, DomainSpec};
use crate::synthetic::pcfile;
use crate::synthetic::scan::{view_direction, virtual_scan, ScanConfig};
use crate::synthetic::shapes::{make_complete_shape, Category, ShapeSpec};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Samples per category in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPlan {
    pub counts: SplitCounts,
    pub domain: DomainSpec,
}

/// What `gen_dataset` should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRequest {
    pub seed: u64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Density of the surface sampling that is scanned; ground truth is a
    /// random `points`-subset of it.
    #[serde(default = "default_dense_points")]
    pub dense_points: usize,
    #[serde(default = "default_categories")]
    pub categories: Vec<Category>,
    pub source: DomainPlan,
    pub target: DomainPlan,
    #[serde(default)]
    pub scan: ScanConfig,
    /// Required ratio of the source/target partial gap to the resampling floor.
    #[serde(default = "default_gap_ratio")]
    pub min_gap_ratio: f64,
    #[serde(default = "default_gap_samples")]
    pub gap_check_samples: usize,
}

fn default_points() -> usize {
    2048
}
fn default_dense_points() -> usize {
    8192
}
fn default_categories() -> Vec<Category> {
    Category::ALL.to_vec()
}
fn default_gap_ratio() -> f64 {
    10.0
}
fn default_gap_samples() -> usize {
    4
}

impl DatasetRequest {
    /// Source: clean halfspace scans. Target: [`DomainSpec::scan_like`].
    pub fn benchmark(seed: u64, source: SplitCounts, target: SplitCounts) -> Self {
        Self {
            seed,
            points: default_points(),
            dense_points: default_dense_points(),
            categories: default_categories(),
            source: DomainPlan {
                counts: source,
                domain: DomainSpec::source(),
            },
            target: DomainPlan {
                counts: target,
                domain: DomainSpec::scan_like(),
            },
            scan: ScanConfig {
                output_points: default_points(),
                ..ScanConfig::default()
            },
            min_gap_ratio: default_gap_ratio(),
            gap_check_samples: default_gap_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::invalid("dataset request lists no categories"));
        }
        if self.points < 8 || self.dense_points < self.points {
            return Err(Error::invalid(
                "dataset request needs points >= 8 and dense_points >= points",
            ));
        }
        if self.scan.output_points != self.points {
            return Err(Error::invalid(format!(
                "scan output_points {} must equal points {}",
                self.scan.output_points, self.points
            )));
        }
        self.source.domain.validate()?;
        self.target.domain.validate()
    }

    fn plan(&self, d: Domain) -> &DomainPlan {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    pub category: Category,
    pub seed: u64,
    pub view_dir: [f64; 3],
    pub partial: String,
    pub partial_sha256: String,
    /// Ground truth; absent for unlabeled target records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete_sha256: Option<String>,
    /// Ground truth that may only be used for evaluation.
    #[serde(default)]
    pub eval_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Mean cd between source and target partials of the same shape and view.
    pub gap: f64,
    /// Mean cd between two source scans of the same shape and view.
    pub baseline: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub request: DatasetRequest,
    pub gap: GapReport,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn records(&self, domain: Domain, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples
            .iter()
            .filter(move |r| r.domain == domain && r.split == split)
    }

    /// Number of unlabeled target training clouds.
    pub fn target_train_count(&self) -> usize {
        self.records(Domain::Target, Split::Train).count()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::corrupt(
                path,
                format!("unsupported manifest format version {}", self.format_version),
            ));
        }
        let mut seeds = HashSet::new();
        for r in &self.samples {
            if !seeds.insert(r.seed) {
                return Err(Error::corrupt(path, format!("duplicate sample seed {}", r.seed)));
            }
            if r.domain == Domain::Target && r.split != Split::Test && r.complete.is_some() {
                return Err(Error::corrupt(
                    path,
                    format!("unlabeled target record {} carries ground truth", r.id),
                ));
            }
        }
        Ok(())
    }
}

/// In-memory copy of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    pub category: Category,
    pub partial: PointCloud,
    pub complete: Option<PointCloud>,
}

fn sample_seed(base: u64, domain: Domain, cat: Category, split: Split, index: usize) -> u64 {
    let tag = (domain as u64) << 56 | (cat as u64) << 48 | (split as u64) << 40 | index as u64;
    // TOML integers are signed 64-bit
    derive_seed(base, tag) >> 1
}

struct Generated {
    partial: PointCloud,
    complete: PointCloud,
    view_dir: [f64; 3],
}

fn generate_one(req: &DatasetRequest, domain: &DomainSpec, cat: Category, seed: u64, scan_seed: u64) -> Result<Generated> {
    let dense = make_complete_shape(&ShapeSpec::new(cat).with_points(req.dense_points), seed)?;
    let mut r = rng(derive_seed(seed, 100));
    let azimuth = r.gen_range(0.0..std::f64::consts::TAU);
    let elevation = r.gen_range(0.1..0.6f64);
    let c = dense.centroid();
    let dir = [
        elevation.cos() * azimuth.cos(),
        elevation.sin(),
        elevation.cos() * azimuth.sin(),
    ];
    let viewpoint = [c[0] + 3.0 * dir[0], c[1] + 3.0 * dir[1], c[2] + 3.0 * dir[2]];
    let scan = virtual_scan(&dense, viewpoint, domain.occlusion, &req.scan, scan_seed)?;
    let view_dir = view_direction(&dense, viewpoint)?;
    let partial = apply_domain(&scan.cloud, domain, view_dir, seed)?;
    let complete = domain.scale(&downsample_random(&dense, req.points, derive_seed(seed, 200))?)?;
    Ok(Generated {
        partial: partial.quantized_f32(),
        complete: complete.quantized_f32(),
        view_dir,
    })
}

/// Measures the source/target gap against the resampling floor on a few shapes.
pub fn measure_domain_gap(req: &DatasetRequest) -> Result<GapReport> {
    let mut gap = 0.0;
    let mut base = 0.0;
    let mut n = 0.0;
    for &cat in &req.categories {
        for i in 0..req.gap_check_samples.max(1) {
            let seed = derive_seed(req.seed ^ 0x6761_7063_6865_636b, (cat as u64) << 32 | i as u64);
            let src = generate_one(req, &req.source.domain, cat, seed, derive_seed(seed, 1))?;
            let again = generate_one(req, &req.source.domain, cat, seed, derive_seed(seed, 2))?;
            let tgt = generate_one(req, &req.target.domain, cat, seed, derive_seed(seed, 1))?;
            gap += cd(&src.partial, &tgt.partial)?;
            base += cd(&src.partial, &again.partial)?;
            n += 1.0;
        }
    }
    let (gap, baseline) = (gap / n, base / n);
    Ok(GapReport {
        gap,
        baseline,
        ratio: gap / baseline,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Generates every sample, writes clouds and `manifest.toml` under `root`.
///
/// Rejects the request when the measured domain gap does not exceed
/// `min_gap_ratio` times the resampling floor.
pub fn gen_dataset(req: &DatasetRequest, root: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Sample>)> {
    req.validate()?;
    let root = root.as_ref();
    let gap = measure_domain_gap(req)?;
    if !(gap.ratio > req.min_gap_ratio) {
        return Err(Error::Generation(format!(
            "target domain rejected: gap {:.3e} is only {:.2}x the resampling floor {:.3e} (need > {})",
            gap.gap, gap.ratio, gap.baseline, req.min_gap_ratio
        )));
    }
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        let plan = req.plan(domain);
        for &cat in &req.categories {
            for split in Split::ALL {
                for i in 0..plan.counts.get(split) {
                    let seed = sample_seed(req.seed, domain, cat, split, i);
                    let g = generate_one(req, &plan.domain, cat, seed, derive_seed(seed, 1))?;
                    let id = format!("{}-{}-{}-{:04}", domain.name(), split.name(), cat.name(), i);
                    let dir = format!("{}/{}/{}", domain.name(), split.name(), cat.name());
                    let partial_rel = format!("{dir}/{i:04}.partial.pc");
                    let pbytes = pcfile::encode(&g.partial);
                    write_file(root, &partial_rel, &pbytes)?;
                    let labeled = domain == Domain::Source || split == Split::Test;
                    let (complete, complete_sha256) = if labeled {
                        let rel = format!("{dir}/{i:04}.complete.pc");
                        let cbytes = pcfile::encode(&g.complete);
                        write_file(root, &rel, &cbytes)?;
                        (Some(rel), Some(sha256_hex(&cbytes)))
                    } else {
                        (None, None)
                    };
                    records.push(SampleRecord {
                        id: id.clone(),
                        domain,
                        split,
                        category: cat,
                        seed,
                        view_dir: g.view_dir,
                        partial: partial_rel,
                        partial_sha256: sha256_hex(&pbytes),
                        complete,
                        complete_sha256,
                        eval_only: domain == Domain::Target && labeled,
                    });
                    samples.push(Sample {
                        id,
                        domain,
                        split,
                        category: cat,
                        partial: g.partial,
                        complete: labeled.then_some(g.complete),
                    });
                }
            }
        }
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        request: req.clone(),
        gap,
        samples: records,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(root, MANIFEST_FILE, text.as_bytes())?;
    Ok((manifest, samples))
}

/// Whether a file holds a partial input or ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileKind {
    Partial,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccessRecord {
    pub path: PathBuf,
    pub domain: Domain,
    pub split: Split,
    pub kind: FileKind,
}

/// Shared log of every dataset file read.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<AccessRecord>>>);

impl AccessLog {
    fn push(&self, r: AccessRecord) {
        self.0.lock().expect("access log poisoned").push(r);
    }

    pub fn records(&self) -> Vec<AccessRecord> {
        self.0.lock().expect("access log poisoned").clone()
    }

    pub fn clear(&self) {
        self.0.lock().expect("access log poisoned").clear();
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.records().iter().filter(|r| r.domain == domain).count()
    }
}

/// A generated dataset opened from its manifest. All reads are logged.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    log: AccessLog,
}

impl Dataset {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
        manifest.validate(&path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            root,
            manifest,
            log: AccessLog::default(),
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn access_log(&self) -> &AccessLog {
        &self.log
    }

    fn read_checked(&self, rec: &SampleRecord, rel: &str, sha: &str, kind: FileKind) -> Result<PointCloud> {
        let path = self.root.join(rel);
        self.log.push(AccessRecord {
            path: path.clone(),
            domain: rec.domain,
            split: rec.split,
            kind,
        });
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != sha {
            return Err(Error::corrupt(&path, "checksum mismatch"));
        }
        pcfile::decode(&bytes, &path)
    }

    pub fn read_partial(&self, rec: &SampleRecord) -> Result<PointCloud> {
        self.read_checked(rec, &rec.partial, &rec.partial_sha256, FileKind::Partial)
    }

    pub fn read_complete(&self, rec: &SampleRecord) -> Result<PointCloud> {
        match (&rec.complete, &rec.complete_sha256) {
            (Some(rel), Some(sha)) => self.read_checked(rec, rel, sha, FileKind::Complete),
            _ => Err(Error::invalid(format!("record {} has no ground truth", rec.id))),
        }
    }

    /// Reads every file of every record.
    pub fn load_all(&self) -> Result<Vec<Sample>> {
        self.manifest
            .samples
            .iter()
            .map(|rec| {
                Ok(Sample {
                    id: rec.id.clone(),
                    domain: rec.domain,
                    split: rec.split,
                    category: rec.category,
                    partial: self.read_partial(rec)?,
                    complete: match rec.complete {
                        Some(_) => Some(self.read_complete(rec)?),
                        None => None,
                    },
                })
            })
            .collect()
    }

    /// Labeled samples of one split, for training or evaluation.
    pub fn labeled(&self, domain: Domain, split: Split) -> Result<Vec<LabeledSample>> {
        self.manifest
            .records(domain, split)
            .map(|rec| {
                if rec.complete.is_none() {
                    return Err(Error::invalid(format!(
                        "record {} has no ground truth; it cannot be used for evaluation",
                        rec.id
                    )));
                }
                Ok(LabeledSample {
                    category: rec.category,
                    partial: self.read_partial(rec)?,
                    complete: self.read_complete(rec)?,
                })
            })
            .collect()
    }

    /// Lazy, partial-only view of one split. Nothing is read until asked for.
    pub fn partials(&self, domain: Domain, split: Split) -> SplitPartials<'_> {
        let records: Vec<&SampleRecord> = self.manifest.records(domain, split).collect();
        let cache = RefCell::new(vec![None; records.len()]);
        SplitPartials {
            dataset: self,
            records,
            cache,
        }
    }
}

/// A partial cloud with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub category: Category,
    pub partial: PointCloud,
    pub complete: PointCloud,
}

/// Indexed access to unlabeled partial clouds.
pub trait PartialSource {
    fn len(&self) -> usize;
    fn partial(&self, index: usize) -> Result<PointCloud>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PartialSource for [PointCloud] {
    fn len(&self) -> usize {
        <[PointCloud]>::len(self)
    }

    fn partial(&self, index: usize) -> Result<PointCloud> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))
    }
}

impl PartialSource for Vec<PointCloud> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn partial(&self, index: usize) -> Result<PointCloud> {
        self.as_slice().partial(index)
    }
}

/// Partial clouds of one split, read from disk on first use and cached.
pub struct SplitPartials<'a> {
    dataset: &'a Dataset,
    records: Vec<&'a SampleRecord>,
    cache: RefCell<Vec<Option<PointCloud>>>,
}

impl PartialSource for SplitPartials<'_> {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn partial(&self, index: usize) -> Result<PointCloud> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        if let Some(c) = &self.cache.borrow()[index] {
            return Ok(c.clone());
        }
        let c = self.dataset.read_partial(rec)?;
        self.cache.borrow_mut()[index] = Some(c.clone());
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_request() -> DatasetRequest {
        let mut req = DatasetRequest::benchmark(
            5,
            SplitCounts { train: 2, val: 1, test: 1 },
            SplitCounts { train: 2, val: 1, test: 1 },
        );
        req.points = 256;
        req.dense_points = 1024;
        req.scan.output_points = 256;
        req.gap_check_samples = 1;
        req
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let req = tiny_request();
        let (manifest, samples) = gen_dataset(&req, dir.path()).unwrap();
        assert_eq!(manifest.samples.len(), 2 * 3 * 4);
        assert_eq!(manifest.target_train_count(), 6);
        let ds = Dataset::open(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ds.manifest(), &manifest);
        assert_eq!(ds.load_all().unwrap(), samples);
        assert!(manifest.gap.ratio > 10.0, "{:?}", manifest.gap);
    }

    #[test]
    fn unlabeled_target_records_have_no_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = gen_dataset(&tiny_request(), dir.path()).unwrap();
        for r in &manifest.samples {
            let labeled = r.domain == Domain::Source || r.split == Split::Test;
            assert_eq!(r.complete.is_some(), labeled, "{}", r.id);
            assert_eq!(r.eval_only, r.domain == Domain::Target && r.split == Split::Test);
        }
        let ds = Dataset::open(dir.path()).unwrap();
        assert!(ds.labeled(Domain::Target, Split::Train).is_err());
        assert_eq!(ds.labeled(Domain::Target, Split::Test).unwrap().len(), 3);
    }

    #[test]
    fn checksum_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = gen_dataset(&tiny_request(), dir.path()).unwrap();
        let rec = &manifest.samples[0];
        let path = dir.path().join(&rec.partial);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        fs::write(&path, bytes).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let err = ds.read_partial(rec).unwrap_err().to_string();
        assert!(err.contains(&rec.partial) && err.contains("checksum"), "{err}");
    }

    #[test]
    fn weak_domain_gap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut req = tiny_request();
        req.target.domain = req.source.domain;
        let err = gen_dataset(&req, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
    }

    #[test]
    fn split_partials_are_lazy_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        gen_dataset(&tiny_request(), dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let parts = ds.partials(Domain::Target, Split::Train);
        assert_eq!(parts.len(), 6);
        assert!(ds.access_log().records().is_empty());
        parts.partial(1).unwrap();
        parts.partial(1).unwrap();
        let log = ds.access_log().records();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].domain, Domain::Target);
        assert_eq!(log[0].kind, FileKind::Partial);
    }
}
