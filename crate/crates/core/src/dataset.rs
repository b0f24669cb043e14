//! Manifest ingestion, weight trajectories, tray cropping and the stratified holdout split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{mix_seed, str_hash};

/// Exact header expected in `manifest.csv`.
pub const MANIFEST_HEADER: [&str; 6] = ["potato_id", "tray_id", "day", "image_path", "weight_g", "sprout"];

/// Smallest accepted image side in pixels.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate observation for potato {potato_id} on day {day}")]
    DuplicateKey { potato_id: String, day: u32 },
    #[error("missing or unreadable image {path}")]
    MissingImage { path: PathBuf },
    #[error("image {path} is {width}x{height}, smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")]
    ImageTooSmall { path: PathBuf, width: u32, height: u32 },
    #[error("potato {0} has a single observation; shelf life cannot be interpolated")]
    SinglePointTrajectory(String),
    #[error("tray image is empty")]
    EmptyImage,
    #[error("invalid grid {rows}x{cols} for a {width}x{height} image")]
    InvalidGrid { rows: u32, cols: u32, width: u32, height: u32 },
    #[error("test fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("class {class} has {count} samples, at least {required} are required")]
    ClassTooSmall { class: usize, count: usize, required: usize },
    #[error("{labels} labels supplied for {samples} observations")]
    LabelCountMismatch { labels: usize, samples: usize },
    #[error("cannot write manifest: {0}")]
    Write(String),
}

/// One dated photograph and weighing of a single potato.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotatoObservation {
    pub potato_id: String,
    pub tray_id: String,
    /// Days since the start of storage.
    pub day: u32,
    /// Image path relative to the manifest directory, `/`-separated.
    pub image_ref: String,
    pub weight_g: f64,
    pub sprout_label: Option<bool>,
}

impl PotatoObservation {
    pub fn key(&self) -> SampleKey {
        SampleKey::new(&self.potato_id, self.day)
    }
}

/// Identity of a sample: a potato on a given day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub potato_id: String,
    pub day: u32,
}

impl SampleKey {
    pub fn new(potato_id: &str, day: u32) -> Self {
        Self { potato_id: potato_id.to_string(), day }
    }

    /// Stable hash used to order samples independently of their position in the input.
    pub fn stable_hash(&self, seed: u64) -> u64 {
        mix_seed(&[seed, str_hash(&self.potato_id), u64::from(self.day)])
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.potato_id, self.day)
    }
}

/// The weight series of one potato, sorted by day.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    pub potato_id: String,
    pub points: Vec<(u32, f64)>,
    /// Weight at the earliest recorded day.
    pub w0: f64,
}

impl WeightTrajectory {
    /// Builds a trajectory from unsorted points. Needs at least two distinct days.
    pub fn new(potato_id: impl Into<String>, mut points: Vec<(u32, f64)>) -> Result<Self, DatasetError> {
        let potato_id = potato_id.into();
        points.sort_by_key(|p| p.0);
        points.dedup_by_key(|p| p.0);
        if points.len() < 2 {
            return Err(DatasetError::SinglePointTrajectory(potato_id));
        }
        let w0 = points[0].1;
        Ok(Self { potato_id, points, w0 })
    }

    pub fn weight_on(&self, day: u32) -> Option<f64> {
        self.points.iter().find(|p| p.0 == day).map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root_dir: PathBuf,
    pub observations: Vec<PotatoObservation>,
}

impl DatasetManifest {
    pub fn image_path(&self, obs: &PotatoObservation) -> PathBuf {
        self.root_dir.join(obs.image_ref.replace('/', std::path::MAIN_SEPARATOR_STR))
    }

    pub fn keys(&self) -> Vec<SampleKey> {
        self.observations.iter().map(PotatoObservation::key).collect()
    }

    /// Checks key uniqueness and positive weights.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for (i, obs) in self.observations.iter().enumerate() {
            if !(obs.weight_g > 0.0 && obs.weight_g.is_finite()) {
                return Err(DatasetError::MalformedRow {
                    line: i + 2,
                    reason: format!("weight_g must be positive, got {}", obs.weight_g),
                });
            }
            if !seen.insert((obs.potato_id.as_str(), obs.day)) {
                return Err(DatasetError::DuplicateKey { potato_id: obs.potato_id.clone(), day: obs.day });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    potato_id: String,
    tray_id: String,
    day: String,
    image_path: String,
    weight_g: String,
    sprout: String,
}

fn parse_row(row: ManifestRow, line: usize) -> Result<PotatoObservation, DatasetError> {
    let bad = |reason: String| DatasetError::MalformedRow { line, reason };
    if row.potato_id.is_empty() {
        return Err(bad("empty potato_id".into()));
    }
    if row.day.is_empty() || !row.day.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(format!("day must be a non-negative integer, got {:?}", row.day)));
    }
    let day = row.day.parse::<u32>().map_err(|e| bad(format!("day: {e}")))?;
    let weight_ok = !row.weight_g.is_empty()
        && row.weight_g.bytes().all(|b| b.is_ascii_digit() || b == b'.')
        && row.weight_g.bytes().filter(|&b| b == b'.').count() <= 1;
    if !weight_ok {
        return Err(bad(format!("weight_g must be a positive decimal, got {:?}", row.weight_g)));
    }
    let weight_g = row.weight_g.parse::<f64>().map_err(|e| bad(format!("weight_g: {e}")))?;
    if weight_g <= 0.0 {
        return Err(bad(format!("weight_g must be positive, got {weight_g}")));
    }
    let sprout_label = match row.sprout.as_str() {
        "" => None,
        "0" => Some(false),
        "1" => Some(true),
        other => return Err(bad(format!("sprout must be 0, 1 or empty, got {other:?}"))),
    };
    if row.image_path.is_empty() || row.image_path.contains('\\') {
        return Err(bad(format!("image_path must be a relative '/'-separated path, got {:?}", row.image_path)));
    }
    if Path::new(&row.image_path).is_absolute() {
        return Err(bad(format!("image_path must be relative, got {:?}", row.image_path)));
    }
    Ok(PotatoObservation {
        potato_id: row.potato_id,
        tray_id: row.tray_id,
        day,
        image_ref: row.image_path,
        weight_g,
        sprout_label,
    })
}

/// Reads `manifest.csv`, resolving images relative to the manifest's directory.
///
/// Images are checked by reading their header only; decoding happens downstream.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let root_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != MANIFEST_HEADER {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: format!("header must be {:?}, got {:?}", MANIFEST_HEADER.join(","), got.join(",")),
        });
    }

    let mut observations = Vec::new();
    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = record.map_err(|e| DatasetError::MalformedRow { line, reason: e.to_string() })?;
        observations.push(parse_row(row, line)?);
    }

    let manifest = DatasetManifest { root_dir, observations };
    manifest.validate()?;
    for obs in &manifest.observations {
        let image_path = manifest.image_path(obs);
        let (width, height) =
            image::image_dimensions(&image_path).map_err(|_| DatasetError::MissingImage { path: image_path.clone() })?;
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(DatasetError::ImageTooSmall { path: image_path, width, height });
        }
    }
    Ok(manifest)
}

/// Writes observations in the manifest CSV format. Weights use the shortest round-trip
/// decimal representation so that load → write → load is lossless.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DatasetError::Write(e.to_string()))?;
    writer.write_record(MANIFEST_HEADER).map_err(|e| DatasetError::Write(e.to_string()))?;
    for obs in &manifest.observations {
        let sprout = match obs.sprout_label {
            None => "",
            Some(false) => "0",
            Some(true) => "1",
        };
        let weight = format_decimal(obs.weight_g);
        writer
            .write_record([
                obs.potato_id.as_str(),
                obs.tray_id.as_str(),
                &obs.day.to_string(),
                obs.image_ref.as_str(),
                &weight,
                sprout,
            ])
            .map_err(|e| DatasetError::Write(e.to_string()))?;
    }
    writer.flush().map_err(|e| DatasetError::Write(e.to_string()))
}

/// Plain decimal (never exponent notation) that parses back to the same `f64`.
fn format_decimal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

/// One trajectory per potato, ordered by potato id.
pub fn build_trajectories(manifest: &DatasetManifest) -> Result<Vec<WeightTrajectory>, DatasetError> {
    let mut grouped: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for obs in &manifest.observations {
        grouped.entry(obs.potato_id.as_str()).or_default().push((obs.day, obs.weight_g));
    }
    grouped.into_iter().map(|(id, points)| WeightTrajectory::new(id, points)).collect()
}

/// Cuts a tray photo into a uniform `rows × cols` grid, row-major.
///
/// Tiles use floor division; the remainder pixels go to the last row and column.
pub fn crop_tray_grid(tray: &DynamicImage, rows: u32, cols: u32) -> Result<Vec<DynamicImage>, DatasetError> {
    let (width, height) = (tray.width(), tray.height());
    if width == 0 || height == 0 {
        return Err(DatasetError::EmptyImage);
    }
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(DatasetError::InvalidGrid { rows, cols, width, height });
    }
    let (tile_w, tile_h) = (width / cols, height / rows);
    let mut tiles = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let x = c * tile_w;
            let y = r * tile_h;
            let w = if c + 1 == cols { width - x } else { tile_w };
            let h = if r + 1 == rows { height - y } else { tile_h };
            tiles.push(tray.crop_imm(x, y, w, h));
        }
    }
    Ok(tiles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<SampleKey>,
    pub test_ids: BTreeSet<SampleKey>,
    pub seed: u64,
}

/// Per-class test quotas: rounded proportional shares, nudged by one so they sum to the
/// rounded global total.
pub(crate) fn stratified_quotas(class_sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let exact: Vec<f64> = class_sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.round() as usize).collect();
    let mut assigned: usize = quotas.iter().sum();
    while assigned > target {
        // remove from the class whose quota overshoots its exact share the most
        let i = (0..quotas.len())
            .filter(|&i| quotas[i] > 0)
            .max_by(|&a, &b| {
                (quotas[a] as f64 - exact[a]).total_cmp(&(quotas[b] as f64 - exact[b])).then(b.cmp(&a))
            })
            .expect("a positive quota exists while assigned > target");
        quotas[i] -= 1;
        assigned -= 1;
    }
    while assigned < target {
        let i = (0..quotas.len())
            .filter(|&i| quotas[i] < class_sizes[i])
            .max_by(|&a, &b| {
                (exact[a] - quotas[a] as f64).total_cmp(&(exact[b] - quotas[b] as f64)).then(b.cmp(&a))
            })
            .expect("a class with spare samples exists while assigned < target");
        quotas[i] += 1;
        assigned += 1;
    }
    quotas
}

/// Stratified train/test split. `labels[i]` is the class of `manifest.observations[i]`.
///
/// Within each class, samples are ordered by a seeded hash of their key, so the split is
/// deterministic and independent of row order.
pub fn holdout_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
    labels: &[usize],
) -> Result<DatasetSplit, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    if labels.len() != manifest.observations.len() {
        return Err(DatasetError::LabelCountMismatch { labels: labels.len(), samples: manifest.observations.len() });
    }
    let mut by_class: BTreeMap<usize, Vec<SampleKey>> = BTreeMap::new();
    for (obs, &label) in manifest.observations.iter().zip(labels) {
        by_class.entry(label).or_default().push(obs.key());
    }
    for (&class, keys) in &by_class {
        if keys.len() < 2 {
            return Err(DatasetError::ClassTooSmall { class, count: keys.len(), required: 2 });
        }
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, test_fraction);

    let mut split = DatasetSplit { train_ids: BTreeSet::new(), test_ids: BTreeSet::new(), seed };
    for ((_, mut keys), quota) in by_class.into_iter().zip(quotas) {
        keys.sort_by_key(|k| (k.stable_hash(seed), k.clone()));
        for (i, key) in keys.into_iter().enumerate() {
            if i < quota {
                split.test_ids.insert(key);
            } else {
                split.train_ids.insert(key);
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GenericImageView, RgbImage};

    fn obs(id: &str, day: u32, w: f64) -> PotatoObservation {
        PotatoObservation {
            potato_id: id.into(),
            tray_id: "T1".into(),
            day,
            image_ref: format!("images/{id}_{day}.png"),
            weight_g: w,
            sprout_label: None,
        }
    }

    fn write_png(dir: &Path, rel: &str, w: u32, h: u32) {
        let p = dir.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        RgbImage::new(w, h).save(p).unwrap();
    }

    #[test]
    fn loads_three_row_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for d in [0, 10, 20] {
            write_png(dir.path(), &format!("images/P1_{d}.png"), 64, 64);
        }
        let csv = "potato_id,tray_id,day,image_path,weight_g,sprout\n\
                   P1,T1,0,images/P1_0.png,100,0\n\
                   P1,T1,10,images/P1_10.png,96,\n\
                   P1,T1,20,images/P1_20.png,89.5,1\n";
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, csv).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.observations.len(), 3);
        assert_eq!(m.observations[2].weight_g, 89.5);
        assert_eq!(m.observations[1].sprout_label, None);
        assert_eq!(m.observations[2].sprout_label, Some(true));
        assert_eq!(build_trajectories(&m).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 64, 64);
        let csv = "potato_id,tray_id,day,image_path,weight_g,sprout\nP1,T1,5,a.png,100,\nP1,T1,5,a.png,99,\n";
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, csv).unwrap();
        match load_manifest(&path) {
            Err(DatasetError::DuplicateKey { potato_id, day }) => assert_eq!((potato_id.as_str(), day), ("P1", 5)),
            other => panic!("expected DuplicateKey, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 64, 64);
        for (body, line) in [
            ("P1,T1,-1,a.png,100,\n", 2),
            ("P1,T1,0,a.png,100,\nP1,T1,1,a.png,1e2,\n", 3),
            ("P1,T1,0,a.png,100,2\n", 2),
            ("P1,T1,0,a.png,0,\n", 2),
        ] {
            let path = dir.path().join("manifest.csv");
            std::fs::write(&path, format!("potato_id,tray_id,day,image_path,weight_g,sprout\n{body}")).unwrap();
            match load_manifest(&path) {
                Err(DatasetError::MalformedRow { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("expected MalformedRow for {body:?}, got {other:?}"),
            }
        }
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "potato,tray_id,day,image_path,weight_g,sprout\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn missing_and_small_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "potato_id,tray_id,day,image_path,weight_g,sprout\nP1,T1,0,nope.png,100,\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::MissingImage { .. })));
        write_png(dir.path(), "small.png", 32, 80);
        std::fs::write(&path, "potato_id,tray_id,day,image_path,weight_g,sprout\nP1,T1,0,small.png,100,\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::ImageTooSmall { width: 32, .. })));
    }

    #[test]
    fn trajectory_construction() {
        let m = DatasetManifest {
            root_dir: PathBuf::new(),
            observations: vec![obs("P1", 20, 89.0), obs("P1", 0, 100.0), obs("P1", 10, 96.0), obs("P2", 3, 50.0)],
        };
        assert!(matches!(build_trajectories(&m), Err(DatasetError::SinglePointTrajectory(id)) if id == "P2"));
        let m = DatasetManifest { observations: m.observations[..3].to_vec(), ..m };
        let t = &build_trajectories(&m).unwrap()[0];
        assert_eq!(t.w0, 100.0);
        assert_eq!(t.points, vec![(0, 100.0), (10, 96.0), (20, 89.0)]);
    }

    #[test]
    fn w0_is_weight_at_minimum_day() {
        let t = WeightTrajectory::new("P", vec![(30, 80.0), (7, 90.0)]).unwrap();
        assert_eq!(t.w0, 90.0);
    }

    #[test]
    fn grid_crop_exact_and_remainder() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(600, 400));
        let tiles = crop_tray_grid(&img, 2, 3).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|t| t.dimensions() == (200, 200)));

        let img = DynamicImage::ImageRgb8(RgbImage::new(601, 401));
        let tiles = crop_tray_grid(&img, 2, 3).unwrap();
        let dims: Vec<_> = tiles.iter().map(|t| t.dimensions()).collect();
        assert_eq!(dims, vec![(200, 200), (200, 200), (201, 200), (200, 201), (200, 201), (201, 201)]);
        let area: u32 = dims.iter().map(|(w, h)| w * h).sum();
        assert_eq!(area, 601 * 401);
    }

    #[test]
    fn grid_crop_identity_preserves_pixels() {
        let mut raw = RgbImage::new(70, 65);
        raw.put_pixel(3, 4, image::Rgb([1, 2, 3]));
        let img = DynamicImage::ImageRgb8(raw);
        let tiles = crop_tray_grid(&img, 1, 1).unwrap();
        assert_eq!(tiles[0], img);
        assert!(matches!(
            crop_tray_grid(&DynamicImage::ImageRgb8(RgbImage::new(0, 0)), 1, 1),
            Err(DatasetError::EmptyImage)
        ));
        assert!(matches!(crop_tray_grid(&img, 0, 1), Err(DatasetError::InvalidGrid { .. })));
    }

    fn synthetic_manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            root_dir: PathBuf::new(),
            observations: (0..n).map(|i| obs(&format!("P{}", i % 6), (i / 6) as u32, 100.0)).collect(),
        }
    }

    #[test]
    fn holdout_matches_reported_counts() {
        let m = synthetic_manifest(306);
        let labels: Vec<usize> = (0..306).map(|i| if i % 3 == 0 { 1 } else { 2 }).collect();
        let split = holdout_split(&m, 0.166, 7, &labels).unwrap();
        assert_eq!((split.train_ids.len(), split.test_ids.len()), (255, 51));
    }

    #[test]
    fn holdout_balanced_and_deterministic() {
        let m = synthetic_manifest(10);
        let labels = vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        let split = holdout_split(&m, 0.2, 3, &labels).unwrap();
        let keys = m.keys();
        let test_classes: Vec<usize> =
            keys.iter().zip(&labels).filter(|(k, _)| split.test_ids.contains(k)).map(|(_, &l)| l).collect();
        assert_eq!(test_classes, vec![1, 2]);
        assert_eq!(split, holdout_split(&m, 0.2, 3, &labels).unwrap());
    }

    #[test]
    fn holdout_errors() {
        let m = synthetic_manifest(5);
        assert!(matches!(holdout_split(&m, 0.0, 1, &[1; 5]), Err(DatasetError::InvalidFraction(_))));
        assert!(matches!(
            holdout_split(&m, 0.2, 1, &[1, 1, 1, 1, 2]),
            Err(DatasetError::ClassTooSmall { class: 2, count: 1, .. })
        ));
    }

    #[test]
    fn quotas_hit_global_total() {
        assert_eq!(stratified_quotas(&[5, 5], 0.2), vec![1, 1]);
        let q = stratified_quotas(&[3, 3, 3], 0.5);
        assert_eq!(q.iter().sum::<usize>(), 5);
    }
}
