//! Paired datasets: synthesis, manifests, splits and batch loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{self, list_pngs, load_record, record_path};
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor4};
use crate::raster::Raster;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLEAN_DIR: &str = "clean";
pub const DEGRADED_DIR: &str = "degraded";
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    /// `[width, height]` shared by every image.
    pub image_size: [usize; 2],
    pub val_fraction: f64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

fn png_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_pngs(dir)?
        .into_iter()
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect())
}

fn dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Number of validation pairs for a split of `n` pairs.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    ((val_fraction * n as f64).round() as usize).min(n)
}

pub fn build_manifest(clean_dir: &Path, degraded_dir: &Path, val_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    let clean = png_names(clean_dir)?;
    let degraded = png_names(degraded_dir)?;
    if let Some(name) = clean.keys().find(|k| !degraded.contains_key(*k)) {
        return Err(Error::Unpaired(format!(
            "{} has no counterpart in {}",
            clean[name].display(),
            degraded_dir.display()
        )));
    }
    if let Some(name) = degraded.keys().find(|k| !clean.contains_key(*k)) {
        return Err(Error::Unpaired(format!(
            "{} has no counterpart in {}",
            degraded[name].display(),
            clean_dir.display()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Empty(format!("no PNG pairs under {}", clean_dir.display())));
    }
    let mut size = None;
    for (name, c) in &clean {
        let d = &degraded[name];
        let (dc, dd) = (dims(c)?, dims(d)?);
        if dc != dd {
            return Err(Error::Shape(format!(
                "{name}: clean is {}×{} but degraded is {}×{}",
                dc.0, dc.1, dd.0, dd.1
            )));
        }
        if *size.get_or_insert(dc) != dc {
            return Err(Error::Shape(format!("{name} is {}×{}, other images differ", dc.0, dc.1)));
        }
    }
    let (w, h) = size.expect("at least one pair");

    let n = clean.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: BTreeSet<usize> = order[..val_count(n, val_fraction)].iter().copied().collect();
    if val.len() == n {
        return Err(Error::Config("validation split would leave no training pairs".into()));
    }
    let entries = clean
        .iter()
        .enumerate()
        .map(|(i, (name, c))| ManifestEntry {
            id: Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            clean: c.clone(),
            degraded: degraded[name].clone(),
            split: if val.contains(&i) { Split::Val } else { Split::Train },
        })
        .collect();
    Ok(Manifest {
        version: MANIFEST_VERSION,
        seed,
        image_size: [w as usize, h as usize],
        val_fraction,
        entries,
        base: PathBuf::new(),
    })
}

/// Build the manifest for the standard `<root>/clean`, `<root>/degraded` layout and save it.
pub fn build_root_manifest(root: &Path, val_fraction: f64, seed: u64) -> Result<Manifest> {
    let m = build_manifest(&root.join(CLEAN_DIR), &root.join(DEGRADED_DIR), val_fraction, seed)?;
    m.save(&root.join(MANIFEST_FILE))?;
    Manifest::load(&root.join(MANIFEST_FILE))
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    p.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(p)
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", self.version)));
        }
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(Error::Data(format!("duplicate pair id {:?}", e.id)));
            }
        }
        if self.indices(Split::Train).is_empty() {
            return Err(Error::Empty("manifest has no training pairs".into()));
        }
        Ok(())
    }

    /// Write as JSON with entry paths made relative to the manifest's directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = self.clone();
        for e in &mut out.entries {
            e.clean = relative_to(&self.resolve(&e.clean), dir);
            e.degraded = relative_to(&self.resolve(&e.degraded), dir);
        }
        fs::write(path, serde_json::to_string_pretty(&out)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        m.validate()?;
        Ok(m)
    }
}

/// Degraded input `x` and clean target `y`, both in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Real> {
    pub x: Tensor4<T>,
    pub y: Tensor4<T>,
    /// Manifest entry positions of the samples.
    pub indices: Vec<usize>,
}

/// Manifest plus decoded images held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Base of the per-epoch permutation seeds; defaults to the manifest seed.
    pub shuffle_seed: u64,
    clean: Vec<Raster>,
    degraded: Vec<Raster>,
}

pub fn epoch_len(split_size: usize, m: usize) -> usize {
    split_size.div_ceil(m.max(1))
}

impl Dataset {
    pub fn open(manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        let load = |p: &Path| -> Result<Raster> {
            let r = Raster::load_png(&manifest.resolve(p))?;
            let [w, h] = manifest.image_size;
            if (r.width, r.height) != (w, h) {
                return Err(Error::Shape(format!(
                    "{} is {}×{}, manifest says {w}×{h}",
                    p.display(),
                    r.width,
                    r.height
                )));
            }
            Ok(r)
        };
        let clean = manifest.entries.iter().map(|e| load(&e.clean)).collect::<Result<_>>()?;
        let degraded = manifest.entries.iter().map(|e| load(&e.degraded)).collect::<Result<_>>()?;
        Ok(Self {
            shuffle_seed: manifest.seed,
            manifest,
            clean,
            degraded,
        })
    }

    pub fn open_root(root: &Path) -> Result<Self> {
        Self::open(Manifest::load(&root.join(MANIFEST_FILE))?)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.manifest.indices(split).len()
    }

    pub fn epoch_len(&self, split: Split, m: usize) -> usize {
        epoch_len(self.split_len(split), m)
    }

    /// Split positions in the order used for `epoch`.
    pub fn epoch_order(&self, split: Split, epoch: u64) -> Vec<usize> {
        let mut order = self.manifest.indices(split);
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed.wrapping_add(epoch));
        order.shuffle(&mut rng);
        order
    }

    pub fn load_batch<T: Real>(&self, split: Split, epoch: u64, batch_index: usize, m: usize) -> Result<Batch<T>> {
        if m == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let len = self.epoch_len(split, m);
        if batch_index >= len {
            return Err(Error::Config(format!(
                "batch {batch_index} out of range: the {split:?} epoch has {len} batches"
            )));
        }
        let order = self.epoch_order(split, epoch);
        let end = ((batch_index + 1) * m).min(order.len());
        self.gather(&order[batch_index * m..end])
    }

    /// Samples at the given manifest positions, in the given order.
    pub fn gather<T: Real>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let xs: Vec<&Raster> = indices.iter().map(|&i| &self.degraded[i]).collect();
        let ys: Vec<&Raster> = indices.iter().map(|&i| &self.clean[i]).collect();
        Ok(Batch {
            x: crate::raster::rasters_to_tensor(&xs)?,
            y: crate::raster::rasters_to_tensor(&ys)?,
            indices: indices.to_vec(),
        })
    }

    pub fn clean(&self, i: usize) -> &Raster {
        &self.clean[i]
    }

    pub fn degraded(&self, i: usize) -> &Raster {
        &self.degraded[i]
    }
}

/// Replay the sidecar record of every `stride`-th pair and compare bit-exactly
/// with the stored degraded image. Returns the number of pairs checked.
pub fn verify_pairing(manifest: &Manifest, stride: usize) -> Result<usize> {
    let mut checked = 0;
    for e in manifest.entries.iter().step_by(stride.max(1)) {
        let degraded_path = manifest.resolve(&e.degraded);
        let record = load_record(&record_path(&degraded_path))?;
        let clean = Raster::load_png(&manifest.resolve(&e.clean))?;
        let replayed = degrade::replay(&clean, &record)?.quantized();
        if !replayed.bit_eq(&Raster::load_png(&degraded_path)?) {
            return Err(Error::Unpaired(format!(
                "{} is not the recorded degradation of {}",
                e.degraded.display(),
                e.clean.display()
            )));
        }
        checked += 1;
    }
    Ok(checked)
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Stripe { nx: f32, ny: f32, offset: f32, half_width: f32 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: f32) -> Self {
        match rng.random_range(0..3) {
            0 => Self::Disc {
                cx: rng.random_range(0.0..size),
                cy: rng.random_range(0.0..size),
                r: rng.random_range(0.1..0.35) * size,
            },
            1 => {
                let (x, y) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
                let (w, h) = (rng.random_range(0.15..0.5) * size, rng.random_range(0.15..0.5) * size);
                Self::Rect {
                    x0: x - w / 2.0,
                    y0: y - h / 2.0,
                    x1: x + w / 2.0,
                    y1: y + h / 2.0,
                }
            }
            _ => {
                let a: f32 = rng.random_range(0.0..std::f32::consts::PI);
                Self::Stripe {
                    nx: a.cos(),
                    ny: a.sin(),
                    offset: rng.random_range(0.0..size),
                    half_width: rng.random_range(0.04..0.12) * size,
                }
            }
        }
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Self::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Self::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
            Self::Stripe {
                nx,
                ny,
                offset,
                half_width,
            } => (x * nx + y * ny - offset).abs() <= half_width,
        }
    }
}

/// One procedural image: a two-colour gradient, a few solid shapes and fine texture.
pub fn synth_image(size: usize, seed: u64, index: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f32;
    let (c0, c1) = (random_colour(&mut rng), random_colour(&mut rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let shapes: Vec<(Shape, [f32; 3])> = (0..rng.random_range(1..=4))
        .map(|_| (Shape::random(&mut rng, s), random_colour(&mut rng)))
        .collect();
    let texture_amp: f32 = rng.random_range(0.0..0.06);
    let mut img = Raster::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = (((fx - s / 2.0) * dx + (fy - s / 2.0) * dy) / s + 0.5).clamp(0.0, 1.0);
            let mut px = lerp(c0, c1, t);
            for (shape, colour) in &shapes {
                if shape.contains(fx, fy) {
                    px = *colour;
                }
            }
            for (c, v) in px.iter().enumerate() {
                let n: f32 = rng.random_range(-1.0..1.0);
                img.set(x, y, c, (v + texture_amp * n).clamp(0.0, 1.0));
            }
        }
    }
    img.quantized()
}

/// Write `n` images to `<out_dir>/clean/00000.png`, … and return their paths.
pub fn synth_dataset(n: usize, size: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("need at least one image".into()));
    }
    if size < 8 {
        return Err(Error::Config(format!("image size must be at least 8, got {size}")));
    }
    let dir = out_dir.join(CLEAN_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let width = n.to_string().len().max(5);
    (0..n)
        .map(|i| {
            let path = dir.join(format!("{i:0width$}.png"));
            synth_image(size, seed, i as u64).save_png(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{degrade_dir, DegradationSpec};
    use tempfile::TempDir;

    fn dataset(n: usize, val_fraction: f64) -> (TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(n, 8, 4, dir.path()).unwrap();
        let spec = DegradationSpec {
            seed: 9,
            ..Default::default()
        };
        degrade_dir(&dir.path().join(CLEAN_DIR), &dir.path().join(DEGRADED_DIR), &spec).unwrap();
        let m = build_root_manifest(dir.path(), val_fraction, 21).unwrap();
        (dir, m)
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (_dir, m) = dataset(10, 0.2);
        let (train, val) = (m.indices(Split::Train), m.indices(Split::Val));
        assert_eq!((train.len(), val.len()), (8, 2));
        let all: BTreeSet<usize> = train.iter().chain(&val).copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(m.image_size, [8, 8]);
    }

    #[test]
    fn manifest_is_deterministic_and_portable() {
        let (dir, m) = dataset(6, 0.5);
        let again = build_manifest(
            &dir.path().join(CLEAN_DIR),
            &dir.path().join(DEGRADED_DIR),
            0.5,
            21,
        )
        .unwrap();
        let splits = |m: &Manifest| m.entries.iter().map(|e| e.split).collect::<Vec<_>>();
        assert_eq!(splits(&m), splits(&again));
        assert!(m.entries.iter().all(|e| e.clean.is_relative()));

        let moved = tempfile::tempdir().unwrap();
        let target = moved.path().join("data");
        fs::rename(dir.path(), &target).unwrap();
        let reloaded = Manifest::load(&target.join(MANIFEST_FILE)).unwrap();
        assert_eq!(Dataset::open(reloaded).unwrap().split_len(Split::Train), 3);
    }

    #[test]
    fn unpaired_file_is_named() {
        let (dir, _) = dataset(3, 0.0);
        synth_image(8, 1, 1).save_png(&dir.path().join(CLEAN_DIR).join("stray.png")).unwrap();
        let err = build_manifest(&dir.path().join(CLEAN_DIR), &dir.path().join(DEGRADED_DIR), 0.1, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Unpaired(_)));
        assert!(err.to_string().contains("stray.png"), "{err}");
    }

    #[test]
    fn bad_val_fraction_rejected() {
        let (dir, _) = dataset(2, 0.0);
        let (c, d) = (dir.path().join(CLEAN_DIR), dir.path().join(DEGRADED_DIR));
        assert!(build_manifest(&c, &d, 1.0, 0).is_err());
        assert!(build_manifest(&c, &d, 0.9, 0).is_err());
    }

    #[test]
    fn batches_cover_epoch_and_replay() {
        let (_dir, m) = dataset(12, 1.0 / 6.0);
        let ds = Dataset::open(m).unwrap();
        assert_eq!(ds.split_len(Split::Train), 10);
        assert_eq!(ds.epoch_len(Split::Train, 4), 3);
        let mut seen = Vec::new();
        for b in 0..3 {
            let batch: Batch<f32> = ds.load_batch(Split::Train, 2, b, 4).unwrap();
            assert_eq!(batch.x.shape(), batch.y.shape());
            assert_eq!(batch.x.batch(), if b == 2 { 2 } else { 4 });
            assert!(batch.x.data().iter().chain(batch.y.data()).all(|v| (-1.0..=1.0).contains(v)));
            seen.extend(batch.indices);
        }
        seen.sort();
        assert_eq!(seen, ds.manifest.indices(Split::Train));
        assert!(ds.load_batch::<f32>(Split::Train, 2, 3, 4).is_err());

        let a: Batch<f32> = ds.load_batch(Split::Train, 5, 1, 4).unwrap();
        let b: Batch<f32> = ds.load_batch(Split::Train, 5, 1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(ds.epoch_order(Split::Train, 0), ds.epoch_order(Split::Train, 1));
    }

    #[test]
    fn decode_failure_names_path() {
        let (dir, m) = dataset(3, 0.0);
        let victim = dir.path().join(CLEAN_DIR).join("00001.png");
        fs::write(&victim, b"not a png").unwrap();
        let err = Dataset::open(m).unwrap_err();
        assert!(err.to_string().contains("00001.png"), "{err}");
    }

    #[test]
    fn pairing_replays_from_records() {
        let (dir, m) = dataset(5, 0.2);
        assert_eq!(verify_pairing(&m, 1).unwrap(), 5);
        // swap two degraded images
        let d = dir.path().join(DEGRADED_DIR);
        fs::rename(d.join("00000.png"), d.join("tmp.png")).unwrap();
        fs::rename(d.join("00001.png"), d.join("00000.png")).unwrap();
        fs::rename(d.join("tmp.png"), d.join("00001.png")).unwrap();
        assert!(verify_pairing(&m, 1).is_err());
    }

    #[test]
    fn synth_contract() {
        let dir = tempfile::tempdir().unwrap();
        let paths = synth_dataset(200, 32, 7, dir.path()).unwrap();
        assert_eq!(paths.len(), 200);
        let (mut lo, mut hi) = (f32::MAX, f32::MIN);
        for p in &paths {
            let r = Raster::load_png(p).unwrap();
            assert_eq!((r.width, r.height, r.channels), (32, 32, 3));
            for &v in &r.data {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!(lo <= 0.05 && hi >= 0.95, "range [{lo}, {hi}]");
        assert!(synth_image(32, 7, 3).bit_eq(&Raster::load_png(&paths[3]).unwrap()));
        assert!(!synth_image(32, 8, 3).bit_eq(&synth_image(32, 7, 3)));
        assert!(synth_dataset(0, 32, 0, dir.path()).is_err());
        assert!(synth_dataset(1, 4, 0, dir.path()).is_err());
    }
}
