//! Synthetic paired (image, layout) tasks.
//!
//! Two generators: a 2-D point cloud whose Gaussian modes are paired with
//! anchor points, and a 16x16 RGB scene of a rectangle and a disk over a
//! background. Both store images as normalized values that are exactly
//! representable in `f32`, so the on-disk form reproduces the in-memory
//! dataset bit for bit.

mod io;

pub use io::{
    read_array, read_verified, sha256_hex, write_array, ArrayData, Manifest, ManifestFile, RawArray, ARRAY_FORMAT_VERSION, ARRAY_MAGIC,
    MANIFEST_FORMAT_VERSION, MANIFEST_NAME,
};

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorConfig, CategoryId, PerturbationConfig};
use crate::error::{Error, Result};
use crate::latent::LatentCodec;
use crate::task::TaskGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointTaskSpec {
    pub num_modes: u32,
    /// Distance of each mode center from the origin.
    pub radius: f64,
    /// Angle (degrees) between a mode center and its anchor's direction.
    pub rotation_deg: f64,
    pub sigma: f64,
    pub anchors: AnchorConfig,
}

impl Default for PointTaskSpec {
    fn default() -> Self {
        Self {
            num_modes: 4,
            radius: 3.0,
            rotation_deg: 60.0,
            sigma: 0.3,
            anchors: AnchorConfig::new(2, 50.0, 4).expect("valid default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageTaskSpec {
    pub height: usize,
    pub width: usize,
    /// Per-pixel Gaussian noise, in normalized units.
    pub noise: f64,
    /// Disk edge pixels with coverage strictly between `void_band` and
    /// `1 - void_band` are labeled void.
    pub void_band: f64,
    pub anchors: AnchorConfig,
}

impl Default for ImageTaskSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            noise: 0.05,
            void_band: 0.25,
            anchors: AnchorConfig::new(6, 50.0, 3).expect("valid default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    Point(PointTaskSpec),
    Image(ImageTaskSpec),
}

pub const BACKGROUND: CategoryId = CategoryId(0);
pub const RECTANGLE: CategoryId = CategoryId(1);
pub const DISK: CategoryId = CategoryId(2);

impl TaskSpec {
    pub fn anchors(&self) -> &AnchorConfig {
        match self {
            TaskSpec::Point(p) => &p.anchors,
            TaskSpec::Image(i) => &i.anchors,
        }
    }

    pub fn geometry(&self) -> Result<TaskGeometry> {
        match self {
            TaskSpec::Point(p) => TaskGeometry::point(p.anchors),
            TaskSpec::Image(i) => Ok(TaskGeometry::image(i.height, i.width, i.anchors)),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        match self {
            TaskSpec::Point(s) => {
                if s.num_modes == 0 || s.num_modes > s.anchors.num_categories() {
                    p.push(format!(
                        "point task needs 1 <= num_modes <= num_categories ({})",
                        s.anchors.num_categories()
                    ));
                }
                if !(s.radius > 0.0 && s.radius.is_finite()) {
                    p.push("point task radius must be positive".into());
                }
                if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
                    p.push("point task sigma must be >= 0".into());
                }
                if !s.rotation_deg.is_finite() {
                    p.push("point task rotation must be finite".into());
                }
                match TaskGeometry::point(s.anchors) {
                    Err(e) => p.push(e.to_string()),
                    Ok(g) => {
                        for c in 0..s.num_modes.min(s.anchors.num_categories()) {
                            let a = g.anchor_point(CategoryId(c)).expect("category in range");
                            if a[0] == 0.0 && a[1] == 0.0 {
                                p.push(format!("category {c} anchors at the origin and has no direction"));
                            }
                        }
                    }
                }
            }
            TaskSpec::Image(s) => {
                if s.height < 4 || s.width < 4 {
                    p.push("image task needs height and width >= 4".into());
                }
                if s.anchors.num_categories() != 3 {
                    p.push("image task has exactly 3 categories (background, rectangle, disk)".into());
                }
                if !(s.noise >= 0.0 && s.noise.is_finite()) {
                    p.push("image task noise must be >= 0".into());
                }
                if !(0.0..0.5).contains(&s.void_band) {
                    p.push("image task void_band must lie in [0, 0.5)".into());
                }
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    /// Mode centers of the point task, indexed by category.
    pub fn mode_centers(&self) -> Result<Vec<[f64; 2]>> {
        let TaskSpec::Point(s) = self else {
            return Err(Error::InvalidArgument("mode centers exist only for the point task".into()));
        };
        self.validate()?;
        let g = self.geometry()?;
        let (sin, cos) = s.rotation_deg.to_radians().sin_cos();
        Ok((0..s.num_modes)
            .map(|c| {
                let a = g.anchor_point(CategoryId(c)).expect("validated");
                let norm = a[0].hypot(a[1]);
                let (x, y) = (a[0] / norm, a[1] / norm);
                [s.radius * (cos * x - sin * y), s.radius * (sin * x + cos * y)]
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 4096,
            val: 1024,
            test: 4096,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            SplitName::Train => 1,
            SplitName::Val => 2,
            SplitName::Test => 3,
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Images (normalized, one row per sample) paired with their layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub images: Array2<f64>,
    /// `len() * pixels` categories, row-major per sample.
    pub layouts: Vec<CategoryId>,
    pub pixels: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layout(&self, i: usize) -> &[CategoryId] {
        &self.layouts[i * self.pixels..(i + 1) * self.pixels]
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Split {
        let images = self.images.select(ndarray::Axis(0), indices);
        let layouts = indices.iter().flat_map(|&i| self.layout(i).iter().copied()).collect();
        Split {
            images,
            layouts,
            pixels: self.pixels,
        }
    }

    pub fn head(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub seed: u64,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }
}

fn to_f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates all three splits. Each split draws from its own stream of the
/// seed, so sizes of one split never change the contents of another.
pub fn generate(spec: &TaskSpec, seed: u64, sizes: SplitSizes) -> Result<Dataset> {
    spec.validate()?;
    if sizes.train == 0 {
        return Err(Error::InvalidArgument("train split must be nonempty".into()));
    }
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        train: generate_split(spec, seed, SplitName::Train, sizes.train)?,
        val: generate_split(spec, seed, SplitName::Val, sizes.val)?,
        test: generate_split(spec, seed, SplitName::Test, sizes.test)?,
    })
}

pub fn generate_split(spec: &TaskSpec, seed: u64, split: SplitName, n: usize) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    match spec {
        TaskSpec::Point(p) => {
            let centers = spec.mode_centers()?;
            let mut images = Array2::zeros((n, 2));
            let mut layouts = Vec::with_capacity(n);
            for i in 0..n {
                let c = rng.random_range(0..p.num_modes);
                let e0: f64 = StandardNormal.sample(&mut rng);
                let e1: f64 = StandardNormal.sample(&mut rng);
                let m = centers[c as usize];
                images[[i, 0]] = to_f32_exact(m[0] + p.sigma * e0);
                images[[i, 1]] = to_f32_exact(m[1] + p.sigma * e1);
                layouts.push(CategoryId(c));
            }
            Ok(Split {
                images,
                layouts,
                pixels: 1,
            })
        }
        TaskSpec::Image(s) => {
            let px = s.height * s.width;
            let mut images = Array2::zeros((n, px * 3));
            let mut layouts = Vec::with_capacity(n * px);
            for i in 0..n {
                let (img, layout) = render_scene(s, &mut rng);
                images.row_mut(i).assign(&ndarray::ArrayView1::from(&img));
                layouts.extend(layout);
            }
            Ok(Split {
                images,
                layouts,
                pixels: px,
            })
        }
    }
}

fn color_in(rng: &mut ChaCha8Rng, ranges: [(f64, f64); 3]) -> [f64; 3] {
    ranges.map(|(lo, hi)| rng.random_range(lo..hi))
}

/// One scene: background, an axis-aligned rectangle, and a disk drawn on top.
fn render_scene(s: &ImageTaskSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<CategoryId>) {
    let (h, w) = (s.height, s.width);
    let bg = color_in(rng, [(20.0, 80.0), (20.0, 80.0), (100.0, 180.0)]);
    let rect_color = color_in(rng, [(170.0, 240.0), (60.0, 120.0), (20.0, 80.0)]);
    let disk_color = color_in(rng, [(40.0, 100.0), (170.0, 240.0), (60.0, 120.0)]);

    let rh = rng.random_range(4..=(h * 9 / 16).max(4));
    let rw = rng.random_range(4..=(w * 9 / 16).max(4));
    let ry = rng.random_range(0..=h - rh);
    let rx = rng.random_range(0..=w - rw);

    let radius = rng.random_range(0.15 * h.min(w) as f64..0.28 * h.min(w) as f64);
    let cy = rng.random_range(radius..h as f64 - radius);
    let cx = rng.random_range(radius..w as f64 - radius);

    const SUB: usize = 4;
    let mut img = Vec::with_capacity(h * w * 3);
    let mut layout = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let in_rect = (ry..ry + rh).contains(&y) && (rx..rx + rw).contains(&x);
            let (under, under_c) = if in_rect { (rect_color, RECTANGLE) } else { (bg, BACKGROUND) };
            let mut inside = 0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let py = y as f64 + (sy as f64 + 0.5) / SUB as f64;
                    let px = x as f64 + (sx as f64 + 0.5) / SUB as f64;
                    if (py - cy).powi(2) + (px - cx).powi(2) <= radius * radius {
                        inside += 1;
                    }
                }
            }
            let cov = inside as f64 / (SUB * SUB) as f64;
            let label = if cov >= 1.0 - s.void_band && cov > 0.0 {
                DISK
            } else if cov <= s.void_band && cov < 1.0 {
                under_c
            } else {
                CategoryId::VOID
            };
            layout.push(label);
            for ch in 0..3 {
                let color = cov * disk_color[ch] + (1.0 - cov) * under[ch];
                let e: f64 = StandardNormal.sample(rng);
                img.push(to_f32_exact((color - 127.5) / 127.5 + s.noise * e));
            }
        }
    }
    (img, layout)
}

/// Rows of paired samples: `z0` encodes the images, `z1` encodes the pseudo
/// masks of the same rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub z0: Array2<f64>,
    pub z1: Array2<f64>,
    /// Per-value loss weights in pixel space (void pixels get 0). `None` when
    /// the codec is not the identity, since latent values then mix pixels.
    pub weights: Option<Array2<f64>>,
    pub layouts: Vec<CategoryId>,
    pub perturbed: bool,
}

/// Builds paired latents for `indices` of a split. The perturbation is only
/// applied for the train split; other splits always get exact anchors.
pub fn paired_batch<R: Rng + ?Sized>(
    split: &Split,
    name: SplitName,
    indices: &[usize],
    geometry: &TaskGeometry,
    codec: &LatentCodec,
    perturbation: Option<&PerturbationConfig>,
    rng: &mut R,
) -> Result<PairedBatch> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if split.pixels != geometry.pixels() || split.images.ncols() != geometry.sample_dim() {
        return Err(Error::Shape("split does not match task geometry".into()));
    }
    let perturbation = perturbation.filter(|p| name == SplitName::Train && p.beta() > 0.0);
    let d = geometry.sample_dim();
    let mut masks = Array2::zeros((indices.len(), d));
    let mut weights = Array2::zeros((indices.len(), d));
    let mut layouts = Vec::with_capacity(indices.len() * split.pixels);
    for (row, &i) in indices.iter().enumerate() {
        if i >= split.len() {
            return Err(Error::InvalidArgument(format!("sample index {i} out of range {}", split.len())));
        }
        let layout = split.layout(i);
        let (values, w) = match perturbation {
            Some(p) => geometry.render_mask(layout, Some((p, &mut *rng)))?,
            None => geometry.render_mask::<R>(layout, None)?,
        };
        masks.row_mut(row).assign(&ndarray::ArrayView1::from(&values));
        weights.row_mut(row).assign(&ndarray::ArrayView1::from(&w));
        layouts.extend_from_slice(layout);
    }
    let images = split.images.select(ndarray::Axis(0), indices);
    let identity = matches!(codec, LatentCodec::Identity { .. });
    Ok(PairedBatch {
        z0: codec.encode(images.view())?,
        z1: codec.encode(masks.view())?,
        weights: (identity && weights.iter().any(|&w| w == 0.0)).then_some(weights),
        layouts,
        perturbed: perturbation.is_some(),
    })
}

/// Writes all splits plus `manifest.toml` into `dir`.
pub fn save(dataset: &Dataset, dir: &Path) -> Result<Manifest> {
    io::save(dataset, dir)
}

/// Loads and checksum-verifies a dataset from its manifest path.
pub fn load(manifest_path: &Path) -> Result<Dataset> {
    io::load(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_point() -> TaskSpec {
        TaskSpec::Point(PointTaskSpec::default())
    }

    #[test]
    fn same_seed_same_samples() {
        let a = generate_split(&small_point(), 9, SplitName::Train, 1).unwrap();
        let b = generate_split(&small_point(), 9, SplitName::Train, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_split(&small_point(), 10, SplitName::Train, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_independent_streams() {
        let sizes = SplitSizes { train: 5, val: 5, test: 5 };
        let d = generate(&small_point(), 3, sizes).unwrap();
        assert_ne!(d.train.images, d.val.images);
        let bigger = generate(&small_point(), 3, SplitSizes { train: 50, ..sizes }).unwrap();
        assert_eq!(d.val, bigger.val);
        assert_eq!(d.train, bigger.train.head(5));
    }

    #[test]
    fn mode_frequencies_near_uniform() {
        let n = 10_000;
        let s = generate_split(&small_point(), 1, SplitName::Train, n).unwrap();
        let p = 0.25;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in 0..4 {
            let count = s.layouts.iter().filter(|l| l.0 == c).count() as f64;
            assert!((count - n as f64 * p).abs() < 3.0 * sd, "mode {c}: {count}");
        }
    }

    #[test]
    fn point_samples_cluster_around_their_mode() {
        let spec = small_point();
        let centers = spec.mode_centers().unwrap();
        let s = generate_split(&spec, 2, SplitName::Val, 2000).unwrap();
        for i in 0..s.len() {
            let x = [s.images[[i, 0]], s.images[[i, 1]]];
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da = (x[0] - centers[a][0]).hypot(x[1] - centers[a][1]);
                    let db = (x[0] - centers[b][0]).hypot(x[1] - centers[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest as u32, s.layouts[i].0);
        }
    }

    #[test]
    fn mode_centers_are_rotated_anchor_directions() {
        let spec = small_point();
        let centers = spec.mode_centers().unwrap();
        let g = spec.geometry().unwrap();
        for (c, m) in centers.iter().enumerate() {
            assert!((m[0].hypot(m[1]) - 3.0).abs() < 1e-12);
            let a = g.anchor_point(CategoryId(c as u32)).unwrap();
            let angle = (m[1].atan2(m[0]) - a[1].atan2(a[0])).to_degrees().rem_euclid(360.0);
            assert!((angle - 60.0).abs() < 1e-9);
        }
    }

    #[test]
    fn values_are_f32_exact() {
        let spec = TaskSpec::Image(ImageTaskSpec::default());
        let s = generate_split(&spec, 5, SplitName::Train, 3).unwrap();
        assert!(s.images.iter().all(|&v| v as f32 as f64 == v));
    }

    #[test]
    fn image_layouts_cover_all_classes_and_void() {
        let spec = TaskSpec::Image(ImageTaskSpec::default());
        let s = generate_split(&spec, 5, SplitName::Train, 20).unwrap();
        assert_eq!(s.layouts.len(), 20 * 256);
        for c in [BACKGROUND, RECTANGLE, DISK, CategoryId::VOID] {
            assert!(s.layouts.contains(&c), "{c:?} missing");
        }
        let void = s.layouts.iter().filter(|c| c.is_void()).count();
        assert!(void < s.layouts.len() / 10);
    }

    #[test]
    fn rendered_masks_round_trip_to_layouts() {
        let spec = TaskSpec::Image(ImageTaskSpec::default());
        let g = spec.geometry().unwrap();
        let s = generate_split(&spec, 6, SplitName::Test, 4).unwrap();
        for i in 0..s.len() {
            let layout = s.layout(i);
            let grid = crate::grid::Grid::new(16, 16, layout.iter().map(|&c| if c.is_void() { BACKGROUND } else { c }).collect()).unwrap();
            let colors = crate::anchor::encode_mask(&grid, &g.anchors).unwrap();
            assert_eq!(crate::anchor::decode_mask(&colors, &g.anchors), grid);
            let (values, _) = g.render_mask::<ChaCha8Rng>(layout, None).unwrap();
            let decoded = g.decode_sample(&values);
            for (d, l) in decoded.iter().zip(layout) {
                if !l.is_void() {
                    assert_eq!(d, l);
                }
            }
        }
    }

    #[test]
    fn validation_lists_problems() {
        let spec = TaskSpec::Point(PointTaskSpec {
            num_modes: 9,
            radius: -1.0,
            sigma: f64::NAN,
            ..PointTaskSpec::default()
        });
        match spec.validate() {
            Err(Error::Validation(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn val_split_is_never_perturbed() {
        let spec = small_point();
        let g = spec.geometry().unwrap();
        let d = generate(&spec, 4, SplitSizes { train: 8, val: 8, test: 8 }).unwrap();
        let codec = LatentCodec::identity(2);
        let pert = PerturbationConfig::new(6.0, &g.anchors).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx: Vec<usize> = (0..8).collect();
        let val = paired_batch(&d.val, SplitName::Val, &idx, &g, &codec, Some(&pert), &mut rng).unwrap();
        assert!(!val.perturbed);
        for (i, c) in val.layouts.iter().enumerate() {
            assert_eq!(val.z1.row(i).to_vec(), g.anchor_point(*c).unwrap());
        }
        let train = paired_batch(&d.train, SplitName::Train, &idx, &g, &codec, Some(&pert), &mut rng).unwrap();
        assert!(train.perturbed);
        for (i, c) in train.layouts.iter().enumerate() {
            let a = g.anchor_point(*c).unwrap();
            let dz: f64 = (train.z1[[i, 0]] - a[0]).abs().max((train.z1[[i, 1]] - a[1]).abs());
            assert!(dz > 0.0 && dz <= 6.0 / 25.0 + 1e-12);
        }
        assert_eq!(train.z0, d.train.images);
    }

    #[test]
    fn void_pixels_get_zero_weight() {
        let spec = TaskSpec::Image(ImageTaskSpec::default());
        let g = spec.geometry().unwrap();
        let s = generate_split(&spec, 11, SplitName::Train, 8).unwrap();
        let codec = LatentCodec::identity(g.sample_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx: Vec<usize> = (0..8).collect();
        let b = paired_batch(&s, SplitName::Train, &idx, &g, &codec, None, &mut rng).unwrap();
        let w = b.weights.unwrap();
        for (i, c) in b.layouts.iter().enumerate() {
            let (row, px) = (i / 256, i % 256);
            let expect = if c.is_void() { 0.0 } else { 1.0 };
            for ch in 0..3 {
                assert_eq!(w[[row, px * 3 + ch]], expect);
            }
        }
    }
}
