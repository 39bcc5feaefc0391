//! Category indices as 3-channel anchor colors.
//!
//! A category `c` is written in base `k` as three digits, and each digit is
//! scaled by the spacing `s`. Decoding picks the nearest anchor in L2. Bounded
//! uniform noise with amplitude below `s/2` never changes the nearest anchor,
//! which is what makes perturbed masks usable as training targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Upper end of the valid color range.
pub const COLOR_MAX: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct CategoryId(pub u32);

impl CategoryId {
    /// Reserved label for ignored pixels. Never encoded, never counted in mIoU.
    pub const VOID: CategoryId = CategoryId(u32::MAX);

    pub fn is_void(self) -> bool {
        self == Self::VOID
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for CategoryId {
    fn from(c: u32) -> Self {
        CategoryId(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoColor(pub [f64; 3]);

impl PseudoColor {
    pub fn distance_squared(&self, other: &PseudoColor) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnchorConfig", into = "RawAnchorConfig")]
pub struct AnchorConfig {
    k: u32,
    spacing: f64,
    num_categories: u32,
}

#[derive(Serialize, Deserialize)]
struct RawAnchorConfig {
    k: u32,
    spacing: f64,
    num_categories: u32,
}

impl TryFrom<RawAnchorConfig> for AnchorConfig {
    type Error = Error;

    fn try_from(raw: RawAnchorConfig) -> Result<Self> {
        AnchorConfig::new(raw.k, raw.spacing, raw.num_categories)
    }
}

impl From<AnchorConfig> for RawAnchorConfig {
    fn from(cfg: AnchorConfig) -> Self {
        RawAnchorConfig {
            k: cfg.k,
            spacing: cfg.spacing,
            num_categories: cfg.num_categories,
        }
    }
}

impl AnchorConfig {
    pub fn new(k: u32, spacing: f64, num_categories: u32) -> Result<Self> {
        let mut problems = Vec::new();
        if k == 0 {
            problems.push("k must be positive".to_string());
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            problems.push(format!("spacing must be a positive real, got {spacing}"));
        }
        if num_categories == 0 {
            problems.push("num_categories must be positive".to_string());
        }
        if k > 0 && spacing.is_finite() && spacing * f64::from(k - 1) >= COLOR_MAX {
            problems.push(format!(
                "s*(k-1) = {} must be < {COLOR_MAX}",
                spacing * f64::from(k - 1)
            ));
        }
        let lattice = u64::from(k).pow(3);
        if u64::from(num_categories) > lattice {
            problems.push(format!(
                "num_categories = {num_categories} exceeds k^3 = {lattice}"
            ));
        }
        if problems.is_empty() {
            Ok(Self {
                k,
                spacing,
                num_categories,
            })
        } else {
            Err(Error::InvalidAnchorConfig(problems.join("; ")))
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn num_categories(&self) -> u32 {
        self.num_categories
    }

    /// Largest anchor coordinate, `s * (k - 1)`.
    pub fn extent(&self) -> f64 {
        self.spacing * f64::from(self.k - 1)
    }

    pub fn anchors(&self) -> impl Iterator<Item = PseudoColor> + '_ {
        (0..self.num_categories).map(move |c| self.anchor_unchecked(c))
    }

    fn anchor_unchecked(&self, c: u32) -> PseudoColor {
        let k = self.k;
        let m0 = c / (k * k);
        let m1 = (c - m0 * k * k) / k;
        let m2 = c - m0 * k * k - m1 * k;
        let s = self.spacing;
        PseudoColor([s * f64::from(m0), s * f64::from(m1), s * f64::from(m2)])
    }
}

/// Amplitude of the uniform perturbation added to anchors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    beta: f64,
}

impl PerturbationConfig {
    pub fn new(beta: f64, anchors: &AnchorConfig) -> Result<Self> {
        let bound = anchors.spacing() / 2.0;
        if !(beta.is_finite() && beta >= 0.0 && beta < bound) {
            return Err(Error::PerturbationTooLarge { beta, bound });
        }
        Ok(Self { beta })
    }

    pub fn none() -> Self {
        Self { beta: 0.0 }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// One draw from U(-beta, beta).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.beta * (2.0 * u - 1.0)
    }
}

pub fn encode(c: CategoryId, cfg: &AnchorConfig) -> Result<PseudoColor> {
    if c.0 >= cfg.num_categories {
        return Err(Error::CategoryOutOfRange {
            category: c.0,
            num_categories: cfg.num_categories,
        });
    }
    Ok(cfg.anchor_unchecked(c.0))
}

/// Nearest anchor among the first `num_categories`; ties go to the smaller index.
pub fn decode(p: &PseudoColor, cfg: &AnchorConfig) -> CategoryId {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, anchor) in cfg.anchors().enumerate() {
        let d = p.distance_squared(&anchor);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    CategoryId(best as u32)
}

/// `p + eps` with `eps_i ~ U(-beta, beta)` drawn from a stream seeded by `seed`.
pub fn perturb(p: &PseudoColor, cfg: &PerturbationConfig, seed: u64) -> PseudoColor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_with(p, cfg, &mut rng)
}

pub fn perturb_with<R: Rng + ?Sized>(
    p: &PseudoColor,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> PseudoColor {
    let mut out = p.0;
    for v in out.iter_mut() {
        *v += cfg.sample(rng);
    }
    PseudoColor(out)
}

pub fn encode_mask(mask: &Grid<CategoryId>, cfg: &AnchorConfig) -> Result<Grid<PseudoColor>> {
    mask.try_map(|&c| encode(c, cfg))
}

pub fn decode_mask(colors: &Grid<PseudoColor>, cfg: &AnchorConfig) -> Grid<CategoryId> {
    colors.map(|p| decode(p, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn k6_cfg(n: u32) -> AnchorConfig {
        AnchorConfig::new(6, 50.0, n).unwrap()
    }

    // Independent oracle: enumerate the lattice with three nested loops.
    fn brute_force_anchors(k: u32, s: f64, n: u32) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    out.push([s * a as f64, s * b as f64, s * c as f64]);
                }
            }
        }
        out.truncate(n as usize);
        out
    }

    #[test]
    fn encode_known_values() {
        let cfg = k6_cfg(216);
        assert_eq!(encode(CategoryId(0), &cfg).unwrap().0, [0.0, 0.0, 0.0]);
        assert_eq!(encode(CategoryId(215), &cfg).unwrap().0, [250.0, 250.0, 250.0]);
        assert_eq!(encode(CategoryId(170), &cfg).unwrap().0, [200.0, 200.0, 100.0]);
    }

    #[test]
    fn encode_matches_lattice_enumeration() {
        let cfg = k6_cfg(216);
        let oracle = brute_force_anchors(6, 50.0, 216);
        for (c, expected) in oracle.iter().enumerate() {
            assert_eq!(&encode(CategoryId(c as u32), &cfg).unwrap().0, expected);
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let cfg = k6_cfg(171);
        assert!(matches!(
            encode(CategoryId(171), &cfg),
            Err(Error::CategoryOutOfRange { category: 171, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(AnchorConfig::new(6, 50.0, 171).is_ok());
        // 51 * 5 = 255 is not < 255
        assert!(AnchorConfig::new(6, 51.0, 10).is_err());
        assert!(AnchorConfig::new(2, 50.0, 9).is_err());
        assert!(AnchorConfig::new(2, 50.0, 8).is_ok());
        assert!(AnchorConfig::new(0, 50.0, 1).is_err());
        assert!(AnchorConfig::new(3, 0.0, 1).is_err());
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let err = AnchorConfig::new(6, 60.0, 300).unwrap_err().to_string();
        assert!(err.contains("s*(k-1)"), "{err}");
        assert!(err.contains("exceeds k^3"), "{err}");
    }

    #[test]
    fn decode_known_values() {
        let cfg = k6_cfg(216);
        assert_eq!(decode(&PseudoColor([0.0, 0.0, 0.0]), &cfg), CategoryId(0));
        assert_eq!(decode(&PseudoColor([30.0, 30.0, 30.0]), &cfg), CategoryId(43));
        assert_eq!(decode(&PseudoColor([10.0, -12.0, 70.0]), &cfg), CategoryId(1));
    }

    #[test]
    fn decode_matches_brute_force_on_random_points() {
        let cfg = k6_cfg(171);
        let anchors = brute_force_anchors(6, 50.0, 171);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = [
                rng.random_range(-40.0..300.0),
                rng.random_range(-40.0..300.0),
                rng.random_range(-40.0..300.0),
            ];
            let mut best = (f64::INFINITY, 0);
            for (i, a) in anchors.iter().enumerate() {
                let d: f64 = (0..3).map(|j| (p[j] - a[j]).powi(2)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(decode(&PseudoColor(p), &cfg).index(), best.1);
        }
    }

    #[test]
    fn decode_never_emits_categories_beyond_count() {
        let cfg = k6_cfg(4);
        // (250, 250, 250) is a lattice point, but only the first 4 anchors are eligible.
        let c = decode(&PseudoColor([250.0, 250.0, 250.0]), &cfg);
        assert!(c.0 < 4);
    }

    #[test]
    fn decode_tie_breaks_to_smallest_index() {
        let cfg = k6_cfg(216);
        // Equidistant between category 0 (0,0,0) and category 1 (0,0,50).
        assert_eq!(decode(&PseudoColor([0.0, 0.0, 25.0]), &cfg), CategoryId(0));
    }

    #[test]
    fn perturbation_bounds() {
        let cfg = k6_cfg(171);
        assert!(PerturbationConfig::new(24.9, &cfg).is_ok());
        assert!(matches!(
            PerturbationConfig::new(25.0, &cfg),
            Err(Error::PerturbationTooLarge { .. })
        ));
        assert!(PerturbationConfig::new(-1.0, &cfg).is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let p = PseudoColor([50.0, 100.0, 0.0]);
        assert_eq!(perturb(&p, &PerturbationConfig::none(), 11), p);
    }

    #[test]
    fn perturb_is_deterministic_per_seed() {
        let cfg = PerturbationConfig::new(6.0, &k6_cfg(171)).unwrap();
        let p = PseudoColor([50.0, 50.0, 50.0]);
        assert_eq!(perturb(&p, &cfg, 5), perturb(&p, &cfg, 5));
        assert_ne!(perturb(&p, &cfg, 5), perturb(&p, &cfg, 6));
    }

    #[test]
    fn perturbation_at_default_amplitude_never_flips() {
        let cfg = k6_cfg(216);
        let pert = PerturbationConfig::new(6.0, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for c in 0..216 {
            let anchor = encode(CategoryId(c), &cfg).unwrap();
            for _ in 0..20 {
                let p = perturb_with(&anchor, &pert, &mut rng);
                assert_eq!(decode(&p, &cfg), CategoryId(c));
            }
        }
    }

    #[test]
    fn boundary_perturbations_never_flip() {
        let cfg = k6_cfg(216);
        let e = 25.0 - 1e-6;
        for c in 0..216 {
            let anchor = encode(CategoryId(c), &cfg).unwrap();
            for i in 0..27 {
                let signs = [i % 3, (i / 3) % 3, i / 9].map(|d| d as f64 - 1.0);
                let p = PseudoColor([
                    anchor.0[0] + signs[0] * e,
                    anchor.0[1] + signs[1] * e,
                    anchor.0[2] + signs[2] * e,
                ]);
                assert_eq!(decode(&p, &cfg), CategoryId(c));
            }
        }
    }

    #[test]
    fn perturbation_preserves_expectation() {
        let pert = PerturbationConfig::new(6.0, &k6_cfg(171)).unwrap();
        let anchor = PseudoColor([50.0, 50.0, 50.0]);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let p = perturb_with(&anchor, &pert, &mut rng);
            for j in 0..3 {
                sum[j] += p.0[j];
            }
        }
        let sigma = 6.0 / 3f64.sqrt();
        let band = 3.0 * sigma / (n as f64).sqrt();
        for s in sum {
            let mean = s / n as f64;
            assert!((mean - 50.0).abs() < band, "mean {mean}");
            assert!((mean - 50.0).abs() < 0.5);
        }
    }

    #[test]
    fn mask_round_trip_small_grids() {
        let cfg = k6_cfg(216);
        let one = Grid::new(1, 1, vec![CategoryId(0)]).unwrap();
        assert_eq!(encode_mask(&one, &cfg).unwrap().as_slice(), &[PseudoColor([0.0; 3])]);

        let g = Grid::new(2, 2, [0, 1, 7, 170].map(CategoryId).to_vec()).unwrap();
        let colors = encode_mask(&g, &cfg).unwrap();
        assert_eq!(colors.as_slice()[3].0, [200.0, 200.0, 100.0]);
        assert_eq!(decode_mask(&colors, &cfg), g);
    }

    #[test]
    fn mask_errors_carry_pixel_coordinates() {
        let cfg = k6_cfg(3);
        let g = Grid::new(2, 2, [0, 1, 2, 9].map(CategoryId).to_vec()).unwrap();
        match encode_mask(&g, &cfg) {
            Err(Error::AtPixel { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_config(k in 1u32..8, s in 1.0f64..36.0, frac in 0.0f64..1.0) {
            prop_assume!(s * f64::from(k - 1) < COLOR_MAX);
            let n = ((k.pow(3) as f64 * frac) as u32).max(1);
            let cfg = AnchorConfig::new(k, s, n).unwrap();
            for c in 0..n {
                let color = encode(CategoryId(c), &cfg).unwrap();
                prop_assert_eq!(decode(&color, &cfg), CategoryId(c));
            }
        }

        #[test]
        fn mask_round_trip(cells in proptest::collection::vec(0u32..171, 1..64), cols in 1usize..8) {
            let rows = cells.len() / cols;
            prop_assume!(rows > 0);
            let cfg = k6_cfg(171);
            let g = Grid::new(rows, cols, cells[..rows * cols].iter().copied().map(CategoryId).collect()).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&g, &cfg).unwrap(), &cfg), g);
        }

        #[test]
        fn sub_half_spacing_noise_never_flips(c in 0u32..171, e in proptest::array::uniform3(-24.999f64..24.999)) {
            let cfg = k6_cfg(171);
            let a = encode(CategoryId(c), &cfg).unwrap();
            let p = PseudoColor([a.0[0] + e[0], a.0[1] + e[1], a.0[2] + e[2]]);
            prop_assert_eq!(decode(&p, &cfg), CategoryId(c));
        }
    }
}
