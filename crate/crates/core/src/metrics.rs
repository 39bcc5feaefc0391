//! Segmentation and distribution metrics.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::CategoryId;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Per-class true positive, predicted and ground-truth pixel counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    num_categories: usize,
    ignore: CategoryId,
    hits: Vec<u64>,
    predicted: Vec<u64>,
    actual: Vec<u64>,
    ignored: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u32,
    pub intersection: u64,
    pub union: u64,
    /// `None` when the class is absent from both prediction and ground truth.
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub miou: f64,
    pub accuracy: f64,
    pub valid_pixels: u64,
    pub ignored_pixels: u64,
    pub per_class: Vec<ClassIou>,
}

impl MiouReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,intersection,union,iou\n");
        for c in &self.per_class {
            let iou = c.iou.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", c.class, c.intersection, c.union, iou));
        }
        s.push_str(&format!("mean,,,{:.6}\n", self.miou));
        s
    }
}

impl ConfusionAccumulator {
    pub fn new(num_categories: usize, ignore: CategoryId) -> Self {
        Self {
            num_categories,
            ignore,
            hits: vec![0; num_categories],
            predicted: vec![0; num_categories],
            actual: vec![0; num_categories],
            ignored: 0,
        }
    }

    pub fn accumulate(&mut self, pred: &[CategoryId], gt: &[CategoryId]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == self.ignore {
                self.ignored += 1;
                continue;
            }
            let (pi, gi) = (p.index(), g.index());
            if pi >= self.num_categories || gi >= self.num_categories {
                return Err(Error::CategoryOutOfRange {
                    category: if pi >= self.num_categories { p.0 } else { g.0 },
                    num_categories: self.num_categories as u32,
                });
            }
            self.predicted[pi] += 1;
            self.actual[gi] += 1;
            if pi == gi {
                self.hits[pi] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.num_categories != self.num_categories || other.ignore != self.ignore {
            return Err(Error::InvalidArgument("accumulators disagree on classes".into()));
        }
        for i in 0..self.num_categories {
            self.hits[i] += other.hits[i];
            self.predicted[i] += other.predicted[i];
            self.actual[i] += other.actual[i];
        }
        self.ignored += other.ignored;
        Ok(())
    }

    pub fn valid_pixels(&self) -> u64 {
        self.actual.iter().sum()
    }

    pub fn report(&self) -> Result<MiouReport> {
        let valid = self.valid_pixels();
        if valid == 0 {
            return Err(Error::NoValidPixels);
        }
        let per_class: Vec<ClassIou> = (0..self.num_categories)
            .map(|i| {
                let union = self.predicted[i] + self.actual[i] - self.hits[i];
                ClassIou {
                    class: i as u32,
                    intersection: self.hits[i],
                    union,
                    iou: (union > 0).then(|| self.hits[i] as f64 / union as f64),
                }
            })
            .collect();
        let present: Vec<f64> = per_class.iter().filter_map(|c| c.iou).collect();
        Ok(MiouReport {
            miou: present.iter().sum::<f64>() / present.len() as f64,
            accuracy: self.hits.iter().sum::<u64>() as f64 / valid as f64,
            valid_pixels: valid,
            ignored_pixels: self.ignored,
            per_class,
        })
    }
}

/// mIoU over flat label sequences.
pub fn miou(pred: &[CategoryId], gt: &[CategoryId], num_categories: usize, ignore: CategoryId) -> Result<MiouReport> {
    if gt.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = ConfusionAccumulator::new(num_categories, ignore);
    acc.accumulate(pred, gt)?;
    acc.report()
}

pub fn miou_grids(
    pred: &[Grid<CategoryId>],
    gt: &[Grid<CategoryId>],
    num_categories: usize,
    ignore: CategoryId,
) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted grids for {} labels", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = ConfusionAccumulator::new(num_categories, ignore);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_shape(g) {
            return Err(Error::Shape(format!("grid {i}: {}x{} vs {}x{}", p.rows(), p.cols(), g.rows(), g.cols())));
        }
        acc.accumulate(p.as_slice(), g.as_slice())?;
    }
    acc.report()
}

/// Fraction of non-ignored positions where `a` and `b` agree.
pub fn agreement(a: &[CategoryId], b: &[CategoryId], ignore: CategoryId) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} labels", a.len(), b.len())));
    }
    let (mut same, mut n) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        if y == ignore {
            continue;
        }
        n += 1;
        same += usize::from(x == y);
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(same as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdReport {
    /// Unbiased squared MMD.
    pub statistic: f64,
    pub bandwidth: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub permutations: usize,
    pub p_value: Option<f64>,
    pub null_q95: Option<f64>,
    pub null_q99: Option<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pooled(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("sample dims {} vs {}", a.ncols(), b.ncols())));
    }
    ndarray::concatenate(ndarray::Axis(0), &[a, b]).map_err(|e| Error::Shape(e.to_string()))
}

/// Median pairwise Euclidean distance.
pub fn median_heuristic(x: ArrayView2<'_, f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples("median heuristic needs >= 2 samples".into()));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        Ok(*m)
    } else {
        Ok(1.0)
    }
}

fn kernel_matrix(x: &Array2<f64>, h: f64) -> Array2<f64> {
    let n = x.nrows();
    let g = 1.0 / (2.0 * h * h);
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in i + 1..n {
            let v = (-g * sq_dist(x.row(i), x.row(j))).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Unbiased squared MMD between index sets of a pooled kernel matrix.
fn mmd_from_kernel(k: &Array2<f64>, ia: &[usize], ib: &[usize]) -> f64 {
    let within = |idx: &[usize]| {
        let mut s = 0.0;
        for (p, &i) in idx.iter().enumerate() {
            for &j in &idx[p + 1..] {
                s += k[[i, j]];
            }
        }
        2.0 * s / (idx.len() * (idx.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &i in ia {
        for &j in ib {
            cross += k[[i, j]];
        }
    }
    within(ia) + within(ib) - 2.0 * cross / (ia.len() * ib.len()) as f64
}

fn resolve_bandwidth(policy: Bandwidth, pool: &Array2<f64>) -> Result<f64> {
    match policy {
        Bandwidth::Median => median_heuristic(pool.view()),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {h}"))),
    }
}

fn check_sizes(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "unbiased MMD needs >= 2 samples per set, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

/// Unbiased squared MMD with an RBF kernel `exp(-|x-y|^2 / (2 h^2))`.
pub fn mmd(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: Bandwidth) -> Result<MmdReport> {
    mmd_permutation_test(a, b, bandwidth, 0, 0)
}

/// As [`mmd`], plus a permutation test with `permutations` relabelings of the
/// pooled sample. The p-value counts the observed split as one permutation.
pub fn mmd_permutation_test(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    bandwidth: Bandwidth,
    permutations: usize,
    seed: u64,
) -> Result<MmdReport> {
    check_sizes(&a, &b)?;
    let pool = pooled(a, b)?;
    let h = resolve_bandwidth(bandwidth, &pool)?;
    let k = kernel_matrix(&pool, h);
    let (na, nb) = (a.nrows(), b.nrows());
    let idx: Vec<usize> = (0..na + nb).collect();
    let statistic = mmd_from_kernel(&k, &idx[..na], &idx[na..]);
    let (mut p_value, mut q95, mut q99) = (None, None, None);
    if permutations > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm = idx.clone();
        let mut null = Vec::with_capacity(permutations);
        for _ in 0..permutations {
            perm.shuffle(&mut rng);
            null.push(mmd_from_kernel(&k, &perm[..na], &perm[na..]));
        }
        let exceed = null.iter().filter(|&&v| v >= statistic).count();
        p_value = Some((1 + exceed) as f64 / (1 + permutations) as f64);
        null.sort_by(f64::total_cmp);
        let q = |p: f64| null[((p * permutations as f64).ceil() as usize).clamp(1, permutations) - 1];
        q95 = Some(q(0.95));
        q99 = Some(q(0.99));
    }
    Ok(MmdReport {
        statistic,
        bandwidth: h,
        n_a: na,
        n_b: nb,
        permutations,
        p_value,
        null_q95: q95,
        null_q99: q99,
    })
}

/// Biased (V-statistic) squared MMD; exactly 0 for identical sets.
pub fn mmd_biased(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: Bandwidth) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let pool = pooled(a, b)?;
    let h = resolve_bandwidth(bandwidth, &pool)?;
    let k = kernel_matrix(&pool, h);
    let (na, nb) = (a.nrows(), b.nrows());
    let mean = |r: std::ops::Range<usize>, c: std::ops::Range<usize>| {
        let n = (r.len() * c.len()) as f64;
        let mut s = 0.0;
        for i in r {
            for j in c.clone() {
                s += k[[i, j]];
            }
        }
        s / n
    };
    Ok(mean(0..na, 0..na) + mean(na..na + nb, na..na + nb) - 2.0 * mean(0..na, na..na + nb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterminismReport {
    pub runs: usize,
    /// Mean over run pairs and rows of the row-wise L2 distance.
    pub mean_pairwise_l2: f64,
    /// Mean over run pairs of the fraction of disagreeing labels.
    pub disagreement: Option<f64>,
}

fn mean_pairwise_rows(outputs: &[Array2<f64>]) -> Result<f64> {
    let shape = outputs[0].dim();
    if outputs.iter().any(|o| o.dim() != shape) {
        return Err(Error::Shape("outputs differ in shape".into()));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            for (ra, rb) in outputs[i].rows().into_iter().zip(outputs[j].rows()) {
                total += sq_dist(ra, rb).sqrt();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Spread of outputs produced by the same inputs under different seeds.
pub fn determinism_gap(outputs: &[Array2<f64>], labels: Option<&[Vec<CategoryId>]>) -> Result<DeterminismReport> {
    if outputs.len() < 2 {
        return Err(Error::InsufficientSamples("determinism gap needs >= 2 runs".into()));
    }
    let mean_pairwise_l2 = mean_pairwise_rows(outputs)?;
    let disagreement = match labels {
        None => None,
        Some(l) => {
            if l.len() != outputs.len() {
                return Err(Error::Shape(format!("{} label runs for {} outputs", l.len(), outputs.len())));
            }
            let mut acc = 0.0;
            let mut pairs = 0;
            for i in 0..l.len() {
                for j in i + 1..l.len() {
                    if l[i].len() != l[j].len() || l[i].is_empty() {
                        return Err(Error::Shape("label runs differ in length".into()));
                    }
                    let diff = l[i].iter().zip(&l[j]).filter(|(a, b)| a != b).count();
                    acc += diff as f64 / l[i].len() as f64;
                    pairs += 1;
                }
            }
            Some(acc / pairs as f64)
        }
    };
    Ok(DeterminismReport {
        runs: outputs.len(),
        mean_pairwise_l2,
        disagreement,
    })
}

/// `per_layout[l]` holds one row per synthesized sample for layout `l`.
/// Returns the within-layout mean pairwise L2 distance, averaged over layouts.
pub fn diversity(per_layout: &[Array2<f64>]) -> Result<f64> {
    if per_layout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for set in per_layout {
        if set.nrows() < 2 {
            return Err(Error::InsufficientSamples("diversity needs >= 2 samples per layout".into()));
        }
        let rows: Vec<Array2<f64>> = set.rows().into_iter().map(|r| r.to_owned().insert_axis(ndarray::Axis(0))).collect();
        total += mean_pairwise_rows(&rows)?;
    }
    Ok(total / per_layout.len() as f64)
}

/// `key=value` pairs on one line, in the given order.
pub fn kv_line(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn ids(v: &[u32]) -> Vec<CategoryId> {
        v.iter().map(|&c| CategoryId(c)).collect()
    }

    #[test]
    fn perfect_prediction() {
        let gt = ids(&[0, 1, 2, 2, 1]);
        let r = miou(&gt, &gt, 3, CategoryId::VOID).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn hand_counted_example() {
        let r = miou(&ids(&[0, 1, 1, 1]), &ids(&[0, 0, 1, 1]), 2, CategoryId::VOID).unwrap();
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].intersection, 1);
        assert_eq!(r.per_class[0].union, 2);
        assert_eq!(r.per_class[1].union, 3);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let r = miou(&ids(&[0, 0]), &ids(&[0, 0]), 5, CategoryId::VOID).unwrap();
        assert_eq!(r.miou, 1.0);
        assert!(r.per_class[3].iou.is_none());
    }

    #[test]
    fn ignored_pixels_excluded() {
        let v = CategoryId::VOID;
        let r = miou(&ids(&[0, 1, 1]), &[CategoryId(0), v, v], 2, v).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.ignored_pixels, 2);
        assert!(matches!(miou(&ids(&[0]), &[v], 2, v), Err(Error::NoValidPixels)));
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(miou(&ids(&[0]), &ids(&[0, 1]), 2, CategoryId::VOID).is_err());
        let a = Grid::new(1, 2, ids(&[0, 1])).unwrap();
        let b = Grid::new(2, 1, ids(&[0, 1])).unwrap();
        assert!(miou_grids(&[a.clone()], &[b], 2, CategoryId::VOID).is_err());
        assert_eq!(miou_grids(&[a.clone()], &[a], 2, CategoryId::VOID).unwrap().miou, 1.0);
    }

    #[test]
    fn csv_has_one_row_per_class() {
        let r = miou(&ids(&[0, 1, 1, 1]), &ids(&[0, 0, 1, 1]), 2, CategoryId::VOID).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.ends_with("mean,,,0.583333\n"));
    }

    fn labels(n: usize, k: u32) -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
        (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
    }

    proptest! {
        #[test]
        fn accumulator_is_additive((p, g) in labels(40, 4), split in 0usize..40) {
            let (p, g) = (ids(&p), ids(&g));
            let mut whole = ConfusionAccumulator::new(4, CategoryId::VOID);
            whole.accumulate(&p, &g).unwrap();
            let mut a = ConfusionAccumulator::new(4, CategoryId::VOID);
            a.accumulate(&p[..split], &g[..split]).unwrap();
            let mut b = ConfusionAccumulator::new(4, CategoryId::VOID);
            b.accumulate(&p[split..], &g[split..]).unwrap();
            a.merge(&b).unwrap();
            prop_assert_eq!(a, whole);
        }

        #[test]
        fn miou_in_unit_interval_and_permutation_invariant((p, g) in labels(30, 3), seed in any::<u64>()) {
            let (p, g) = (ids(&p), ids(&g));
            let r = miou(&p, &g, 3, CategoryId::VOID).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.miou));
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<_> = order.iter().map(|&i| p[i]).collect();
            let gg: Vec<_> = order.iter().map(|&i| g[i]).collect();
            prop_assert_eq!(miou(&pp, &gg, 3, CategoryId::VOID).unwrap().miou, r.miou);
        }

        #[test]
        fn miou_relabeling_equivariant((p, g) in labels(30, 3)) {
            let relabel = |v: &[u32]| ids(&v.iter().map(|&c| (c + 1) % 3).collect::<Vec<_>>());
            let a = miou(&ids(&p), &ids(&g), 3, CategoryId::VOID).unwrap().miou;
            let b = miou(&relabel(&p), &relabel(&g), 3, CategoryId::VOID).unwrap().miou;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn gaussian(n: usize, mean: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            mean + e
        })
    }

    /// Direct O(n^2) evaluation of the unbiased estimator from its definition.
    fn mmd_oracle(a: &Array2<f64>, b: &Array2<f64>, h: f64) -> f64 {
        let k = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| (-sq_dist(x, y) / (2.0 * h * h)).exp();
        let (m, n) = (a.nrows(), b.nrows());
        let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    xx += k(a.row(i), a.row(j));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    yy += k(b.row(i), b.row(j));
                }
            }
        }
        for i in 0..m {
            for j in 0..n {
                xy += k(a.row(i), b.row(j));
            }
        }
        xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64
    }

    #[test]
    fn unbiased_estimate_matches_definition() {
        let a = gaussian(15, 0.0, 1);
        let b = gaussian(11, 0.7, 2);
        let r = mmd(a.view(), b.view(), Bandwidth::Fixed(1.3)).unwrap();
        assert!((r.statistic - mmd_oracle(&a, &b, 1.3)).abs() < 1e-12);
    }

    #[test]
    fn identical_sets() {
        let a = gaussian(60, 0.0, 3);
        assert!(mmd_biased(a.view(), a.view(), Bandwidth::Median).unwrap().abs() < 1e-12);
        let r = mmd_permutation_test(a.view(), a.view(), Bandwidth::Median, 200, 1).unwrap();
        assert!(r.statistic <= r.null_q95.unwrap(), "{r:?}");
    }

    #[test]
    fn separated_gaussians_are_detected() {
        let a = gaussian(100, 0.0, 4);
        let b = gaussian(100, 3.0, 5);
        let r = mmd_permutation_test(a.view(), b.view(), Bandwidth::Median, 200, 2).unwrap();
        assert!(r.statistic > r.null_q99.unwrap());
        assert!(r.p_value.unwrap() < 0.01);
    }

    #[test]
    fn symmetric_and_permutation_invariant() {
        let a = gaussian(20, 0.0, 6);
        let b = gaussian(25, 0.5, 7);
        let ab = mmd(a.view(), b.view(), Bandwidth::Median).unwrap();
        let ba = mmd(b.view(), a.view(), Bandwidth::Median).unwrap();
        assert!((ab.statistic - ba.statistic).abs() < 1e-14);
        let rev_a = a.slice(ndarray::s![..;-1, ..]).to_owned();
        let rev_b = b.slice(ndarray::s![..;-1, ..]).to_owned();
        let r = mmd(rev_a.view(), rev_b.view(), Bandwidth::Median).unwrap();
        assert!((r.statistic - ab.statistic).abs() < 1e-14);
    }

    #[test]
    fn too_few_samples() {
        let a = array![[0.0, 0.0]];
        let b = gaussian(5, 0.0, 8);
        assert!(matches!(mmd(a.view(), b.view(), Bandwidth::Median), Err(Error::InsufficientSamples(_))));
        assert!(mmd(b.view(), b.view(), Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn median_of_three_points() {
        let x = array![[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]];
        // distances 5, 1, sqrt(18)
        assert!((median_heuristic(x.view()).unwrap() - 18f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn determinism_gap_cases() {
        let o = array![[1.0, 2.0], [3.0, 4.0]];
        let l = vec![ids(&[0, 1]), ids(&[0, 1])];
        let r = determinism_gap(&[o.clone(), o.clone()], Some(&l)).unwrap();
        assert_eq!(r.mean_pairwise_l2, 0.0);
        assert_eq!(r.disagreement, Some(0.0));

        let shifted = &o + &array![[3.0, 4.0], [0.0, 0.0]];
        let l2 = vec![ids(&[0, 1]), ids(&[1, 1])];
        let r = determinism_gap(&[o.clone(), shifted], Some(&l2)).unwrap();
        assert_eq!(r.mean_pairwise_l2, 2.5);
        assert_eq!(r.disagreement, Some(0.5));
        assert!(determinism_gap(&[o], None).is_err());
    }

    #[test]
    fn diversity_cases() {
        let same = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert_eq!(diversity(&[same.clone()]).unwrap(), 0.0);
        let spread = array![[0.0, 0.0], [0.0, 2.0]];
        assert_eq!(diversity(&[same, spread]).unwrap(), 1.0);
    }

    #[test]
    fn agreement_skips_ignored() {
        let v = CategoryId::VOID;
        assert_eq!(agreement(&ids(&[0, 1, 2]), &[CategoryId(0), CategoryId(0), v], v).unwrap(), 0.5);
    }
}
