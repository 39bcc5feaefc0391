//! Numerical integration of a learned velocity field.
//!
//! Forward Euler runs `z += v(z, t) / N` over `t = 0, 1/N, ..., (N-1)/N` and
//! maps images to masks. Reverse Euler runs `z -= v(z, t) / N` over
//! `t = 1, (N-1)/N, ..., 1/N` and maps masks to images. Dormand-Prince 5(4)
//! with step-size control is available for either direction.

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{CategoryId, PerturbationConfig};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::velocity::VelocityField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Rk45,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RkTolerances {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for RkTolerances {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            rtol: 1e-6,
            h_init: 0.04,
            h_min: 1e-8,
            max_steps: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub direction: Direction,
    /// Euler step count N.
    pub steps: usize,
    pub solver: Solver,
    pub rk: RkTolerances,
    pub capture_trajectory: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            direction: Direction::Forward,
            steps: 25,
            solver: Solver::Euler,
            rk: RkTolerances::default(),
            capture_trajectory: false,
        }
    }
}

impl SolveConfig {
    pub fn euler(direction: Direction, steps: usize) -> Self {
        Self {
            direction,
            steps,
            ..Self::default()
        }
    }

    pub fn rk45(direction: Direction, atol: f64, rtol: f64) -> Self {
        Self {
            direction,
            solver: Solver::Rk45,
            rk: RkTolerances {
                atol,
                rtol,
                ..RkTolerances::default()
            },
            ..Self::default()
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.steps == 0 {
            p.push("solve.steps must be >= 1".to_string());
        }
        if !(self.rk.atol > 0.0 && self.rk.rtol > 0.0) {
            p.push("solve tolerances must be > 0".to_string());
        }
        if !(self.rk.h_init > 0.0 && self.rk.h_min > 0.0 && self.rk.h_min <= self.rk.h_init) {
            p.push("solve.h_init and solve.h_min must be > 0 with h_min <= h_init".to_string());
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
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub z: Array2<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub z: Array2<f64>,
    pub trajectory: Option<Trajectory>,
    /// Number of field evaluations.
    pub evaluations: usize,
}

fn check_finite(z: &Array2<f64>, step: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverDiverged { step })
    }
}

fn eval<F: VelocityField + ?Sized>(field: &F, z: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    let ts = vec![t.clamp(0.0, 1.0); z.nrows()];
    field.velocity(z.view(), &ts)
}

/// Dispatches on `cfg.solver` and `cfg.direction`.
pub fn solve<F: VelocityField + ?Sized>(field: &F, z: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Solution> {
    match (cfg.solver, cfg.direction) {
        (Solver::Euler, Direction::Forward) => solve_forward(field, z, cfg),
        (Solver::Euler, Direction::Reverse) => solve_reverse(field, z, cfg),
        (Solver::Rk45, _) => solve_rk(field, z, cfg),
    }
}

pub fn solve_forward<F: VelocityField + ?Sized>(field: &F, z0: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Solution> {
    if cfg.direction != Direction::Forward {
        return Err(Error::InvalidArgument("solve_forward needs direction = forward".into()));
    }
    cfg.validate()?;
    let mut z = z0.to_owned();
    check_finite(&z, 0)?;
    let n = cfg.steps;
    let dt = 1.0 / n as f64;
    let mut traj = cfg.capture_trajectory.then(|| Trajectory {
        states: vec![TrajectoryState { t: 0.0, z: z.clone() }],
    });
    for i in 0..n {
        let t = i as f64 / n as f64;
        let v = eval(field, &z, t)?;
        z.scaled_add(dt, &v);
        check_finite(&z, i + 1)?;
        if let Some(tr) = traj.as_mut() {
            tr.states.push(TrajectoryState {
                t: (i + 1) as f64 / n as f64,
                z: z.clone(),
            });
        }
    }
    Ok(Solution {
        z,
        trajectory: traj,
        evaluations: n,
    })
}

pub fn solve_reverse<F: VelocityField + ?Sized>(field: &F, z1: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Solution> {
    if cfg.direction != Direction::Reverse {
        return Err(Error::InvalidArgument("solve_reverse needs direction = reverse".into()));
    }
    cfg.validate()?;
    let mut z = z1.to_owned();
    check_finite(&z, 0)?;
    let n = cfg.steps;
    let dt = 1.0 / n as f64;
    let mut traj = cfg.capture_trajectory.then(|| Trajectory {
        states: vec![TrajectoryState { t: 1.0, z: z.clone() }],
    });
    for (step, i) in (1..=n).rev().enumerate() {
        let t = i as f64 / n as f64;
        let v = eval(field, &z, t)?;
        z.scaled_add(-dt, &v);
        check_finite(&z, step + 1)?;
        if let Some(tr) = traj.as_mut() {
            tr.states.push(TrajectoryState {
                t: (i - 1) as f64 / n as f64,
                z: z.clone(),
            });
        }
    }
    Ok(Solution {
        z,
        trajectory: traj,
        evaluations: n,
    })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration over the unit interval. The reverse
/// direction integrates `-v(z, 1 - s)` in `s`, so `t = 1 - s` runs from 1 to 0.
pub fn solve_rk<F: VelocityField + ?Sized>(field: &F, z_start: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    let tol = cfg.rk;
    let (sign, to_t): (f64, fn(f64) -> f64) = match cfg.direction {
        Direction::Forward => (1.0, |s| s),
        Direction::Reverse => (-1.0, |s| 1.0 - s),
    };
    let rhs = |z: &Array2<f64>, s: f64| -> Result<Array2<f64>> {
        let mut v = eval(field, z, to_t(s.min(1.0)))?;
        if sign < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        Ok(v)
    };

    let mut z = z_start.to_owned();
    check_finite(&z, 0)?;
    let mut traj = cfg.capture_trajectory.then(|| Trajectory {
        states: vec![TrajectoryState { t: to_t(0.0), z: z.clone() }],
    });
    let mut s = 0.0;
    let mut h = tol.h_init.min(1.0);
    let mut k1 = rhs(&z, s)?;
    let mut evaluations = 1;
    let mut accepted = 0;
    let mut attempts = 0;
    while s < 1.0 {
        attempts += 1;
        if attempts > tol.max_steps {
            return Err(Error::StepUnderflow { t: to_t(s), h });
        }
        let last = s + h >= 1.0;
        if last {
            h = 1.0 - s;
        }
        let mut ks: Vec<Array2<f64>> = Vec::with_capacity(7);
        ks.push(k1.clone());
        for stage in 1..7 {
            let mut y = z.clone();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    y.scaled_add(h * a, kj);
                }
            }
            ks.push(rhs(&y, s + C[stage] * h)?);
            evaluations += 1;
        }
        let mut z_new = z.clone();
        let mut err_vec = Array2::<f64>::zeros(z.dim());
        for (i, k) in ks.iter().enumerate() {
            if B5[i] != 0.0 {
                z_new.scaled_add(h * B5[i], k);
            }
            err_vec.scaled_add(h * (B5[i] - B4[i]), k);
        }
        let mut acc = 0.0;
        Zip::from(&err_vec).and(&z).and(&z_new).for_each(|&e, &y0, &y1| {
            let sc = tol.atol + tol.rtol * y0.abs().max(y1.abs());
            acc += (e / sc) * (e / sc);
        });
        let err = (acc / err_vec.len().max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::SolverDiverged { step: accepted + 1 });
        }
        if err <= 1.0 {
            accepted += 1;
            s = if last { 1.0 } else { s + h };
            z = z_new;
            check_finite(&z, accepted)?;
            k1 = ks.pop().expect("seven stages");
            if let Some(tr) = traj.as_mut() {
                tr.states.push(TrajectoryState { t: to_t(s), z: z.clone() });
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
        if s < 1.0 && h < tol.h_min {
            return Err(Error::StepUnderflow { t: to_t(s), h });
        }
    }
    Ok(Solution {
        z,
        trajectory: traj,
        evaluations,
    })
}

/// Image -> latent -> forward flow -> pixels. Returns the decoded pixel values
/// (normalized) without nearest-anchor decoding.
pub fn segment_pixels(model: &FlowModel, images: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Array2<f64>> {
    let cfg = cfg.with_direction(Direction::Forward);
    let z0 = model.codec.encode(images)?;
    let z1 = solve(&model.net, z0.view(), &cfg)?.z;
    model.codec.decode(z1.view())
}

/// Deterministic segmentation: one category per pixel per image row.
pub fn segment(model: &FlowModel, images: ArrayView2<'_, f64>, cfg: &SolveConfig) -> Result<Vec<CategoryId>> {
    let pixels = segment_pixels(model, images, cfg)?;
    let mut out = Vec::with_capacity(images.nrows() * model.geometry.pixels());
    for row in pixels.rows() {
        out.extend(model.geometry.decode_sample(row.as_slice().expect("owned rows are contiguous")));
    }
    Ok(out)
}

/// Layouts (`n * pixels` categories) -> perturbed pseudo masks -> reverse flow
/// -> normalized pixels, one row per layout. `beta_prime` defaults to the
/// training amplitude.
pub fn synthesize(
    model: &FlowModel,
    layouts: &[CategoryId],
    beta_prime: Option<f64>,
    seed: u64,
    cfg: &SolveConfig,
) -> Result<Array2<f64>> {
    let geom = &model.geometry;
    let px = geom.pixels();
    if layouts.is_empty() || !layouts.len().is_multiple_of(px) {
        return Err(Error::Shape(format!("layouts must hold a positive multiple of {px} cells")));
    }
    let beta = beta_prime.unwrap_or(model.beta);
    let pert = PerturbationConfig::new(beta, &geom.anchors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = layouts.len() / px;
    let mut masks = Array2::<f64>::zeros((n, geom.sample_dim()));
    for (i, layout) in layouts.chunks_exact(px).enumerate() {
        let (values, _) = geom.render_mask(layout, Some((&pert, &mut rng)))?;
        masks.row_mut(i).assign(&ndarray::ArrayView1::from(&values));
    }
    let z1 = model.codec.encode(masks.view())?;
    let cfg = cfg.with_direction(Direction::Reverse);
    let z0 = solve(&model.net, z1.view(), &cfg)?.z;
    model.codec.decode(z0.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Constant(Vec<f64>);
    impl VelocityField for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, z: ArrayView2<'_, f64>, _t: &[f64]) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn(z.dim(), |(_, j)| self.0[j]))
        }
    }

    struct Linear;
    impl VelocityField for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn velocity(&self, z: ArrayView2<'_, f64>, _t: &[f64]) -> Result<Array2<f64>> {
            Ok(z.to_owned())
        }
    }

    struct Exploding;
    impl VelocityField for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn velocity(&self, z: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
            Ok(z.mapv(|_| if t[0] > 0.5 { f64::INFINITY } else { 1.0 }))
        }
    }

    /// Straight-line oracle for a known pair: v(z, t) = z1 - z0 everywhere.
    fn straight(z0: &Array2<f64>, z1: &Array2<f64>) -> Constant {
        Constant((z1 - z0).row(0).to_vec())
    }

    #[test]
    fn zero_field_is_identity_both_ways() {
        let f = Constant(vec![0.0, 0.0]);
        let z = array![[1.5, -2.0]];
        for n in [1, 3, 25] {
            assert_eq!(solve_forward(&f, z.view(), &SolveConfig::euler(Direction::Forward, n)).unwrap().z, z);
            assert_eq!(solve_reverse(&f, z.view(), &SolveConfig::euler(Direction::Reverse, n)).unwrap().z, z);
        }
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let f = Constant(vec![0.75, -2.5]);
        let z0 = array![[1.0, 1.0]];
        for n in [1, 2, 7, 25] {
            let z1 = solve_forward(&f, z0.view(), &SolveConfig::euler(Direction::Forward, n)).unwrap().z;
            assert!((z1[[0, 0]] - 1.75).abs() < 1e-12 && (z1[[0, 1]] + 1.5).abs() < 1e-12);
            let back = solve_reverse(&f, z1.view(), &SolveConfig::euler(Direction::Reverse, n)).unwrap().z;
            assert!((&back - &z0).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn straight_oracle_hits_target() {
        let z0 = array![[0.3, -1.2, 4.0]];
        let z1 = array![[-2.0, 0.5, 1.0]];
        let f = straight(&z0, &z1);
        for n in [1, 2, 25] {
            let hat = solve_forward(&f, z0.view(), &SolveConfig::euler(Direction::Forward, n)).unwrap().z;
            assert!((&hat - &z1).iter().all(|d| d.abs() < 1e-9));
            let back = solve_reverse(&f, z1.view(), &SolveConfig::euler(Direction::Reverse, n)).unwrap().z;
            assert!((&back - &z0).iter().all(|d| d.abs() < 1e-9));
        }
    }

    #[test]
    fn rk45_reproduces_exponential() {
        let cfg = SolveConfig::rk45(Direction::Forward, 1e-10, 1e-10);
        let z = solve_rk(&Linear, array![[1.0]].view(), &cfg).unwrap().z;
        assert!((z[[0, 0]] - std::f64::consts::E).abs() < 1e-6, "{}", z[[0, 0]]);
        // reverse: dz/dt = z integrated from t = 1 down to 0 starting at e
        let cfg = SolveConfig::rk45(Direction::Reverse, 1e-10, 1e-10);
        let z = solve_rk(&Linear, array![[std::f64::consts::E]].view(), &cfg).unwrap().z;
        assert!((z[[0, 0]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rk45_matches_euler_on_constant_field() {
        let f = Constant(vec![2.0, -1.0]);
        let z0 = array![[0.5, 0.5]];
        let rk = solve_rk(&f, z0.view(), &SolveConfig::rk45(Direction::Forward, 1e-8, 1e-8)).unwrap().z;
        let eu = solve_forward(&f, z0.view(), &SolveConfig::euler(Direction::Forward, 25)).unwrap().z;
        assert!((&rk - &eu).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rk45_underflow_is_reported() {
        let mut cfg = SolveConfig::rk45(Direction::Forward, 1e-14, 1e-14);
        cfg.rk.h_min = 0.5;
        cfg.rk.h_init = 0.5;
        let r = solve_rk(&Linear, array![[1.0]].view(), &cfg);
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }

    #[test]
    fn trajectory_grid_and_endpoints() {
        let f = Constant(vec![1.0]);
        let z0 = array![[0.0], [2.0]];
        let mut cfg = SolveConfig::euler(Direction::Forward, 4);
        cfg.capture_trajectory = true;
        let sol = solve_forward(&f, z0.view(), &cfg).unwrap();
        let tr = sol.trajectory.unwrap();
        assert_eq!(tr.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(tr.states[0].z, z0);
        assert_eq!(tr.states.last().unwrap().z, sol.z);

        let mut cfg = SolveConfig::euler(Direction::Reverse, 4);
        cfg.capture_trajectory = true;
        let sol = solve_reverse(&f, z0.view(), &cfg).unwrap();
        let tr = sol.trajectory.unwrap();
        assert_eq!(tr.times(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(tr.states.last().unwrap().z, sol.z);
    }

    #[test]
    fn rk_trajectory_is_monotone() {
        let mut cfg = SolveConfig::rk45(Direction::Reverse, 1e-8, 1e-8);
        cfg.capture_trajectory = true;
        let tr = solve_rk(&Linear, array![[1.0]].view(), &cfg).unwrap().trajectory.unwrap();
        let t = tr.times();
        assert_eq!(t[0], 1.0);
        assert_eq!(*t.last().unwrap(), 0.0);
        assert!(t.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn divergence_reports_step() {
        let r = solve_forward(&Exploding, array![[0.0]].view(), &SolveConfig::euler(Direction::Forward, 4));
        assert!(matches!(r, Err(Error::SolverDiverged { step: 4 })));
    }

    #[test]
    fn direction_mismatch_is_rejected() {
        let f = Constant(vec![0.0]);
        assert!(solve_forward(&f, array![[0.0]].view(), &SolveConfig::euler(Direction::Reverse, 2)).is_err());
        assert!(solve_reverse(&f, array![[0.0]].view(), &SolveConfig::euler(Direction::Forward, 2)).is_err());
        assert!(SolveConfig::euler(Direction::Forward, 0).validate().is_err());
    }
}
