//! Deterministic probability flow integration.
//!
//! The reverse process is the ODE dz/dt = (z - D(z, t)) / t integrated
//! from the largest noise level down to zero. Euler takes one denoiser
//! call per step; Heun adds a corrector call at the step target except
//! at t = 0, where the rhs is singular and the plain Euler update is
//! finite (it lands exactly on the last denoiser output).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::denoisers::Denoiser;
use crate::diffusion::TimeSchedule;
use crate::error::{PspcError, Result};
use crate::store::csv::CsvTable;
use crate::store::dataset::ImageShape;
use crate::store::manifest::{RunManifest, MANIFEST_FILE};
use crate::store::tensor::{write_tensor_file, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Euler,
    Heun,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Solver::Euler => write!(f, "euler"),
            Solver::Heun => write!(f, "heun"),
        }
    }
}

impl FromStr for Solver {
    type Err = PspcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "heun" => Ok(Solver::Heun),
            other => Err(PspcError::ConfigError(format!(
                "unknown solver {other:?}, expected euler or heun"
            ))),
        }
    }
}

/// State captured at the start of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub t: f64,
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
}

/// One integration run. `times` is the full schedule the run followed;
/// `steps` holds (t, z, x_hat) at every step start when capture was on.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub denoiser_label: String,
    pub solver: Solver,
    pub times: Vec<f64>,
    pub steps: Vec<TrajectoryStep>,
    pub final_z: Vec<f64>,
}

/// Right-hand side (z - D(z, t)) / t of the probability flow ODE.
pub fn pf_ode_rhs(denoiser: &dyn Denoiser, z: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(PspcError::DomainError(format!(
            "the flow field needs t > 0, got {t}"
        )));
    }
    let x_hat = denoiser.denoise(z, t)?;
    Ok(z.iter().zip(&x_hat).map(|(z, x)| (z - x) / t).collect())
}

/// Integrates the flow along a schedule. Works on any strictly
/// decreasing schedule; when the schedule ends at 0 the last step uses
/// the Euler update for both solvers.
pub fn integrate(
    denoiser: &dyn Denoiser,
    schedule: &TimeSchedule,
    z_init: &[f64],
    solver: Solver,
    capture: bool,
) -> Result<Trajectory> {
    let times = schedule.all();
    if times.len() < 2 {
        return Err(PspcError::ConfigError(
            "schedule needs at least two points to step between".into(),
        ));
    }
    if z_init.is_empty() {
        return Err(PspcError::ShapeMismatch("empty initial state".into()));
    }

    let mut z = z_init.to_vec();
    let mut steps = Vec::new();
    for pair in times.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let h = t1 - t0;
        let x_hat = denoiser.denoise(&z, t0)?;
        if x_hat.len() != z.len() {
            return Err(PspcError::ShapeMismatch(format!(
                "denoiser returned {} values for {} inputs",
                x_hat.len(),
                z.len()
            )));
        }
        let d1: Vec<f64> = z.iter().zip(&x_hat).map(|(z, x)| (z - x) / t0).collect();
        let predicted: Vec<f64> = z.iter().zip(&d1).map(|(z, d)| z + h * d).collect();
        let next = match solver {
            Solver::Euler => predicted,
            Solver::Heun => {
                if t1 > 0.0 {
                    let x_hat1 = denoiser.denoise(&predicted, t1)?;
                    let mut next = z.clone();
                    for i in 0..next.len() {
                        let d2 = (predicted[i] - x_hat1[i]) / t1;
                        next[i] += h * 0.5 * (d1[i] + d2);
                    }
                    next
                } else {
                    predicted
                }
            }
        };
        if capture {
            steps.push(TrajectoryStep {
                t: t0,
                z: std::mem::take(&mut z),
                x_hat,
            });
        }
        z = next;
    }
    Ok(Trajectory {
        denoiser_label: denoiser.label(),
        solver,
        times: times.to_vec(),
        steps,
        final_z: z,
    })
}

/// Euler sampling down to t = 0. The schedule must end at 0.
pub fn sample_euler(
    denoiser: &dyn Denoiser,
    schedule: &TimeSchedule,
    z_init: &[f64],
    capture: bool,
) -> Result<Trajectory> {
    require_terminal(schedule)?;
    integrate(denoiser, schedule, z_init, Solver::Euler, capture)
}

/// Heun sampling down to t = 0: predictor-corrector between positive
/// levels, Euler on the final step. The schedule must end at 0.
pub fn sample_heun(
    denoiser: &dyn Denoiser,
    schedule: &TimeSchedule,
    z_init: &[f64],
    capture: bool,
) -> Result<Trajectory> {
    require_terminal(schedule)?;
    integrate(denoiser, schedule, z_init, Solver::Heun, capture)
}

fn require_terminal(schedule: &TimeSchedule) -> Result<()> {
    if !schedule.has_terminal_zero() {
        return Err(PspcError::ConfigError(
            "sampling needs a schedule that ends at 0".into(),
        ));
    }
    Ok(())
}

/// Runs one trajectory per initial state, in parallel.
pub fn sample_batch(
    denoiser: &dyn Denoiser,
    schedule: &TimeSchedule,
    z_inits: &[Vec<f64>],
    solver: Solver,
    capture: bool,
) -> Result<Vec<Trajectory>> {
    z_inits
        .par_iter()
        .map(|z0| match solver {
            Solver::Euler => sample_euler(denoiser, schedule, z0, capture),
            Solver::Heun => sample_heun(denoiser, schedule, z0, capture),
        })
        .collect()
}

/// Writes a captured trajectory to a directory: stacked z and x_hat
/// tensors (steps, H, W, C), the final state, step times as CSV, and a
/// run manifest.
pub fn save_trajectory(dir: &Path, trajectory: &Trajectory, shape: ImageShape) -> Result<()> {
    if trajectory.steps.is_empty() {
        return Err(PspcError::ConfigError(
            "trajectory was integrated without capture".into(),
        ));
    }
    if trajectory.final_z.len() != shape.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "trajectory states hold {} values, shape wants {}",
            trajectory.final_z.len(),
            shape.len()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let s = trajectory.steps.len();
    let dims = vec![s, shape.h, shape.w, shape.c];
    let mut zs = Vec::with_capacity(s * shape.len());
    let mut xs = Vec::with_capacity(s * shape.len());
    let mut times = CsvTable::new(vec!["t"])?;
    for step in &trajectory.steps {
        zs.extend_from_slice(&step.z);
        xs.extend_from_slice(&step.x_hat);
        times.push_row(&[step.t])?;
    }
    write_tensor_file(&Tensor::from_f64(dims.clone(), zs)?, &dir.join("z.pspc"))?;
    write_tensor_file(&Tensor::from_f64(dims, xs)?, &dir.join("xhat.pspc"))?;
    write_tensor_file(
        &Tensor::from_f64(vec![shape.h, shape.w, shape.c], trajectory.final_z.clone())?,
        &dir.join("final.pspc"),
    )?;
    times.write(&dir.join("times.csv"))?;
    let mut manifest = RunManifest::new();
    manifest.set("kind", "trajectory")?;
    manifest.set("denoiser", &trajectory.denoiser_label)?;
    manifest.set("solver", trajectory.solver.to_string())?;
    manifest.set("n_steps", trajectory.steps.len().to_string())?;
    manifest.set("n_times", trajectory.times.len().to_string())?;
    manifest.write(&dir.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::empirical::optimal_denoise;
    use crate::diffusion::edm_schedule;
    use crate::store::dataset::{ImageDataset, ImageShape};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Optimal {
        ds: ImageDataset,
    }

    impl Denoiser for Optimal {
        fn label(&self) -> String {
            "optimal".into()
        }

        fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
            optimal_denoise(&self.ds, z, t, None)
        }
    }

    struct Constant {
        c: f64,
    }

    impl Denoiser for Constant {
        fn label(&self) -> String {
            "constant".into()
        }

        fn denoise(&self, z: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(vec![self.c; z.len()])
        }
    }

    struct Counting<'a> {
        inner: &'a dyn Denoiser,
        calls: AtomicUsize,
    }

    impl Denoiser for Counting<'_> {
        fn label(&self) -> String {
            "counting".into()
        }

        fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.denoise(z, t)
        }
    }

    fn three_point() -> ImageDataset {
        let shape = ImageShape::new(1, 1, 1).unwrap();
        ImageDataset::from_values("p", shape, vec![-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn rhs_is_zero_at_a_fixed_point_and_matches_the_posterior() {
        let den = Constant { c: 0.7 };
        let rhs = pf_ode_rhs(&den, &[0.7], 2.5).unwrap();
        assert_eq!(rhs, vec![0.0]);

        let den = Optimal { ds: three_point() };
        let rhs = pf_ode_rhs(&den, &[1.0], 1.0).unwrap();
        assert!((rhs[0] - 0.50359858618087603).abs() < 1e-12);

        assert!(pf_ode_rhs(&den, &[1.0], 0.0).is_err());
        assert!(pf_ode_rhs(&den, &[1.0], -1.0).is_err());
    }

    #[test]
    fn rhs_is_affine_in_z_for_a_constant_denoiser() {
        let den = Constant { c: 0.2 };
        let t = 3.0;
        let a = 0.5;
        let r0 = pf_ode_rhs(&den, &[1.1], t).unwrap();
        let r1 = pf_ode_rhs(&den, &[1.1 + a], t).unwrap();
        assert!((r1[0] - r0[0] - a / t).abs() < 1e-15);
    }

    #[test]
    fn single_image_dataset_is_recovered_exactly() {
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let image = vec![0.3, -0.8, 0.1, 0.9];
        let ds = ImageDataset::from_values("one", shape, image.clone()).unwrap();
        let den = Optimal { ds };
        let schedule = edm_schedule(&Default::default(), 7).unwrap();
        let z0 = vec![35.0, -12.0, 4.0, -80.0];
        for solver in [Solver::Euler, Solver::Heun] {
            let traj = integrate(&den, &schedule, &z0, solver, false).unwrap();
            for (a, b) in traj.final_z.iter().zip(&image) {
                assert!((a - b).abs() < 1e-9, "{solver} missed: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_denoiser_lands_on_the_constant() {
        let den = Constant { c: -0.37 };
        let schedule = edm_schedule(&Default::default(), 4).unwrap();
        let traj = sample_heun(&den, &schedule, &[10.0, -5.0], false).unwrap();
        for v in traj.final_z {
            assert!((v - -0.37).abs() < 1e-9);
        }
    }

    #[test]
    fn denoiser_call_counts_match_the_solver_contract() {
        let n = 6;
        let schedule = edm_schedule(&Default::default(), n).unwrap();
        let inner = Constant { c: 0.0 };

        let counting = Counting {
            inner: &inner,
            calls: AtomicUsize::new(0),
        };
        sample_euler(&counting, &schedule, &[1.0], false).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), n);

        let counting = Counting {
            inner: &inner,
            calls: AtomicUsize::new(0),
        };
        sample_heun(&counting, &schedule, &[1.0], false).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 2 * (n - 1) + 1);
    }

    #[test]
    fn sampling_requires_a_terminating_schedule() {
        let schedule = TimeSchedule::new(vec![10.0, 1.0]).unwrap();
        let den = Constant { c: 0.0 };
        assert!(matches!(
            sample_euler(&den, &schedule, &[1.0], false),
            Err(PspcError::ConfigError(_))
        ));
        assert!(matches!(
            sample_heun(&den, &schedule, &[1.0], false),
            Err(PspcError::ConfigError(_))
        ));
        // plain integration over positive levels is allowed
        assert!(integrate(&den, &schedule, &[1.0], Solver::Heun, false).is_ok());
    }

    #[test]
    fn capture_records_every_step_start() {
        let den = Optimal { ds: three_point() };
        let schedule = edm_schedule(&Default::default(), 5).unwrap();
        let traj = sample_heun(&den, &schedule, &[2.0], true).unwrap();
        assert_eq!(traj.times, schedule.all());
        assert_eq!(traj.steps.len(), 5);
        for (step, &t) in traj.steps.iter().zip(schedule.positive()) {
            assert_eq!(step.t, t);
            assert_eq!(step.z.len(), 1);
            assert_eq!(step.x_hat.len(), 1);
        }
        let plain = sample_heun(&den, &schedule, &[2.0], false).unwrap();
        assert!(plain.steps.is_empty());
        assert_eq!(plain.final_z, traj.final_z);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let den = Optimal { ds: three_point() };
        let schedule = edm_schedule(&Default::default(), 9).unwrap();
        let a = sample_heun(&den, &schedule, &[1.75], true).unwrap();
        let b = sample_heun(&den, &schedule, &[1.75], true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_matches_individual_runs() {
        let den = Optimal { ds: three_point() };
        let schedule = edm_schedule(&Default::default(), 6).unwrap();
        let inits = vec![vec![3.0], vec![-0.5], vec![0.0]];
        let batch = sample_batch(&den, &schedule, &inits, Solver::Heun, false).unwrap();
        for (z0, traj) in inits.iter().zip(&batch) {
            let single = sample_heun(&den, &schedule, z0, false).unwrap();
            assert_eq!(single.final_z, traj.final_z);
        }
    }

    #[test]
    fn saved_trajectories_round_trip_through_tensors() {
        let shape = ImageShape::new(1, 1, 1).unwrap();
        let ds = ImageDataset::from_values("p", shape, vec![-1.0, 0.0, 1.0]).unwrap();
        let den = Optimal { ds };
        let schedule = edm_schedule(&Default::default(), 4).unwrap();
        let traj = sample_euler(&den, &schedule, &[1.3], true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_trajectory(dir.path(), &traj, shape).unwrap();

        let z = crate::store::tensor::read_tensor_file(&dir.path().join("z.pspc")).unwrap();
        assert_eq!(z.dims(), &[4, 1, 1, 1]);
        let flat = z.into_f64();
        for (k, step) in traj.steps.iter().enumerate() {
            assert_eq!(flat[k], step.z[0]);
        }
        let fin = crate::store::tensor::read_tensor_file(&dir.path().join("final.pspc")).unwrap();
        assert_eq!(fin.into_f64(), traj.final_z);
        let times = CsvTable::read(&dir.path().join("times.csv")).unwrap();
        assert_eq!(times.n_rows(), 4);

        let uncaptured = sample_euler(&den, &schedule, &[1.3], false).unwrap();
        assert!(save_trajectory(dir.path(), &uncaptured, shape).is_err());
    }
}
