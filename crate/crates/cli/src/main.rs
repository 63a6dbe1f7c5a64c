//! Command line front end: dataset ingestion, evaluation sets,
//! denoising, sampling, sweeps, heatmaps, and schedule tuning. Every
//! command writes its outputs plus a manifest into --out.

mod spec;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use pspc_core::composite::{
    lambda_schedule_to_table, size_schedule_to_table, tune_lambda_schedule, tune_size_schedule,
    MapsAtT, TuneObjective,
};
use pspc_core::diffusion::{derive_seed, edm_schedule, log_uniform_grid, sample_forward,
    sample_prior, DiffusionProcess};
use pspc_core::error::{PspcError, Result};
use pspc_core::eval::{
    build_forward_evalset, compare_samples, load_evalset, mse_sweep, patch_error_sweep,
    save_compare, save_evalset,
};
use pspc_core::sampler::{sample_batch, save_trajectory, Solver};
use pspc_core::sensitivity::{
    save_maps, sensitivity_map, synthetic_blob_maps, BlobWidth, SensitivityOptions,
};
use pspc_core::store::csv::CsvTable;
use pspc_core::store::dataset::ImageDataset;
use pspc_core::store::manifest::{RunManifest, MANIFEST_FILE};
use pspc_core::store::tensor::{read_tensor_file, write_tensor_file, Tensor};

use spec::{load_dataset, load_maps, parse_denoiser, parse_f64_list, parse_usize_list};

#[derive(Parser)]
#[command(name = "pspc", version, about = "Training-free diffusion denoisers")]
struct Cli {
    /// Output directory for results and the run manifest.
    #[arg(long, global = true, default_value = "run-out")]
    out: PathBuf,

    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 keeps the default pool).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long, default_value_t = 0.002)]
    sigma_min: f64,
    #[arg(long, default_value_t = 80.0)]
    sigma_max: f64,
    #[arg(long, default_value_t = 7.0)]
    rho: f64,
}

impl ProcessArgs {
    fn build(&self) -> Result<DiffusionProcess> {
        DiffusionProcess::new(self.sigma_min, self.sigma_max, self.rho)
    }
}

/// Noise-level grid selection: an explicit list, a warped schedule, or
/// log-uniform endpoints. Grids run from large t to small.
#[derive(Args)]
struct GridArgs {
    /// Explicit noise levels, comma separated.
    #[arg(long)]
    t_grid: Option<String>,

    /// Positive levels of an n-step warped schedule (the default, n=18).
    #[arg(long)]
    edm_steps: Option<usize>,

    /// Log-uniform grid: low end.
    #[arg(long)]
    t_lo: Option<f64>,

    /// Log-uniform grid: high end.
    #[arg(long)]
    t_hi: Option<f64>,

    /// Log-uniform grid: number of levels.
    #[arg(long)]
    t_count: Option<usize>,
}

impl GridArgs {
    fn resolve(&self, process: &DiffusionProcess) -> Result<Vec<f64>> {
        if let Some(list) = &self.t_grid {
            return parse_f64_list(list);
        }
        if let (Some(lo), Some(hi), Some(count)) = (self.t_lo, self.t_hi, self.t_count) {
            let mut grid = log_uniform_grid(lo, hi, count)?;
            grid.reverse();
            return Ok(grid);
        }
        let schedule = edm_schedule(process, self.edm_steps.unwrap_or(18))?;
        Ok(schedule.positive().to_vec())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a dataset (image directory or tensor file) and save it.
    Ingest {
        /// Image directory, saved dataset, or tensor file.
        #[arg(long)]
        input: PathBuf,
        /// Dataset name recorded in the manifest.
        #[arg(long)]
        name: Option<String>,
    },
    /// Build a forward-process evaluation set over a noise grid.
    FwdEvalset {
        #[arg(long)]
        dataset: PathBuf,
        /// Noisy states per noise level.
        #[arg(long, default_value_t = 256)]
        m: usize,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        process: ProcessArgs,
    },
    /// Run one denoiser on given or freshly noised states.
    Denoise {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        denoiser: String,
        /// Noise level of the input states.
        #[arg(long)]
        t: f64,
        /// State tensor (H,W,C) or (M,H,W,C); omitted = forward samples.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Forward samples to draw when no input file is given.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Integrate the probability flow from seeded priors.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "optimal")]
        denoiser: String,
        /// euler or heun.
        #[arg(long, default_value = "heun")]
        solver: String,
        #[arg(long, default_value_t = 18)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Also write per-sample trajectory directories.
        #[arg(long)]
        capture: bool,
        #[command(flatten)]
        process: ProcessArgs,
    },
    /// Mean squared error of a denoiser against a reference, per level.
    MseSweep {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding a saved evaluation set.
        #[arg(long)]
        evalset: PathBuf,
        #[arg(long)]
        denoiser: String,
        #[arg(long, default_value = "optimal")]
        reference: String,
    },
    /// Patch posterior error against a reference, per level and size.
    PatchSweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        evalset: PathBuf,
        /// Patch sizes, comma separated.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value = "optimal")]
        reference: String,
    },
    /// Sensitivity heatmaps of a denoiser over a noise grid.
    Gradmap {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "optimal")]
        denoiser: String,
        /// auto (analytic when available, else finite differences) or blob.
        #[arg(long, default_value = "auto")]
        source: String,
        /// Forward samples averaged per map.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        fd_step: Option<f64>,
        #[arg(long)]
        block_cols: Option<usize>,
        /// Blob surrogate width scale (width = scale * t^exponent).
        #[arg(long)]
        blob_scale: Option<f64>,
        #[arg(long)]
        blob_exponent: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        process: ProcessArgs,
    },
    /// Concentration side lengths of saved heatmaps.
    Concentration {
        /// Gradmap output directory, or a bare map tensor (then --ts).
        #[arg(long)]
        maps: PathBuf,
        /// Noise levels for a bare map tensor.
        #[arg(long)]
        ts: Option<String>,
        /// Mass fractions, comma separated.
        #[arg(long, default_value = "0.5,0.9")]
        fractions: String,
    },
    /// Pick per-level patch sizes or mass fractions against a reference.
    TuneSchedule {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "optimal")]
        reference: String,
        /// Candidate square sizes (size tuning), comma separated.
        #[arg(long)]
        sizes: Option<String>,
        /// Heatmaps for mass-fraction tuning (gradmap dir or tensor).
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Noise levels for a bare map tensor.
        #[arg(long)]
        map_ts: Option<String>,
        /// Candidate mass fractions, comma separated.
        #[arg(long, default_value = "0.25,0.5,0.75,1.0")]
        lambdas: String,
        #[arg(long, default_value_t = 8)]
        samples_per_t: usize,
        /// composite or patch.
        #[arg(long, default_value = "composite")]
        objective: String,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        process: ProcessArgs,
    },
    /// Sample several denoisers from shared priors and compare finals.
    CompareSamples {
        #[arg(long)]
        dataset: PathBuf,
        /// Denoiser spec; give the flag once per denoiser.
        #[arg(long = "denoiser", required = true)]
        denoisers: Vec<String>,
        #[arg(long, default_value_t = 18)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[command(flatten)]
        process: ProcessArgs,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| PspcError::ConfigError(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.clone();
    let seed = cli.seed;
    match cli.command {
        Command::Ingest { input, name } => cmd_ingest(&out, seed, &input, name),
        Command::FwdEvalset {
            dataset,
            m,
            grid,
            process,
        } => cmd_fwd_evalset(&out, seed, &dataset, m, &grid, &process),
        Command::Denoise {
            dataset,
            denoiser,
            t,
            input,
            count,
        } => cmd_denoise(&out, seed, &dataset, &denoiser, t, input.as_deref(), count),
        Command::Sample {
            dataset,
            denoiser,
            solver,
            steps,
            count,
            capture,
            process,
        } => cmd_sample(
            &out, seed, &dataset, &denoiser, &solver, steps, count, capture, &process,
        ),
        Command::MseSweep {
            dataset,
            evalset,
            denoiser,
            reference,
        } => cmd_mse_sweep(&out, &dataset, &evalset, &denoiser, &reference),
        Command::PatchSweep {
            dataset,
            evalset,
            sizes,
            reference,
        } => cmd_patch_sweep(&out, &dataset, &evalset, &sizes, &reference),
        Command::Gradmap {
            dataset,
            denoiser,
            source,
            samples,
            fd_step,
            block_cols,
            blob_scale,
            blob_exponent,
            grid,
            process,
        } => cmd_gradmap(
            &out,
            seed,
            &dataset,
            &denoiser,
            &source,
            samples,
            fd_step,
            block_cols,
            blob_scale,
            blob_exponent,
            &grid,
            &process,
        ),
        Command::Concentration {
            maps,
            ts,
            fractions,
        } => cmd_concentration(&out, &maps, ts.as_deref(), &fractions),
        Command::TuneSchedule {
            dataset,
            reference,
            sizes,
            maps,
            map_ts,
            lambdas,
            samples_per_t,
            objective,
            grid,
            process,
        } => cmd_tune_schedule(
            &out,
            seed,
            &dataset,
            &reference,
            sizes.as_deref(),
            maps.as_deref(),
            map_ts.as_deref(),
            &lambdas,
            samples_per_t,
            &objective,
            &grid,
            &process,
        ),
        Command::CompareSamples {
            dataset,
            denoisers,
            steps,
            count,
            process,
        } => cmd_compare_samples(&out, seed, &dataset, &denoisers, steps, count, &process),
    }
}

/// Adds command details to the manifest in `dir`, creating it or
/// extending whatever a library saver already wrote there.
fn finish_manifest(dir: &Path, seed: Option<u64>, extra: &[(&str, String)]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut m = if path.exists() {
        RunManifest::read(&path)?
    } else {
        RunManifest::new()
    };
    if let Some(seed) = seed {
        m.set("seed", seed)?;
    }
    for (k, v) in extra {
        m.set(k, v)?;
    }
    m.write(&path)
}

fn cmd_ingest(out: &Path, seed: u64, input: &Path, name: Option<String>) -> Result<()> {
    let mut ds = load_dataset(input)?;
    if let Some(name) = name {
        ds = ImageDataset::from_values(&name, ds.shape(), ds.data().to_vec())?;
    }
    ds.save(out)?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "ingest".into()),
            ("input", input.display().to_string()),
        ],
    )?;
    let shape = ds.shape();
    println!(
        "ingested {} images of {}x{}x{} into {} (hash {})",
        ds.n(),
        shape.h,
        shape.w,
        shape.c,
        out.display(),
        &ds.hash()[..12]
    );
    Ok(())
}

fn cmd_fwd_evalset(
    out: &Path,
    seed: u64,
    dataset: &Path,
    m: usize,
    grid: &GridArgs,
    process: &ProcessArgs,
) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let ts = grid.resolve(&process.build()?)?;
    let set = build_forward_evalset(&ds, &ts, m, seed)?;
    save_evalset(out, &set)?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "fwd-evalset".into()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "wrote evaluation set ({} levels x {} states) to {}",
        ts.len(),
        m,
        out.display()
    );
    Ok(())
}

fn cmd_denoise(
    out: &Path,
    seed: u64,
    dataset: &Path,
    denoiser_spec: &str,
    t: f64,
    input: Option<&Path>,
    count: usize,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let den = parse_denoiser(denoiser_spec, &ds, None)?;
    let shape = ds.shape();
    let zs: Vec<Vec<f64>> = match input {
        Some(path) => {
            let tensor = read_tensor_file(path)?;
            let dims = tensor.dims().to_vec();
            let (batch, rest): (usize, &[usize]) = match dims.len() {
                3 => (1, &dims[..]),
                4 => (dims[0], &dims[1..]),
                n => {
                    return Err(PspcError::ShapeMismatch(format!(
                        "state tensor must be rank 3 or 4, got rank {n}"
                    )))
                }
            };
            if rest != [shape.h, shape.w, shape.c] {
                return Err(PspcError::ShapeMismatch(format!(
                    "states are {rest:?}, dataset images are {}x{}x{}",
                    shape.h, shape.w, shape.c
                )));
            }
            let flat = tensor.into_f64();
            flat.chunks(shape.len()).take(batch).map(<[f64]>::to_vec).collect()
        }
        None => sample_forward(&ds, t, count, seed)?
            .into_iter()
            .map(|s| s.z)
            .collect(),
    };
    let mut xhat = Vec::with_capacity(zs.len() * shape.len());
    for z in &zs {
        xhat.extend(den.denoise(z, t)?);
    }
    let dims = vec![zs.len(), shape.h, shape.w, shape.c];
    write_tensor_file(
        &Tensor::from_f64(dims.clone(), zs.concat())?,
        &out.join("z.pspc"),
    )?;
    write_tensor_file(&Tensor::from_f64(dims, xhat)?, &out.join("xhat.pspc"))?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "denoise".into()),
            ("denoiser", den.label()),
            ("t", t.to_string()),
            ("dataset_hash", ds.hash().to_owned()),
            (
                "input",
                input.map_or("forward-samples".into(), |p| p.display().to_string()),
            ),
        ],
    )?;
    println!(
        "denoised {} states at t={t} with {} into {}",
        zs.len(),
        den.label(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    out: &Path,
    seed: u64,
    dataset: &Path,
    denoiser_spec: &str,
    solver: &str,
    steps: usize,
    count: usize,
    capture: bool,
    process: &ProcessArgs,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let den = parse_denoiser(denoiser_spec, &ds, None)?;
    let solver: Solver = solver.parse()?;
    let process = process.build()?;
    let schedule = edm_schedule(&process, steps)?;
    let shape = ds.shape();
    let priors = sample_prior(shape.len(), process.sigma_max, count, seed)?;
    let trajectories = sample_batch(den.as_ref(), &schedule, &priors, solver, capture)?;

    let mut finals = Vec::with_capacity(count * shape.len());
    for traj in &trajectories {
        finals.extend_from_slice(&traj.final_z);
    }
    write_tensor_file(
        &Tensor::from_f64(vec![count, shape.h, shape.w, shape.c], finals)?,
        &out.join("finals.pspc"),
    )?;
    let mut times = CsvTable::new(vec!["t"])?;
    for &t in &trajectories[0].times {
        times.push_row(&[t])?;
    }
    times.write(&out.join("times.csv"))?;
    if capture {
        for (i, traj) in trajectories.iter().enumerate() {
            save_trajectory(&out.join(format!("traj_{i:03}")), traj, shape)?;
        }
    }
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "sample".into()),
            ("denoiser", den.label()),
            ("solver", solver.to_string()),
            ("steps", steps.to_string()),
            ("count", count.to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "sampled {count} states ({solver}, {steps} steps, {}) into {}",
        den.label(),
        out.display()
    );
    Ok(())
}

fn cmd_mse_sweep(
    out: &Path,
    dataset: &Path,
    evalset: &Path,
    denoiser_spec: &str,
    reference_spec: &str,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let set = load_evalset(evalset)?;
    let den = parse_denoiser(denoiser_spec, &ds, Some(set.ts()))?;
    let reference = parse_denoiser(reference_spec, &ds, Some(set.ts()))?;
    let table = mse_sweep(den.as_ref(), reference.as_ref(), &set)?;
    table.write(&out.join("sweep.csv"))?;
    finish_manifest(
        out,
        None,
        &[
            ("command", "mse-sweep".into()),
            ("denoiser", den.label()),
            ("reference", reference.label()),
            ("evalset", evalset.display().to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "swept {} vs {} over {} levels into {}",
        den.label(),
        reference.label(),
        set.ts().len(),
        out.display()
    );
    Ok(())
}

fn cmd_patch_sweep(
    out: &Path,
    dataset: &Path,
    evalset: &Path,
    sizes: &str,
    reference_spec: &str,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let set = load_evalset(evalset)?;
    let sizes = parse_usize_list(sizes)?;
    let reference = parse_denoiser(reference_spec, &ds, Some(set.ts()))?;
    let table = patch_error_sweep(&ds, &sizes, reference.as_ref(), &set)?;
    table.write(&out.join("patch_sweep.csv"))?;
    finish_manifest(
        out,
        None,
        &[
            ("command", "patch-sweep".into()),
            ("sizes", format!("{sizes:?}")),
            ("reference", reference.label()),
            ("evalset", evalset.display().to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "swept {} patch sizes over {} levels into {}",
        sizes.len(),
        set.ts().len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradmap(
    out: &Path,
    seed: u64,
    dataset: &Path,
    denoiser_spec: &str,
    source: &str,
    samples: usize,
    fd_step: Option<f64>,
    block_cols: Option<usize>,
    blob_scale: Option<f64>,
    blob_exponent: Option<f64>,
    grid: &GridArgs,
    process: &ProcessArgs,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let ts = grid.resolve(&process.build()?)?;
    let shape = ds.shape();
    let maps = match source {
        "blob" => {
            let mut width = BlobWidth::default();
            if let Some(s) = blob_scale {
                width.scale = s;
            }
            if let Some(e) = blob_exponent {
                width.exponent = e;
            }
            ts.iter()
                .map(|&t| synthetic_blob_maps(shape.h, shape.w, width.width(t), t))
                .collect::<Result<Vec<_>>>()?
        }
        "auto" => {
            let den = parse_denoiser(denoiser_spec, &ds, None)?;
            let mut opts = SensitivityOptions::default();
            if let Some(step) = fd_step {
                opts.fd_step = step;
            }
            if let Some(cols) = block_cols {
                opts.block_cols = cols;
            }
            ts.iter()
                .enumerate()
                .map(|(ti, &t)| {
                    sensitivity_map(den.as_ref(), &ds, t, samples, derive_seed(seed, ti as u64), opts)
                })
                .collect::<Result<Vec<_>>>()?
        }
        other => {
            return Err(PspcError::ConfigError(format!(
                "unknown map source {other:?}, expected auto or blob"
            )))
        }
    };
    save_maps(&out.join("maps.pspc"), &maps)?;
    let mut ts_table = CsvTable::new(vec!["t"])?;
    for &t in &ts {
        ts_table.push_row(&[t])?;
    }
    ts_table.write(&out.join("ts.csv"))?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "gradmap".into()),
            ("source", maps[0].source().label().to_owned()),
            ("samples", samples.to_string()),
            ("levels", ts.len().to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "wrote {} heatmap stacks ({}) to {}",
        ts.len(),
        maps[0].source().label(),
        out.display()
    );
    Ok(())
}

fn cmd_concentration(
    out: &Path,
    maps_path: &Path,
    ts: Option<&str>,
    fractions: &str,
) -> Result<()> {
    let ts = match ts {
        Some(list) => Some(parse_f64_list(list)?),
        None => None,
    };
    let maps = load_maps(maps_path, ts.as_deref())?;
    let fractions = parse_f64_list(fractions)?;
    let table = pspc_core::sensitivity::concentration_table(&maps, &fractions)?;
    table.write(&out.join("concentration.csv"))?;
    finish_manifest(
        out,
        None,
        &[
            ("command", "concentration".into()),
            ("maps", maps_path.display().to_string()),
            ("fractions", format!("{fractions:?}")),
        ],
    )?;
    println!(
        "wrote concentration sides for {} levels x {} fractions to {}",
        maps.len(),
        fractions.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_tune_schedule(
    out: &Path,
    seed: u64,
    dataset: &Path,
    reference_spec: &str,
    sizes: Option<&str>,
    maps: Option<&Path>,
    map_ts: Option<&str>,
    lambdas: &str,
    samples_per_t: usize,
    objective: &str,
    grid: &GridArgs,
    process: &ProcessArgs,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let reference = parse_denoiser(reference_spec, &ds, None)?;
    let objective = match objective {
        "composite" => TuneObjective::Composite,
        "patch" => TuneObjective::PatchMean,
        other => {
            return Err(PspcError::ConfigError(format!(
                "unknown objective {other:?}, expected composite or patch"
            )))
        }
    };
    let (schedule_table, errors, chosen) = match maps {
        Some(maps_path) => {
            let map_ts = match map_ts {
                Some(list) => Some(parse_f64_list(list)?),
                None => None,
            };
            let loaded = load_maps(maps_path, map_ts.as_deref())?;
            let at_t: Vec<MapsAtT<'_>> = loaded
                .iter()
                .map(|m| MapsAtT {
                    t: m.t(),
                    maps: m.maps(),
                })
                .collect();
            let lambdas = parse_f64_list(lambdas)?;
            let tuned = tune_lambda_schedule(
                &ds,
                reference.as_ref(),
                &at_t,
                &lambdas,
                samples_per_t,
                seed,
            )?;
            (
                lambda_schedule_to_table(&tuned.schedule)?,
                tuned.table,
                "mass fractions",
            )
        }
        None => {
            let sizes = parse_usize_list(sizes.ok_or_else(|| {
                PspcError::ConfigError("size tuning needs --sizes (or pass --maps)".into())
            })?)?;
            let ts = grid.resolve(&process.build()?)?;
            let tuned = tune_size_schedule(
                &ds,
                reference.as_ref(),
                &ts,
                &sizes,
                samples_per_t,
                seed,
                objective,
            )?;
            (
                size_schedule_to_table(&tuned.schedule)?,
                tuned.table,
                "patch sizes",
            )
        }
    };
    schedule_table.write(&out.join("schedule.csv"))?;
    errors.write(&out.join("errors.csv"))?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "tune-schedule".into()),
            ("reference", reference.label()),
            ("samples_per_t", samples_per_t.to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    println!(
        "tuned {chosen} over {} levels into {}",
        schedule_table.n_rows(),
        out.display()
    );
    Ok(())
}

fn cmd_compare_samples(
    out: &Path,
    seed: u64,
    dataset: &Path,
    denoiser_specs: &[String],
    steps: usize,
    count: usize,
    process: &ProcessArgs,
) -> Result<()> {
    let ds = Arc::new(load_dataset(dataset)?);
    let boxes = denoiser_specs
        .iter()
        .map(|spec| parse_denoiser(spec, &ds, None))
        .collect::<Result<Vec<_>>>()?;
    let handles: Vec<&dyn pspc_core::denoisers::Denoiser> =
        boxes.iter().map(AsRef::as_ref).collect();
    let process = process.build()?;
    let schedule = edm_schedule(&process, steps)?;
    let shape = ds.shape();
    let priors = sample_prior(shape.len(), process.sigma_max, count, seed)?;
    let outcome = compare_samples(&handles, &ds, &schedule, &priors)?;
    save_compare(out, &outcome, shape)?;
    finish_manifest(
        out,
        Some(seed),
        &[
            ("command", "compare-samples".into()),
            ("steps", steps.to_string()),
            ("count", count.to_string()),
            ("dataset_hash", ds.hash().to_owned()),
        ],
    )?;
    for row in outcome.pairwise.rows() {
        let a = &outcome.labels[row[0] as usize];
        let b = &outcome.labels[row[1] as usize];
        println!("final mse {a} vs {b}: {:.3e}", row[2]);
    }
    println!(
        "compared {} denoisers over {count} shared priors into {}",
        handles.len(),
        out.display()
    );
    Ok(())
}
