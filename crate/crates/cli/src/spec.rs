//! Denoiser spec strings and shared loading helpers.
//!
//! A spec is `name` or `name:args`, args comma-separated `key=value`
//! pairs (a bare leading value is sugar for the primary key):
//!
//!   optimal            optimal:k=16
//!   gaussian           constant:0.5
//!   patch:3            patch:s=3,k=16
//!   pspc-square:5      pspc-square:schedule=knots.csv
//!   pspc-flex:maps=DIR,lambda=0.5
//!   pspc-flex:maps=maps.pspc,ts=10;1;0.1,lambda-file=knots.csv
//!   external:dump.pspc
//!
//! `maps=DIR` points at a `gradmap` output directory (maps.pspc plus
//! ts.csv); a bare tensor path needs an explicit `ts=` list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pspc_core::composite::{
    lambda_schedule_from_table, size_schedule_from_table, LambdaSchedule, SizeSchedule,
};
use pspc_core::denoisers::Denoiser;
use pspc_core::error::{PspcError, Result};
use pspc_core::handle::{
    ConstantDenoiser, ExternalDenoiser, GaussianDenoiser, OptimalDenoiser, PatchDenoiser,
    PspcFlexDenoiser, PspcSquareDenoiser,
};
use pspc_core::sensitivity::{load_external_maps, SensitivityMap};
use pspc_core::store::csv::CsvTable;
use pspc_core::store::dataset::ImageDataset;

/// Loads a dataset from a saved dataset directory, a directory of
/// image files, or a single tensor file.
pub fn load_dataset(path: &Path) -> Result<ImageDataset> {
    if path.is_dir() {
        if path.join("images.pspc").exists() {
            return ImageDataset::load(path);
        }
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        return ImageDataset::from_image_dir(path, &name);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    ImageDataset::from_tensor_file(path, &name)
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split([',', ';'])
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| PspcError::ConfigError(format!("bad number {s:?} in list")))
        })
        .collect()
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split([',', ';'])
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| PspcError::ConfigError(format!("bad integer {s:?} in list")))
        })
        .collect()
}

/// Reads per-anchor heatmaps plus their noise levels. `path` is either
/// a gradmap output directory or a tensor file (then `ts` is required).
pub fn load_maps(path: &Path, ts: Option<&[f64]>) -> Result<Vec<SensitivityMap>> {
    if path.is_dir() {
        let table = CsvTable::read(&path.join("ts.csv"))?;
        let ts = table.column("t")?;
        return load_external_maps(&path.join("maps.pspc"), &ts);
    }
    match ts {
        Some(ts) => load_external_maps(path, ts),
        None => Err(PspcError::ConfigError(format!(
            "{} is a bare map tensor; pass ts=... with its noise levels",
            path.display()
        ))),
    }
}

struct SpecArgs {
    name: String,
    args: BTreeMap<String, String>,
}

fn split_spec(spec: &str, primary: &str) -> Result<SpecArgs> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, r),
        None => (spec, ""),
    };
    let mut args = BTreeMap::new();
    for (i, piece) in rest.split(',').enumerate() {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        match piece.split_once('=') {
            Some((k, v)) => {
                args.insert(k.trim().to_owned(), v.trim().to_owned());
            }
            None if i == 0 => {
                args.insert(primary.to_owned(), piece.to_owned());
            }
            None => {
                return Err(PspcError::ConfigError(format!(
                    "bad spec argument {piece:?} in {spec:?}"
                )));
            }
        }
    }
    Ok(SpecArgs {
        name: name.trim().to_owned(),
        args,
    })
}

fn arg_usize(args: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>> {
    match args.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| PspcError::ConfigError(format!("bad {key}={v:?}"))),
    }
}

fn arg_f64(args: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match args.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| PspcError::ConfigError(format!("bad {key}={v:?}"))),
    }
}

/// Builds a denoiser from a spec string. `eval_ts` carries the noise
/// grid of the evaluation set at hand, which external dumps align to.
pub fn parse_denoiser(
    spec: &str,
    dataset: &Arc<ImageDataset>,
    eval_ts: Option<&[f64]>,
) -> Result<Box<dyn Denoiser>> {
    let parsed = split_spec(spec, primary_key(spec))?;
    let args = &parsed.args;
    let top_k = arg_usize(args, "k")?;
    match parsed.name.as_str() {
        "optimal" => Ok(Box::new(OptimalDenoiser::new(Arc::clone(dataset), top_k))),
        "gaussian" => Ok(Box::new(GaussianDenoiser::fit(dataset)?)),
        "constant" => {
            let c = arg_f64(args, "c")?.ok_or_else(|| {
                PspcError::ConfigError("constant needs a value, e.g. constant:0.5".into())
            })?;
            Ok(Box::new(ConstantDenoiser::new(c)))
        }
        "patch" => {
            let s = arg_usize(args, "s")?.ok_or_else(|| {
                PspcError::ConfigError("patch needs a size, e.g. patch:3".into())
            })?;
            Ok(Box::new(PatchDenoiser::new(Arc::clone(dataset), s, top_k)?))
        }
        "pspc-square" => {
            let schedule = match (args.get("schedule"), arg_usize(args, "s")?) {
                (Some(file), None) => size_schedule_from_table(&CsvTable::read(Path::new(file))?)?,
                (None, Some(s)) => SizeSchedule::constant(s),
                _ => {
                    return Err(PspcError::ConfigError(
                        "pspc-square needs s=SIZE or schedule=FILE".into(),
                    ))
                }
            };
            Ok(Box::new(PspcSquareDenoiser::new(
                Arc::clone(dataset),
                schedule,
                top_k,
            )?))
        }
        "pspc-flex" => {
            let maps_path = args.get("maps").ok_or_else(|| {
                PspcError::ConfigError("pspc-flex needs maps=PATH".into())
            })?;
            let map_ts = match args.get("ts") {
                Some(list) => Some(parse_f64_list(list)?),
                None => None,
            };
            let maps = load_maps(&PathBuf::from(maps_path), map_ts.as_deref())?;
            let schedule = match (args.get("lambda-file"), arg_f64(args, "lambda")?) {
                (Some(file), None) => {
                    lambda_schedule_from_table(&CsvTable::read(Path::new(file))?)?
                }
                (None, Some(l)) => LambdaSchedule::constant(l),
                _ => {
                    return Err(PspcError::ConfigError(
                        "pspc-flex needs lambda=VALUE or lambda-file=FILE".into(),
                    ))
                }
            };
            Ok(Box::new(PspcFlexDenoiser::new(
                Arc::clone(dataset),
                maps,
                schedule,
                top_k,
            )?))
        }
        "external" => {
            let file = args.get("file").ok_or_else(|| {
                PspcError::ConfigError("external needs a file, e.g. external:dump.pspc".into())
            })?;
            let ts = eval_ts.ok_or_else(|| {
                PspcError::ConfigError(
                    "external dumps only work against an evaluation set grid".into(),
                )
            })?;
            Ok(Box::new(ExternalDenoiser::load(
                Path::new(file),
                ts.to_vec(),
            )?))
        }
        other => Err(PspcError::ConfigError(format!(
            "unknown denoiser {other:?} (try optimal, patch:S, pspc-square:S, pspc-flex:..., gaussian, constant:C, external:FILE)"
        ))),
    }
}

fn primary_key(spec: &str) -> &'static str {
    match spec.split(':').next().unwrap_or("") {
        "constant" => "c",
        "patch" | "pspc-square" => "s",
        "external" => "file",
        _ => "k",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pspc_core::store::dataset::ImageShape;

    fn tiny() -> Arc<ImageDataset> {
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let data = vec![0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4];
        Arc::new(ImageDataset::from_values("tiny", shape, data).unwrap())
    }

    #[test]
    fn bare_and_keyed_args_agree() {
        let ds = tiny();
        let a = parse_denoiser("patch:2", &ds, None).unwrap();
        let b = parse_denoiser("patch:s=2", &ds, None).unwrap();
        assert_eq!(a.label(), b.label());
    }

    #[test]
    fn optimal_top_k() {
        let ds = tiny();
        let d = parse_denoiser("optimal:k=1", &ds, None).unwrap();
        assert_eq!(d.label(), "optimal-k1");
    }

    #[test]
    fn constant_needs_value() {
        let ds = tiny();
        assert!(parse_denoiser("constant", &ds, None).is_err());
        assert!(parse_denoiser("constant:0.25", &ds, None).is_ok());
    }

    #[test]
    fn unknown_name_is_rejected() {
        let ds = tiny();
        assert!(parse_denoiser("vector-quantizer", &ds, None).is_err());
    }

    #[test]
    fn external_requires_grid() {
        let ds = tiny();
        match parse_denoiser("external:dump.pspc", &ds, None) {
            Err(e) => assert!(e.to_string().contains("evaluation set")),
            Ok(_) => panic!("external spec without a grid must fail"),
        }
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_f64_list("1, 2;3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_usize_list("1,3,5").unwrap(), vec![1, 3, 5]);
        assert!(parse_f64_list("1,x").is_err());
    }
}
