//! Evaluation of a saved dictionary: distance to a reference dictionary and
//! OMP approximation error on an image or a stored signal matrix.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use itkrm::container::{load_dictionary, load_matrix};
use itkrm::dictionary::coherence;
use itkrm::image::{add_image_noise, extract_patches, load_image_gray, PatchConfig};
use itkrm::learn::write_csv_file;
use itkrm::metrics::{asym_distance, mean_atom_distance, recovered_count, sorted_atom_errors, RECOVERY_THRESHOLD};
use itkrm::omp::{approximation_power, FlatAtom};
use itkrm::rng::stream_rng;
use itkrm::signal::SignalBatch;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlatMode {
    /// Dictionary as is.
    None,
    /// The constant atom is available to OMP.
    Augment,
    /// The constant atom is in every support and not counted.
    Force,
}

impl From<FlatMode> for FlatAtom {
    fn from(m: FlatMode) -> Self {
        FlatAtom {
            augment: m != FlatMode::None,
            force: m == FlatMode::Force,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Dictionary to evaluate (binary container).
    #[arg(long)]
    pub dictionary: PathBuf,
    /// Generating dictionary for distance and recovery metrics.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// 8-bit grayscale image whose patches are approximated.
    #[arg(long, conflicts_with = "signals")]
    pub image: Option<PathBuf>,
    /// Signal matrix (binary container, one signal per column).
    #[arg(long)]
    pub signals: Option<PathBuf>,
    /// Pixel noise added to the image before patch extraction (0–255 scale).
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub patch_side: usize,
    /// Subtract the mean of every patch.
    #[arg(long)]
    pub remove_mean: bool,
    #[arg(long, default_value_t = 12)]
    pub s_max: usize,
    #[arg(long, value_enum, default_value_t = FlatMode::None)]
    pub flat: FlatMode,
    /// Directory for approx.csv and sorted_errors.csv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub coherence: f64,
    pub distance: Option<f64>,
    pub mean_atom_distance: Option<f64>,
    pub recovered: Option<usize>,
    pub relative_error: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SortedRow {
    rank: usize,
    error: f64,
}

fn load<T>(r: itkrm::Result<T>, path: &std::path::Path) -> Result<T, CliError> {
    r.with_context(|| format!("reading {}", path.display())).map_err(CliError::Runtime)
}

pub fn run_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    if args.reference.is_none() && args.image.is_none() && args.signals.is_none() {
        return Err(CliError::Spec {
            field: "reference".into(),
            reason: "give --reference, --image or --signals".into(),
        });
    }
    if args.s_max == 0 {
        return Err(CliError::Spec {
            field: "s_max".into(),
            reason: "must be positive".into(),
        });
    }
    if !(args.noise_sigma >= 0.0) {
        return Err(CliError::Spec {
            field: "noise_sigma".into(),
            reason: "must be nonnegative".into(),
        });
    }
    let dico = load(load_dictionary(&args.dictionary), &args.dictionary)?;
    let mut report = EvalReport {
        d: dico.dim(),
        k: dico.len(),
        coherence: coherence(&dico)?,
        distance: None,
        mean_atom_distance: None,
        recovered: None,
        relative_error: None,
    };
    if let Some(out) = &args.out_dir {
        std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    }
    if let Some(path) = &args.reference {
        let reference = load(load_dictionary(path), path)?;
        report.distance = Some(asym_distance(&reference, &dico)?.0);
        report.mean_atom_distance = Some(mean_atom_distance(&reference, &dico)?);
        report.recovered = Some(recovered_count(&reference, &dico, RECOVERY_THRESHOLD)?);
        if let Some(out) = &args.out_dir {
            let rows: Vec<SortedRow> = sorted_atom_errors(&reference, &dico)?
                .into_iter()
                .enumerate()
                .map(|(i, error)| SortedRow { rank: i + 1, error })
                .collect();
            write_csv_file(out.join("sorted_errors.csv"), &rows)?;
        }
    }
    let batch = if let Some(path) = &args.image {
        let clean = load(load_image_gray(path), path)?;
        let img = add_image_noise(&clean, args.noise_sigma, &mut stream_rng(args.seed, 0))?;
        let cfg = PatchConfig {
            patch_side: args.patch_side,
            stride: 1,
            remove_mean: args.remove_mean,
        };
        Some(extract_patches(&img, &cfg)?)
    } else if let Some(path) = &args.signals {
        Some(SignalBatch::from_matrix(load(load_matrix(path), path)?))
    } else {
        None
    };
    if let Some(batch) = batch {
        let flat: FlatAtom = args.flat.into();
        let limit = dico.dim().min(dico.len() + usize::from(flat.augment)) - usize::from(flat.force);
        if args.s_max > limit {
            return Err(CliError::Spec {
                field: "s_max".into(),
                reason: format!("{} exceeds {limit} for this dictionary", args.s_max),
            });
        }
        let approx = approximation_power(&dico, &batch, args.s_max, flat)?;
        if let Some(out) = &args.out_dir {
            let path = out.join("approx.csv");
            let file = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
            approx.write_csv(file)?;
        }
        report.relative_error = Some(approx.relative_error);
    }
    Ok(report)
}
