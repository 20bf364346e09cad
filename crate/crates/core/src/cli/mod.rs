//! The `vifuse` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod output;
pub mod params;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::{
    fit_vi_experiment, pixel_dataset, synth_dataset, toy_segmentation_experiment, FitConfig,
    SegConfig, SynthSpec, TrainSchedule, VariantRegistry, CLASS_NAMES,
};
use crate::gradsuite::{CaseReport, GradSuite, TOLERANCE, TRIALS};
use crate::indices::{
    compute_vi, correlation_from_columns, vci_stats, CorrelationMatrix, ViKind, ViParams,
};
use crate::norm::NormMode;
use crate::raster::{load_image, NrgbImage};
use output::{ensure_dir, write_atomic, write_raster_csv, write_raster_png16};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Environment variable selecting the worker thread count.
pub const THREADS_VAR: &str = "VIFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "vifuse",
    version,
    about = "Vegetation indices, learnable index fusion and additive group normalization"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Vegetation index rasters and correlations.
    Vi {
        #[command(subcommand)]
        action: ViCommand,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Fit indices from raw NRGB pixels with a two-layer network.
    FitExperiment(FitArgs),
    /// Train the toy segmentation network under each fusion variant.
    ToySeg(ToySegArgs),
    /// Save or inspect an index parameter file.
    Params {
        #[command(subcommand)]
        action: ParamsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ViCommand {
    /// Compute index rasters for one image.
    Compute(ComputeArgs),
    /// Pairwise Pearson correlation of the twelve network-input indices.
    Corr(CorrArgs),
}

#[derive(Debug, Subcommand)]
enum ParamsCommand {
    Save {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a parameter file and print its values.
    Load { file: PathBuf },
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Parameter file written by `params save`; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    /// IAVI blue-red correction.
    #[arg(long)]
    gamma: Option<f64>,
    /// SAVI soil factor (0, 0.5 or 1).
    #[arg(long)]
    savi_l: Option<f64>,
    /// Smallest denominator magnitude.
    #[arg(long)]
    clip_eps: Option<f64>,
    /// Dataset NDVI minimum for VCI.
    #[arg(long, requires = "ndvi_max", allow_negative_numbers = true)]
    ndvi_min: Option<f64>,
    /// Dataset NDVI maximum for VCI.
    #[arg(long, requires = "ndvi_min", allow_negative_numbers = true)]
    ndvi_max: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<ViParams> {
        let mut p = match &self.params {
            Some(path) => params::read_params(open(path)?)?,
            None => ViParams::default(),
        };
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.savi_l {
            p.savi_l = v;
        }
        if let Some(v) = self.clip_eps {
            p.clip_eps = v;
        }
        if let (Some(lo), Some(hi)) = (self.ndvi_min, self.ndvi_max) {
            p.ndvi_range = Some((lo, hi));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RasterFormat {
    Csv,
    Png16,
}

#[derive(Debug, Args)]
struct ComputeArgs {
    /// 8-bit RGB image.
    #[arg(long)]
    rgb: PathBuf,
    /// 8-bit single-channel NIR image.
    #[arg(long)]
    nir: PathBuf,
    /// 8-bit mask, nonzero = valid.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Index name, or `all` for the twelve network-input indices.
    #[arg(long)]
    kind: String,
    #[command(flatten)]
    params: ParamArgs,
    /// Take the VCI extrema from this image itself.
    #[arg(long)]
    dataset_stats: bool,
    #[arg(long, value_enum, default_value_t = RasterFormat::Csv)]
    format: RasterFormat,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorrArgs {
    /// Directories holding `<name>_rgb.png` / `<name>_nir.png` pairs, or RGB files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TRIALS)]
    trials: usize,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormChoice {
    Bn,
    Agn,
    Both,
}

impl NormChoice {
    fn modes(self) -> &'static [NormMode] {
        match self {
            NormChoice::Bn => &[NormMode::Batch],
            NormChoice::Agn => &[NormMode::Additive],
            NormChoice::Both => &[NormMode::Batch, NormMode::Additive],
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of synthetic images.
    #[arg(long)]
    images: Option<usize>,
    /// Side length of each synthetic image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum, default_value_t = NormChoice::Both)]
    norm: NormChoice,
    /// `all`, or a comma-separated list of index names.
    #[arg(long, default_value = "all")]
    vi: String,
    /// Directories or RGB files of real imagery; synthetic data otherwise.
    #[arg(long)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Pixels sampled per index.
    #[arg(long, default_value_t = 5000)]
    pixels: usize,
    /// Number of repetitions; BN and AGN share each seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// First training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ToySegArgs {
    /// Variant name, or `all`.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// First training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Directory for `runs.csv`, `epochs.csv` and `summary.csv`.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::UnknownName { .. } | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::param(format!("{THREADS_VAR}={raw:?} is not a positive integer"))
        })?;
    // A pool configured earlier in the process is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Vi {
            action: ViCommand::Compute(a),
        } => cmd_vi_compute(&a, stdout),
        Command::Vi {
            action: ViCommand::Corr(a),
        } => cmd_vi_corr(&a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(
            &GradSuite::standard(),
            a.seed,
            a.trials,
            a.out.as_deref(),
            stdout,
        ),
        Command::FitExperiment(a) => cmd_fit_experiment(&a, stdout),
        Command::ToySeg(a) => cmd_toy_seg(&a, stdout),
        Command::Params {
            action: ParamsCommand::Save { params, out },
        } => {
            let p = params.resolve()?;
            write_atomic(&out, |w| params::write_params(&p, w))?;
            Ok(EXIT_OK)
        }
        Command::Params {
            action: ParamsCommand::Load { file },
        } => {
            let p = params::read_params(open(&file)?)?;
            writeln!(stdout, "gamma={}", p.gamma)?;
            writeln!(stdout, "savi_l={}", p.savi_l)?;
            writeln!(stdout, "clip_eps={}", p.clip_eps)?;
            if let Some((lo, hi)) = p.ndvi_range {
                writeln!(stdout, "ndvi_min={lo}")?;
                writeln!(stdout, "ndvi_max={hi}")?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn parse_kinds(spec: &str) -> Result<Vec<ViKind>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(ViKind::network_inputs().collect());
    }
    let mut kinds = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: ViKind = name.parse()?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(Error::param("no index names given"));
    }
    Ok(kinds)
}

fn cmd_vi_compute(a: &ComputeArgs, stdout: &mut dyn Write) -> Result<u8> {
    let kinds = parse_kinds(&a.kind)?;
    let mut params = a.params.resolve()?;
    let image = load_image(&a.rgb, &a.nir, a.mask.as_deref())?;
    if a.dataset_stats && params.ndvi_range.is_none() {
        let (lo, hi) = vci_stats(std::slice::from_ref(&image), &params)?;
        params = params.with_ndvi_range(lo, hi);
    }
    let rasters = kinds
        .iter()
        .map(|&k| compute_vi(k, &image, &params))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(&a.out)?;
    for r in &rasters {
        let stem = r.kind.name();
        match a.format {
            RasterFormat::Csv => {
                let path = a.out.join(format!("{stem}.csv"));
                write_atomic(&path, |w| write_raster_csv(r, w))?;
            }
            RasterFormat::Png16 => write_raster_png16(r, &a.out, stem)?,
        }
        writeln!(stdout, "{}", r.kind)?;
    }
    Ok(EXIT_OK)
}

/// Expands directories into their `*_rgb.*` files, sorted, and pairs each RGB
/// file with its `_nir` (and optional `_mask`) sibling.
pub fn discover_pairs(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf, Option<PathBuf>)>> {
    let mut rgb_files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| sibling(p, "_rgb").is_some())
                .collect();
            found.sort();
            rgb_files.extend(found);
        } else {
            rgb_files.push(input.clone());
        }
    }
    if rgb_files.is_empty() {
        return Err(Error::Empty("no *_rgb images found in the inputs".into()));
    }
    rgb_files
        .into_iter()
        .map(|rgb| {
            let nir = sibling(&rgb, "_nir").ok_or_else(|| {
                Error::param(format!("{} is not named <name>_rgb.<ext>", rgb.display()))
            })?;
            let mask = sibling(&rgb, "_mask").filter(|m| m.is_file());
            Ok((rgb, nir, mask))
        })
        .collect()
}

fn sibling(rgb: &Path, suffix: &str) -> Option<PathBuf> {
    let stem = rgb.file_stem()?.to_str()?;
    let base = stem.strip_suffix("_rgb")?;
    let ext = rgb.extension()?.to_str()?;
    Some(rgb.with_file_name(format!("{base}{suffix}.{ext}")))
}

fn load_all(inputs: &[PathBuf]) -> Result<Vec<NrgbImage>> {
    discover_pairs(inputs)?
        .par_iter()
        .map(|(rgb, nir, mask)| load_image(rgb, nir, mask.as_deref()))
        .collect()
}

/// Correlation of the twelve network-input indices over all valid pixels of `images`.
pub fn dataset_correlation(images: &[NrgbImage], params: &ViParams) -> Result<CorrelationMatrix> {
    let mut params = *params;
    if params.ndvi_range.is_none() {
        let (lo, hi) = vci_stats(images, &params)?;
        params = params.with_ndvi_range(lo, hi);
    }
    let kinds: Vec<ViKind> = ViKind::network_inputs().collect();
    let mut columns = vec![Vec::new(); kinds.len()];
    for image in images {
        for (col, &k) in columns.iter_mut().zip(&kinds) {
            col.extend(compute_vi(k, image, &params)?.valid_values());
        }
    }
    correlation_from_columns(kinds, &columns)
}

pub fn write_correlation_csv(m: &CorrelationMatrix, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let names: Vec<&str> = m.kinds.iter().map(|k| k.name()).collect();
    w.write_record(std::iter::once("vi").chain(names.iter().copied()))?;
    for (i, name) in names.iter().enumerate() {
        let cells = (0..m.size()).map(|j| m.get(i, j).map_or(String::new(), |v| v.to_string()));
        w.write_record(std::iter::once(name.to_string()).chain(cells))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_vi_corr(a: &CorrArgs, stdout: &mut dyn Write) -> Result<u8> {
    let params = a.params.resolve()?;
    let images = load_all(&a.inputs)?;
    let m = dataset_correlation(&images, &params)?;
    write_atomic(&a.out, |w| write_correlation_csv(&m, w))?;
    writeln!(stdout, "{} images, {} indices", images.len(), m.size())?;
    Ok(EXIT_OK)
}

/// Runs `suite`, prints one line per case and returns [`EXIT_NUMERICAL`] if
/// any case exceeds the tolerance.
pub fn cmd_gradcheck(
    suite: &GradSuite,
    seed: u64,
    trials: usize,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<u8> {
    if trials == 0 {
        return Err(Error::param("trials must be positive"));
    }
    let reports = suite.run(seed, trials);
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        writeln!(stdout, "{:width$}  {:.3e}  {status}", r.name, r.worst)?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    writeln!(
        stdout,
        "{} of {} operations within {TOLERANCE:e} over {trials} points",
        reports.len() - failed,
        reports.len()
    )?;
    if let Some(path) = out {
        write_atomic(path, |w| write_gradcheck_csv(&reports, w))?;
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL })
}

fn write_gradcheck_csv(reports: &[CaseReport], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["op", "trials", "max_relative_error", "passed"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.trials.to_string(),
            r.worst.to_string(),
            r.passed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn synth_spec(a: &SynthArgs, default_images: usize) -> SynthSpec {
    SynthSpec {
        images: a.images.unwrap_or(default_images),
        size: a.size,
        seed: a.data_seed,
        ..SynthSpec::default()
    }
}

fn norm_name(mode: NormMode) -> &'static str {
    match mode {
        NormMode::Additive => "agn",
        _ => "bn",
    }
}

fn cmd_fit_experiment(a: &FitArgs, stdout: &mut dyn Write) -> Result<u8> {
    let kinds = parse_kinds(&a.vi)?;
    let params = a.params.resolve()?;
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let base = FitConfig {
        epochs: a.epochs,
        lr: a.lr,
        hidden: a.hidden,
        ..FitConfig::default()
    };
    for &norm in a.norm.modes() {
        FitConfig { norm, ..base }.validate()?;
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds must be positive"));
    }
    let images = if a.input.is_empty() {
        synth_dataset(&synth_spec(&a.synth, 40))?.images
    } else {
        load_all(&a.input)?
    };
    let datasets = kinds
        .par_iter()
        .map(|&k| pixel_dataset(&images, k, &params, a.pixels, a.synth.data_seed))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64, NormMode)> = (0..kinds.len())
        .flat_map(|i| {
            seeds
                .iter()
                .flat_map(move |&s| a.norm.modes().iter().map(move |&m| (i, s, m)))
        })
        .collect();
    let errors = jobs
        .par_iter()
        .map(|&(i, seed, norm)| {
            let config = FitConfig {
                seed,
                norm,
                target: kinds[i],
                ..base
            };
            fit_vi_experiment(&config, &datasets[i]).map(|o| o.relative_error_pct)
        })
        .collect::<Result<Vec<f64>>>()?;

    write_atomic(&a.out, |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["vi", "norm_mode", "seed", "relative_error_pct"])?;
        for (&(i, seed, norm), e) in jobs.iter().zip(&errors) {
            w.write_record([
                kinds[i].name().to_string(),
                norm_name(norm).to_string(),
                seed.to_string(),
                e.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for (i, k) in kinds.iter().enumerate() {
        let line: Vec<String> = a
            .norm
            .modes()
            .iter()
            .map(|&m| {
                let v: Vec<f64> = jobs
                    .iter()
                    .zip(&errors)
                    .filter(|((j, _, n), _)| *j == i && *n == m)
                    .map(|(_, e)| *e)
                    .collect();
                format!("{} {:.3}", norm_name(m), mean(&v))
            })
            .collect();
        writeln!(stdout, "{:7} {}", k.to_string(), line.join("  "))?;
    }
    Ok(EXIT_OK)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` for fewer than two values.
fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn cmd_toy_seg(a: &ToySegArgs, stdout: &mut dyn Write) -> Result<u8> {
    let registry = VariantRegistry::standard();
    let variants: Vec<_> = if a.variant.eq_ignore_ascii_case("all") {
        registry.iter().collect()
    } else {
        vec![registry.get(&a.variant)?]
    };
    if a.seeds == 0 {
        return Err(Error::param("seeds must be positive"));
    }
    let config = SegConfig {
        schedule: TrainSchedule {
            epochs: a.epochs,
            ..TrainSchedule::default()
        },
        ..SegConfig::default()
    };
    config.validate()?;
    ensure_dir(&a.out_dir)?;
    let data = synth_dataset(&synth_spec(&a.synth, 200))?;

    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(v, seed)| toy_segmentation_experiment(variants[v], &data, &config, seed))
        .collect::<Result<Vec<_>>>()?;

    write_atomic(&a.out_dir.join("runs.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["variant".to_string(), "seed".into(), "miou".into()];
        header.extend(CLASS_NAMES.iter().map(|c| format!("iou_{c}")));
        header.extend(["epochs".into(), "stopped_early".into()]);
        w.write_record(&header)?;
        for o in &outcomes {
            let mut row = vec![o.variant.clone(), o.seed.to_string(), o.miou.to_string()];
            row.extend(
                o.iou
                    .iter()
                    .map(|v| v.map_or(String::new(), |v| v.to_string())),
            );
            row.extend([o.epochs.len().to_string(), o.stopped_early.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })?;

    write_atomic(&a.out_dir.join("epochs.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec![
            "variant".to_string(),
            "seed".into(),
            "epoch".into(),
            "loss".into(),
            "lr".into(),
            "miou".into(),
        ];
        header.extend(CLASS_NAMES.iter().map(|c| format!("iou_{c}")));
        w.write_record(&header)?;
        for o in &outcomes {
            for e in &o.epochs {
                let mut row = vec![
                    o.variant.clone(),
                    o.seed.to_string(),
                    e.epoch.to_string(),
                    e.loss.to_string(),
                    e.lr.to_string(),
                    e.miou.to_string(),
                ];
                row.extend(
                    e.iou
                        .iter()
                        .map(|v| v.map_or(String::new(), |v| v.to_string())),
                );
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    })?;

    let summary: Vec<(&str, &str, Vec<f64>)> = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let mious = jobs
                .iter()
                .zip(&outcomes)
                .filter(|((j, _), _)| *j == v)
                .map(|(_, o)| o.miou)
                .collect();
            (variant.name(), variant.label(), mious)
        })
        .collect();
    write_atomic(&a.out_dir.join("summary.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["variant", "label", "runs", "miou_mean", "miou_sd"])?;
        for (name, label, mious) in &summary {
            w.write_record([
                name.to_string(),
                label.to_string(),
                mious.len().to_string(),
                mean(mious).to_string(),
                sample_sd(mious).map_or(String::new(), |s| s.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for (_, label, mious) in &summary {
        writeln!(
            stdout,
            "{label:16} mIoU {:.4} ± {:.4}",
            mean(mious),
            sample_sd(mious).unwrap_or(0.0)
        )?;
    }
    Ok(EXIT_OK)
}
