//! The `nirsnap` command line.
//!
//! Exit status is 0 on success, 2 for invalid input, 3 for I/O failures and 4
//! for non-finite numerics. Outputs are written to a temporary file and
//! renamed, so a failed run never leaves a partial artifact.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::binio;
use crate::config::{PipelineConfig, Stage};
use crate::cube::{export_band, load_cube, save_cube, synth_scene, SceneSpec};
use crate::doe::{
    apply_fabrication_error, quantize_height, rotate_radial_profile, HeightMap, RadialProfile,
};
use crate::encoder::{encode, EncodedImage};
use crate::error::{Error, Result};
use crate::metrics::{signature_csv, spectral_signature, MetricsReport, SsimParams};
use crate::net::{init_weights, load_weights, nirsa_forward, save_weights};
use crate::propagation::{compute_psf_stack, PsfStack};
use crate::recon::reconstruct_cg;

#[derive(Debug, Parser)]
#[command(
    name = "nirsnap",
    version,
    about = "Snapshot NIR hyperspectral imaging pipeline"
)]
pub struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconMode {
    Cg,
    Nirsa,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the default diffractive-lens radial profile (512 heights, meters).
    Profile {
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotate, quantize and perturb a radial profile into an NDOE height map.
    Doe {
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the NPSF stack for an NDOE height map.
    Psf {
        doe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize an NCUB test scene.
    Synth {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Scene description (JSON); two flat-field materials when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Form the NIMG snapshot of a cube.
    Encode {
        cube: PathBuf,
        psf: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a 16-bit PNG preview.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Recover an NCUB cube from a snapshot.
    Reconstruct {
        image: PathBuf,
        #[arg(long, value_enum)]
        mode: ReconMode,
        #[arg(long, required_if_eq("mode", "cg"))]
        psf: Option<PathBuf>,
        #[arg(long, required_if_eq("mode", "nirsa"))]
        weights: Option<PathBuf>,
        /// Per-iteration residual norms (cg only).
        #[arg(long)]
        residual_log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print PSNR/SSIM of a reconstruction against ground truth as JSON.
    Metrics {
        recon: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        /// Pixel `row,col` whose reconstructed spectrum goes to `--signature-out`.
        #[arg(long, value_parser = parse_point, requires = "signature_out")]
        signature: Option<(usize, usize)>,
        #[arg(long)]
        signature_out: Option<PathBuf>,
        /// Also write the JSON document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one band of a cube as a 16-bit grayscale PNG.
    ExportBand {
        cube: PathBuf,
        #[arg(long)]
        band: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded NSAW weight file for the configured network.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_point(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("nirsnap: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Profile { out } => cmd_profile(&config, out),
        Command::Doe { profile, out } => cmd_doe(&config, profile, out),
        Command::Psf { doe, out } => cmd_psf(&config, doe, out),
        Command::Synth {
            height,
            width,
            scene,
            out,
        } => cmd_synth(&config, *height, *width, scene.as_deref(), out),
        Command::Encode {
            cube,
            psf,
            out,
            png,
        } => cmd_encode(&config, cube, psf, out, png.as_deref()),
        Command::Reconstruct {
            image,
            mode,
            psf,
            weights,
            residual_log,
            out,
        } => {
            let source = match mode {
                ReconMode::Cg => ReconSource::Psf(psf.as_deref().expect("clap requires --psf")),
                ReconMode::Nirsa => {
                    ReconSource::Weights(weights.as_deref().expect("clap requires --weights"))
                }
            };
            cmd_reconstruct(&config, image, source, residual_log.as_deref(), out)
        }
        Command::Metrics {
            recon,
            truth,
            peak,
            signature,
            signature_out,
            out,
        } => {
            let sig = signature.zip(signature_out.as_deref());
            let json = cmd_metrics(recon, truth, *peak, sig, out.as_deref())?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{json}")?;
            Ok(())
        }
        Command::ExportBand { cube, band, out } => export_band(&load_cube(cube)?, *band, out),
        Command::InitWeights { out } => {
            let ws = init_weights(&config.net, config.stage_seed(Stage::Weights))?;
            save_weights(&ws, out)?;
            println!("{} tensors, {} parameters", ws.len(), ws.parameter_count());
            Ok(())
        }
    }
}

pub fn cmd_profile(config: &PipelineConfig, out: &Path) -> Result<()> {
    let profile = RadialProfile::fresnel_lens(
        config.doe.design_wavelength,
        config.optics.propagation_distance,
        &config.material,
        config.doe.profile_sample_pitch,
    )?;
    profile.check_depth(config.fabrication.total_depth)?;
    profile.save_text(out)
}

pub fn cmd_doe(config: &PipelineConfig, profile_path: &Path, out: &Path) -> Result<()> {
    let profile = RadialProfile::load_text(profile_path, config.doe.profile_sample_pitch)?;
    profile.check_depth(config.fabrication.total_depth)?;
    let map = rotate_radial_profile(
        &profile,
        config.optics.grid_size,
        config.optics.pixel_pitch,
        config.doe.aperture_radius,
    )?;
    let quantized = quantize_height(&map, &config.fabrication)?;
    let levels_used = {
        let mut seen = vec![false; config.fabrication.levels as usize];
        for i in 0..quantized.size() {
            for j in 0..quantized.size() {
                if quantized.in_aperture(i, j) {
                    seen[config.fabrication.level_of(quantized.height(i, j)) as usize] = true;
                }
            }
        }
        seen.iter().filter(|&&s| s).count()
    };
    let fabricated = apply_fabrication_error(
        &quantized,
        &config.fabrication,
        config.stage_seed(Stage::Fabrication),
    )?;
    fabricated.save(out)?;
    let (lo, hi) = min_max(fabricated.heights());
    println!(
        "levels used {levels_used}/{}, height range [{:.4}, {:.4}] um",
        config.fabrication.levels,
        lo * 1e6,
        hi * 1e6
    );
    Ok(())
}

pub fn cmd_psf(config: &PipelineConfig, doe_path: &Path, out: &Path) -> Result<()> {
    let map = HeightMap::load(doe_path)?;
    let stack = compute_psf_stack(&config.optics, &map, &config.material)?;
    stack.save(out)?;
    println!(
        "{} bands, {}x{} kernels, {}",
        stack.bands(),
        stack.size(),
        stack.size(),
        stack.grid().describe()
    );
    Ok(())
}

pub fn cmd_synth(
    config: &PipelineConfig,
    height: usize,
    width: usize,
    scene: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let spec = match scene {
        Some(path) => SceneSpec::from_json(&std::fs::read_to_string(path)?)?,
        None => SceneSpec::two_materials(height, width),
    };
    let cube = synth_scene(&spec, height, width, config.optics.spectral_grid()?)?;
    save_cube(&cube, out)
}

pub fn cmd_encode(
    config: &PipelineConfig,
    cube_path: &Path,
    psf_path: &Path,
    out: &Path,
    png: Option<&Path>,
) -> Result<()> {
    let cube = load_cube(cube_path)?;
    let psfs = PsfStack::load(psf_path)?;
    let image = encode(
        &cube,
        &psfs,
        &config.sensor,
        config.stage_seed(Stage::Noise),
    )?;
    image.save(out)?;
    if let Some(p) = png {
        image.save_png(p)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub enum ReconSource<'a> {
    Psf(&'a Path),
    Weights(&'a Path),
}

pub fn cmd_reconstruct(
    config: &PipelineConfig,
    image_path: &Path,
    source: ReconSource<'_>,
    residual_log: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let image = EncodedImage::load(image_path)?;
    match source {
        ReconSource::Psf(psf_path) => {
            let psfs = PsfStack::load(psf_path)?;
            let result = reconstruct_cg(&image, &psfs, &config.sensor, &config.recon)?;
            if let Some(log) = residual_log {
                binio::write_atomic(log, result.residual_log().as_bytes())?;
            }
            save_cube(&result.cube, out)?;
            println!(
                "{} iterations, converged: {}, final residual {:.6e}",
                result.iterations,
                result.converged,
                result.residual_history.last().copied().unwrap_or(0.0)
            );
        }
        ReconSource::Weights(weights_path) => {
            if residual_log.is_some() {
                return Err(Error::Invalid(
                    "--residual-log applies to --mode cg only".into(),
                ));
            }
            let ws = load_weights(weights_path, &config.net)?;
            save_cube(&nirsa_forward(&image, &ws, &config.net)?, out)?;
        }
    }
    Ok(())
}

/// Returns the metrics JSON, optionally writing it and a spectral signature CSV.
pub fn cmd_metrics(
    recon_path: &Path,
    truth_path: &Path,
    peak: f64,
    signature: Option<((usize, usize), &Path)>,
    out: Option<&Path>,
) -> Result<String> {
    let recon = load_cube(recon_path)?;
    let truth = load_cube(truth_path)?;
    let report = MetricsReport::compute(&recon, &truth, peak, &SsimParams::default())?;
    let json = report.to_json();
    if let Some(((row, col), path)) = signature {
        binio::write_atomic(
            path,
            signature_csv(&spectral_signature(&recon, row, col)?).as_bytes(),
        )?;
    }
    if let Some(path) = out {
        binio::write_atomic(path, format!("{json}\n").as_bytes())?;
    }
    Ok(json)
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}
