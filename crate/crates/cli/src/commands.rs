//! Command-line verbs. Each reads and writes the CSV/JSON formats of
//! [`crate::io`], so the verbs can be chained on files.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynunc::design::{isstable, kaiser_lowpass, lsfir, lsiir};
use dynunc::dft::{dft_deconv, dft_multiply, gum_dft, gum_idft};
use dynunc::filter::{fir_unc_filter, iir_ss_filter, smc_filter, SmcConfig};
use dynunc::signals::{add_noise, primitive_signal, ShockShape, SignalKind, SignalSpec};
use dynunc::sos::{fit_sos_data, sos_linear_response, FitSosOptions};
use dynunc::{Cov, DftGrid, FreqRespData, LsOptions, SosParams, SpectrumU, Uncertainty};

use crate::config::{default_seed, PipelineConfig, PipelineKind};
use crate::error::{CliError, Result, Stage};
use crate::io::{
    read_filter_json, read_freqresp_csv, read_timeseries_csv, write_filter_json, write_freqresp_csv, write_spectrum_csv,
    write_timeseries_csv, Report,
};
use crate::pipelines::{run_pipeline, sensor_spectrum, zero_phase_lowpass};

#[derive(Debug, Parser)]
#[command(name = "dynunc", version, about = "Deconvolution of dynamic measurements with uncertainty evaluation")]
#[command(after_long_help = pipeline_help())]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a test signal, optionally through a second-order sensor and
    /// with added noise.
    Simulate(SimulateArgs),
    /// DFT of a time series with propagated covariance.
    Dft(DftArgs),
    /// Divide the spectrum of a measurement by a sensor response and
    /// transform back.
    Deconv(DeconvArgs),
    /// Least-squares FIR inverse of a frequency response.
    DesignFir(DesignFirArgs),
    /// Least-squares IIR inverse of a frequency response.
    DesignIir(DesignIirArgs),
    /// Fit a second-order model to a frequency response.
    FitSos(FitSosArgs),
    /// Apply a digital filter to a time series.
    Filter(FilterArgs),
    /// Run an example measurement chain from a TOML config.
    #[command(after_long_help = pipeline_help())]
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Shock,
    Gauss,
    Rect,
    Sine,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub shape: Shape,
    #[arg(long)]
    pub fs: f64,
    #[arg(long)]
    pub duration: f64,
    /// Centre (shock, gauss) or start (rect) in s.
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Width in s: sigma for shock and gauss, length for rect.
    #[arg(long, default_value_t = 1e-3)]
    pub width: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Frequency of the sine in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub freq: f64,
    /// Pass the signal through a sensor `S0,delta,f0` (periodic).
    #[arg(long, value_parser = triple)]
    pub sensor: Option<[f64; 3]>,
    /// Standard deviation of added white noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Random seed [default: DYNUNC_SEED, else 1].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DftArgs {
    pub input: PathBuf,
    /// Output spectrum `f,re,im,unc_re,unc_im`.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Sensor response given either as model parameters or as a measured
/// response on the DFT bins.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ResponseSource {
    /// Second-order sensor `S0,delta,f0`.
    #[arg(long, value_parser = triple)]
    pub sensor: Option<[f64; 3]>,
    /// Frequency response CSV `f,re,im[,unc_re,unc_im]`.
    #[arg(long)]
    pub response: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeconvArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub source: ResponseSource,
    /// Standard uncertainties of `S0,delta,f0`.
    #[arg(long, value_parser = triple, requires = "sensor")]
    pub sensor_unc: Option<[f64; 3]>,
    /// Zero-phase Kaiser low-pass `order,cutoff_hz`.
    #[arg(long, value_parser = lowpass)]
    pub lowpass: Option<(usize, f64)>,
    #[arg(long, default_value_t = 8.0)]
    pub beta: f64,
    /// Magnitude below which a response bin counts as zero.
    #[arg(long, default_value_t = 1e-6)]
    pub mag_floor: f64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the deconvolved spectrum.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub source: ResponseSource,
    /// Design frequencies when the response comes from `--sensor`:
    /// `points` equally spaced up to `--f-max`.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Upper design frequency in Hz [default: 0.4·fs].
    #[arg(long)]
    pub f_max: Option<f64>,
    /// Sampling rate of the filter in Hz.
    #[arg(long)]
    pub fs: f64,
    /// Delay of the inverse in samples.
    #[arg(long)]
    pub delay: usize,
    /// Monte Carlo draws for the coefficient covariance.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Random seed [default: DYNUNC_SEED, else 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit the response itself rather than its inverse.
    #[arg(long)]
    pub forward: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DesignFirArgs {
    #[arg(long)]
    pub order: usize,
    /// Cascade a Kaiser low-pass `order,cutoff_hz`.
    #[arg(long, value_parser = lowpass)]
    pub lowpass: Option<(usize, f64)>,
    #[arg(long, default_value_t = 8.0)]
    pub beta: f64,
    #[command(flatten)]
    pub design: DesignArgs,
}

#[derive(Debug, Args)]
pub struct DesignIirArgs {
    #[arg(long)]
    pub nb: usize,
    #[arg(long)]
    pub na: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iter: usize,
    #[command(flatten)]
    pub design: DesignArgs,
}

#[derive(Debug, Args)]
pub struct FitSosArgs {
    pub input: PathBuf,
    /// Weight by the propagated uncertainty of the reciprocal response.
    #[arg(long)]
    pub weighting: bool,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Random seed [default: DYNUNC_SEED, else 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the fitted model response on the input frequencies.
    #[arg(long)]
    pub response: Option<PathBuf>,
    /// Report file; printed to standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    pub input: PathBuf,
    /// Filter JSON as written by `design-fir` or `design-iir`.
    #[arg(long)]
    pub filter: PathBuf,
    /// Propagate by sequential Monte Carlo with this many draws.
    #[arg(long)]
    pub smc: Option<usize>,
    /// Random seed [default: DYNUNC_SEED, else 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the full output covariance to the sidecar file.
    #[arg(long)]
    pub full_cov: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    pub config: PathBuf,
    /// Overrides `output_dir` of the config.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Overrides `seed` of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| format!("`{f}` is not a number")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = numbers(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn lowpass(s: &str) -> std::result::Result<(usize, f64), String> {
    let v = numbers(s, 2)?;
    if !(v[0] >= 1.0 && v[0].fract() == 0.0) {
        return Err(format!("low-pass order must be a positive integer, got {}", v[0]));
    }
    Ok((v[0] as usize, v[1]))
}

fn pipeline_help() -> String {
    let mut s = String::from(
        "Pipeline configs are TOML with a top-level `kind`; every other key is optional. \
         Relative paths are taken from the config's directory. The seed defaults to the \
         DYNUNC_SEED environment variable, else 1.\n\nExit codes: 0 success, 1 configuration \
         or input error, 2 numerical failure (the failing stage is named on standard error).\n\n\
         Defaults per kind:\n",
    );
    for kind in PipelineKind::ALL {
        let _ = write!(s, "\n{}", kind.default_toml());
    }
    s
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Dft(a) => dft(&a),
        Command::Deconv(a) => deconv(&a),
        Command::DesignFir(a) => design_fir(&a),
        Command::DesignIir(a) => design_iir(&a),
        Command::FitSos(a) => fit_sos(&a),
        Command::Filter(a) => filter(&a),
        Command::Pipeline(a) => pipeline(&a),
    }
}

fn seed_or_default(seed: Option<u64>) -> Result<u64> {
    seed.map_or_else(default_seed, Ok)
}

fn sos(v: &[f64; 3], unc: Option<&[f64; 3]>) -> Result<SosParams> {
    let cov = match unc {
        Some(u) => Cov::from_diagonal(&nalgebra::DVector::from_iterator(3, u.iter().map(|s| s * s))),
        None => Cov::zeros(3, 3),
    };
    SosParams::new(v[0], v[1], v[2], cov).stage("sensor")
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let kind = match a.shape {
        Shape::Shock => SignalKind::Shock {
            t0: a.t0,
            sigma: a.width,
            m0: a.amplitude,
            shape: ShockShape::default(),
        },
        Shape::Gauss => SignalKind::Gauss {
            t0: a.t0,
            sigma: a.width,
            m0: a.amplitude,
        },
        Shape::Rect => SignalKind::Rect {
            t0: a.t0,
            t1: a.t0 + a.width,
            height: a.amplitude,
        },
        Shape::Sine => SignalKind::Sine {
            amplitude: a.amplitude,
            freq: a.freq,
            phase: 0.0,
        },
    };
    let mut x = primitive_signal(&SignalSpec::new(kind, a.fs, a.duration)).stage("simulate")?;
    if let Some(s) = &a.sensor {
        let grid = DftGrid { n: x.len(), ts: x.ts() };
        let h = sensor_spectrum(&sos(s, None)?, grid).stage("simulate")?;
        let y = crate::pipelines::apply_response(x.values(), x.ts(), &h)?;
        x = dynunc::TimeSeriesU::exact(y, x.ts()).stage("simulate")?;
    }
    if a.noise > 0.0 {
        x = add_noise(&x, &Uncertainty::White(a.noise), seed_or_default(a.seed)?).stage("simulate")?;
    }
    write_timeseries_csv(&a.output, &x, false)
}

fn dft(a: &DftArgs) -> Result<()> {
    let x = read_timeseries_csv(&a.input)?;
    let f = gum_dft(&x).stage("dft")?;
    write_spectrum_csv(&a.output, &f)
}

/// Response on the DFT bins of `grid`, from the model or a response file
/// whose frequencies must be those bins.
fn response_on_grid(src: &ResponseSource, unc: Option<&[f64; 3]>, grid: DftGrid) -> Result<SpectrumU> {
    if let Some(s) = &src.sensor {
        return sensor_spectrum(&sos(s, unc)?, grid).stage("sensor");
    }
    let path = src.response.as_ref().expect("clap requires a response source");
    let h = read_freqresp_csv(path)?;
    let freqs = grid.freqs();
    let matches = h.len() == freqs.len()
        && h.freqs().iter().zip(&freqs).all(|(a, b)| (a - b).abs() <= 1e-9 * freqs.last().unwrap_or(&1.0));
    if !matches {
        return Err(CliError::format(path, format!("frequencies must be the {} DFT bins of the input", freqs.len())));
    }
    let cov = h.cov().cloned().unwrap_or_else(|| Cov::zeros(2 * h.len(), 2 * h.len()));
    SpectrumU::from_complex(h.values(), freqs, cov, Some(grid)).stage("sensor")
}

fn deconv(a: &DeconvArgs) -> Result<()> {
    let x = read_timeseries_csv(&a.input)?;
    let grid = DftGrid { n: x.len(), ts: x.ts() };
    let h = response_on_grid(&a.source, a.sensor_unc.as_ref(), grid)?;
    let f = gum_dft(&x).stage("dft")?;
    let mut spec = dft_deconv(&f, &h, a.mag_floor).stage("deconv")?;
    if let Some(lp) = a.lowpass {
        let low = zero_phase_lowpass(lp.0, lp.1, a.beta, grid).stage("lowpass")?;
        let l = SpectrumU::exact(&low, spec.freqs().to_vec(), Some(grid)).stage("lowpass")?;
        spec = dft_multiply(&spec, &l).stage("lowpass")?;
    }
    let est = gum_idft(&spec, x.len()).stage("idft")?;
    let est = dynunc::TimeSeriesU::new(est.values().to_vec(), x.ts(), x.t0(), est.unc().clone()).stage("idft")?;
    if let Some(p) = &a.spectrum {
        write_spectrum_csv(p, &spec)?;
    }
    write_timeseries_csv(&a.output, &est, false)
}

fn design_response(d: &DesignArgs) -> Result<FreqRespData> {
    if let Some(s) = &d.source.sensor {
        let f_max = d.f_max.unwrap_or(d.fs / 2.0 * 0.8);
        if d.points < 2 {
            return Err(CliError::Config("--points must be >= 2".into()));
        }
        let freqs: Vec<f64> = (0..d.points).map(|i| f_max * i as f64 / (d.points - 1) as f64).collect();
        return sos_linear_response(&sos(s, None)?, &freqs).stage("design");
    }
    read_freqresp_csv(d.source.response.as_ref().expect("clap requires a response source"))
}

fn ls_options(d: &DesignArgs) -> Result<LsOptions> {
    Ok(LsOptions {
        inv: !d.forward,
        mc_draws: d.draws,
        seed: seed_or_default(d.seed)?,
        ..LsOptions::default()
    })
}

fn design_fir(a: &DesignFirArgs) -> Result<()> {
    let d = &a.design;
    let h = design_response(d)?;
    let fir = lsfir(&h, a.order, d.delay, d.fs, &ls_options(d)?).stage("design")?;
    log::info!("FIR residual {:.3e}, rank {}", fir.residual, fir.rank);
    let flt = match a.lowpass {
        Some((order, cutoff)) => {
            let low = kaiser_lowpass(order, cutoff, d.fs, a.beta).stage("lowpass")?;
            crate::pipelines::cascade_fir(&fir.filter, &low).stage("lowpass")?
        }
        None => fir.filter,
    };
    write_filter_json(&a.design.output, &flt)
}

fn design_iir(a: &DesignIirArgs) -> Result<()> {
    let d = &a.design;
    let h = design_response(d)?;
    let iir = lsiir(&h, a.nb, a.na, d.delay, d.fs, a.max_iter, &ls_options(d)?).stage("design")?;
    log::info!(
        "IIR residual {:.3e}, stabilized {}, converged {}",
        iir.residual,
        iir.stabilized,
        iir.converged
    );
    if !isstable(&iir.filter) {
        log::warn!("designed IIR filter is not stable");
    }
    write_filter_json(&d.output, &iir.filter)
}

fn fit_sos(a: &FitSosArgs) -> Result<()> {
    let h = read_freqresp_csv(&a.input)?;
    let opts = FitSosOptions {
        weighting: a.weighting,
        draws: a.draws,
        seed: seed_or_default(a.seed)?,
    };
    let p = fit_sos_data(&h, &opts).stage("fit")?;
    let u = p.std_unc();
    let mut report = Report::new("fit-sos");
    report.value_u("S0", p.s0, u[0]);
    report.value_u("delta", p.delta, u[1]);
    report.value_u("f0", p.f0, u[2]);
    if let Some(path) = &a.response {
        write_freqresp_csv(path, &sos_linear_response(&p, h.freqs()).stage("fit")?)?;
    }
    match &a.output {
        Some(path) => fs::write(path, report.render()).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn filter(a: &FilterArgs) -> Result<()> {
    let x = read_timeseries_csv(&a.input)?;
    let flt = read_filter_json(&a.filter)?;
    let y = match a.smc {
        Some(draws) => {
            let cfg = SmcConfig::new(draws, seed_or_default(a.seed)?);
            smc_filter(x.values(), x.ts(), x.unc(), &flt, &cfg).stage("filter")?
        }
        None if flt.a().len() == 1 => fir_unc_filter(&x, &flt).stage("filter")?,
        None => iir_ss_filter(&x, &flt).stage("filter")?,
    };
    write_timeseries_csv(&a.output, &y, a.full_cov)
}

fn pipeline(a: &PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(dir) = &a.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    for path in run_pipeline(&cfg)? {
        println!("{}", path.display());
    }
    Ok(())
}

/// Parses the arguments, runs the verb and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            // Stage errors read "stage <name>: ...".
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
