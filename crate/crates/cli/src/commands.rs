use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;

use reldep::dataset::{align_all, align_pair, load_csv, CsvOptions, Sample};
use reldep::hsic::{variance_hsic, HsicEstimate};
use reldep::kernels::{Bandwidth, KernelConfig, KernelSpec};
use reldep::reltest::{dependent_test, generalized_test_on, independent_test, TestResult};
use reldep::synthbench::{
    calibration, convergence_diagnostic, output_file_name, power_curve, scatter_experiment,
    write_trial_records, ScatterSummary, SynthConfig,
};

use crate::args::{
    CalibrateArgs, CommonArgs, ConvergeArgs, CsvArgs, FormatArg, HsicArgs, KernelArg, KernelArgs,
    MethodArg, PowerArgs, ScatterArgs, SynthArgs, TestArgs,
};
use crate::error::{CliError, CliResult};

/// Destination of everything a command prints to standard output.
pub struct Output<W: Write> {
    pub stdout: W,
}

impl<W: Write> Output<W> {
    fn emit(&mut self, text: &str) -> CliResult<()> {
        writeln!(self.stdout, "{text}").map_err(|source| CliError::Write {
            target: "standard output".into(),
            source,
        })
    }
}

fn setup(common: &CommonArgs) -> CliResult<()> {
    if !(common.alpha > 0.0 && common.alpha < 1.0) {
        return Err(CliError::usage(format!(
            "--alpha must lie in (0, 1), got {}",
            common.alpha
        )));
    }
    if common.jobs > 0 {
        reldep::par::configure_threads(common.jobs).map_err(CliError::usage)?;
    }
    Ok(())
}

fn csv_options(args: &CsvArgs) -> CliResult<CsvOptions> {
    let delimiter = match args.delimiter.as_str() {
        "\\t" | "tab" => b'\t',
        d if d.len() == 1 && d.is_ascii() => d.as_bytes()[0],
        d => {
            return Err(CliError::usage(format!(
                "--delimiter must be a single ASCII character, got {d:?}"
            )))
        }
    };
    let columns = args.columns.as_deref().map(parse_columns).transpose()?;
    Ok(CsvOptions {
        delimiter,
        has_header: args.header,
        columns,
    })
}

fn parse_columns(text: &str) -> CliResult<Range<usize>> {
    let bad = || {
        CliError::usage(format!(
            "--columns expects `start:end` or an index, got {text:?}"
        ))
    };
    let range = match text.split_once(':') {
        Some((a, b)) => {
            let start = a.trim().parse::<usize>().map_err(|_| bad())?;
            let end = b.trim().parse::<usize>().map_err(|_| bad())?;
            start..end
        }
        None => {
            let i = text.trim().parse::<usize>().map_err(|_| bad())?;
            i..i + 1
        }
    };
    if range.is_empty() {
        return Err(bad());
    }
    Ok(range)
}

fn kernel_spec(kind: KernelArg, bandwidth: Option<f64>, flag: &str) -> CliResult<KernelSpec> {
    match (kind, bandwidth) {
        (KernelArg::Gaussian, None) => Ok(KernelSpec::MEDIAN_GAUSSIAN),
        (KernelArg::Gaussian, Some(sigma)) => {
            Ok(KernelSpec::Gaussian(Some(Bandwidth::new(sigma)?)))
        }
        (KernelArg::Linear, None) => Ok(KernelSpec::Linear),
        (KernelArg::Linear, Some(_)) => Err(CliError::usage(format!(
            "--bandwidth-{flag} applies to the gaussian kernel only"
        ))),
    }
}

fn kernel_config(args: &KernelArgs) -> CliResult<KernelConfig> {
    Ok(KernelConfig::new(vec![
        kernel_spec(args.kernel_x, args.bandwidth_x, "x")?,
        kernel_spec(args.kernel_y, args.bandwidth_y, "y")?,
        kernel_spec(args.kernel_z, args.bandwidth_z, "z")?,
    ]))
}

fn load_all(files: &[PathBuf], options: &CsvOptions) -> CliResult<Vec<Sample>> {
    files
        .iter()
        .map(|f| load_csv(f, options).map_err(CliError::from))
        .collect()
}

fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("{flag}: cannot parse {item:?}")))
        })
        .collect()
}

fn parse_pairs(text: &str) -> CliResult<Vec<(usize, usize)>> {
    text.split(',')
        .map(|item| {
            let bad = || CliError::usage(format!("--pairs: expected `i-j`, got {item:?}"));
            let (a, b) = item.trim().split_once('-').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Parses `start:step:end` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(CliError::usage("--gamma3: empty grid"));
    }
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [start, step, end] => {
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::usage(format!("--gamma3: cannot parse {s:?}")))
            };
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step <= 0.0 {
                return Err(CliError::usage("--gamma3: step must be positive"));
            }
            // Tolerance absorbs decimal steps that are inexact in binary.
            let span = (end - start) / step + 1e-9;
            if span < 0.0 {
                Vec::new()
            } else {
                (0..=span.floor() as usize)
                    .map(|k| round_grid(start + k as f64 * step))
                    .collect()
            }
        }
        [_] => parse_list::<f64>(text, "--gamma3")?,
        _ => return Err(CliError::usage(format!("--gamma3: cannot parse {text:?}"))),
    };
    if grid.is_empty() {
        return Err(CliError::usage("--gamma3: empty grid"));
    }
    Ok(grid)
}

fn round_grid(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        target: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn result_csv(r: &TestResult) -> CliResult<String> {
    #[derive(Serialize)]
    struct Row {
        method: String,
        statistic: f64,
        std_dev: f64,
        p_value: f64,
        alpha: f64,
        reject_null: bool,
        m: usize,
    }
    let method = serde_json::to_value(r.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let row = Row {
        method,
        statistic: r.statistic,
        std_dev: r.std_dev,
        p_value: r.p_value,
        alpha: r.alpha,
        reject_null: r.reject_null,
        m: r.m,
    };
    w.serialize(row)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).trim_end().to_string())
}

pub fn cmd_test<W: Write>(args: &TestArgs, out: &mut Output<W>) -> CliResult<()> {
    setup(&args.common)?;
    let options = csv_options(&args.csv)?;
    let kernels = kernel_config(&args.kernels)?;
    let alpha = args.common.alpha;

    let result = match (&args.weights, &args.pairs) {
        (Some(weights), Some(pairs)) => {
            let weights: Vec<f64> = parse_list(weights, "--weights")?;
            let pairs = parse_pairs(pairs)?;
            if let Some(&(a, b)) = pairs
                .iter()
                .find(|&&(a, b)| a >= args.files.len() || b >= args.files.len())
            {
                return Err(CliError::usage(format!(
                    "--pairs: {a}-{b} refers past the {} input files",
                    args.files.len()
                )));
            }
            let joint = align_all(load_all(&args.files, &options)?)?;
            generalized_test_on(&joint, &pairs, &kernels, &weights, alpha)?
        }
        _ => {
            if args.files.len() != 3 {
                return Err(CliError::usage(format!(
                    "expected source, first target and second target files, got {} files",
                    args.files.len()
                )));
            }
            let joint = align_all(load_all(&args.files, &options)?)?;
            match args.method {
                MethodArg::Dependent => dependent_test(&joint, &kernels, alpha)?,
                MethodArg::Independent => {
                    let shuffle = args.shuffle.then_some(args.common.seed);
                    independent_test(&joint, &kernels, alpha, shuffle)?
                }
            }
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let text = match args.common.format {
        FormatArg::Json => result.to_json(),
        FormatArg::Csv => result_csv(&result)?,
    };
    if let Some(path) = &args.out {
        write_file(path, format!("{text}\n").as_bytes())?;
    }
    out.emit(&text)
}

#[derive(Serialize)]
struct HsicReport {
    hsic: f64,
    /// Variance estimate of `hsic` itself.
    variance: f64,
    m: usize,
    bandwidths: Bandwidths,
}

/// Gaussian bandwidths; `null` for the linear kernel.
#[derive(Serialize)]
struct Bandwidths {
    x: Option<f64>,
    y: Option<f64>,
}

/// JSON summary of a synthetic experiment, with the generator settings first.
#[derive(Serialize)]
struct ExperimentSummary<T: Serialize> {
    experiment: &'static str,
    config: SynthConfig,
    #[serde(flatten)]
    result: T,
}

pub fn cmd_hsic<W: Write>(args: &HsicArgs, out: &mut Output<W>) -> CliResult<()> {
    setup(&args.common)?;
    let options = csv_options(&args.csv)?;
    let kernels = kernel_config(&args.kernels)?;
    let joint = align_pair(load_csv(&args.x, &options)?, load_csv(&args.y, &options)?)?;
    let k = kernels.spec(0).gram(joint.x())?.into_zero_diagonal()?;
    let l = kernels.spec(1).gram(joint.y())?.into_zero_diagonal()?;
    let estimate = HsicEstimate::compute(&k, &l, "xy")?;
    let variance = variance_hsic(&estimate);
    let bandwidth = |g: &reldep::kernels::GramMatrix| g.kernel().bandwidth.map(Bandwidth::sigma);
    let text = match args.common.format {
        FormatArg::Json => to_json(&HsicReport {
            hsic: estimate.value,
            variance,
            m: estimate.m,
            bandwidths: Bandwidths {
                x: bandwidth(&k),
                y: bandwidth(&l),
            },
        }),
        FormatArg::Csv => {
            let cell = |b: Option<f64>| b.map(|v| format!("{v:?}")).unwrap_or_default();
            format!(
                "hsic,variance,m,bandwidth_x,bandwidth_y\n{:?},{:?},{},{},{}",
                estimate.value,
                variance,
                estimate.m,
                cell(bandwidth(&k)),
                cell(bandwidth(&l))
            )
        }
    };
    if let Some(path) = &args.out {
        write_file(path, format!("{text}\n").as_bytes())?;
    }
    out.emit(&text)
}

fn synth_base(s: &SynthArgs, m: usize, gamma3: f64) -> CliResult<SynthConfig> {
    setup(&s.common)?;
    let c = SynthConfig {
        m,
        gamma1: s.gamma1,
        gamma2: s.gamma2,
        gamma3,
        seed: s.common.seed,
    };
    c.validate()?;
    Ok(c)
}

/// Writes `{experiment}_{m}_{seed}.csv` and `.json` into the output
/// directory and prints either a one-line JSON summary or the CSV table.
fn finish_experiment<W: Write>(
    s: &SynthArgs,
    experiment: &str,
    m: usize,
    csv_bytes: Vec<u8>,
    summary: impl Serialize,
    out: &mut Output<W>,
) -> CliResult<()> {
    fs::create_dir_all(&s.out).map_err(|source| CliError::Write {
        target: s.out.display().to_string(),
        source,
    })?;
    let csv_path = s
        .out
        .join(output_file_name(experiment, m, s.common.seed, "csv"));
    let json_path = s
        .out
        .join(output_file_name(experiment, m, s.common.seed, "json"));
    write_file(&csv_path, &csv_bytes)?;
    write_file(&json_path, format!("{}\n", to_json(&summary)).as_bytes())?;
    match s.common.format {
        FormatArg::Json => {
            out.emit(&serde_json::to_string(&summary).map_err(|e| CliError::usage(e.to_string()))?)
        }
        FormatArg::Csv => out.emit(String::from_utf8_lossy(&csv_bytes).trim_end()),
    }
}

fn csv_buffer(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|source| CliError::Write {
        target: "csv buffer".into(),
        source,
    })?;
    Ok(buf)
}

pub fn cmd_power<W: Write>(args: &PowerArgs, out: &mut Output<W>) -> CliResult<()> {
    let grid = parse_grid(&args.gamma3)?;
    let base = synth_base(&args.synth, args.m, grid[0])?;
    let table = power_curve(&grid, &base, args.trials, args.synth.common.alpha)?;
    let csv_bytes = csv_buffer(|b| table.write_csv(b))?;
    let summary = ExperimentSummary {
        experiment: "power",
        config: base,
        result: table,
    };
    finish_experiment(&args.synth, "power", args.m, csv_bytes, summary, out)
}

pub fn cmd_calibrate<W: Write>(args: &CalibrateArgs, out: &mut Output<W>) -> CliResult<()> {
    let base = synth_base(&args.synth, args.m, args.synth.gamma2)?;
    let c = calibration(&base, args.trials, args.synth.common.alpha)?;
    let csv_bytes = csv_buffer(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.serialize(c)?;
        w.flush()
    })?;
    let summary = ExperimentSummary {
        experiment: "calibrate",
        config: base,
        result: c,
    };
    finish_experiment(&args.synth, "calibrate", args.m, csv_bytes, summary, out)
}

pub fn cmd_scatter<W: Write>(args: &ScatterArgs, out: &mut Output<W>) -> CliResult<()> {
    let base = synth_base(&args.synth, args.m, args.gamma3)?;
    let records = scatter_experiment(&base, args.trials)?;
    let summary = ScatterSummary::from_records(&records)?;
    let csv_bytes = csv_buffer(|b| write_trial_records(b, &records))?;
    let summary = ExperimentSummary {
        experiment: "scatter",
        config: base,
        result: summary,
    };
    finish_experiment(&args.synth, "scatter", args.m, csv_bytes, summary, out)
}

pub fn cmd_converge<W: Write>(args: &ConvergeArgs, out: &mut Output<W>) -> CliResult<()> {
    let sizes: Vec<usize> = parse_list(&args.sizes, "--sizes")?;
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let base = synth_base(&args.synth, largest, args.gamma3)?;
    let table = convergence_diagnostic(&sizes, &base, args.trials)?;
    let csv_bytes = csv_buffer(|b| table.write_csv(b))?;
    #[derive(Serialize)]
    struct WithSlope {
        log_log_slope: f64,
        #[serde(flatten)]
        table: reldep::synthbench::ConvergenceTable,
    }
    let summary = ExperimentSummary {
        experiment: "converge",
        config: base,
        result: WithSlope {
            log_log_slope: table.log_log_slope(),
            table,
        },
    };
    finish_experiment(&args.synth, "converge", largest, csv_bytes, summary, out)
}
