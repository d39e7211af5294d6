use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use isac_core::acceptance::{run_suite, AcceptOptions, Suite};
use isac_core::harness::analysis::{estimation_frequency, moving_average, relative_utility_ratio};
use isac_core::harness::record::{fmt_g9, read_records, FrameRecord};
use isac_core::harness::{resolve_output_dir, run_experiment, PolicySpec, RunManifest};
use isac_core::{Preset, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "isac-sim",
    version,
    about = "Intermittent CSI updating experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policies side by side on one scenario and write per-frame CSVs.
    Run(RunArgs),
    /// Run the acceptance checks and print one line per criterion.
    Accept(AcceptArgs),
    /// Derive moving averages, ratios and estimation frequencies from a CSV.
    Analyze(AnalyzeArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario TOML file; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of frames; defaults to the scenario's.
    #[arg(long)]
    frames: Option<usize>,
    /// Comma-separated: drol, exhaustive, random, all, each optionally
    /// suffixed with -mrt.
    #[arg(long, default_value = "drol,exhaustive")]
    policies: String,
    /// Output directory; falls back to ISAC_OUTPUT_DIR, then ./output.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write per-iteration solver traces.
    #[arg(long)]
    solver_trace: bool,
    /// Skip the practical-utility solve.
    #[arg(long)]
    no_practical: bool,
}

#[derive(clap::Args)]
struct AcceptArgs {
    /// fast, learning or all.
    #[arg(long, default_value = "fast")]
    suite: String,
    /// Keep the learning runs' CSVs here.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// Per-frame CSV written by `run`.
    #[arg(long)]
    input: PathBuf,
    /// Moving-average and frequency window in frames.
    #[arg(long, default_value_t = 300)]
    window: usize,
    /// Reference CSV for the utility ratio, usually exhaustive.csv.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Where to write the derived CSVs; defaults to the input's directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a).map(|()| true),
        Command::Accept(a) => accept(a),
        Command::Analyze(a) => analyze(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ScenarioConfig::from_toml_file(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => Preset::from_name(&a.preset)?.config(),
    };
    if let Some(frames) = a.frames {
        cfg.system.frames = frames;
    }
    if a.no_practical {
        cfg.experiment.practical_utility = false;
    }
    let policies = PolicySpec::parse_list(&a.policies)?;
    let mut manifest = RunManifest::new(cfg, a.seed, policies);
    manifest.solver_trace = a.solver_trace;
    let dir = resolve_output_dir(a.output_dir);
    let result = run_experiment(&manifest, Some(&dir))?;
    for (name, records) in &result.runs {
        let mean = records.iter().map(|r| r.u_genie).sum::<f64>() / records.len().max(1) as f64;
        println!("{name}: {} frames, mean utility {mean:.4}", records.len());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn accept(a: AcceptArgs) -> Result<bool> {
    let suite: Suite = a.suite.parse()?;
    let results = run_suite(
        suite,
        &AcceptOptions {
            output_dir: a.output_dir,
        },
    );
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed} of {} criteria passed", results.len());
    Ok(passed == results.len())
}

fn load(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_records(file).with_context(|| format!("parsing {}", path.display()))?;
    if records.is_empty() {
        bail!("{} has no frames", path.display());
    }
    Ok(records)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let records = load(&a.input)?;
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .context("input has no file name")?
        .to_string();
    let dir = match a.output_dir {
        Some(d) => d,
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;

    let utility: Vec<f64> = records.iter().map(|r| r.u_genie).collect();
    let ma = moving_average(&utility, a.window)?;
    let ratio = match &a.reference {
        Some(path) => Some(relative_utility_ratio(&records, &load(path)?, a.window)?),
        None => None,
    };
    let mut out = csv::Writer::from_path(dir.join(format!("{stem}.utility.csv")))?;
    let mut header = vec!["frame", "u_genie", "u_ma"];
    if ratio.is_some() {
        header.push("ratio_ma");
    }
    out.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![r.frame.to_string(), fmt_g9(r.u_genie), fmt_g9(ma[i])];
        if let Some(ratio) = &ratio {
            row.push(fmt_g9(ratio[i]));
        }
        out.write_record(&row)?;
    }
    out.flush()?;

    let (k, q) = (records[0].users(), records[0].targets());
    let series: Vec<Vec<f64>> = (0..k)
        .map(|i| records.iter().map(|r| r.comm_bits[i]).collect::<Vec<_>>())
        .chain((0..q).map(|i| records.iter().map(|r| r.radar_bits[i]).collect()))
        .map(|bits| estimation_frequency(&bits, a.window))
        .collect();
    let mut out = csv::Writer::from_path(dir.join(format!("{stem}.frequency.csv")))?;
    let header: Vec<String> = ["first_frame".to_string()]
        .into_iter()
        .chain((0..k).map(|i| format!("user{i}")))
        .chain((0..q).map(|i| format!("target{i}")))
        .collect();
    out.write_record(&header)?;
    for b in 0..series.first().map_or(0, Vec::len) {
        let first = records[b * a.window].frame;
        let row: Vec<String> = std::iter::once(first.to_string())
            .chain(series.iter().map(|s| fmt_g9(s[b])))
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    println!(
        "wrote {stem}.utility.csv and {stem}.frequency.csv to {}",
        dir.display()
    );
    Ok(())
}
