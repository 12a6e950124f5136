use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use solar_coverage::compare::{run_all, Comparison, SummaryRow, Sweep};
use solar_coverage::config::{params_fragment, ConfigFile, Method};
use solar_coverage::coverage::lloyd_placement;
use solar_coverage::field::Weather;
use solar_coverage::io::{fmt_g9, write_blocks};
use solar_coverage::kriging::{KrigingSystem, SpatioTemporalPoint};
use solar_coverage::sim::{apply_reference_params, run_scenario, write_run};
use solar_coverage::tune::{tune, TuneSpec};
use solar_coverage::Error;

const THREADS_ENV: &str = "SOLCOV_THREADS";

/// Kriging-based irradiance nowcasting with mobile sensing agents.
#[derive(Parser, Debug)]
#[command(name = "solcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file; repeat to layer several files (later wins).
    #[arg(long = "config", value_name = "PATH")]
    configs: Vec<PathBuf>,
    /// Override a single key, e.g. `--set sim.method=baseline`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Parent directory for the timestamped output directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Seed for the field and the simulation (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn sets_with_seed(&self) -> Vec<String> {
        let mut sets = self.sets.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("field.seed={seed}"));
            sets.push(format!("sim.seed={seed}"));
        }
        sets
    }

    fn load(&self) -> Result<ConfigFile, Error> {
        ConfigFile::load(&self.configs, &self.sets_with_seed())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop scenario and write its logs.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a sweep of methods, weathers, team sizes and seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Methods to compare (fixed, baseline, proposed).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Weather presets; defaults to `field.weather`.
        #[arg(long, value_delimiter = ',')]
        weathers: Vec<Weather>,
        /// Team sizes; defaults to `agents.n`.
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        /// Seeds; defaults to `sim.seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Extra configuration applied to one method only, e.g.
        /// `proposed=tuned.toml`. Repeatable.
        #[arg(long = "method-config", value_name = "METHOD=PATH")]
        method_configs: Vec<String>,
        /// Start each method from its reference parameter set before
        /// applying configuration files.
        #[arg(long)]
        reference_params: bool,
    },
    /// Tune parameters on the training segment.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Number of random restarts after the first run.
        #[arg(long)]
        restarts: Option<usize>,
        /// Start from the reference parameter set of `sim.method` before
        /// applying configuration files.
        #[arg(long)]
        reference_params: bool,
    },
    /// Print fixed-sensor positions from Lloyd's algorithm.
    Lloyd {
        #[command(flatten)]
        common: Common,
        /// Number of sensors; defaults to `agents.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate the dissimilarity and prediction maps for a sample buffer.
    Map {
        #[command(flatten)]
        common: Common,
        /// CSV with header `t,q1,q2,cf`.
        #[arg(long, value_name = "PATH")]
        buffer: PathBuf,
        /// Prediction step; defaults to one past the newest sample.
        #[arg(long)]
        t_pred: Option<usize>,
    },
}

fn main() -> ExitCode {
    let defaults = ConfigFile::default().to_toml_string().unwrap_or_default();
    let help = format!("Configuration defaults (every key may be set in a --config file or with --set):\n\n{defaults}");
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let quiet = match &cli.command {
        Command::Run { common }
        | Command::Compare { common, .. }
        | Command::Tune { common, .. }
        | Command::Lloyd { common, .. }
        | Command::Map { common, .. } => common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "info" }))
        .format_timestamp(None)
        .init();

    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { common } => cmd_run(&common),
        Command::Compare { common, methods, weathers, ns, seeds, method_configs, reference_params } => {
            let sweep = Sweep { methods, weathers, ns, seeds };
            cmd_compare(&common, &sweep, &method_configs, reference_params)
        }
        Command::Tune { common, restarts, reference_params } => cmd_tune(&common, restarts, reference_params),
        Command::Lloyd { common, n } => cmd_lloyd(&common, n),
        Command::Map { common, buffer, t_pred } => cmd_map(&common, &buffer, t_pred),
    }
}

/// Creates `<parent>/<kind>-<timestamp>`, adding a suffix on collision.
fn output_dir(parent: &Path, kind: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(parent)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut dir = parent.join(format!("{kind}-{stamp}"));
    let mut k = 1;
    while dir.exists() {
        dir = parent.join(format!("{kind}-{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_run(common: &Common) -> Result<(), Error> {
    let file = common.load()?;
    let cfg = file.scenario();
    cfg.validate()?;
    let start = Instant::now();
    let log = run_scenario(&cfg)?;
    let dir = output_dir(&common.out, "run")?;
    write_run(&dir, &log)?;
    write_text(&dir.join("config.toml"), &file.to_toml_string()?)?;
    info!("wrote {}", dir.display());
    if !common.quiet {
        println!(
            "{} {} n={} seed={} E={} ({:.1} s) -> {}",
            log.method,
            log.label,
            log.n,
            log.seed,
            fmt_g9(log.e),
            start.elapsed().as_secs_f64(),
            dir.display()
        );
    }
    Ok(())
}

fn parse_method_configs(specs: &[String]) -> Result<BTreeMap<Method, Vec<PathBuf>>, Error> {
    let mut out: BTreeMap<Method, Vec<PathBuf>> = BTreeMap::new();
    for s in specs {
        let (m, p) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--method-config {s:?} is not of the form METHOD=PATH")))?;
        out.entry(m.parse()?).or_default().push(PathBuf::from(p));
    }
    Ok(out)
}

fn cmd_compare(common: &Common, sweep: &Sweep, method_configs: &[String], reference: bool) -> Result<(), Error> {
    if sweep.methods.is_empty() {
        return Err(Error::Config("empty sweep: pass at least one method with --methods".into()));
    }
    let per_method = parse_method_configs(method_configs)?;
    let cfgs = sweep.expand(|m| {
        let extra = per_method.get(&m).cloned().unwrap_or_default();
        let mut paths = common.configs.clone();
        paths.extend(extra);
        let sets = common.sets_with_seed();
        let mut cfg = load_layered(&paths, &sets, reference.then_some(m))?.scenario();
        cfg.sim.method = m;
        Ok(cfg)
    })?;
    let start = Instant::now();
    info!("running {} scenarios", cfgs.len());
    let logs = run_all(&cfgs)?;
    let cmp = Comparison { rows: logs.iter().map(SummaryRow::from).collect() };
    let dir = output_dir(&common.out, "compare")?;
    cmp.write_csv(BufWriter::new(File::create(dir.join("summary.csv"))?))?;
    let table = cmp.table();
    write_text(&dir.join("table.txt"), &table)?;
    info!("wrote {} in {:.1} s", dir.display(), start.elapsed().as_secs_f64());
    if !common.quiet {
        print!("{table}");
    }
    Ok(())
}

/// Loads `paths` and `sets`; with `reference`, on top of that method's
/// reference parameters instead of the plain defaults.
fn load_layered(paths: &[PathBuf], sets: &[String], reference: Option<Method>) -> Result<ConfigFile, Error> {
    let Some(m) = reference else {
        return ConfigFile::load(paths, sets);
    };
    let mut base = ConfigFile::default();
    let mut s = base.scenario();
    apply_reference_params(&mut s, m);
    base.kernel = s.kernel;
    base.coverage = s.coverage;
    ConfigFile::load_onto(&base, paths, sets)
}

fn cmd_tune(common: &Common, restarts: Option<usize>, reference: bool) -> Result<(), Error> {
    let mut file = common.load()?;
    if reference {
        file = load_layered(&common.configs, &common.sets_with_seed(), Some(file.sim.method))?;
    }
    let mut spec = TuneSpec { base: file.scenario(), tune: file.tune.clone() };
    if let Some(r) = restarts {
        spec.tune.restarts = r;
    }
    if let Some(seed) = common.seed {
        spec.tune.seed = seed;
    }
    spec.bounds()?;
    let start = Instant::now();
    let res = tune(&spec)?;
    let dir = output_dir(&common.out, "tune")?;
    res.write_trace(BufWriter::new(File::create(dir.join("tune_trace.csv"))?))?;
    write_text(&dir.join("best_params.toml"), &params_fragment(&res.best_pairs()))?;
    if !common.quiet {
        let params: Vec<String> = res.best_pairs().iter().map(|(p, v)| format!("{}={}", p.name(), fmt_g9(*v))).collect();
        println!(
            "best E={} after {} evaluations ({:.1} s): {} -> {}",
            fmt_g9(res.best_value),
            res.trace.len(),
            start.elapsed().as_secs_f64(),
            params.join(" "),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_lloyd(common: &Common, n: Option<usize>) -> Result<(), Error> {
    let file = common.load()?;
    let grid = file.field.grid()?;
    let n = n.unwrap_or(file.agents.n);
    let sites = lloyd_placement(&grid, n, file.sim.seed)?;
    if !common.quiet {
        println!("sensor,q1,q2");
        for (i, p) in sites.iter().enumerate() {
            println!("{},{},{}", i + 1, fmt_g9(p[0]), fmt_g9(p[1]));
        }
    }
    Ok(())
}

fn read_buffer(path: &Path) -> Result<(Vec<SpatioTemporalPoint>, Vec<f64>), Error> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let reader = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if k == 0 && line.replace(' ', "") == "t,q1,q2,cf" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(k + 1, format!("expected 4 fields (t,q1,q2,cf), found {}", fields.len())));
        }
        let nums = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(k + 1, format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if !(0.0..=1.0).contains(&nums[3]) {
            return Err(parse_err(k + 1, format!("cloud factor {} outside [0,1]", nums[3])));
        }
        points.push(SpatioTemporalPoint::new(nums[1], nums[2], nums[0]));
        values.push(nums[3]);
    }
    if points.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok((points, values))
}

fn cmd_map(common: &Common, buffer: &Path, t_pred: Option<usize>) -> Result<(), Error> {
    let file = common.load()?;
    let grid = file.field.grid()?;
    let (points, values) = read_buffer(buffer)?;
    let newest = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max);
    let t_pred = t_pred.unwrap_or((newest.floor() + 1.0).max(0.0) as usize);
    let system = KrigingSystem::from_parts(points, values, &file.kernel)?;
    let eval = system.evaluate_grid(&grid, t_pred);
    let dir = output_dir(&common.out, "map")?;
    let frame = |v: &[f64]| vec![(t_pred, v.to_vec())];
    for (name, values) in [
        ("dissimilarity.csv", eval.dissimilarity.map.values.as_slice()),
        ("prediction.csv", eval.prediction.values.as_slice()),
    ] {
        let frames = frame(values);
        write_blocks(
            BufWriter::new(File::create(dir.join(name))?),
            &grid,
            frames.iter().map(|(t, v)| (*t, v.as_slice())),
        )?;
    }
    if !common.quiet {
        let d = &eval.dissimilarity.map;
        println!(
            "t_pred={t_pred} dissimilarity min={} mean={} max={} -> {}",
            fmt_g9(d.min()),
            fmt_g9(d.mean()),
            fmt_g9(d.max()),
            dir.display()
        );
    }
    Ok(())
}

