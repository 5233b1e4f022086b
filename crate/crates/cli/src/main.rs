use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use swarmkit::geometry::read_state_csv;
use swarmkit::harness::config::{apply_overrides, from_document, parse_document, parse_override_value, set_path};
use swarmkit::harness::emit::{emit_campaign, emit_grid, emit_sweep, write_file, write_json, Manifest};
use swarmkit::harness::tasks::{run_population, run_rigidity};
use swarmkit::harness::{grid_search, run_summaries, run_trials, sweep, PopulationScenario, RigidityScenario, Scenario};
use swarmkit::identification::read_trajectories_csv;
use swarmkit::stochastic::write_tracks_csv;
use swarmkit::HarnessError;

/// Output root, defaults to `./out`.
const OUT_ENV: &str = "SWARMKIT_OUT";

#[derive(Parser)]
#[command(name = "swarmkit", version, about = "Swarm lattice formation, rigidity and micro-agent calibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Override a key of the scenario, e.g. `--set params.n=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed of the campaign.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count (lattices for `rigidity`, agents for `identify`).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; defaults to the logical core count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded campaign of one scenario.
    Simulate(Common),
    /// Grid search over the static gains.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Radial gains, `a,b,c` or `start:stop:step`.
        #[arg(long, default_value = "0:30:5")]
        radial: String,
        /// Normal gains, `a,b,c` or `start:stop:step`.
        #[arg(long, default_value = "0:30:5")]
        normal: String,
    },
    /// One campaign per value of a scenario key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key path, e.g. `initial.delta`.
        #[arg(long)]
        param: String,
        /// Values, `a,b,c` or `start:stop:step`.
        #[arg(long)]
        values: String,
    },
    /// Rank and spectrum of generated or recorded lattices.
    Rigidity(Common),
    /// Calibrate walker parameters from synthetic or recorded trajectories.
    Identify(Common),
    /// Check that a file parses, validates and round-trips; runs the
    /// campaign when the scenario carries expectations.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Kind::Scenario)]
        kind: Kind,
        /// Skip the expectation run.
        #[arg(long)]
        no_run: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Scenario,
    Population,
    Rigidity,
}

enum Failure {
    Harness(HarnessError),
    Unmet(Vec<String>),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Unmet(list)) => {
            for m in &list {
                eprintln!("unmet: {m}");
            }
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Tune { common, radial, normal } => tune(&common, &radial, &normal),
        Command::Sweep { common, param, values } => run_sweep(&common, &param, &values),
        Command::Rigidity(c) => rigidity(&c),
        Command::Identify(c) => identify(&c),
        Command::Validate { common, kind, no_run } => validate(&common, kind, no_run),
    }
}

fn threads(c: &Common) -> Result<(), HarnessError> {
    let n = c.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(HarnessError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Reads the file and applies `--set`, then `--seed` and `--trials`.
fn document(c: &Common, trials_key: &str) -> Result<toml::Table, HarnessError> {
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", c.config.display())))?;
    let mut doc = parse_document(&text)?;
    apply_overrides(&mut doc, &c.set)?;
    if let Some(s) = c.seed {
        set_path(&mut doc, "seed", toml::Value::Integer(s as i64))?;
    }
    if let Some(t) = c.trials {
        set_path(&mut doc, trials_key, toml::Value::Integer(t as i64))?;
    }
    Ok(doc)
}

fn scenario(c: &Common) -> Result<(Scenario, String), HarnessError> {
    let doc = document(c, "trials")?;
    let s: Scenario = from_document(&doc)?;
    s.validate()?;
    let text = toml_text(&s)?;
    Ok((s, text))
}

fn toml_text<T: Serialize>(v: &T) -> Result<String, HarnessError> {
    toml::to_string(v).map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn out_dir(command: &str, name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
    root.join(command).join(name)
}

/// Paths inside a config file are relative to that file.
fn beside(config: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn open(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::open(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// `a,b,c` or `start:stop:step`.
fn value_list(spec: &str) -> Result<Vec<toml::Value>, HarnessError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| HarnessError::Config(format!("bad number {s:?} in range {spec:?}")))
        };
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(HarnessError::Config(format!("range {spec:?} needs start ≤ stop and step > 0")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // trim representation noise such as 0.15000000000000002
        let tidy = |x: f64| format!("{x:.12}").parse::<f64>().unwrap_or(x);
        return Ok((0..=n).map(|k| toml::Value::Float(tidy(a + k as f64 * step))).collect());
    }
    let values: Vec<toml::Value> =
        spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_override_value).collect();
    if values.is_empty() {
        return Err(HarnessError::Config("empty value list".into()));
    }
    Ok(values)
}

fn number_list(spec: &str) -> Result<Vec<f64>, HarnessError> {
    value_list(spec)?
        .iter()
        .map(|v| match v {
            toml::Value::Float(x) => Ok(*x),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(HarnessError::Config(format!("expected a number, got {other}"))),
        })
        .collect()
}

fn simulate(c: &Common) -> Result<(), Failure> {
    let (s, text) = scenario(c)?;
    threads(c)?;
    let campaign = run_trials(&s, s.trials)?;
    let dir = out_dir("simulate", &s.name);
    let manifest = Manifest::new("simulate", &s.name, s.seed, s.trials, &text);
    emit_campaign(&dir, &campaign, s.output_stride, &s.thresholds, &manifest)?;
    let a = &campaign.result.aggregate;
    println!("{}: {} trials, success rate {}", s.name, a.trials, a.success_rate);
    if let Some(t) = a.convergence_median {
        println!("median convergence time {t} s");
    }
    if let Some(r) = a.recovery_rate {
        println!("recovery rate {r}");
    }
    if let (Some(rho), Some(e)) = (a.rho, a.e_final.as_ref()) {
        println!("rho {rho}, e_final mean {} max {}", e.mean, e.max);
    }
    println!("wrote {}", dir.display());
    match &s.expect {
        Some(x) => unmet(x.failures(a)),
        None => Ok(()),
    }
}

fn unmet(list: Vec<String>) -> Result<(), Failure> {
    if list.is_empty() {
        Ok(())
    } else {
        Err(Failure::Unmet(list))
    }
}

fn tune(c: &Common, radial: &str, normal: &str) -> Result<(), Failure> {
    let (s, text) = scenario(c)?;
    let (gr, gn) = (number_list(radial)?, number_list(normal)?);
    threads(c)?;
    let grid = grid_search(&s, &gr, &gn, s.trials)?;
    let dir = out_dir("tune", &s.name);
    emit_grid(&dir, &grid, &Manifest::new("tune", &s.name, s.seed, s.trials, &text))?;
    let (i, j) = grid.argmin;
    println!("argmin G_r = {}, G_n = {}, mean cost {}", grid.radial[i], grid.normal[j], grid.min_cost);
    let feasible = grid.cost.iter().flatten().filter(|&&x| x <= 1.0).count();
    println!("{feasible} of {} cells with C ≤ 1", gr.len() * gn.len());
    println!("wrote {}", dir.display());
    Ok(())
}

fn run_sweep(c: &Common, param: &str, values: &str) -> Result<(), Failure> {
    let doc = document(c, "trials")?;
    let s: Scenario = from_document(&doc)?;
    s.validate()?;
    let values = value_list(values)?;
    threads(c)?;
    let result = sweep(&doc, param, &values, s.trials)?;
    let dir = out_dir("sweep", &s.name);
    emit_sweep(&dir, &result, &Manifest::new("sweep", &s.name, s.seed, s.trials, &toml_text(&doc)?))?;
    for p in &result.points {
        let a = &p.campaign.aggregate;
        match a.rho {
            Some(rho) => println!("{param} = {}: rho {rho}", p.value),
            None => println!("{param} = {}: success rate {}", p.value, a.success_rate),
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn rigidity(c: &Common) -> Result<(), Failure> {
    let doc = document(c, "count")?;
    let s: RigidityScenario = from_document(&doc)?;
    s.validate()?;
    let state = match &s.state {
        Some(f) => {
            let path = beside(&c.config, f);
            Some(read_state_csv(open(&path)?).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    threads(c)?;
    let rows = run_rigidity(&s, state)?;
    let dir = out_dir("rigidity", &s.name);
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_file(&dir, "lattices.csv", &bytes)?;
    write_json(&dir, "lattices.json", &rows)?;
    write_json(&dir, "manifest.json", &Manifest::new("rigidity", &s.name, s.seed, rows.len(), &toml_text(&s)?))?;
    let rigid = rows.iter().filter(|r| r.rigid).count();
    let like = rows.iter().filter(|r| r.lattice_like).count();
    println!("{} lattices: {rigid} infinitesimally rigid, {like} with the lattice spectrum", rows.len());
    for r in rows.iter().filter(|r| r.warning.is_some()) {
        println!("lattice {}: {}", r.index, r.warning.as_deref().unwrap_or_default());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn identify(c: &Common) -> Result<(), Failure> {
    let doc = document(c, "agents")?;
    let s: PopulationScenario = from_document(&doc)?;
    s.validate()?;
    let recorded = match &s.trajectories {
        Some(f) => {
            let path = beside(&c.config, f);
            Some(
                read_trajectories_csv(open(&path)?)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    threads(c)?;
    let outcome = run_population(&s, recorded)?;
    let dir = out_dir("identify", &s.name);
    let mut cal = Vec::new();
    outcome.calibration.write_csv(&mut cal).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_file(&dir, "calibration.csv", &cal)?;
    if !outcome.tracks.is_empty() {
        let mut tracks = Vec::new();
        write_tracks_csv(&outcome.tracks, &mut tracks).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        write_file(&dir, "tracks.csv", &tracks)?;
    }
    write_json(&dir, "outcome.json", &outcome)?;
    let n = outcome.calibration.rows.len();
    write_json(&dir, "manifest.json", &Manifest::new("identify", &s.name, s.seed, n, &toml_text(&s)?))?;
    println!("{n} trajectories, rejection rate {}", outcome.rejection_rate);
    if let Some(m) = outcome.medians {
        for (name, v) in swarmkit::PTWParams::NAMES.iter().zip(m) {
            println!("{name} {v}");
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn round_trip<T>(doc: &toml::Table) -> Result<T, HarnessError>
where
    T: Serialize + serde::de::DeserializeOwned + PartialEq,
{
    let typed: T = from_document(doc)?;
    let text = toml_text(&typed)?;
    let back: T = from_document(&parse_document(&text)?)?;
    if back != typed {
        return Err(HarnessError::Runtime("scenario does not survive a write/read round trip".into()));
    }
    Ok(typed)
}

fn validate(c: &Common, kind: Kind, no_run: bool) -> Result<(), Failure> {
    let trials_key = match kind {
        Kind::Scenario => "trials",
        Kind::Population => "agents",
        Kind::Rigidity => "count",
    };
    let doc = document(c, trials_key)?;
    match kind {
        Kind::Population => round_trip::<PopulationScenario>(&doc)?.validate()?,
        Kind::Rigidity => round_trip::<RigidityScenario>(&doc)?.validate()?,
        Kind::Scenario => {
            let s = round_trip::<Scenario>(&doc)?;
            s.validate()?;
            if let (Some(x), false) = (&s.expect, no_run) {
                threads(c)?;
                let r = run_summaries(&s, s.trials)?;
                println!("{}: {} trials run", s.name, r.trials.len());
                let list = x.failures(&r.aggregate);
                if list.is_empty() {
                    println!("expectations met");
                }
                unmet(list)?;
            }
        }
    }
    println!("{}: ok", c.config.display());
    Ok(())
}
