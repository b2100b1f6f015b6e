use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use daringfed::config::{Scenario, ScenarioConfig};
use daringfed::design::{optimal_design_known_s, MechanismChoice};
use daringfed::io;
use daringfed::mechanism::{check_bayes_benefit, SchemeResiduals, TrueParticipation};
use daringfed::sim::{heatmap_sweep, run_simulation, Policy, Surface};
use daringfed::verify::run_verification;
use daringfed::Error;

#[derive(Parser)]
#[command(name = "daringfed", version, about = "Signaling and dynamic pricing for online federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal reward and signal scheme with the survival function known.
    Design(Common),
    /// Run one policy and write the round stream.
    Simulate(Common),
    /// Signaling gain heatmap over (posterior mean, reward).
    Sweep(Common),
    /// Compare the grid engine with the fine-grid oracle and re-check invariants.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; defaults to the synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config value, e.g. `--set toy.eta=0.1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long, hide = true)]
    inject_corrupt_scheme: bool,
}

/// Failure carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Infeasible { .. }) { 2 } else { 1 };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::config(error)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn set_path(root: &mut Value, key: &str, raw: &str) -> anyhow::Result<()> {
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// File, then `--set` overrides, then the dedicated flags.
fn load_config(args: &Common) -> anyhow::Result<ScenarioConfig> {
    let base = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_json(&text)?
        }
        None => ScenarioConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for item in &args.overrides {
        let (k, v) = item.split_once('=').ok_or_else(|| anyhow!("override {item:?} is not KEY=VALUE"))?;
        set_path(&mut value, k.trim(), v.trim())?;
    }
    let mut config: ScenarioConfig = serde_json::from_value(value).context("applying overrides")?;
    if let Some(p) = args.policy {
        config.policy = p;
    }
    if let Some(r) = args.rounds {
        config.rounds = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    Ok(config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Serialize)]
struct DesignReport<'a> {
    #[serde(flatten)]
    choice: &'a MechanismChoice,
    residuals: SchemeResiduals,
    bayes_benefit: f64,
    valid: bool,
}

fn design(sc: &Scenario, out: &Path) -> Outcome<()> {
    let choice = optimal_design_known_s(&sc.cost, &sc.survival, &sc.prior, &sc.bounds, sc.oracle_settings())?;
    let truth = TrueParticipation {
        cost: &sc.cost,
        survival: &sc.survival,
        bounds: &sc.bounds,
    };
    let residuals = choice.scheme.residuals(&sc.prior);
    let report = DesignReport {
        choice: &choice,
        residuals,
        bayes_benefit: check_bayes_benefit(&choice.scheme, choice.gamma, &truth, &sc.prior),
        valid: residuals.passes(),
    };
    write_json(&out.join("design.json"), &report)?;
    println!("gamma* = {}  predicted cost = {}", choice.gamma, choice.predicted_cost);
    Ok(())
}

fn simulate(sc: &Scenario, out: &Path) -> Outcome<()> {
    let cfg = &sc.config;
    let run = run_simulation(&sc.setup, cfg.policy, cfg.rounds, cfg.seed)?;
    io::write_rounds(create(&out.join("rounds.csv"))?, &run.records).context("writing rounds.csv")?;
    write_json(&out.join("metrics.json"), &run.metrics)?;
    if let Some(state) = &run.engine {
        io::write_choices(create(&out.join("choices.csv"))?, &state.choice_history).context("writing choices.csv")?;
    }
    write_json(
        &out.join("checkpoint.json"),
        &serde_json::json!({ "policy": cfg.policy, "seed": cfg.seed, "engine": run.engine }),
    )?;
    let m = &run.metrics;
    println!(
        "{} rounds={} cost={} participation={} converged={} final_gamma={:?} final_loss={}",
        m.policy, m.rounds, m.cumulative_server_cost, m.participation_rate, m.converged, m.final_gamma, m.final_loss
    );
    Ok(())
}

fn sweep(sc: &Scenario, out: &Path) -> Outcome<()> {
    let s = &sc.config.sweep;
    let map = heatmap_sweep(s.mu, s.gamma, &sc.cost, &sc.survival, &sc.bounds, sc.config.exec())?;
    io::write_heatmap(create(&out.join("heatmap.csv"))?, &map).context("writing heatmap.csv")?;
    for (name, surface) in [("delta_theta_hat", Surface::ThetaHat), ("delta_cost", Surface::Cost)] {
        match map.argmax(surface) {
            Some(pos) => {
                let c = map.cell(pos.0, pos.1);
                let value = if surface == Surface::Cost { c.delta_cost } else { c.delta_theta_hat };
                println!(
                    "argmax {name}: mu={} gamma={} value={} interior={} relative_cost_saving={}",
                    c.mu,
                    c.gamma,
                    value.unwrap_or(f64::NAN),
                    map.is_interior(pos),
                    c.relative_improvement().unwrap_or(f64::NAN)
                );
            }
            None => println!("argmax {name}: no participating cell"),
        }
    }
    Ok(())
}

fn verify(sc: &Scenario, out: &Path, corrupt: bool) -> Outcome<()> {
    let report = run_verification(sc, corrupt)?;
    write_json(&out.join("verify.json"), &report)?;
    for c in &report.checks {
        println!("{} {} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    println!("cost gap {} (bound {})", report.cost_gap, report.gap_bound);
    if !report.passed {
        return Err(Failure {
            code: 3,
            error: anyhow!("verification failed"),
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    let (args, name) = match &cli.command {
        Command::Design(a) => (a, "design"),
        Command::Simulate(a) => (a, "simulate"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Verify(a) => (a, "verify"),
    };
    let config = load_config(args)?;
    let scenario = config.resolve()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("manifest.json"), &config)?;
    if args.inject_corrupt_scheme && name != "verify" {
        return Err(Failure::config(anyhow!("--inject-corrupt-scheme only applies to verify")));
    }
    match cli.command {
        Command::Design(_) => design(&scenario, &args.out),
        Command::Simulate(_) => simulate(&scenario, &args.out),
        Command::Sweep(_) => sweep(&scenario, &args.out),
        Command::Verify(_) => verify(&scenario, &args.out, args.inject_corrupt_scheme),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
