//! Command-line driver.
//!
//! Exit codes: 0 success, 2 when a check fails, 1 on any other error, 64 on bad usage.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::cascade::{self, HighFreqData};
use crate::error::Result;
use crate::history::DensityHistory;
use crate::io::{self, Report, RunManifest};
use crate::norms::{self, WeightTable};
use crate::report::Check;
use crate::scenario::ScenarioParams;
use crate::suite;
use crate::vlasov::{self, SolverConfig};
use crate::volterra::{solve_linear_recursive, ForcingHistory, ResolventKernel};
use crate::C64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "echo-lab", version, about = "Plasma echo cascades: linear, second-iterate and nonlinear runs with verification")]
pub struct Cli {
    /// Scenario file (TOML); the desk preset when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; falls back to $ECHO_LAB_OUT, then `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for sampled checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override a config value, e.g. `--set grid.k_max=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Linear density response of the initial data, mode by mode.
    RunLinear,
    /// Second-iterate echo cascade.
    RunCascade,
    /// Resonant two-mode model across the critical intervals of eta0.
    RunToy,
    /// Full nonlinear forward solve from t_in.
    RunNonlinear,
    /// Nonlinear solve from the scattering data at t_in back to zero.
    RunBackward,
    /// Weight table and sampled weight and multiplier bounds.
    CheckNorms,
    /// Property and oracle suite.
    Verify {
        /// Only the sub-second identity and oracle checks.
        #[arg(long)]
        fast: bool,
    },
    /// Print the checks of an existing report and validate its file inventory.
    Report,
}

struct Ctx {
    params: ScenarioParams,
    out: PathBuf,
    manifest: RunManifest,
    report: Report,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let text = match &cli.config {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        let mut overrides = cli.overrides.clone();
        if let Some(seed) = cli.seed {
            overrides.push(format!("checks.seed={seed}"));
        }
        let params = io::parse_scenario_with(&text, &overrides)?;
        let out = cli
            .out
            .clone()
            .or_else(|| std::env::var_os("ECHO_LAB_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        let manifest = RunManifest::new(io::scenario_hash(text.as_bytes(), &overrides), params.grid.clone());
        Ok(Ctx {
            params,
            out,
            report: Report::new(manifest.clone()),
            manifest,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        self.manifest.add_file(&self.out, name)
    }

    fn time(&mut self, key: &str, start: Instant) {
        self.manifest.timings.insert(key.to_owned(), start.elapsed().as_secs_f64());
    }

    fn checks(&mut self, checks: Vec<Check>) {
        for c in checks {
            println!("{}", c.line());
            self.report.push(c);
        }
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.path(name), s)?;
        self.record(name)
    }

    fn write_density(&mut self, name: &str, rho: &DensityHistory) -> Result<()> {
        io::write_density_csv(rho, &self.path(name))?;
        self.record(name)
    }

    fn finish(mut self) -> Result<i32> {
        self.report.manifest = self.manifest;
        io::write_report_json(&self.report, &self.out.join("report.json"))?;
        Ok(if self.report.all_pass() { EXIT_OK } else { EXIT_CHECK_FAILED })
    }
}

fn run_linear(ctx: &mut Ctx) -> Result<()> {
    let p = &ctx.params;
    let d = p.derive()?;
    let data = HighFreqData::from_scenario(p, &d);
    let t_end = d.t_end(p);
    let n = ((t_end - d.t_in) / p.grid.dt).ceil() as usize + 1;
    let modes = DensityHistory::symmetric_modes(p.grid.k_max);
    let mut rho = DensityHistory::empty(modes.clone());
    let mut cols = Vec::new();
    let mut times = Vec::new();
    for &k in &modes {
        let kf = k as f64;
        let h = ForcingHistory::from_fn(d.t_in, p.grid.dt, n, |t| {
            C64::new(vlasov::low_frequency_data(p.epsilon, k, kf * t) + data.value(k, kf * t), 0.0)
        });
        let one = solve_linear_recursive(&h, &ResolventKernel::for_mode(p, k))?;
        times = one.times;
        cols.push(one.values.into_iter().next().unwrap_or_default());
    }
    rho.times = times;
    rho.values = cols;
    ctx.write_density("density_linear.csv", &rho)
}

fn run_cascade(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let d = p.derive()?;
    let data = HighFreqData::from_scenario(&p, &d);
    let rho = cascade::run_second_iterate(&p, &data)?;
    ctx.write_density("density_cascade.csv", &rho)?;
    let echoes = cascade::detect_echoes(&rho);
    for e in &echoes.echoes {
        println!("echo k={} t={:.6} amplitude={:.6e}", e.k, e.t_peak, e.amplitude);
    }
    ctx.write_json("echoes.json", &echoes)?;
    let env = cascade::check_envelope(&rho, &p, &data)?;
    ctx.write_json("envelope.json", &env)
}

fn run_toy(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let d = p.derive()?;
    let rows = cascade::run_resonant_toy(&p, d.eta0)?;
    for r in &rows {
        println!("k={} gain={:.6e} predicted={:.6e}", r.k, r.gain, r.predicted);
    }
    ctx.write_json("toy.json", &rows)
}

fn run_nonlinear(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let d = p.derive()?;
    let data = HighFreqData::from_scenario(&p, &d);
    let init = vlasov::initial_field(&p, &d, &data, p.grid.k_max);
    let exact = vlasov::initial_profile(&p, &data);
    let tr = vlasov::run_forward_with(&init, Some(&exact), &p, d.t_end(&p), &SolverConfig::from_scenario(&p))?;
    println!(
        "steps={} rejected={} mode_warnings={} edge_warnings={}",
        tr.accepted, tr.rejected, tr.mode_warnings, tr.edge_warnings
    );
    ctx.write_density("density_nonlinear.csv", &tr.density)?;
    let mut buf = Vec::new();
    io::write_field_binary(&tr.final_field, &mut buf)?;
    fs::write(ctx.path("field_final.bin"), buf)?;
    ctx.record("field_final.bin")
}

fn run_backward(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let d = p.derive()?;
    let data = HighFreqData::from_scenario(&p, &d);
    let k_max = vlasov::backward_mode_range(&p, &d);
    let fin = vlasov::initial_field(&p, &d, &data, k_max);
    let exact = vlasov::initial_profile(&p, &data);
    let tr = vlasov::run_backward_with(&fin, Some(&exact), &p, &SolverConfig::from_scenario(&p))?;
    println!("k_max={k_max} steps={} mode_warnings={}", tr.accepted, tr.mode_warnings);
    ctx.write_density("density_backward.csv", &tr.density)?;
    let mut buf = Vec::new();
    io::write_field_binary(&tr.final_field, &mut buf)?;
    fs::write(ctx.path("field_initial.bin"), buf)?;
    ctx.record("field_initial.bin")
}

fn check_norms(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.params.clone();
    let d = p.derive()?;
    let etas: Vec<f64> = (0..=40).map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 40.0)).collect();
    let times: Vec<f64> = (0..=200).map(|i| 0.5 + i as f64 * 0.25 * d.eta0 / 200.0).collect();
    let table = WeightTable::build(&etas, &times, p.knorm, p.epsilon);
    io::write_weight_table(&table, &ctx.path("weights.csv"))?;
    ctx.record("weights.csv")?;
    let spec = norms::MultiplierSpec::from_scenario(&p, &d);
    let plan = norms::SamplePlan::from_scenario(&p);
    ctx.checks(norms::verify_weight_lemmas(&spec, &plan, p.checks.fitted_c, p.checks.r_tilde));
    Ok(())
}

/// Electrostatic counterpart of a scenario: repulsive interaction and `delta = eps^p`.
pub fn electrostatic_variant(p: &ScenarioParams) -> ScenarioParams {
    if p.is_electrostatic() {
        return p.clone();
    }
    let mut e = p.clone();
    e.zeta = 1;
    e.delta = e.epsilon.powf(e.p);
    e
}

fn verify(ctx: &mut Ctx, fast: bool) -> Result<()> {
    let p = ctx.params.clone();
    let start = Instant::now();
    ctx.checks(suite::fast(&p)?);
    ctx.time("fast", start);
    if fast {
        return Ok(());
    }
    let start = Instant::now();
    ctx.checks(suite::weight_lemmas(&p)?);
    ctx.time("weight_lemmas", start);
    // the gravitational cascade plus its electrostatic counterpart, or just the latter
    if !p.is_electrostatic() {
        let start = Instant::now();
        ctx.checks(suite::cascade_checks(&p)?);
        ctx.time("cascade", start);
    }
    let start = Instant::now();
    ctx.checks(suite::electrostatic_checks(&electrostatic_variant(&p))?);
    ctx.time("electrostatic", start);
    let start = Instant::now();
    ctx.checks(suite::linear_toggle(&p)?);
    ctx.time("linear_toggle", start);
    Ok(())
}

fn report(out: &Path) -> Result<i32> {
    let r = io::read_report_json(&out.join("report.json"))?;
    r.manifest.verify_files(out)?;
    for c in r.checks.values() {
        println!("{}", c.line());
    }
    Ok(if r.all_pass() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        // a pool set up earlier in the process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Report = cli.command {
        let out = cli
            .out
            .clone()
            .or_else(|| std::env::var_os("ECHO_LAB_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        return report(&out);
    }
    let mut ctx = Ctx::load(&cli)?;
    let start = Instant::now();
    match cli.command {
        Command::RunLinear => run_linear(&mut ctx)?,
        Command::RunCascade => run_cascade(&mut ctx)?,
        Command::RunToy => run_toy(&mut ctx)?,
        Command::RunNonlinear => run_nonlinear(&mut ctx)?,
        Command::RunBackward => run_backward(&mut ctx)?,
        Command::CheckNorms => check_norms(&mut ctx)?,
        Command::Verify { fast } => verify(&mut ctx, fast)?,
        Command::Report => unreachable!("handled above"),
    }
    ctx.time("total", start);
    ctx.finish()
}

/// Parses `argv` (program name first), runs the verb and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
