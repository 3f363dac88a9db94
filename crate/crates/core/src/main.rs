use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wildflow::config::RunConfig;
use wildflow::construct::{direct_construction, ConvergenceLog, Subsolution};
use wildflow::hull::{t4_for_center_with, HullSpec, RadiusConvention};
use wildflow::suite::{self, SuiteRow};
use wildflow::verify::{verify_subsolution, FieldGrid, VerificationReport};
use wildflow::StateU;

#[derive(Parser)]
#[command(name = "wildflow", about = "Convex-integration lab for wild weak solutions of 2-D IPM")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Verification grid as `n,m` (m even).
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Anchor flux as `a,b`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    z: Option<String>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Tolerance override `NAME=VALUE`; repeatable.
    #[arg(long, global = true)]
    tolerance: Vec<String>,
    /// Sample count for the property suites.
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the geometry and hull property suites.
    Geometry {
        /// Use the literal radii `1∓ρ` for the T4 circles.
        #[arg(long)]
        inject_radius_bug: bool,
    },
    /// Print the T4 configuration centered at a state.
    T4 {
        /// Center `ρ,v₁,v₂,q₁,q₂`; defaults to `(0,0,z)`.
        #[arg(long, allow_hyphen_values = true)]
        state: Option<String>,
    },
    /// Measure a building block on the ball of unit diameter.
    Wave {
        #[arg(long)]
        frequency: Option<u32>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run the direct construction and write every round.
    Construct,
    /// Verify a subsolution (`.json`) or a field grid.
    Verify {
        path: PathBuf,
        /// Also write the rendered grid.
        #[arg(long)]
        render: bool,
    },
    /// Summarize an output directory.
    Report { dir: Option<PathBuf> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WILDFLOW_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(c: &Common) -> Res<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.construction.seed = s;
        cfg.geometry.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(r) = c.rounds {
        cfg.construction.rounds = r;
    }
    if let Some(g) = &c.grid {
        cfg.set_grid(g)?;
    }
    if let Some(z) = &c.z {
        cfg.set_z(z)?;
    }
    if let Some(d) = c.delta {
        cfg.construction.delta = Some(d);
    }
    for t in &c.tolerance {
        cfg.set_tolerance(t)?;
    }
    if let Some(s) = c.samples {
        cfg.geometry.samples = s;
    }
    Ok(cfg)
}

fn print_rows(rows: &[SuiteRow]) {
    println!("{:<22} {:>8} {:>12} {:>12}  result", "check", "samples", "value", "tolerance");
    for r in rows {
        println!("{:<22} {:>8} {:>12.3e} {:>12.3e}  {}", r.name, r.samples, r.value, r.tolerance, if r.pass { "pass" } else { "FAIL" });
    }
}

fn run(cli: Cli) -> Res<bool> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Geometry { inject_radius_bug } => {
            cfg.geometry.inject_radius_bug |= inject_radius_bug;
            let g = &cfg.geometry;
            let convention = if g.inject_radius_bug { RadiusConvention::Literal } else { RadiusConvention::Corrected };
            let mut rows = vec![suite::cone_oracle(g.samples * 100, g.seed)];
            rows.extend(suite::t4_validity(g.samples, g.seed, convention).rows());
            rows.push(suite::barrier_on_k(g.samples * 10, g.seed));
            print_rows(&rows);
            Ok(rows.iter().all(|r| r.pass))
        }
        Command::T4 { state } => {
            let center = match state {
                Some(s) => {
                    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
                    let a: [f64; 5] = v.try_into().map_err(|_| "state needs five components")?;
                    StateU::from_array(a)
                }
                None => HullSpec::admissible(cfg.construction.z)?.center(),
            };
            let t4 = t4_for_center_with(center, RadiusConvention::Corrected)?;
            println!("{}", serde_json::to_string_pretty(&t4)?);
            Ok(true)
        }
        Command::Wave { frequency, lambda } => {
            let w = &cfg.wave;
            let n = frequency.unwrap_or(w.frequency);
            let lambda = lambda.unwrap_or(w.lambda);
            let r = suite::block_report(StateU::from_array(w.direction), lambda, w.epsilon, n, w.lattice, w.cutoff)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(true)
        }
        Command::Construct => {
            std::fs::create_dir_all(&cfg.out)?;
            let (seq, log) = direct_construction(&cfg.construction)?;
            for (k, sub) in seq.iter().enumerate() {
                std::fs::write(cfg.out.join(format!("round_{k}.json")), sub.to_json())?;
            }
            std::fs::write(cfg.out.join("log.json"), log.to_json())?;
            std::fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;
            print_log(&log);
            Ok(true)
        }
        Command::Verify { path, render } => {
            std::fs::create_dir_all(&cfg.out)?;
            let report = if path.extension().is_some_and(|e| e == "json") {
                let sub = Subsolution::from_json(&std::fs::read_to_string(&path)?)?;
                if render {
                    FieldGrid::render(&sub, cfg.verify.n, cfg.verify.m, None).save(&cfg.out.join("field.wfg"))?;
                }
                verify_subsolution(&sub, &cfg.verify)?
            } else {
                return verify_grid_file(&path, &cfg);
            };
            std::fs::write(cfg.out.join("report.json"), report.to_json())?;
            print_report(&report);
            Ok(report.passed())
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or(cfg.out);
            report_dir(&dir)
        }
    }
}

/// Grid-only inputs carry no forest, so only pointwise statistics and the
/// spectral diagnostics are available; they are printed without flags.
fn verify_grid_file(path: &Path, cfg: &RunConfig) -> Res<bool> {
    let grid = FieldGrid::load(path)?;
    let stats = wildflow::verify::constraint_stats(&grid);
    let families = wildflow::verify::default_families(grid.horizon, cfg.verify.family_size);
    let residuals = wildflow::verify::grid_residuals(&grid, &families, StateU::default());
    println!("provenance: {}", grid.provenance);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    for t in residuals {
        println!("{:?}/{}: max {:.3e}", t.identity, t.variant, t.max_abs());
    }
    Ok(true)
}

fn print_log(log: &ConvergenceLog) {
    println!("round  N     patches  ∫dist_K      band      app_min  budget   pairing");
    for r in &log.records {
        println!(
            "{:>5}  {:<4}  {:>7}  {:.6e}  {:.5}  {:.3}    {:.4}   {:.2e}",
            r.round, r.frequency, r.total_patches, r.integral_dist_k, r.rho_band_fraction, r.app_fraction_min, r.app_budget, r.pairing_max
        );
    }
}

fn print_report(r: &VerificationReport) {
    println!("{:<26} {:>12} {:>12}  result", "check", "value", "tolerance");
    for c in &r.checks {
        println!("{:<26} {:>12.3e} {:>12.3e}  {}", c.name, c.value, c.tolerance, if c.pass { "pass" } else { "FAIL" });
    }
}

fn report_dir(dir: &Path) -> Res<bool> {
    let mut ok = true;
    let log = dir.join("log.json");
    if log.exists() {
        let log: ConvergenceLog = serde_json::from_str(&std::fs::read_to_string(&log)?)?;
        println!("round,frequency,patches,integral_dist_k,rho_band_fraction,app_fraction_min,app_budget,contraction");
        for r in &log.records {
            println!(
                "{},{},{},{:e},{:e},{:e},{:e},{:e}",
                r.round, r.frequency, r.total_patches, r.integral_dist_k, r.rho_band_fraction, r.app_fraction_min, r.app_budget, r.contraction
            );
        }
    }
    let report = dir.join("report.json");
    if report.exists() {
        let r: VerificationReport = serde_json::from_str(&std::fs::read_to_string(&report)?)?;
        println!("check,value,tolerance,pass");
        for c in &r.checks {
            println!("{},{:e},{:e},{}", c.name, c.value, c.tolerance, c.pass);
        }
        ok &= r.passed();
    }
    Ok(ok)
}
