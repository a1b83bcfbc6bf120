use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use expdyn::config::{Command, Settings};
use expdyn::conformal::{
    conformality_residual, p_space_check, phi_iterate, singular_centers, standard_test_balls,
    PhiOptions,
};
use expdyn::driver::sample_sequence;
use expdyn::measure::seed_measure;
use expdyn::pressure::{
    bowen_solve, curve_from_points, pressure_curve, pressure_operator_grid, resample_seed,
    PressureCurve, SEED_M0, SEED_R0,
};
use expdyn::radial::{expansion_raster, typical_scan};
use expdyn::{ConstantsTable, Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "expdyn", version, about = "Random exponential maps on the cylinder")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML file with the same keys as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Cmd {
    /// Expected pressure on a grid of t
    Pressure(Common),
    /// Root of the expected pressure
    Bowen(Common),
    /// Typical-point dichotomy scan
    Scan(Common),
    /// Expansion-time raster as binary PGM
    Raster(Common),
    /// Conformal measure on fiber 0 with diagnostics
    Measure(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, common) = match cli.command {
        Cmd::Pressure(c) => (Command::Pressure, c),
        Cmd::Bowen(c) => (Command::Bowen, c),
        Cmd::Scan(c) => (Command::Scan, c),
        Cmd::Raster(c) => (Command::Raster, c),
        Cmd::Measure(c) => (Command::Measure, c),
    };
    match run(cmd, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command, common: Common) -> Result<()> {
    let file = match &common.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let s = common.settings.over(file).resolve(cmd)?;
    fs::create_dir_all(&common.out)?;
    let out = common.out.as_path();
    let name = match cmd {
        Command::Pressure => "pressure",
        Command::Bowen => "bowen",
        Command::Scan => "scan",
        Command::Raster => "raster",
        Command::Measure => "measure",
    };
    fs::write(out.join(format!("{name}.config.toml")), s.to_toml()?)?;
    match cmd {
        Command::Pressure => cmd_pressure(&s, out),
        Command::Bowen => cmd_bowen(&s, out),
        Command::Scan => cmd_scan(&s, out),
        Command::Raster => cmd_raster(&s, out),
        Command::Measure => cmd_measure(&s, out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn metadata(command: &str, schema: u32, s: &Settings) -> serde_json::Value {
    json!({
        "schema": format!("expdyn.{command}/{schema}"),
        "version": VERSION,
        "command": command,
        "seed": s.seed,
        "config": s,
    })
}

fn cmd_pressure(s: &Settings, out: &Path) -> Result<()> {
    let cfg = s.driver_config()?;
    let ts = s.t_values()?;
    let base = s.transfer_params(ts[0])?;
    let curve: PressureCurve = match s.method.as_deref() {
        Some("birkhoff_lambda") => pressure_curve(&base, &cfg, &ts, &s.birkhoff()?)?,
        Some("operator_grid") => {
            let spec = s.grid_spec()?;
            let b = s.birkhoff()?;
            let points = ts
                .iter()
                .map(|&t| pressure_operator_grid(&base.with_t(t)?, &cfg, &spec, b.n, b.burn))
                .collect::<Result<Vec<_>>>()?;
            curve_from_points(points)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method `{}`",
                other.unwrap_or_default()
            )))
        }
    };
    let mut w = csv::Writer::from_path(out.join("pressure.csv"))?;
    w.write_record(["t", "value", "stderr", "n"])?;
    for p in &curve.points {
        w.write_record([
            p.t.to_string(),
            p.value.to_string(),
            p.stderr.to_string(),
            p.n_steps.to_string(),
        ])?;
    }
    w.flush()?;
    let mut meta = metadata("pressure", 1, s);
    meta["tolerances"] = json!({
        "tail_tol": s.tail_tol,
        "max_budget": s.max_budget,
        "prune": s.prune,
    });
    meta["curve"] = serde_json::to_value(&curve)?;
    write_json(&out.join("pressure.json"), &meta)
}

fn cmd_bowen(s: &Settings, out: &Path) -> Result<()> {
    let cfg = s.driver_config()?;
    let opts = s.bowen()?;
    let base = s.transfer_params(opts.t_hi)?;
    let res = bowen_solve(&base, &cfg, &s.birkhoff()?, &opts)?;
    let mut meta = metadata("bowen", 1, s);
    meta["result"] = serde_json::to_value(&res)?;
    write_json(&out.join("bowen.json"), &meta)
}

fn cmd_scan(s: &Settings, out: &Path) -> Result<()> {
    let cfg = s.driver_config()?;
    let n = s.n.unwrap_or(0);
    let seq = sample_sequence(&cfg, n)?;
    let grid = s.scan_grid()?;
    let rep = typical_scan(&seq, &grid, n, s.delta.unwrap_or(0.1))?;
    let mut w = csv::Writer::from_path(out.join("scan.csv"))?;
    w.write_record(["n", "max_k"])?;
    for (m, k) in rep.schedule.iter().zip(&rep.max_k) {
        w.write_record([m.to_string(), k.to_string()])?;
    }
    w.flush()?;
    let mut meta = metadata("scan", 1, s);
    meta["report"] = serde_json::to_value(&rep)?;
    write_json(&out.join("scan.json"), &meta)
}

fn cmd_raster(s: &Settings, out: &Path) -> Result<()> {
    let cfg = s.driver_config()?;
    let n = s.n.unwrap_or(0);
    let seq = sample_sequence(&cfg, n)?;
    let window = s.raster_window()?;
    let raster = expansion_raster(&seq, &window, n, s.threshold.unwrap_or(1e6))?;
    raster.save_pgm(&out.join("raster.pgm"))?;
    let mut meta = metadata("raster", 1, s);
    meta["window"] = serde_json::to_value(window)?;
    meta["n_max"] = json!(n);
    meta["neighbor_disagreement"] = json!(raster.neighbor_disagreement());
    write_json(&out.join("raster.json"), &meta)
}

fn cmd_measure(s: &Settings, out: &Path) -> Result<()> {
    let cfg = s.driver_config()?;
    let ts = s.t_values()?;
    if ts.len() != 1 {
        return Err(Error::Config("measure takes a single t".into()));
    }
    let tp = s.transfer_params(ts[0])?;
    let b = s.birkhoff()?;
    let n = b.n;
    let audit_n = s.audit_n.unwrap_or(5);
    let keep = audit_n + 2;
    let seq = sample_sequence(&cfg, n + keep)?;
    let centers = singular_centers(&seq.etas, n, SEED_M0);
    let nu0 = seed_measure(SEED_M0, SEED_R0, &centers, b.atoms, n)?;
    let phi = PhiOptions {
        atom_cap: b.atoms,
        seed: resample_seed(cfg.seed),
    };
    let run = phi_iterate(&tp, &seq, &nu0, n, &phi, keep)?;
    let mut f = std::io::BufWriter::new(fs::File::create(out.join("measure.csv"))?);
    run.measure.write_csv(&mut f)?;
    f.flush()?;

    let p = seq.param(0)?;
    let balls = standard_test_balls(p.eta());
    let lambda0 = run.lambda_at(0).unwrap_or(f64::NAN);
    let residual = conformality_residual(&tp, &p, &run.history[0], &run.history[1], lambda0, &balls, 1e-3)?;
    let constants = ConstantsTable::build(&tp, &p, SEED_R0, SEED_M0)?;
    let audit = p_space_check(
        &tp,
        &constants,
        &run.history,
        &seq.etas,
        audit_n,
        &[11.0, 15.0, 20.0],
    )?;
    let log_lambdas: Vec<f64> = run.lambdas.iter().map(|l| l.ln()).collect();
    let mut meta = metadata("measure", 1, s);
    meta["atoms"] = json!(run.measure.len());
    meta["log_lambdas"] = json!(log_lambdas);
    meta["max_error_budget"] = json!(run.max_error_budget);
    meta["conformality_residual"] = json!(residual);
    meta["test_balls"] = serde_json::to_value(&balls)?;
    meta["p_space"] = serde_json::to_value(&audit)?;
    write_json(&out.join("measure.json"), &meta)
}
