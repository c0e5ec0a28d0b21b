//! Command-line front end: `simulate`, `optimize`, `formula` and `verify`.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::error::SimError;
use crate::optimizer::{self, OptimizeOptions};
use crate::report::AttackReportFile;
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::strategies::{
    self, bb_multi_formula, bb_single_formula, bd_formula, bd_inputs, AttackReport, BbInputs, BdParams, StrategyKind,
    StrategyParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// Infeasible run, or a verification row out of tolerance.
pub const EXIT_INFEASIBLE: i32 = 2;

/// Largest relative deviation `verify` accepts.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "roleplay",
    version,
    about = "Simulate, optimize and verify multi-role DeFi attack strategies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one strategy and write its report.
    Simulate(SimulateArgs),
    /// Search the strategy parameters for the highest simulated profit.
    Optimize(OptimizeArgs),
    /// Evaluate the closed-form profit expressions.
    Formula(CommonArgs),
    /// Compare closed-form, simulated and numerically optimized profits.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file, or the name of a shipped preset.
    #[arg(long, value_name = "PATH")]
    pub scenario: String,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: StrategyKind,
    /// Strategy parameter; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Write the JSON output here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Reserved. Every computation is deterministic.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Shorthand for `--param out_s=X`.
    #[arg(long = "out-s", value_name = "X")]
    pub out_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Grid cells per continuous axis before refinement.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Upper end of the round-count sweep for bb-multi.
    #[arg(long, default_value_t = optimizer::MAX_SWEEP_ROUNDS)]
    pub max_rounds: u32,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "PATH")]
    pub scenario: String,
    /// Strategies to check; defaults to every one the scenario supports.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Vec<StrategyKind>,
    /// Repeat the check at each flashloan fee (comma separated).
    #[arg(long, value_name = "FEES", value_delimiter = ',')]
    pub fee_sweep: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: SimError| e.to_string())
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    StrategyParams::parse_pair(s).map_err(|e| e.to_string())
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(SimError::Infeasible(_)) => EXIT_INFEASIBLE,
            _ => EXIT_ERROR,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if help {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_ERROR;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Optimize(a) => optimize(a, out),
        Command::Formula(a) => formula(a, out),
        Command::Verify(a) => verify(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

struct Prepared {
    config: ScenarioConfig,
    world: crate::World,
    params: StrategyParams,
}

/// Loads the scenario and overlays the command-line parameters on the
/// scenario defaults that apply to `kind`.
fn prepare(a: &CommonArgs, extra: &[(String, f64)]) -> Result<Prepared, CliError> {
    let config = ScenarioConfig::resolve(&a.scenario)?;
    config.supports(a.strategy)?;
    let world = config.build_world()?;
    let keys = a.strategy.param_keys();
    let mut params = StrategyParams(
        config
            .defaults
            .iter()
            .filter(|(k, _)| keys.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    );
    params.0.extend(a.params.iter().chain(extra).cloned());
    params.ensure_keys(keys)?;
    Ok(Prepared { config, world, params })
}

fn emit(out: &mut dyn Write, path: Option<&Path>, json: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, json).map_err(|source| CliError::Write {
            path: p.to_owned(),
            source,
        }),
        None => out.write_all(json.as_bytes()).map_err(|source| CliError::Write {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// The parameters a run actually used, defaults included.
fn resolved_params(kind: StrategyKind, given: &StrategyParams, report: &AttackReport) -> StrategyParams {
    let keys: &[&str] = match kind {
        StrategyKind::BorrowBuy => &["out_s"],
        StrategyKind::BorrowBuyMulti => &[],
        StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => {
            &["iter", "init_mint", "collateral_b", "donate"]
        }
    };
    keys.iter().fold(given.clone(), |p, k| match report.metric(k) {
        Some(v) if p.get(k).is_none() => p.with(k, v),
        _ => p,
    })
}

fn summary(out: &mut dyn Write, file: &AttackReportFile) {
    let r = &file.report;
    let cf = r
        .closed_form_profit
        .map_or_else(|| "n/a".to_owned(), |v| format!("{v:.6}"));
    let status = if r.feasible { "feasible" } else { "infeasible" };
    let _ = writeln!(
        out,
        "{} on {}: simulated profit {:.6}, closed form {cf}, {status}",
        file.strategy, file.scenario, r.simulated_profit
    );
    if let Some(f) = &r.failure {
        let _ = writeln!(out, "  failure: {f}");
    }
}

fn write_report(
    out: &mut dyn Write,
    path: Option<&Path>,
    config: &ScenarioConfig,
    params: StrategyParams,
    report: AttackReport,
) -> Result<i32, CliError> {
    let feasible = report.feasible;
    let file = AttackReportFile::new(config, params, report);
    emit(out, path, &file.to_json())?;
    if path.is_some() {
        summary(out, &file);
    }
    Ok(if feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let extra: Vec<(String, f64)> = a.out_s.map(|v| ("out_s".to_owned(), v)).into_iter().collect();
    let p = prepare(&a.common, &extra)?;
    let exec = strategies::run(&p.world, a.common.strategy, &p.params)?;
    let params = resolved_params(a.common.strategy, &p.params, &exec.report);
    write_report(out, a.common.out.as_deref(), &p.config, params, exec.report)
}

fn optimize(a: OptimizeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let p = prepare(&a.common, &[])?;
    let kind = a.common.strategy;
    // Only explicit command-line parameters are held fixed.
    let fixed = StrategyParams(a.common.params.iter().cloned().collect());
    let opts = OptimizeOptions {
        resolution: a.resolution.max(3),
        max_rounds: a.max_rounds.max(1),
    };
    let best = optimizer::optimize(&p.world, kind, &fixed, &opts)?;
    let exec = strategies::run(&p.world, kind, &best.params)?;
    write_report(out, a.common.out.as_deref(), &p.config, best.params, exec.report)
}

fn formula(a: CommonArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let p = prepare(&a, &[])?;
    let (result, feasible) = match a.strategy {
        StrategyKind::BorrowBuy => {
            let i = BbInputs::from_world(&p.world)?;
            let r = bb_single_formula(i.init_s, i.cr_m, i.reserve_s)?;
            (json!({ "inputs": i, "optimum": r }), r.feasible)
        }
        StrategyKind::BorrowBuyMulti => {
            let i = BbInputs::from_world(&p.world)?;
            let r = bb_multi_formula(i.init_s, i.init_m, i.cr_m, i.reserve_s)?;
            (json!({ "inputs": i, "bound": r }), true)
        }
        StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => {
            let enhanced = a.strategy == StrategyKind::BorrowDonateEnhanced;
            let bd = BdParams::resolve(&p.world, &p.params, enhanced)?;
            let i = bd_inputs(&p.world)?;
            let r = bd_formula(&i, bd.iter, bd.init_mint, enhanced)?;
            (
                json!({ "inputs": i, "iter": bd.iter, "init_mint": bd.init_mint, "closed_form": r }),
                true,
            )
        }
    };
    let doc = json!({
        "scenario": p.config.name,
        "fingerprint": p.config.fingerprint(),
        "strategy": a.strategy,
        "result": result,
    });
    emit(out, a.out.as_deref(), &to_json(&doc))?;
    Ok(if feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// One line of the `verify` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub strategy: StrategyKind,
    pub flash_fee: f64,
    pub formula: Option<f64>,
    pub simulated: Option<f64>,
    /// Best simulated profit found by search; not computed for bb-multi.
    pub numeric: Option<f64>,
    pub deviation: f64,
    pub pass: bool,
    pub note: Option<String>,
}

/// `max(|simulated - formula|, formula - numeric) / max(1, |formula|)`.
/// The numeric optimum may exceed the closed form but not fall short of it.
pub fn deviation(formula: f64, simulated: f64, numeric: Option<f64>) -> f64 {
    let scale = formula.abs().max(1.0);
    let shortfall = numeric.map_or(0.0, |n| (formula - n).max(0.0));
    (simulated - formula).abs().max(shortfall) / scale
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn verify_one(config: &ScenarioConfig, kind: StrategyKind, resolution: usize) -> Result<VerifyRow, CliError> {
    let world = config.build_world()?;
    let fee = world.flashloans().map_or(0.0, |f| f.fee);
    let row =
        |formula: Option<f64>, simulated: Option<f64>, numeric: Option<f64>, deviation: f64, note: Option<String>| {
            let pass = deviation <= VERIFY_TOL && note.as_deref().is_none_or(|n| !n.starts_with("FAIL"));
            VerifyRow {
                strategy: kind,
                flash_fee: fee,
                formula,
                simulated,
                numeric,
                deviation,
                pass,
                note,
            }
        };
    Ok(match kind {
        StrategyKind::BorrowBuy => {
            let i = BbInputs::from_world(&world)?;
            let opt = bb_single_formula(i.init_s, i.cr_m, i.reserve_s)?;
            let numeric = finite_or_zero(optimizer::optimize_out_s(&world, i.init_s, resolution).value).max(0.0);
            if !opt.feasible {
                let dev = numeric / 1f64.max(numeric.abs());
                return Ok(row(
                    Some(0.0),
                    None,
                    Some(numeric),
                    dev,
                    Some("closed form infeasible".into()),
                ));
            }
            let r = strategies::bb_single_run(&world, opt.out_s)?.report;
            let cf = r.closed_form_profit.unwrap_or(opt.profit);
            let dev = deviation(cf, r.simulated_profit, Some(numeric)).max((numeric - cf).abs() / cf.abs().max(1.0));
            row(Some(cf), Some(r.simulated_profit), Some(numeric), dev, None)
        }
        StrategyKind::BorrowBuyMulti => {
            let r = strategies::bb_multi_run(&world, strategies::DEFAULT_MAX_ROUNDS)?.report;
            let cf = r.closed_form_profit.unwrap_or(f64::NAN);
            let rounds = r.metric("rounds").unwrap_or(0.0);
            let note = match r.flags.residual_within_bound {
                Some(false) => format!("FAIL: residual above bound after {rounds} rounds"),
                _ => format!("{rounds} rounds"),
            };
            row(
                Some(cf),
                Some(r.simulated_profit),
                None,
                deviation(cf, r.simulated_profit, None),
                Some(note),
            )
        }
        StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => {
            let enhanced = kind == StrategyKind::BorrowDonateEnhanced;
            let p = BdParams::resolve(&world, &config.defaults(), enhanced)?;
            let cf = bd_formula(&bd_inputs(&world)?, p.iter, p.init_mint, enhanced)?;
            let r = strategies::run(&world, kind, &config.defaults())?.report;
            let (c, d) = optimizer::refine_collateral_and_donation(&world, kind, p.iter, p.init_mint)?;
            let probe = StrategyParams::new()
                .with("iter", f64::from(p.iter))
                .with("init_mint", p.init_mint)
                .with("collateral_b", c)
                .with("donate", d);
            let numeric = finite_or_zero(optimizer::evaluate(&world, kind, &probe).score());
            let note = format!("iter {} init_mint {}", p.iter, p.init_mint);
            let dev = deviation(cf.profit, r.simulated_profit, Some(numeric));
            row(
                Some(cf.profit),
                Some(r.simulated_profit),
                Some(numeric),
                dev,
                Some(note),
            )
        }
    })
}

/// Runs every requested check, once per fee when `fees` is non-empty.
pub fn verify_rows(
    config: &ScenarioConfig,
    kinds: &[StrategyKind],
    fees: &[f64],
    resolution: usize,
) -> Result<Vec<VerifyRow>, CliError> {
    let kinds: Vec<StrategyKind> = if kinds.is_empty() {
        StrategyKind::ALL
            .into_iter()
            .filter(|k| config.supports(*k).is_ok())
            .collect()
    } else {
        for k in kinds {
            config.supports(*k)?;
        }
        kinds.to_vec()
    };
    let configs: Vec<ScenarioConfig> = if fees.is_empty() {
        vec![config.clone()]
    } else {
        let mut fees = fees.to_vec();
        fees.sort_by(f64::total_cmp);
        fees.iter()
            .map(|f| {
                let mut c = config.clone();
                c.flashloan
                    .get_or_insert_with(|| crate::scenario::FlashloanConfig {
                        fee: 0.0,
                        liquidity: Default::default(),
                    })
                    .fee = *f;
                c.validate().map(|()| c)
            })
            .collect::<Result<_, _>>()?
    };
    let mut rows = Vec::new();
    for k in &kinds {
        for c in &configs {
            rows.push(verify_one(c, *k, resolution)?);
        }
    }
    if configs.len() > 1 {
        mark_fee_monotonicity(&mut rows);
    }
    Ok(rows)
}

/// Fails any row whose simulated profit rises above the one at the
/// previous (lower) fee for the same strategy.
fn mark_fee_monotonicity(rows: &mut [VerifyRow]) {
    for i in 1..rows.len() {
        let (prev, cur) = (&rows[i - 1], &rows[i]);
        if prev.strategy != cur.strategy {
            continue;
        }
        if let (Some(a), Some(b)) = (prev.simulated, cur.simulated) {
            if b > a + 1e-9 * a.abs().max(1.0) {
                let r = &mut rows[i];
                r.pass = false;
                r.note = Some(format!("FAIL: profit rose with fee ({a} -> {b})"));
            }
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"))
}

pub fn render_table(rows: &[VerifyRow]) -> String {
    let mut s = format!(
        "{:<12} {:>9} {:>18} {:>18} {:>18} {:>10}  {}\n",
        "strategy", "fee", "formula", "simulated", "numeric", "max_dev", "status"
    );
    for r in rows {
        s += &format!(
            "{:<12} {:>9} {:>18} {:>18} {:>18} {:>10.2e}  {}{}\n",
            r.strategy.name(),
            r.flash_fee,
            cell(r.formula),
            cell(r.simulated),
            cell(r.numeric),
            r.deviation,
            if r.pass { "pass" } else { "FAIL" },
            r.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default(),
        );
    }
    s
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let config = ScenarioConfig::resolve(&a.scenario)?;
    config.build_world()?;
    let rows = verify_rows(&config, &a.strategy, &a.fee_sweep, a.resolution.max(3))?;
    let table = render_table(&rows);
    let io_err = |source| CliError::Write {
        path: "<stdout>".into(),
        source,
    };
    out.write_all(table.as_bytes()).map_err(io_err)?;
    if let Some(path) = &a.out {
        let doc = json!({
            "scenario": config.name,
            "fingerprint": config.fingerprint(),
            "rows": rows,
        });
        emit(out, Some(path), &to_json(&doc))?;
    }
    Ok(if rows.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("roleplay").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_strategy_is_a_usage_error() {
        let (code, _, err) = run_args(&["simulate", "--scenario", "bb_desk", "--strategy", "bx"]);
        assert_eq!(code, EXIT_ERROR);
        assert!(err.contains("unknown strategy"));
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("simulate"));
    }

    #[test]
    fn deviation_rule() {
        assert_eq!(deviation(100.0, 100.0, Some(101.0)), 0.0);
        assert_eq!(deviation(100.0, 100.0, Some(99.0)), 0.01);
        assert_eq!(deviation(0.5, 0.0, None), 0.5);
    }

    #[test]
    fn fee_monotonicity_flags_rises() {
        let base = VerifyRow {
            strategy: StrategyKind::BorrowDonate,
            flash_fee: 0.0,
            formula: None,
            simulated: Some(10.0),
            numeric: None,
            deviation: 0.0,
            pass: true,
            note: None,
        };
        let mut rows = vec![
            base.clone(),
            VerifyRow {
                simulated: Some(11.0),
                ..base
            },
        ];
        mark_fee_monotonicity(&mut rows);
        assert!(rows[0].pass && !rows[1].pass);
    }
}
