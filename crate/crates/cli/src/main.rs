//! `sire` — simulation-informed revenue extrapolation from the shell.
//!
//! Subcommands mirror the pipeline: `synth` generates a reproducible
//! cohort CSV, `validate` ingests and reports, `forecast` produces banded
//! trajectories, `evaluate` runs the rolling-origin harness against the
//! persistence baseline, and `explain` dumps the peer provenance behind a
//! forecast step. Every artifact embeds the effective config and seed, and
//! identical configs produce byte-identical artifacts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sire_core::calendar::Granularity;
use sire_core::dataset::{build_dataset, CompanyId, Dataset, RawCompany};
use sire_core::evaluation::{
    rolling_origin, EvalPlan, Forecaster, InvestorCase, PersistenceForecaster, SireForecaster,
};
use sire_core::extrapolation::{forecast_with_confidence, ForecastConfig, ForecastResult};
use sire_core::ingest::{ingest_csv, write_csv};
use sire_core::measurement::{FallbackPolicy, MeasureConfig};
use sire_core::synthetic::{generate_cohort, CohortSpec};

#[derive(Parser)]
#[command(name = "sire", version, about = "Simulation-informed revenue extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FallbackArg {
    Strict,
    Relax,
}

impl From<FallbackArg> for FallbackPolicy {
    fn from(value: FallbackArg) -> Self {
        match value {
            FallbackArg::Strict => FallbackPolicy::Strict,
            FallbackArg::Relax => FallbackPolicy::Relax,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GranularityArg {
    Monthly,
    Yearly,
}

impl From<GranularityArg> for Granularity {
    fn from(value: GranularityArg) -> Self {
        match value {
            GranularityArg::Monthly => Granularity::Monthly,
            GranularityArg::Yearly => Granularity::Yearly,
        }
    }
}

/// Model knobs shared by forecast, evaluate and explain.
#[derive(Args, Debug, Clone)]
struct ModelOpts {
    /// RNG seed; identical seeds give byte-identical artifacts.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Trials per forecast (M).
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Relative half-width r of the peer revenue band, in (0,1).
    #[arg(long, default_value_t = 0.5)]
    relax_r: f64,
    /// Growth quantile bucket count n.
    #[arg(long, default_value_t = 4)]
    quantiles: usize,
    /// Z value of the confidence band (1.96 = 95%, 1.645 = 90%).
    #[arg(long, default_value_t = 1.96)]
    z_value: f64,
    /// EM iterations per fit.
    #[arg(long, default_value_t = 10)]
    em_iters: usize,
    /// YoY growth lag; defaults to 12 for monthly input, 1 for yearly.
    #[arg(long)]
    periodicity: Option<u32>,
    /// Behavior when the peer filters leave nothing to sample.
    #[arg(long, value_enum, default_value_t = FallbackArg::Relax)]
    fallback: FallbackArg,
}

impl ModelOpts {
    fn forecast_config(&self, horizon: usize, granularity: Granularity) -> ForecastConfig {
        let periodicity = self
            .periodicity
            .unwrap_or_else(|| granularity.periods_per_year());
        let mut measure = MeasureConfig::new(periodicity);
        measure.relax_r = self.relax_r;
        measure.quantile_count = self.quantiles;
        measure.fallback = self.fallback.into();
        let mut cfg = ForecastConfig::new(horizon, self.seed, measure);
        cfg.trials = self.trials;
        cfg.z_value = self.z_value;
        cfg.em.iterations = self.em_iters;
        cfg
    }

    fn echo(&self, command: &str, input: Option<&Path>, horizon: Option<usize>) -> serde_json::Value {
        json!({
            "command": command,
            "input": input.map(|p| p.display().to_string()),
            "seed": self.seed,
            "trials": self.trials,
            "relax_r": self.relax_r,
            "quantiles": self.quantiles,
            "z_value": self.z_value,
            "em_iters": self.em_iters,
            "periodicity": self.periodicity,
            "fallback": format!("{:?}", self.fallback).to_lowercase(),
            "horizon": horizon,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV and report panel statistics and warnings.
    Validate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        periodicity: Option<u32>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic cohort CSV.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 50)]
        companies: usize,
        #[arg(long, value_enum, default_value_t = GranularityArg::Monthly)]
        granularity: GranularityArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Shortest series length, in periods.
        #[arg(long)]
        min_len: Option<usize>,
        /// Longest series length, in periods.
        #[arg(long)]
        max_len: Option<usize>,
        /// Multiplicative booking-noise standard deviation.
        #[arg(long)]
        measurement_noise: Option<f64>,
        /// Per-period pull of YoY growth toward 1.0, in (0,1].
        #[arg(long)]
        decay: Option<f64>,
        /// Per-period growth shock standard deviation.
        #[arg(long)]
        growth_noise: Option<f64>,
    },
    /// Forecast one company (or all) with confidence bands.
    Forecast {
        #[arg(long)]
        input: PathBuf,
        /// Company to forecast; omit to forecast every company.
        #[arg(long)]
        company: Option<String>,
        #[arg(long, default_value_t = 36)]
        horizon: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Embed the full M x T' trajectory matrix in JSON output.
        #[arg(long)]
        include_trials: bool,
        /// Embed per-step peer provenance in JSON output.
        #[arg(long)]
        include_provenance: bool,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Rolling-origin backtest against the persistence baseline.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 12)]
        horizon: usize,
        /// Minimum booked points before a cutoff.
        #[arg(long, default_value_t = 3)]
        min_history: usize,
        /// Stride over eligible cutoffs (1 = every period).
        #[arg(long, default_value_t = 1)]
        every_k: usize,
        /// Investor calls to score, e.g. "3x:4-5y" (repeatable).
        #[arg(long = "investor")]
        investor: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Embed full per-cell detail in JSON output.
        #[arg(long)]
        include_cells: bool,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Show the peer tuples behind one forecast step.
    Explain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        company: String,
        /// Horizon step to explain, 1-based.
        #[arg(long)]
        step: usize,
        #[arg(long, default_value_t = 36)]
        horizon: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        model: ModelOpts,
    },
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_panel(input: &Path) -> Result<(Vec<RawCompany>, Granularity)> {
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let mut reader = BufReader::new(file);
    let mut contents = String::new();
    reader
        .read_to_string(&mut contents)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let (raw, granularity) =
        ingest_csv(contents.as_bytes()).with_context(|| format!("ingesting {}", input.display()))?;
    Ok((raw, granularity))
}

fn build_panel(
    raw: &[RawCompany],
    granularity: Granularity,
    periodicity: Option<u32>,
) -> Result<(Dataset, u32)> {
    let p = periodicity.unwrap_or_else(|| granularity.periods_per_year());
    let report = build_dataset(raw, p, granularity)?;
    Ok((report.dataset, p))
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            let mut writer = BufWriter::new(file);
            writer.write_all(contents.as_bytes())?;
            writer.flush()?;
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_investor(spec: &str) -> Result<InvestorCase> {
    // "3x:4-5y" -> multiple 3, window years (4, 5).
    let cleaned = spec.trim();
    let (multiple, window) = cleaned
        .split_once(':')
        .with_context(|| format!("investor spec {cleaned:?} is not MULTIPLEx:LO-HIy"))?;
    let multiple: f64 = multiple
        .strip_suffix('x')
        .unwrap_or(multiple)
        .parse()
        .with_context(|| format!("bad multiple in {cleaned:?}"))?;
    let window = window.strip_suffix('y').unwrap_or(window);
    let (lo, hi) = window
        .split_once('-')
        .with_context(|| format!("bad window in {cleaned:?}"))?;
    Ok(InvestorCase {
        multiple,
        window_years: (lo.parse()?, hi.parse()?),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate {
            input,
            periodicity,
            output,
        } => {
            let (raw, granularity) = load_panel(&input)?;
            let p = periodicity.unwrap_or_else(|| granularity.periods_per_year());
            let report = build_dataset(&raw, p, granularity)?;
            let rows: usize = raw.iter().map(|c| c.series.len()).sum();
            let payload = json!({
                "config": {
                    "command": "validate",
                    "input": input.display().to_string(),
                    "periodicity": p,
                },
                "granularity": granularity,
                "periodicity": p,
                "companies": raw.len(),
                "rows": rows,
                "tuples": report.dataset.tuples().len(),
                "skipped": report.skipped,
                "errors": 0,
            });
            emit(output.as_deref(), &pretty(&payload))?;
            Ok(())
        }

        Command::Synth {
            output,
            companies,
            granularity,
            seed,
            min_len,
            max_len,
            measurement_noise,
            decay,
            growth_noise,
        } => {
            let mut spec = match granularity {
                GranularityArg::Monthly => CohortSpec::monthly(companies, seed),
                GranularityArg::Yearly => CohortSpec::yearly(companies, seed),
            };
            if let Some(lo) = min_len {
                spec.series_len.0 = lo;
            }
            if let Some(hi) = max_len {
                spec.series_len.1 = hi;
            }
            if let Some(noise) = measurement_noise {
                spec.measurement_noise_std = noise;
            }
            if let Some(decay) = decay {
                spec.growth.decay = decay;
            }
            if let Some(noise) = growth_noise {
                spec.growth.noise_std = noise;
            }
            let cohort = generate_cohort(&spec)?;
            let config = serde_json::to_string(&json!({
                "command": "synth",
                "seed": seed,
                "spec": spec,
            }))
            .expect("serializable");
            let mut buffer = Vec::new();
            write_csv(&cohort.raw, &[format!("config = {config}")], &mut buffer)?;
            emit(
                Some(&output),
                std::str::from_utf8(&buffer).expect("CSV is UTF-8"),
            )?;
            eprintln!(
                "wrote {} companies ({} rows, {} tuples) to {}",
                cohort.raw.len(),
                cohort.raw.iter().map(|c| c.series.len()).sum::<usize>(),
                cohort.dataset.tuples().len(),
                output.display()
            );
            Ok(())
        }

        Command::Forecast {
            input,
            company,
            horizon,
            output,
            format,
            include_trials,
            include_provenance,
            model,
        } => {
            let (raw, granularity) = load_panel(&input)?;
            let (dataset, _) = build_panel(&raw, granularity, model.periodicity)?;
            let cfg = model.forecast_config(horizon, granularity);
            let echo = model.echo("forecast", Some(&input), Some(horizon));

            let targets: Vec<&RawCompany> = match &company {
                Some(id) => {
                    let wanted = CompanyId::new(id.clone());
                    vec![raw
                        .iter()
                        .find(|c| c.profile.company_id == wanted)
                        .with_context(|| format!("company {id} not found in the input"))?]
                }
                None => raw.iter().collect(),
            };

            let mut forecasts: Vec<ForecastResult> = Vec::new();
            let mut failures = Vec::new();
            for target in &targets {
                match forecast_with_confidence(&dataset, &target.profile, &target.series, &cfg) {
                    Ok(result) => forecasts.push(result),
                    Err(err) => failures.push(json!({
                        "company_id": target.profile.company_id,
                        "error": err.to_string(),
                    })),
                }
            }
            if forecasts.is_empty() {
                bail!(
                    "no forecast produced; first failure: {}",
                    failures
                        .first()
                        .and_then(|f| f["error"].as_str())
                        .unwrap_or("none")
                );
            }

            let contents = match format {
                Format::Json => {
                    let body: Vec<serde_json::Value> = forecasts
                        .iter()
                        .map(|f| f.to_json(include_trials, include_provenance))
                        .collect();
                    pretty(&json!({
                        "config": echo,
                        "forecasts": body,
                        "failures": failures,
                    }))
                }
                Format::Csv => {
                    let mut out = format!(
                        "# config = {}\n",
                        serde_json::to_string(&echo).expect("serializable")
                    );
                    out.push_str("company_id,date,mean,margin,lower,upper\n");
                    for f in &forecasts {
                        for step in &f.steps {
                            out.push_str(&format!(
                                "{},{},{},{},{},{}\n",
                                f.company_id, step.date, step.mean, step.margin, step.lower,
                                step.upper
                            ));
                        }
                    }
                    out
                }
            };
            emit(output.as_deref(), &contents)?;
            if !failures.is_empty() {
                eprintln!("{} of {} companies failed to forecast", failures.len(), targets.len());
            }
            Ok(())
        }

        Command::Evaluate {
            input,
            horizon,
            min_history,
            every_k,
            investor,
            output,
            format,
            include_cells,
            model,
        } => {
            let (raw, granularity) = load_panel(&input)?;
            let periodicity = model
                .periodicity
                .unwrap_or_else(|| granularity.periods_per_year());
            let investor_cases: Vec<InvestorCase> = investor
                .iter()
                .map(|s| parse_investor(s))
                .collect::<Result<_>>()?;
            let mut plan = EvalPlan::new(horizon);
            plan.min_history = min_history;
            plan.every_k = every_k;
            let sire = SireForecaster {
                config: model.forecast_config(horizon, granularity),
            };
            let persistence = PersistenceForecaster { periodicity };
            let forecasters: Vec<&dyn Forecaster> = vec![&sire, &persistence];
            let report = rolling_origin(
                &raw,
                periodicity,
                granularity,
                &forecasters,
                &plan,
                &investor_cases,
            )?;
            eprint!("{}", report.summary_table());
            eprintln!(
                "common cells: {}, excluded: {}, leakage violations: {}",
                report.common_cells,
                report.failures.len(),
                report.leakage_violations
            );
            let echo = model.echo("evaluate", Some(&input), Some(horizon));
            let contents = match format {
                Format::Csv => format!(
                    "# config = {}\n{}",
                    serde_json::to_string(&echo).expect("serializable"),
                    report.to_csv()
                ),
                Format::Json => {
                    let mut body = report.to_json(include_cells);
                    body["config"] = echo;
                    pretty(&body)
                }
            };
            emit(output.as_deref(), &contents)?;
            Ok(())
        }

        Command::Explain {
            input,
            company,
            step,
            horizon,
            output,
            model,
        } => {
            if step == 0 || step > horizon {
                bail!("step must lie in 1..=horizon ({horizon})");
            }
            let (raw, granularity) = load_panel(&input)?;
            let (dataset, _) = build_panel(&raw, granularity, model.periodicity)?;
            let wanted = CompanyId::new(company.clone());
            let target = raw
                .iter()
                .find(|c| c.profile.company_id == wanted)
                .with_context(|| format!("company {company} not found in the input"))?;
            let cfg = model.forecast_config(horizon, granularity);
            let result =
                forecast_with_confidence(&dataset, &target.profile, &target.series, &cfg)?;
            let peers = result.step_peers(step);
            let info = &result.steps[step - 1];
            let payload = json!({
                "config": model.echo("explain", Some(&input), Some(horizon)),
                "company_id": result.company_id,
                "step": step,
                "date": info.date,
                "mean": info.mean,
                "margin": info.margin,
                // Peers were filtered at the date the step was measured
                // from, one period before the step itself.
                "cutoff": info.date.plus(-1),
                "peers": peers,
            });
            emit(output.as_deref(), &pretty(&payload))?;
            Ok(())
        }
    }
}
