//! Command-line surface: `simulate`, `project`, `identify`, `fit`, and
//! `summarize`. Every subcommand takes one run-configuration JSON; `--seed`
//! and `--out` override the corresponding config fields. Failures print a
//! one-line JSON error report on stderr and map to exit code 2
//! (configuration or data), 3 (infeasible constraints), or 4 (solver
//! failure).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{fit_chains, summarize_posterior, InferenceModelSpec};
use crate::io::{self, RunConfig};
use crate::link::{FGenerator, Link};
use crate::observed::materialize_table;
use crate::projection::{project, ConstraintSet};
use crate::reconstruct::FullDataReconstruction;
use crate::san::FullDataModel;
use crate::space::Space;
use crate::table::ProbTable;

/// Quantile grid reported for every scalar parameter.
pub const QUANTILE_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Debug, Parser)]
#[command(
    name = "sanmiss",
    version,
    about = "Nonignorable missing-data models on finite categorical spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a configured joint law and missingness mechanism.
    Simulate(JobArgs),
    /// Solve one f-projection onto marginal and moment constraints.
    Project(JobArgs),
    /// Reconstruct the full-data law from observed data and auxiliary margins.
    Identify(JobArgs),
    /// Sample the posterior of the mechanism and outcome model.
    Fit(JobArgs),
    /// Re-summarize a previously written samples CSV.
    Summarize(JobArgs),
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// Path to the run configuration JSON.
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output path (path prefix for `fit`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl JobArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut config = io::load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            config.out = Some(out.display().to_string());
        }
        Ok(config)
    }
}

/// Parses the process arguments, runs the requested subcommand, and returns
/// the exit code. Clap usage errors exit with code 2 on their own.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Simulate(args) => (CommandKind::Simulate, args),
        Command::Project(args) => (CommandKind::Project, args),
        Command::Identify(args) => (CommandKind::Identify, args),
        Command::Fit(args) => (CommandKind::Fit, args),
        Command::Summarize(args) => (CommandKind::Summarize, args),
    };
    let outcome = args.load().and_then(|config| run(kind, &config));
    match outcome {
        Ok(paths) => {
            for path in paths {
                println!("wrote {}", path.display());
            }
            0
        }
        Err(err) => {
            eprintln!("{}", error_report(&err));
            err.exit_code()
        }
    }
}

/// One-line JSON error report, `{"error": {"code": ..., "message": ...}}`.
pub fn error_report(err: &Error) -> String {
    json!({"error": {"code": err.code(), "message": err.to_string()}}).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Project,
    Identify,
    Fit,
    Summarize,
}

/// Runs one subcommand against a loaded configuration and returns the paths
/// of the artifacts it wrote.
pub fn run(kind: CommandKind, config: &RunConfig) -> Result<Vec<PathBuf>> {
    match kind {
        CommandKind::Simulate => run_simulate(config),
        CommandKind::Project => run_project(config),
        CommandKind::Identify => run_identify(config),
        CommandKind::Fit => run_fit(config),
        CommandKind::Summarize => run_summarize(config),
    }
}

fn out_path(config: &RunConfig, default: &str) -> PathBuf {
    config
        .out
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(default))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("serializing output: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn provenance(config: &RunConfig) -> Result<Value> {
    let echo = serde_json::to_value(config)
        .map_err(|e| Error::InvalidConfig(format!("echoing config: {e}")))?;
    Ok(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed.unwrap_or(0),
        "config": echo,
    }))
}

fn table_json(table: &ProbTable) -> Value {
    let space = table.space();
    let variables: Vec<&str> = space.vars().iter().map(|v| v.name()).collect();
    let cells: Vec<Value> = space
        .cells()
        .enumerate()
        .map(|(i, cell)| {
            json!({
                "levels": space.labels_of(&cell),
                "prob": table.mass()[i],
            })
        })
        .collect();
    json!({"variables": variables, "cells": cells})
}

fn echo_missingness(dataset: &Dataset) {
    let parts: Vec<String> = dataset
        .missing_fractions()
        .iter()
        .map(|(name, f)| format!("{name}={f:.4}"))
        .collect();
    println!("missingness: {}", parts.join(" "));
}

fn plain_space(config: &RunConfig) -> Result<Space> {
    let decl = config.space_decl()?;
    let mut vars = Vec::with_capacity(decl.variables.len());
    for v in &decl.variables {
        vars.push(crate::space::Variable::from_labels(
            v.name.clone(),
            v.levels.clone(),
        )?);
    }
    Space::new(vars)
}

fn run_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let vars = config.space_decl()?.build()?;
    let model = config.model_decl()?;
    let decl = config.simulate.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`simulate` needs a `simulate` section".into())
    })?;
    let ordering = model
        .ordering
        .clone()
        .unwrap_or_default()
        .resolve(&model.modeled, None)?;
    let san = model.build_san(vars.clone(), &ordering)?;
    let joint = match &decl.joint {
        Some(j) => {
            let table = j.to_table(vars.space())?;
            if table.space() != vars.space() {
                return Err(Error::InvalidConfig(
                    "the simulate joint must cover every declared variable".into(),
                ));
            }
            table
        }
        None => ProbTable::uniform(vars.space().clone()),
    };
    let full = FullDataModel::new(joint, san)?;
    let seed = config.seed.unwrap_or(0);
    let dataset = crate::san::simulate(&full, decl.n, seed)?;
    echo_missingness(&dataset);
    let out = out_path(config, "dataset.csv");
    io::write_dataset(&out, &dataset)?;
    Ok(vec![out])
}

fn run_project(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let decl = config.project.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`project` needs a `project` section".into())
    })?;
    let space = plain_space(config)?;
    let q = match &decl.table {
        Some(t) => {
            let table = t.to_table(&space)?;
            if table.space() != &space {
                return Err(Error::InvalidConfig(
                    "the base table must cover every declared variable".into(),
                ));
            }
            table
        }
        None => ProbTable::uniform(space.clone()),
    };
    let link = Link::from_name(&decl.link)?;
    let gen = match (decl.pi, decl.c) {
        (Some(pi), None) => FGenerator::from_pi(link, pi)?,
        (None, Some(c)) => FGenerator::new(link, c)?,
        _ => {
            return Err(Error::InvalidConfig(
                "give exactly one of `project.pi` and `project.c`".into(),
            ))
        }
    };
    let moments = decl.margins.to_constraint_list(&space)?;
    let normalization = ProbTable::from_probabilities(Space::new(Vec::new())?, vec![1.0])?;
    let constraints = ConstraintSet::new(normalization, moments);
    let options = config.solver.clone().unwrap_or_default().options();
    let result = project(&q, &constraints, &gen, &options)?;
    let payload = json!({
        "provenance": provenance(config)?,
        "link": link.name(),
        "c": gen.c(),
        "table": table_json(&result.table),
        "dual": {"alpha": result.alpha, "beta": result.beta},
        "marginal_residual": result.marginal_residual,
        "moment_residual": result.moment_residual,
        "divergence": result.divergence,
        "iterations": result.iterations,
        "smoothed": result.smoothed,
    });
    let out = out_path(config, "projection.json");
    write_json(&out, &payload)?;
    Ok(vec![out])
}

fn reconstruction_json(result: &FullDataReconstruction) -> Value {
    let mechanisms: Vec<Value> = result
        .mechanisms
        .iter()
        .map(|m| {
            let conditioners: Vec<&str> = m.space.vars().iter().map(|v| v.name()).collect();
            let cells: Vec<Value> = m
                .space
                .cells()
                .enumerate()
                .map(|(i, cell)| {
                    json!({
                        "levels": m.space.labels_of(&cell),
                        "prob": m.prob[i],
                    })
                })
                .collect();
            json!({
                "variable": m.variable,
                "conditioners": conditioners,
                "cells": cells,
            })
        })
        .collect();
    let steps: Vec<Value> = result
        .steps
        .iter()
        .map(|s| {
            let projection = s.projection.as_ref().map(|p| {
                json!({
                    "alpha": p.alpha,
                    "beta": p.beta,
                    "marginal_residual": p.marginal_residual,
                    "moment_residual": p.moment_residual,
                    "divergence": p.divergence,
                    "iterations": p.iterations,
                    "decomposition_residual": p.decomposition_residual,
                })
            });
            json!({
                "step": s.j,
                "variable": s.variable,
                "pi": s.pi,
                "n_constraints": s.n_constraints,
                "projection": projection,
            })
        })
        .collect();
    json!({
        "joint": table_json(&result.joint),
        "full": table_json(&result.full),
        "mechanisms": mechanisms,
        "steps": steps,
    })
}

fn run_identify(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let vars = config.space_decl()?.build()?;
    let model = config.model_decl()?;
    let data_path = config.data.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`identify` needs a `data` path".into())
    })?;
    let dataset = io::load_dataset(Path::new(data_path), vars.space(), &model.modeled)?;
    echo_missingness(&dataset);
    let ordering = model
        .ordering
        .clone()
        .unwrap_or_default()
        .resolve(&model.modeled, Some(&dataset))?;
    let observed = dataset.empirical_observed(&model.modeled)?;
    let margins_path = config.margins.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`identify` needs a `margins` path".into())
    })?;
    let margins = io::load_margins(Path::new(margins_path))?.to_margins(&vars)?;
    let options = config.solver.clone().unwrap_or_default().options();
    let order_refs: Vec<&str> = ordering.iter().map(String::as_str).collect();
    let result = crate::reconstruct::reconstruct_algorithm1(
        &observed,
        &vars,
        &order_refs,
        &margins,
        model.link()?,
        &options,
    )?;
    let observed_gap = materialize_table(&result.full)?.sup_distance(&observed.to_materialized())?;
    let mut payload = reconstruction_json(&result);
    payload["provenance"] = provenance(config)?;
    payload["ordering"] = json!(ordering);
    payload["observed_sup_gap"] = json!(observed_gap);
    let out = out_path(config, "identification.json");
    write_json(&out, &payload)?;
    Ok(vec![out])
}

fn run_fit(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let vars = config.space_decl()?.build()?;
    let model = config.model_decl()?;
    let data_path = config.data.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`fit` needs a `data` path".into())
    })?;
    let mut allow_missing = model.modeled.clone();
    for &p in &vars.x_positions() {
        allow_missing.push(vars.space().var(p).name().to_string());
    }
    let dataset = io::load_dataset(Path::new(data_path), vars.space(), &allow_missing)?;
    echo_missingness(&dataset);
    let ordering = model
        .ordering
        .clone()
        .unwrap_or_default()
        .resolve(&model.modeled, Some(&dataset))?;
    let san = model.build_san(vars.clone(), &ordering)?;
    let aux = config.build_aux(&vars)?;
    let spec = InferenceModelSpec::new(san, aux)?;
    let mcmc = config.mcmc.clone().unwrap_or_default();
    let seed = config.seed.unwrap_or(0);
    let gibbs = mcmc.gibbs_config(seed)?;
    let chains = fit_chains(&spec, &dataset, &gibbs, mcmc.chains)?;

    let prefix = config.out.clone().unwrap_or_else(|| "fit".into());
    let samples_path = PathBuf::from(format!("{prefix}_samples.csv"));
    let summary_path = PathBuf::from(format!("{prefix}_summary.json"));
    io::write_samples(&samples_path, &chains)?;

    let names = chains[0].parameter_names();
    let mut pooled: Vec<Vec<f64>> = Vec::new();
    for chain in &chains {
        pooled.extend(chain.parameter_draws());
    }
    let summaries = summarize_posterior(&names, &pooled, &QUANTILE_PROBS)?;
    let zero_support: BTreeSet<&str> = chains
        .iter()
        .flat_map(|c| c.zero_support.iter().map(String::as_str))
        .collect();
    let gamma_acceptance: Vec<Value> = chains.iter().map(|c| json!(c.gamma_acceptance)).collect();
    let kappa_acceptance: Vec<Value> = chains.iter().map(|c| json!(c.kappa_acceptance)).collect();
    let payload = json!({
        "provenance": provenance(config)?,
        "ordering": ordering,
        "aux_mode": spec.aux().name(),
        "method": gibbs.method.name(),
        "chains": mcmc.chains,
        "draws_per_chain": chains[0].n_samples(),
        "parameters": summaries,
        "zero_support": zero_support.into_iter().collect::<Vec<_>>(),
        "acceptance": {"gamma": gamma_acceptance, "kappa": kappa_acceptance},
    });
    write_json(&summary_path, &payload)?;
    Ok(vec![samples_path, summary_path])
}

fn run_summarize(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let samples_path = config.samples.as_ref().ok_or_else(|| {
        Error::InvalidConfig("`summarize` needs a `samples` path".into())
    })?;
    let (names, rows) = io::load_samples(Path::new(samples_path))?;
    let summaries = summarize_posterior(&names, &rows, &QUANTILE_PROBS)?;
    let payload = json!({
        "provenance": provenance(config)?,
        "n_draws": rows.len(),
        "parameters": summaries,
    });
    let out = out_path(config, "summary.json");
    write_json(&out, &payload)?;
    Ok(vec![out])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_reports_are_one_line_json() {
        let err = Error::InvalidConfig("bad knob".into());
        let report = error_report(&err);
        assert!(!report.contains('\n'));
        let value: Value = serde_json::from_str(&report).unwrap();
        assert_eq!(value["error"]["code"], "invalid_config");
        assert!(value["error"]["message"]
            .as_str()
            .unwrap()
            .contains("bad knob"));
    }

    #[test]
    fn simulate_then_fit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        let margins = dir.path().join("m.json");
        std::fs::write(
            &margins,
            r#"{"joint": {"variables": ["y1", "y2"], "cells": [
                {"levels": ["0", "0"], "prob": 0.3},
                {"levels": ["0", "1"], "prob": 0.2},
                {"levels": ["1", "0"], "prob": 0.15},
                {"levels": ["1", "1"], "prob": 0.35}]}}"#,
        )
        .unwrap();
        let config_text = format!(
            r#"{{
                "space": {{
                    "variables": [
                        {{"name": "x", "levels": ["0", "1"]}},
                        {{"name": "y1", "levels": ["0", "1"]}},
                        {{"name": "y2", "levels": ["0", "1"]}}
                    ],
                    "y_block": ["y1", "y2"]
                }},
                "model": {{
                    "modeled": ["y1", "y2"],
                    "link": "logit",
                    "submodel": 3,
                    "randomize": {{"sd_alpha": 0.4, "sd_beta": 0.4, "seed": 5}}
                }},
                "simulate": {{"n": 400}},
                "data": {},
                "aux": {{"mode": "known_kappa", "margins": {}}},
                "mcmc": {{"n_iter": 60, "burn_in": 20, "method": "random_walk"}},
                "seed": 11,
                "out": {}
            }}"#,
            serde_json::to_string(&data.display().to_string()).unwrap(),
            serde_json::to_string(&margins.display().to_string()).unwrap(),
            serde_json::to_string(&data.display().to_string()).unwrap(),
        );
        let mut config: RunConfig = serde_json::from_str(&config_text).unwrap();
        let written = run(CommandKind::Simulate, &config).unwrap();
        assert_eq!(written, [data.clone()]);

        let prefix = dir.path().join("run");
        config.out = Some(prefix.display().to_string());
        let written = run(CommandKind::Fit, &config).unwrap();
        assert_eq!(written.len(), 2);
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(&written[1]).unwrap()).unwrap();
        assert_eq!(summary["provenance"]["seed"], 11);
        assert_eq!(summary["provenance"]["version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(summary["method"], "random_walk");
        assert!(summary["parameters"].as_array().unwrap().len() > 4);

        let samples_text = std::fs::read_to_string(&written[0]).unwrap();
        assert!(samples_text.starts_with("chain,draw,"));
        assert_eq!(samples_text.lines().count(), 41);

        config.samples = Some(written[0].display().to_string());
        config.out = Some(dir.path().join("resummary.json").display().to_string());
        let resummary = run(CommandKind::Summarize, &config).unwrap();
        let value: Value =
            serde_json::from_str(&std::fs::read_to_string(&resummary[0]).unwrap()).unwrap();
        assert_eq!(value["n_draws"], 40);
    }

    #[test]
    fn project_writes_solution_report() {
        let dir = tempfile::tempdir().unwrap();
        let config_text = r#"{
            "space": {
                "variables": [{"name": "y", "levels": ["a", "b", "c"]}],
                "y_block": ["y"]
            },
            "project": {
                "link": "logit",
                "pi": 0.75,
                "margins": {"moments": [
                    {"scope": ["y"], "values": [1.0, 0.0, 0.0], "target": 0.5}
                ]}
            }
        }"#;
        let mut config: RunConfig = serde_json::from_str(config_text).unwrap();
        let out = dir.path().join("p.json");
        config.out = Some(out.display().to_string());
        run(CommandKind::Project, &config).unwrap();
        let value: Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(value["moment_residual"].as_f64().unwrap() < 1e-10);
        let mass: f64 = value["table"]["cells"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["prob"].as_f64().unwrap())
            .sum();
        assert!((mass - 1.0).abs() < 1e-9);
        let first = value["table"]["cells"][0]["prob"].as_f64().unwrap();
        assert!((first - 0.5).abs() < 1e-9, "constrained cell got {first}");
    }

    #[test]
    fn identify_reports_small_observed_gap() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        let margins = dir.path().join("m.json");
        std::fs::write(
            &margins,
            r#"{"joint": {"variables": ["y"], "cells": [
                {"levels": ["0"], "prob": 0.45},
                {"levels": ["1"], "prob": 0.55}]}}"#,
        )
        .unwrap();
        let config_text = format!(
            r#"{{
                "space": {{
                    "variables": [
                        {{"name": "x", "levels": ["0", "1"]}},
                        {{"name": "y", "levels": ["0", "1"]}}
                    ],
                    "y_block": ["y"]
                }},
                "model": {{"modeled": ["y"], "link": "logit", "submodel": 0,
                           "randomize": {{"sd_alpha": 0.5, "sd_beta": 0.5, "seed": 3}}}},
                "simulate": {{"n": 2000}},
                "data": {},
                "margins": {},
                "seed": 21
            }}"#,
            serde_json::to_string(&data.display().to_string()).unwrap(),
            serde_json::to_string(&margins.display().to_string()).unwrap(),
        );
        let mut config: RunConfig = serde_json::from_str(&config_text).unwrap();
        config.out = Some(data.display().to_string());
        run(CommandKind::Simulate, &config).unwrap();
        let out = dir.path().join("ident.json");
        config.out = Some(out.display().to_string());
        run(CommandKind::Identify, &config).unwrap();
        let value: Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(value["observed_sup_gap"].as_f64().unwrap() < 1e-6);
        assert_eq!(value["ordering"], json!(["y"]));
        assert_eq!(value["steps"].as_array().unwrap().len(), 1);
        let full_mass: f64 = value["full"]["cells"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["prob"].as_f64().unwrap())
            .sum();
        assert!((full_mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_sections_fail_with_config_errors() {
        let config: RunConfig = serde_json::from_str("{}").unwrap();
        for kind in [
            CommandKind::Simulate,
            CommandKind::Project,
            CommandKind::Identify,
            CommandKind::Fit,
            CommandKind::Summarize,
        ] {
            let err = run(kind, &config).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{kind:?}: {err}");
        }
    }
}
