//! File formats: CSV datasets, JSON margin payloads, run configuration,
//! and the samples table written by `fit`.
//!
//! Datasets are RFC-4180 CSV with a header row naming the variables and the
//! sentinel `NA` for a missing entry. Margins are JSON, either a joint table
//! (`{"joint": {...}}`) or a list of moment constraints
//! (`{"moments": [...]}`). A run is configured by one JSON file; the command
//! line only overrides the seed and output path.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{AuxMode, GibbsConfig, UpdateMethod};
use crate::link::Link;
use crate::projection::ProjectionOptions;
use crate::reconstruct::Margins;
use crate::san::{order_by_missingness, SanSpec, Submodel};
use crate::space::{Space, Variable, VariableSpace};
use crate::table::{MomentConstraint, ProbTable};

/// CSV cell encoding a missing entry.
pub const MISSING_SENTINEL: &str = "NA";

/// Formats a double with 17 significant digits, enough to reparse the exact
/// bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Space and model declarations

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceDecl {
    pub variables: Vec<VariableDecl>,
    pub y_block: Vec<String>,
}

impl SpaceDecl {
    pub fn build(&self) -> Result<VariableSpace> {
        let mut vars = Vec::with_capacity(self.variables.len());
        for decl in &self.variables {
            vars.push(Variable::from_labels(decl.name.clone(), decl.levels.clone())?);
        }
        VariableSpace::new(Space::new(vars)?, &self.y_block)
    }
}

/// How the mechanism ordering of the modeled variables is chosen: the
/// declared order, descending observed missingness, or an explicit
/// permutation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderingPolicy {
    Named(String),
    Explicit(Vec<String>),
}

impl Default for OrderingPolicy {
    fn default() -> Self {
        OrderingPolicy::Named("declared".into())
    }
}

impl OrderingPolicy {
    /// Resolves to a concrete ordering of the modeled variables.
    /// `by_missingness_desc` needs the dataset the order is computed from.
    pub fn resolve(&self, modeled: &[String], dataset: Option<&Dataset>) -> Result<Vec<String>> {
        match self {
            OrderingPolicy::Named(name) if name == "declared" => Ok(modeled.to_vec()),
            OrderingPolicy::Named(name) if name == "by_missingness_desc" => {
                let dataset = dataset.ok_or_else(|| {
                    Error::InvalidConfig(
                        "ordering policy `by_missingness_desc` needs a dataset".into(),
                    )
                })?;
                order_by_missingness(dataset, modeled)
            }
            OrderingPolicy::Named(other) => Err(Error::InvalidConfig(format!(
                "unknown ordering policy `{other}`; use `declared`, `by_missingness_desc`, or an explicit list"
            ))),
            OrderingPolicy::Explicit(order) => {
                let mut sorted_a: Vec<&String> = order.iter().collect();
                let mut sorted_b: Vec<&String> = modeled.iter().collect();
                sorted_a.sort();
                sorted_b.sort();
                if sorted_a != sorted_b {
                    return Err(Error::InvalidConfig(format!(
                        "ordering [{}] is not a permutation of the modeled variables [{}]",
                        order.join(", "),
                        modeled.join(", ")
                    )));
                }
                Ok(order.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomizeDecl {
    pub sd_alpha: f64,
    pub sd_beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDecl {
    /// Y variables subject to missingness, in declared order.
    pub modeled: Vec<String>,
    pub link: String,
    #[serde(default)]
    pub submodel: Option<u8>,
    #[serde(default)]
    pub ordering: Option<OrderingPolicy>,
    #[serde(default)]
    pub baselines: Option<BTreeMap<String, String>>,
    /// Explicit coefficient vectors keyed by term id (`alpha1`, `beta2_y3`,
    /// ...), each covering every cell of the term.
    #[serde(default)]
    pub coefficients: Option<BTreeMap<String, Vec<f64>>>,
    /// Draw coefficients from centered normals instead.
    #[serde(default)]
    pub randomize: Option<RandomizeDecl>,
}

impl ModelDecl {
    pub fn link(&self) -> Result<Link> {
        Link::from_name(&self.link)
    }

    pub fn submodel(&self) -> Result<Submodel> {
        let id = self.submodel.ok_or_else(|| {
            Error::InvalidConfig("this command needs `model.submodel` (0-5)".into())
        })?;
        Submodel::from_id(id)
    }

    /// Builds the SAN specification under a resolved mechanism ordering,
    /// applying baselines and coefficients.
    pub fn build_san(&self, vars: VariableSpace, ordering: &[String]) -> Result<SanSpec> {
        let order_refs: Vec<&str> = ordering.iter().map(|s| s.as_str()).collect();
        let mut san = SanSpec::new(vars, &order_refs, self.link()?, self.submodel()?)?;
        if let Some(baselines) = &self.baselines {
            let pairs: Vec<(&str, &str)> = baselines
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect();
            san = san.with_baselines(&pairs)?;
        }
        if self.coefficients.is_some() && self.randomize.is_some() {
            return Err(Error::InvalidConfig(
                "give either `model.coefficients` or `model.randomize`, not both".into(),
            ));
        }
        if let Some(coeffs) = &self.coefficients {
            for (id, values) in coeffs {
                let step = san
                    .all_terms()
                    .find(|(_, t)| t.id() == id.as_str())
                    .map(|(j, _)| j)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("unknown coefficient term `{id}`"))
                    })?;
                san.term_mut(step, id)?.set_values(values.clone())?;
            }
        }
        if let Some(r) = &self.randomize {
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            san.randomize(&mut rng, r.sd_alpha, r.sd_beta);
        }
        Ok(san)
    }
}

// ---------------------------------------------------------------------------
// Margins JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointCellDecl {
    pub levels: Vec<String>,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointDecl {
    pub variables: Vec<String>,
    pub cells: Vec<JointCellDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentDecl {
    #[serde(default)]
    pub name: Option<String>,
    pub scope: Vec<String>,
    pub values: Vec<f64>,
    pub target: f64,
}

/// Payload of a margins JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum MarginsDecl {
    #[serde(rename = "joint")]
    Joint(JointDecl),
    #[serde(rename = "moments")]
    Moments(Vec<MomentDecl>),
}

impl JointDecl {
    /// Realizes the declared table on the sub-space of `space` spanned by
    /// its variables. Every cell must be listed exactly once and the
    /// probabilities must sum to 1 within 1e-9.
    pub fn to_table(&self, space: &Space) -> Result<ProbTable> {
        let positions = space.positions_of(&self.variables)?;
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        let scope_space = space.select(&sorted);
        let n = scope_space.n_cells();
        let mut mass = vec![None; n];
        for (row, cell) in self.cells.iter().enumerate() {
            if cell.levels.len() != self.variables.len() {
                return Err(Error::InvalidConfig(format!(
                    "joint margin cell {} has {} levels for {} variables",
                    row + 1,
                    cell.levels.len(),
                    self.variables.len()
                )));
            }
            if !cell.prob.is_finite() || cell.prob < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "joint margin cell {} has probability {}",
                    row + 1,
                    cell.prob
                )));
            }
            let mut assignment = vec![0usize; sorted.len()];
            for (v, label) in self.variables.iter().zip(&cell.levels) {
                let pos = space.var_index(v).expect("validated by positions_of");
                let axis = sorted.iter().position(|&p| p == pos).expect("subset");
                assignment[axis] =
                    scope_space.var(axis).level_index(label).ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "joint margin cell {}: unknown level `{label}` for `{v}`",
                            row + 1
                        ))
                    })?;
            }
            let idx = scope_space.index_of(&assignment);
            if mass[idx].replace(cell.prob).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "joint margin lists cell [{}] twice",
                    cell.levels.join(", ")
                )));
            }
        }
        let listed = mass.iter().flatten().count();
        if listed != n {
            return Err(Error::InvalidConfig(format!(
                "joint margin lists {listed} of {n} cells"
            )));
        }
        let mass: Vec<f64> = mass.into_iter().map(Option::unwrap).collect();
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "joint margin probabilities sum to {total:.12}, not 1 within 1e-9"
            )));
        }
        ProbTable::from_weights(scope_space, mass)
    }

    /// Expands the declared table into one indicator constraint per cell.
    pub fn to_indicator_constraints(&self, space: &Space) -> Result<Vec<MomentConstraint>> {
        let table = self.to_table(space)?;
        let scope_space = table.space();
        let scope: Vec<String> = scope_space
            .vars()
            .iter()
            .map(|v| v.name().to_string())
            .collect();
        let mut out = Vec::with_capacity(scope_space.n_cells());
        for (idx, cell) in scope_space.cells().enumerate() {
            let labels = scope_space.labels_of(&cell).join(",");
            out.push(MomentConstraint::indicator(
                format!("margin[{labels}]"),
                scope_space,
                scope.clone(),
                idx,
                table.mass()[idx],
            ));
        }
        Ok(out)
    }
}

impl MarginsDecl {
    /// Auxiliary-information payload for the identification pipeline: the
    /// joint form becomes a census table over the Y block, the moments form
    /// a list of constraints on Y scopes.
    pub fn to_margins(&self, vars: &VariableSpace) -> Result<Margins> {
        match self {
            MarginsDecl::Joint(decl) => {
                let y_space = vars.y_space();
                let table = decl.to_table(vars.space())?;
                if table.space() != &y_space {
                    return Err(Error::InvalidConfig(
                        "the joint margin must cover exactly the Y block".into(),
                    ));
                }
                Ok(Margins::Joint(table))
            }
            MarginsDecl::Moments(list) => Ok(Margins::Moments(self.to_constraints(
                vars.space(),
                list,
            )?)),
        }
    }

    /// Flat constraint list on an arbitrary table space (the `project`
    /// surface).
    pub fn to_constraint_list(&self, space: &Space) -> Result<Vec<MomentConstraint>> {
        match self {
            MarginsDecl::Joint(decl) => decl.to_indicator_constraints(space),
            MarginsDecl::Moments(list) => self.to_constraints(space, list),
        }
    }

    fn to_constraints(
        &self,
        space: &Space,
        list: &[MomentDecl],
    ) -> Result<Vec<MomentConstraint>> {
        let mut out = Vec::with_capacity(list.len());
        for (i, decl) in list.iter().enumerate() {
            let name = decl
                .name
                .clone()
                .unwrap_or_else(|| format!("moment{}", i + 1));
            space.positions_of(&decl.scope).map_err(|_| {
                Error::InvalidConstraint {
                    name: name.clone(),
                    detail: format!("unknown scope [{}]", decl.scope.join(", ")),
                }
            })?;
            out.push(MomentConstraint::new(
                name,
                decl.scope.clone(),
                decl.values.clone(),
                decl.target,
            )?);
        }
        Ok(out)
    }
}

pub fn load_margins(path: &Path) -> Result<MarginsDecl> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidConfig(format!("margins file {}: {e}", path.display()))
    })
}

// ---------------------------------------------------------------------------
// Dataset CSV

/// Reads a dataset CSV: a header row naming every variable of `space` (any
/// order), one row per record, `NA` for missing. Missing entries are
/// accepted only in the `allow_missing` variables.
pub fn load_dataset(path: &Path, space: &Space, allow_missing: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?
        .clone();
    let mut column_of = vec![None; space.n_vars()];
    for (col, name) in headers.iter().enumerate() {
        let pos = space.var_index(name).ok_or_else(|| {
            Error::InvalidData(format!("column `{name}` is not a declared variable"))
        })?;
        if column_of[pos].replace(col).is_some() {
            return Err(Error::InvalidData(format!("duplicate column `{name}`")));
        }
    }
    for (pos, col) in column_of.iter().enumerate() {
        if col.is_none() {
            return Err(Error::InvalidData(format!(
                "missing column for variable `{}`",
                space.var(pos).name()
            )));
        }
    }
    let may_miss: Vec<bool> = (0..space.n_vars())
        .map(|p| allow_missing.iter().any(|n| n == space.var(p).name()))
        .collect();
    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let record = result
            .map_err(|e| Error::InvalidData(format!("{} row {}: {e}", path.display(), row + 2)))?;
        let mut entries = vec![None; space.n_vars()];
        for (pos, col) in column_of.iter().enumerate() {
            let cell = record.get(col.expect("validated")).ok_or_else(|| {
                Error::InvalidData(format!("row {} is short", row + 2))
            })?;
            if cell == MISSING_SENTINEL {
                if !may_miss[pos] {
                    return Err(Error::InvalidData(format!(
                        "row {}: `{}` is declared fully observed but the cell is NA",
                        row + 2,
                        space.var(pos).name()
                    )));
                }
            } else {
                let level = space.var(pos).level_index(cell).ok_or_else(|| {
                    Error::InvalidData(format!(
                        "row {}: unknown level `{cell}` for variable `{}`",
                        row + 2,
                        space.var(pos).name()
                    ))
                })?;
                entries[pos] = Some(level);
            }
        }
        records.push(entries);
    }
    if records.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} contains a header but no records",
            path.display()
        )));
    }
    Dataset::new(space.clone(), records)
}

/// Writes a dataset CSV in space order with `NA` for missing entries.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let space = dataset.space();
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let header: Vec<&str> = space.vars().iter().map(|v| v.name()).collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    for record in dataset.records() {
        let row: Vec<&str> = record
            .iter()
            .enumerate()
            .map(|(pos, entry)| match entry {
                Some(level) => space.var(pos).levels()[*level].as_str(),
                None => MISSING_SENTINEL,
            })
            .collect();
        writer
            .write_record(&row)
            .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Samples CSV

/// Writes retained draws, one row per draw: `chain`, `draw`, then one column
/// per scalar parameter in layout order. Floats carry 17 significant digits.
pub fn write_samples(path: &Path, chains: &[crate::inference::Chain]) -> Result<()> {
    let first = chains.first().ok_or_else(|| {
        Error::InvalidConfig("no chains to write".into())
    })?;
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(first.parameter_names());
    writer
        .write_record(&header)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    for (k, chain) in chains.iter().enumerate() {
        for (i, row) in chain.parameter_draws().into_iter().enumerate() {
            let mut record = vec![k.to_string(), i.to_string()];
            record.extend(row.into_iter().map(fmt_f64));
            writer
                .write_record(&record)
                .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
        }
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Reads a samples CSV back: parameter names and pooled draw rows.
pub fn load_samples(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?
        .clone();
    let mut names: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if names.len() < 3 || names[0] != "chain" || names[1] != "draw" {
        return Err(Error::InvalidData(
            "samples CSV must start with `chain` and `draw` columns".into(),
        ));
    }
    names.drain(..2);
    let mut rows = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let record = result
            .map_err(|e| Error::InvalidData(format!("{} row {}: {e}", path.display(), row + 2)))?;
        if record.len() != names.len() + 2 {
            return Err(Error::InvalidData(format!(
                "row {}: expected {} columns, got {}",
                row + 2,
                names.len() + 2,
                record.len()
            )));
        }
        let values: Result<Vec<f64>> = record
            .iter()
            .skip(2)
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("row {}: `{cell}` is not a number", row + 2))
                })
            })
            .collect();
        rows.push(values?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("samples CSV has no draws".into()));
    }
    Ok((names, rows))
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AuxDecl {
    /// `kappa` fixed at a census table loaded from a margins JSON (joint
    /// form).
    KnownKappa { margins: String },
    /// Complete outcome rows loaded from a CSV over the Y variables.
    RefreshmentSample { data: String },
    /// Gaussian working density: mean vector and covariance matrix over the
    /// outcome cells (row-major rows).
    EstimatorDensity {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateDecl {
    pub n: usize,
    /// Joint law of the study variables; uniform when omitted.
    #[serde(default)]
    pub joint: Option<JointDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectDecl {
    /// Base table `Q` over the declared variables; uniform when omitted.
    #[serde(default)]
    pub table: Option<JointDecl>,
    pub link: String,
    /// Marginal missingness probability fixing `c = (1 - pi) / pi`.
    #[serde(default)]
    pub pi: Option<f64>,
    /// The divergence constant directly; give exactly one of `pi` and `c`.
    #[serde(default)]
    pub c: Option<f64>,
    pub margins: MarginsDecl,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverDecl {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub smooth_zeros: bool,
}

impl Default for SolverDecl {
    fn default() -> Self {
        SolverDecl {
            tol: default_tol(),
            max_iter: default_max_iter(),
            smooth_zeros: false,
        }
    }
}

impl SolverDecl {
    pub fn options(&self) -> ProjectionOptions {
        ProjectionOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            smooth_zeros: self.smooth_zeros,
            dual_init: None,
        }
    }
}

fn default_n_iter() -> usize {
    20_000
}

fn default_burn_in() -> usize {
    5_000
}

fn default_thin() -> usize {
    1
}

fn default_method() -> String {
    "polya_gamma".into()
}

fn default_chains() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcDecl {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_chains")]
    pub chains: usize,
}

impl Default for McmcDecl {
    fn default() -> Self {
        McmcDecl {
            n_iter: default_n_iter(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            method: default_method(),
            chains: default_chains(),
        }
    }
}

impl McmcDecl {
    pub fn gibbs_config(&self, seed: u64) -> Result<GibbsConfig> {
        let config = GibbsConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            method: UpdateMethod::from_name(&self.method)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// One run, fully described: which spaces, models, files, and knobs each
/// subcommand should use. Unused sections are ignored by other subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDecl>,
    /// Dataset CSV path (`identify`, `fit`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// Margins JSON path (`identify`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<String>,
    /// Auxiliary mode payload (`fit`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<ProjectDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcDecl>,
    /// Samples CSV path (`summarize`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output path, or path prefix for `fit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("config file {}: {e}", path.display())))
}

impl RunConfig {
    pub fn space_decl(&self) -> Result<&SpaceDecl> {
        self.space.as_ref().ok_or_else(|| {
            Error::InvalidConfig("this command needs a `space` section".into())
        })
    }

    pub fn model_decl(&self) -> Result<&ModelDecl> {
        self.model.as_ref().ok_or_else(|| {
            Error::InvalidConfig("this command needs a `model` section".into())
        })
    }

    /// Realizes the auxiliary payload against the model's outcome space.
    pub fn build_aux(&self, vars: &VariableSpace) -> Result<AuxMode> {
        let decl = self.aux.as_ref().ok_or_else(|| {
            Error::InvalidConfig("`fit` needs an `aux` section".into())
        })?;
        match decl {
            AuxDecl::KnownKappa { margins } => {
                let payload = load_margins(Path::new(margins))?;
                match payload.to_margins(vars)? {
                    Margins::Joint(table) => Ok(AuxMode::KnownKappa(table)),
                    Margins::Moments(_) => Err(Error::InvalidConfig(
                        "known_kappa needs the joint margins form".into(),
                    )),
                }
            }
            AuxDecl::RefreshmentSample { data } => {
                let y_space = vars.y_space();
                let refresh = load_dataset(Path::new(data), &y_space, &[])?;
                let rows: Vec<Vec<usize>> = refresh
                    .records()
                    .iter()
                    .map(|rec| rec.iter().map(|e| e.expect("no missing allowed")).collect())
                    .collect();
                Ok(AuxMode::Refreshment(rows))
            }
            AuxDecl::EstimatorDensity { mean, covariance } => {
                let d = mean.len();
                if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidConfig(format!(
                        "estimator covariance must be {d}x{d}"
                    )));
                }
                let matrix =
                    DMatrix::from_fn(d, d, |r, c| covariance[r][c]);
                Ok(AuxMode::EstimatorDensity {
                    mean: mean.clone(),
                    covariance: matrix,
                })
            }
        }
    }
}
