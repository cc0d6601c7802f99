//! Bayesian posterior inference for SAN missing-data models.
//!
//! The study law factors as `f(x, y, m) = f(m | x, y) f(x | y) f(y)`: a SAN
//! mechanism with coefficient vector `gamma`, a Bernoulli response model
//! `f(x = 1 | y) = theta(y)` when the space carries a single binary
//! covariate, and a saturated outcome table `f(y) = kappa(y)`. One record
//! contributes the observed-data likelihood
//!
//! ```text
//! L_i = sum over completions of the missing entries of
//!       prod_j f(m_ij | x, y*_{<j}, y_{>=j}; gamma) f(x | y; theta) kappa(y)
//! ```
//!
//! Covariate missingness enters only through the completion sum: its own
//! mechanism is ignorable and contributes no factor. Auxiliary information
//! about `kappa` arrives in one of three modes ([`AuxMode`]): a known census
//! table, a refreshment sample of complete outcome rows, or a Gaussian
//! estimator density on the probability scale.
//!
//! [`gibbs_fit`] alternates exact discrete imputation of every missing
//! entry, a conjugate Beta draw for `theta`, one Markov kernel step per
//! mechanism block for `gamma` (see [`update`]), and the mode-specific
//! `kappa` move. Chains are reproducible: one seed plus a per-chain stream
//! index fixes every draw.

pub mod pg;
pub mod summary;
pub mod update;

pub use summary::{summarize_posterior, Histogram, ParameterSummary};
pub use update::{DesignMatrix, UpdateMethod};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::san::{Role, SanSpec};
use crate::space::Space;
use crate::table::{ProbTable, StableSum};
use update::logistic_conditional_update;

/// Prior standard deviation for direct-effect (`alpha`) coefficients.
pub const PRIOR_SD_ALPHA: f64 = 1.5;
/// Prior standard deviation for self/future (`beta`) coefficients.
pub const PRIOR_SD_BETA: f64 = 3.0;

/// Standard deviation of the pairwise mass-shift proposal used for the
/// `kappa` Metropolis move under [`AuxMode::EstimatorDensity`].
const KAPPA_STEP: f64 = 0.02;

/// How auxiliary marginal information about the outcome law enters.
#[derive(Debug, Clone)]
pub enum AuxMode {
    /// `kappa` is a known census table over the outcome space and is held
    /// fixed throughout.
    KnownKappa(ProbTable),
    /// A refreshment sample of complete outcome rows (level indices in the
    /// outcome-space variable order); `kappa` gets a flat Dirichlet prior
    /// and a conjugate update.
    Refreshment(Vec<Vec<usize>>),
    /// A Gaussian working density for an external estimate of `kappa`,
    /// targeted by a Metropolis move on the probability simplex.
    EstimatorDensity {
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
    },
}

impl AuxMode {
    pub fn name(&self) -> &'static str {
        match self {
            AuxMode::KnownKappa(_) => "known_kappa",
            AuxMode::Refreshment(_) => "refreshment_sample",
            AuxMode::EstimatorDensity { .. } => "estimator_density",
        }
    }
}

/// Flat layout of the free mechanism coefficients across all steps and
/// terms, in step order. Pinned-to-zero baseline cells are excluded, so the
/// layout is exactly the sampling space of `gamma`.
#[derive(Debug, Clone)]
pub struct CoeffLayout {
    names: Vec<String>,
    prior_sd: Vec<f64>,
    term_ids: Vec<Vec<String>>,
    /// `cell_index[j][t][cell]`: layout index of that term cell, or `None`
    /// for pinned cells.
    cell_index: Vec<Vec<Vec<Option<usize>>>>,
    step_spans: Vec<(usize, usize)>,
}

impl CoeffLayout {
    fn build(san: &SanSpec) -> CoeffLayout {
        let space = san.space();
        let mut names = Vec::new();
        let mut prior_sd = Vec::new();
        let mut term_ids = Vec::new();
        let mut cell_index = Vec::new();
        let mut step_spans = Vec::new();
        for j in 0..san.n_modeled() {
            let start = names.len();
            let mut ids = Vec::new();
            let mut per_term = Vec::new();
            for term in san.terms(j) {
                let scope_names = term.scope_names(space);
                let mut map = vec![None; term.n_cells()];
                for cell in term.free_cells() {
                    map[cell] = Some(names.len());
                    names.push(coeff_name(term.id(), &scope_names, &term.cell_labels(space, cell)));
                    prior_sd.push(match term.role() {
                        Role::Alpha => PRIOR_SD_ALPHA,
                        Role::Beta => PRIOR_SD_BETA,
                    });
                }
                ids.push(term.id().to_string());
                per_term.push(map);
            }
            term_ids.push(ids);
            cell_index.push(per_term);
            step_spans.push((start, names.len()));
        }
        CoeffLayout {
            names,
            prior_sd,
            term_ids,
            cell_index,
            step_spans,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// One stable name per coefficient, `term[var=level,...]` with `*` for
    /// materialized-missing coordinates; scalar terms use the bare term id.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn prior_sd(&self) -> &[f64] {
        &self.prior_sd
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Contiguous `[start, end)` range of step `j` in the flat vector.
    pub fn step_span(&self, j: usize) -> (usize, usize) {
        self.step_spans[j]
    }

    pub fn n_steps(&self) -> usize {
        self.step_spans.len()
    }

    /// Reads the current coefficient values of `san` into a flat vector.
    pub fn read(&self, san: &SanSpec) -> Vec<f64> {
        let mut gamma = vec![0.0; self.names.len()];
        for j in 0..self.cell_index.len() {
            for (t, term) in san.terms(j).iter().enumerate() {
                for (cell, slot) in self.cell_index[j][t].iter().enumerate() {
                    if let Some(k) = slot {
                        gamma[*k] = term.values()[cell];
                    }
                }
            }
        }
        gamma
    }

    /// Writes a flat vector back into the specification's terms.
    pub fn write(&self, san: &mut SanSpec, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.names.len() {
            return Err(Error::InvalidModel(format!(
                "coefficient vector has {} entries, the layout has {}",
                gamma.len(),
                self.names.len()
            )));
        }
        for j in 0..self.cell_index.len() {
            for (t, id) in self.term_ids[j].iter().enumerate() {
                let term = san.term_mut(j, id)?;
                for (cell, slot) in self.cell_index[j][t].iter().enumerate() {
                    if let Some(k) = slot {
                        term.set_value(cell, gamma[*k])?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Layout indices active for step `j` at a study assignment and
    /// missingness prefix: the design row of that record.
    pub fn active_indices(
        &self,
        san: &SanSpec,
        j: usize,
        assignment: &[usize],
        m: &[bool],
    ) -> Vec<usize> {
        san.term_cells(j, assignment, m)
            .iter()
            .enumerate()
            .filter_map(|(t, &cell)| self.cell_index[j][t][cell])
            .collect()
    }
}

fn coeff_name(id: &str, scope_names: &[String], labels: &[String]) -> String {
    if scope_names.is_empty() {
        return id.to_string();
    }
    let parts: Vec<String> = scope_names
        .iter()
        .zip(labels)
        .map(|(n, l)| format!("{n}={l}"))
        .collect();
    format!("{}[{}]", id, parts.join(","))
}

/// One point in the parameter space of the inference model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// The inference model: a SAN mechanism template plus the response and
/// outcome blocks and the auxiliary mode for `kappa`.
#[derive(Debug, Clone)]
pub struct InferenceModelSpec {
    san: SanSpec,
    aux: AuxMode,
    layout: CoeffLayout,
    x_position: Option<usize>,
    modeled_positions: Vec<usize>,
    y_positions: Vec<usize>,
    y_space: Space,
}

impl InferenceModelSpec {
    /// Validates the template and auxiliary payload. The space may carry at
    /// most one covariate, and it must be binary; the auxiliary payload must
    /// live on the outcome space.
    pub fn new(san: SanSpec, aux: AuxMode) -> Result<InferenceModelSpec> {
        let x_positions = san.vars().x_positions();
        let x_position = match x_positions.len() {
            0 => None,
            1 => {
                let pos = x_positions[0];
                let var = san.space().var(pos);
                if var.n_levels() != 2 {
                    return Err(Error::InvalidModel(format!(
                        "covariate `{}` has {} levels; the response model supports one binary covariate",
                        var.name(),
                        var.n_levels()
                    )));
                }
                Some(pos)
            }
            n => {
                return Err(Error::InvalidModel(format!(
                    "the response model supports at most one covariate, the space has {n}"
                )))
            }
        };
        let y_positions = san.vars().y_positions().to_vec();
        let y_space = san.vars().y_space();
        match &aux {
            AuxMode::KnownKappa(table) => {
                if table.space() != &y_space {
                    return Err(Error::InvalidModel(
                        "census table must live on the outcome space".into(),
                    ));
                }
            }
            AuxMode::Refreshment(rows) => {
                if rows.is_empty() {
                    return Err(Error::InvalidModel(
                        "refreshment sample has no records".into(),
                    ));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != y_space.n_vars() {
                        return Err(Error::InvalidModel(format!(
                            "refreshment record {} has {} entries, the outcome space has {} variables",
                            i + 1,
                            row.len(),
                            y_space.n_vars()
                        )));
                    }
                    for (v, &level) in row.iter().enumerate() {
                        if level >= y_space.var(v).n_levels() {
                            return Err(Error::InvalidModel(format!(
                                "refreshment record {}: level index {} out of range for `{}`",
                                i + 1,
                                level,
                                y_space.var(v).name()
                            )));
                        }
                    }
                }
            }
            AuxMode::EstimatorDensity { mean, covariance } => {
                let d = y_space.n_cells();
                if mean.len() != d {
                    return Err(Error::InvalidModel(format!(
                        "estimate has {} entries, the outcome space has {} cells",
                        mean.len(),
                        d
                    )));
                }
                if mean.iter().any(|&v| !v.is_finite() || v < 0.0) {
                    return Err(Error::InvalidModel(
                        "estimated outcome probabilities must be finite and nonnegative".into(),
                    ));
                }
                let total: f64 = mean.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidModel(format!(
                        "estimated outcome probabilities sum to {total:.8}, not 1"
                    )));
                }
                if covariance.nrows() != d || covariance.ncols() != d {
                    return Err(Error::InvalidModel(format!(
                        "covariance is {}x{}, expected {d}x{d}",
                        covariance.nrows(),
                        covariance.ncols()
                    )));
                }
                if Cholesky::new(covariance.clone()).is_none() {
                    return Err(Error::InvalidModel(
                        "estimator covariance is not positive definite".into(),
                    ));
                }
            }
        }
        let layout = CoeffLayout::build(&san);
        let modeled_positions = san.ordering()[..san.n_modeled()].to_vec();
        Ok(InferenceModelSpec {
            san,
            aux,
            layout,
            x_position,
            modeled_positions,
            y_positions,
            y_space,
        })
    }

    pub fn san(&self) -> &SanSpec {
        &self.san
    }

    pub fn aux(&self) -> &AuxMode {
        &self.aux
    }

    pub fn layout(&self) -> &CoeffLayout {
        &self.layout
    }

    pub fn x_position(&self) -> Option<usize> {
        self.x_position
    }

    pub fn y_space(&self) -> &Space {
        &self.y_space
    }

    pub fn n_theta(&self) -> usize {
        if self.x_position.is_some() {
            self.y_space.n_cells()
        } else {
            0
        }
    }

    pub fn n_kappa(&self) -> usize {
        self.y_space.n_cells()
    }

    pub fn theta_names(&self) -> Vec<String> {
        if self.x_position.is_none() {
            return Vec::new();
        }
        self.block_names("theta")
    }

    pub fn kappa_names(&self) -> Vec<String> {
        self.block_names("kappa")
    }

    fn block_names(&self, block: &str) -> Vec<String> {
        (0..self.y_space.n_cells())
            .map(|c| {
                let cell = self.y_space.cell_of(c);
                let parts: Vec<String> = self
                    .y_space
                    .vars()
                    .iter()
                    .zip(&cell)
                    .map(|(v, &l)| format!("{}={}", v.name(), v.levels()[l]))
                    .collect();
                format!("{}[{}]", block, parts.join(","))
            })
            .collect()
    }

    /// Outcome-space cell of a full study assignment.
    fn y_cell_of(&self, assignment: &[usize]) -> usize {
        let levels: Vec<usize> = self.y_positions.iter().map(|&p| assignment[p]).collect();
        self.y_space.index_of(&levels)
    }

    /// Missingness bits of the modeled variables, in mechanism order.
    fn missing_bits(&self, record: &[Option<usize>]) -> Vec<bool> {
        self.modeled_positions
            .iter()
            .map(|&p| record[p].is_none())
            .collect()
    }

    fn check_record_support(&self, i: usize, record: &[Option<usize>]) -> Result<()> {
        for (pos, entry) in record.iter().enumerate() {
            if entry.is_none()
                && Some(pos) != self.x_position
                && !self.modeled_positions.contains(&pos)
            {
                return Err(Error::InvalidData(format!(
                    "record {}: variable `{}` is missing but is neither the covariate nor a modeled outcome",
                    i + 1,
                    self.san.space().var(pos).name()
                )));
            }
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.gamma.len() != self.layout.len() {
            return Err(Error::InvalidModel(format!(
                "gamma has {} entries, the layout has {}",
                params.gamma.len(),
                self.layout.len()
            )));
        }
        if params.theta.len() != self.n_theta() {
            return Err(Error::InvalidModel(format!(
                "theta has {} entries, expected {}",
                params.theta.len(),
                self.n_theta()
            )));
        }
        if params.theta.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::InvalidModel(
                "theta entries must lie in [0, 1]".into(),
            ));
        }
        if params.kappa.len() != self.n_kappa() {
            return Err(Error::InvalidModel(format!(
                "kappa has {} entries, the outcome space has {} cells",
                params.kappa.len(),
                self.n_kappa()
            )));
        }
        if params.kappa.iter().any(|&k| !k.is_finite() || k < 0.0) {
            return Err(Error::InvalidModel(
                "kappa entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = params.kappa.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidModel(format!(
                "kappa sums to {total:.8}, not 1"
            )));
        }
        Ok(())
    }

    /// `f(m | x, y; gamma) f(x | y; theta) kappa(y)` at one full assignment.
    fn completion_weight(
        &self,
        san: &SanSpec,
        theta: &[f64],
        kappa: &[f64],
        assignment: &[usize],
        m_bits: &[bool],
    ) -> Result<f64> {
        let yc = self.y_cell_of(assignment);
        let mut w = kappa[yc];
        if let Some(xp) = self.x_position {
            let th = theta[yc];
            w *= if assignment[xp] == 1 { th } else { 1.0 - th };
        }
        for j in 0..san.n_modeled() {
            let p1 = san.mechanism_prob(j, assignment, m_bits)?;
            w *= if m_bits[j] { p1 } else { 1.0 - p1 };
        }
        Ok(w)
    }

    /// Observed-data likelihood of one record on the linear scale: the sum
    /// over all completions of its missing entries.
    fn record_likelihood(
        &self,
        san: &SanSpec,
        theta: &[f64],
        kappa: &[f64],
        record: &[Option<usize>],
    ) -> Result<f64> {
        let space = san.space();
        let m_bits = self.missing_bits(record);
        let missing: Vec<usize> = (0..space.n_vars()).filter(|&p| record[p].is_none()).collect();
        let mut assignment: Vec<usize> = record.iter().map(|v| v.unwrap_or(0)).collect();
        let mut acc = StableSum::new();
        loop {
            acc.add(self.completion_weight(san, theta, kappa, &assignment, &m_bits)?);
            let mut advanced = false;
            for &p in &missing {
                assignment[p] += 1;
                if assignment[p] < space.var(p).n_levels() {
                    advanced = true;
                    break;
                }
                assignment[p] = 0;
            }
            if !advanced {
                break;
            }
        }
        Ok(acc.value())
    }

    /// Observed-data log likelihood of a dataset at one parameter point.
    /// Covariate missingness contributes no mechanism factor; records with a
    /// zero-probability observed pattern make the model undominated.
    pub fn observed_loglik(&self, params: &ParamSet, dataset: &Dataset) -> Result<f64> {
        self.check_params(params)?;
        if dataset.space() != self.san.space() {
            return Err(Error::InvalidData(
                "dataset does not live on the model's study space".into(),
            ));
        }
        let mut san = self.san.clone();
        self.layout.write(&mut san, &params.gamma)?;
        let mut total = StableSum::new();
        for (i, record) in dataset.records().iter().enumerate() {
            self.check_record_support(i, record)?;
            let like = self.record_likelihood(&san, &params.theta, &params.kappa, record)?;
            if !(like > 0.0) {
                return Err(Error::NotDominated(format!(
                    "record {} has zero likelihood under the supplied parameters",
                    i + 1
                )));
            }
            total.add(like.ln());
        }
        Ok(total.value())
    }

    /// Log density contributed by the auxiliary information at `kappa`.
    ///
    /// Census mode is an indicator: zero at the census table, `-inf`
    /// elsewhere. Refreshment mode is the multinomial log likelihood of the
    /// extra outcome rows. Estimator mode is the Gaussian log density,
    /// normalizing constant included.
    pub fn margin_term_logpdf(&self, kappa: &[f64]) -> Result<f64> {
        if kappa.len() != self.y_space.n_cells() {
            return Err(Error::InvalidModel(format!(
                "kappa has {} entries, the outcome space has {} cells",
                kappa.len(),
                self.y_space.n_cells()
            )));
        }
        match &self.aux {
            AuxMode::KnownKappa(table) => {
                let sup = kappa
                    .iter()
                    .zip(table.mass())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                Ok(if sup <= 1e-12 { 0.0 } else { f64::NEG_INFINITY })
            }
            AuxMode::Refreshment(rows) => {
                let counts = self.refreshment_counts(rows);
                let mut acc = StableSum::new();
                for (c, &n) in counts.iter().enumerate() {
                    if n > 0.0 {
                        if !(kappa[c] > 0.0) {
                            return Ok(f64::NEG_INFINITY);
                        }
                        acc.add(n * kappa[c].ln());
                    }
                }
                Ok(acc.value())
            }
            AuxMode::EstimatorDensity { mean, covariance } => {
                Ok(gaussian_logpdf(kappa, mean, covariance))
            }
        }
    }

    fn refreshment_counts(&self, rows: &[Vec<usize>]) -> Vec<f64> {
        let mut counts = vec![0.0; self.y_space.n_cells()];
        for row in rows {
            counts[self.y_space.index_of(row)] += 1.0;
        }
        counts
    }
}

fn gaussian_logpdf(x: &[f64], mean: &[f64], covariance: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let chol = Cholesky::new(covariance.clone())
        .expect("covariance validated as positive definite at construction");
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let quad = diff.dot(&chol.solve(&diff));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (quad + logdet + d as f64 * (std::f64::consts::TAU).ln())
}

/// Sampler configuration for [`gibbs_fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub method: UpdateMethod,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_iter: 20_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            method: UpdateMethod::PolyaGamma,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} leaves no retained iterations out of {}",
                self.burn_in, self.n_iter
            )));
        }
        Ok(())
    }
}

/// One retained draw: parameters plus the imputed level of every missing
/// entry, in [`Chain::missing_slots`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub imputations: Vec<u8>,
}

/// Output of one Gibbs chain.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<PosteriorSample>,
    pub gamma_names: Vec<String>,
    pub theta_names: Vec<String>,
    pub kappa_names: Vec<String>,
    /// `(record, study-space position)` addressed by each imputation entry.
    pub missing_slots: Vec<(usize, usize)>,
    /// Coefficient cells no record can reach under the initial completion;
    /// their draws are prior-dominated.
    pub zero_support: Vec<String>,
    pub gamma_acceptance: Option<f64>,
    pub kappa_acceptance: Option<f64>,
}

impl Chain {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Names of the scalar parameter columns, `gamma ++ theta ++ kappa`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.gamma_names.clone();
        names.extend(self.theta_names.iter().cloned());
        names.extend(self.kappa_names.iter().cloned());
        names
    }

    /// Draws as rows aligned with [`Chain::parameter_names`].
    pub fn parameter_draws(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                let mut row = s.gamma.clone();
                row.extend(s.theta.iter().copied());
                row.extend(s.kappa.iter().copied());
                row
            })
            .collect()
    }
}

/// Mutable sampler state. The per-block methods are public so a chain can
/// be driven manually, e.g. an imputation-only chain at fixed parameters.
pub struct GibbsState<'a> {
    spec: &'a InferenceModelSpec,
    san: SanSpec,
    gamma: Vec<f64>,
    theta: Vec<f64>,
    kappa: Vec<f64>,
    data: Vec<Vec<usize>>,
    m_bits: Vec<Vec<bool>>,
    missing_slots: Vec<(usize, usize)>,
    refresh_counts: Vec<f64>,
    rng: ChaCha8Rng,
    gamma_accepted: u64,
    gamma_proposed: u64,
    kappa_accepted: u64,
    kappa_proposed: u64,
}

impl<'a> GibbsState<'a> {
    /// Initializes a chain: missing entries are drawn from the observed
    /// per-variable frequencies, `gamma` starts at zero, `theta` at 1/2 and
    /// `kappa` at the auxiliary payload's point estimate (uniform for the
    /// refreshment mode's prior-predictive start).
    pub fn new(
        spec: &'a InferenceModelSpec,
        dataset: &Dataset,
        seed: u64,
        stream: u64,
    ) -> Result<GibbsState<'a>> {
        if dataset.space() != spec.san.space() {
            return Err(Error::InvalidData(
                "dataset does not live on the model's study space".into(),
            ));
        }
        if dataset.is_empty() {
            return Err(Error::InvalidData("the dataset has no records".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut data = Vec::with_capacity(dataset.n());
        let mut m_bits = Vec::with_capacity(dataset.n());
        let mut missing_slots = Vec::new();
        for (i, record) in dataset.records().iter().enumerate() {
            spec.check_record_support(i, record)?;
            let mut row = Vec::with_capacity(record.len());
            for (pos, entry) in record.iter().enumerate() {
                match entry {
                    Some(level) => row.push(*level),
                    None => {
                        if spec.san.space().var(pos).n_levels() > usize::from(u8::MAX) + 1 {
                            return Err(Error::InvalidData(format!(
                                "variable `{}` has too many levels to impute",
                                spec.san.space().var(pos).name()
                            )));
                        }
                        missing_slots.push((i, pos));
                        let freq = dataset.empirical_frequencies(pos);
                        let total: f64 = freq.iter().sum();
                        row.push(categorical(&mut rng, &freq, total));
                    }
                }
            }
            m_bits.push(spec.missing_bits(record));
            data.push(row);
        }
        let gamma = vec![0.0; spec.layout.len()];
        let mut san = spec.san.clone();
        spec.layout.write(&mut san, &gamma)?;
        let theta = vec![0.5; spec.n_theta()];
        let (kappa, refresh_counts) = match &spec.aux {
            AuxMode::KnownKappa(table) => (table.mass().to_vec(), Vec::new()),
            AuxMode::Refreshment(rows) => {
                let d = spec.y_space.n_cells();
                (vec![1.0 / d as f64; d], spec.refreshment_counts(rows))
            }
            AuxMode::EstimatorDensity { mean, .. } => (mean.clone(), Vec::new()),
        };
        Ok(GibbsState {
            spec,
            san,
            gamma,
            theta,
            kappa,
            data,
            m_bits,
            missing_slots,
            refresh_counts,
            rng,
            gamma_accepted: 0,
            gamma_proposed: 0,
            kappa_accepted: 0,
            kappa_proposed: 0,
        })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn missing_slots(&self) -> &[(usize, usize)] {
        &self.missing_slots
    }

    /// Current completed level of one record and study-space position.
    pub fn imputed_level(&self, record: usize, position: usize) -> usize {
        self.data[record][position]
    }

    /// Overrides the parameter point, e.g. to run an imputation-only chain.
    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        self.spec.check_params(params)?;
        self.spec.layout.write(&mut self.san, &params.gamma)?;
        self.gamma = params.gamma.clone();
        self.theta = params.theta.clone();
        self.kappa = params.kappa.clone();
        Ok(())
    }

    /// Redraws every missing entry from its exact discrete full conditional
    /// `p(entry | rest) ∝ f(m | x, y; gamma) f(x | y; theta) kappa(y)`.
    pub fn impute_step(&mut self) -> Result<()> {
        for s in 0..self.missing_slots.len() {
            let (i, pos) = self.missing_slots[s];
            let n_levels = self.spec.san.space().var(pos).n_levels();
            let mut row = self.data[i].clone();
            let mut weights = Vec::with_capacity(n_levels);
            for level in 0..n_levels {
                row[pos] = level;
                weights.push(self.spec.completion_weight(
                    &self.san,
                    &self.theta,
                    &self.kappa,
                    &row,
                    &self.m_bits[i],
                )?);
            }
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NotDominated(format!(
                    "record {}: no level of `{}` has positive conditional mass",
                    i + 1,
                    self.spec.san.space().var(pos).name()
                )));
            }
            self.data[i][pos] = categorical(&mut self.rng, &weights, total);
        }
        Ok(())
    }

    /// Conjugate update of the response block: each `theta(y)` is a
    /// `Beta(1 + s_y, 1 + n_y - s_y)` draw from the completed data.
    pub fn theta_step(&mut self) {
        let Some(xp) = self.spec.x_position else {
            return;
        };
        let d = self.spec.y_space.n_cells();
        let mut hits = vec![0.0f64; d];
        let mut totals = vec![0.0f64; d];
        for row in &self.data {
            let yc = self.spec.y_cell_of(row);
            totals[yc] += 1.0;
            if row[xp] == 1 {
                hits[yc] += 1.0;
            }
        }
        for c in 0..d {
            self.theta[c] = beta_draw(&mut self.rng, 1.0 + hits[c], 1.0 + totals[c] - hits[c]);
        }
    }

    /// One Markov kernel step on each mechanism block given the completed
    /// data, using the requested update method.
    pub fn gamma_step(&mut self, method: UpdateMethod) -> Result<()> {
        let layout = &self.spec.layout;
        for j in 0..layout.n_steps() {
            let (start, end) = layout.step_span(j);
            if start == end {
                continue;
            }
            let mut rows = Vec::with_capacity(self.data.len());
            let mut responses = Vec::with_capacity(self.data.len());
            for (i, row) in self.data.iter().enumerate() {
                let active = layout.active_indices(&self.san, j, row, &self.m_bits[i]);
                rows.push(active.iter().map(|&k| (k - start) as u32).collect());
                responses.push(self.m_bits[i][j]);
            }
            let design = DesignMatrix::new(end - start, rows)?;
            let outcome = logistic_conditional_update(
                self.san.link(),
                &self.gamma[start..end],
                &design,
                &responses,
                &layout.prior_sd()[start..end],
                method,
                &mut self.rng,
            )?;
            self.gamma[start..end].copy_from_slice(&outcome.coeffs);
            self.gamma_accepted += outcome.accepted;
            self.gamma_proposed += outcome.proposed;
        }
        self.spec.layout.write(&mut self.san, &self.gamma)
    }

    /// Mode-specific `kappa` move: held fixed for a census, a conjugate
    /// Dirichlet draw with the refreshment counts, or a pairwise mass-shift
    /// Metropolis step against the estimator density.
    pub fn kappa_step(&mut self) -> Result<()> {
        match &self.spec.aux {
            AuxMode::KnownKappa(_) => Ok(()),
            AuxMode::Refreshment(_) => {
                let d = self.spec.y_space.n_cells();
                let mut counts = self.refresh_counts.clone();
                for row in &self.data {
                    counts[self.spec.y_cell_of(row)] += 1.0;
                }
                let mut draw = vec![0.0; d];
                let mut total = 0.0;
                for c in 0..d {
                    let g = Gamma::new(1.0 + counts[c], 1.0)
                        .map_err(|e| Error::InvalidSampler(format!("gamma draw: {e}")))?;
                    draw[c] = g.sample(&mut self.rng);
                    total += draw[c];
                }
                for c in 0..d {
                    self.kappa[c] = draw[c] / total;
                }
                Ok(())
            }
            AuxMode::EstimatorDensity { .. } => {
                let d = self.spec.y_space.n_cells();
                if d < 2 {
                    return Ok(());
                }
                let mut counts = vec![0.0f64; d];
                for row in &self.data {
                    counts[self.spec.y_cell_of(row)] += 1.0;
                }
                self.kappa_proposed += 1;
                let a = self.rng.random_range(0..d);
                let mut b = self.rng.random_range(0..d - 1);
                if b >= a {
                    b += 1;
                }
                let delta = KAPPA_STEP * self.rng.sample::<f64, _>(StandardNormal);
                let mut proposal = self.kappa.clone();
                proposal[a] += delta;
                proposal[b] -= delta;
                if !(proposal[a] > 0.0) || !(proposal[b] > 0.0) {
                    return Ok(());
                }
                let mut log_ratio = self.spec.margin_term_logpdf(&proposal)?
                    - self.spec.margin_term_logpdf(&self.kappa)?;
                for &c in &[a, b] {
                    if counts[c] > 0.0 {
                        log_ratio += counts[c] * (proposal[c] / self.kappa[c]).ln();
                    }
                }
                if self.rng.random::<f64>().ln() < log_ratio {
                    self.kappa = proposal;
                    self.kappa_accepted += 1;
                }
                Ok(())
            }
        }
    }

    /// One full Gibbs sweep over all blocks.
    pub fn sweep(&mut self, method: UpdateMethod) -> Result<()> {
        self.impute_step()?;
        self.theta_step();
        self.gamma_step(method)?;
        self.kappa_step()
    }

    /// Snapshot of the current parameters and imputations.
    pub fn sample(&self) -> PosteriorSample {
        PosteriorSample {
            gamma: self.gamma.clone(),
            theta: self.theta.clone(),
            kappa: self.kappa.clone(),
            imputations: self
                .missing_slots
                .iter()
                .map(|&(i, pos)| self.data[i][pos] as u8)
                .collect(),
        }
    }

    /// Coefficient cells no record reaches under the current completion.
    pub fn zero_support(&self) -> Vec<String> {
        let layout = &self.spec.layout;
        let mut hit = vec![false; layout.len()];
        for (i, row) in self.data.iter().enumerate() {
            for j in 0..layout.n_steps() {
                for k in layout.active_indices(&self.san, j, row, &self.m_bits[i]) {
                    hit[k] = true;
                }
            }
        }
        layout
            .names()
            .iter()
            .zip(&hit)
            .filter(|(_, &h)| !h)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn gamma_acceptance(&self) -> Option<f64> {
        (self.gamma_proposed > 0).then(|| self.gamma_accepted as f64 / self.gamma_proposed as f64)
    }

    pub fn kappa_acceptance(&self) -> Option<f64> {
        (self.kappa_proposed > 0).then(|| self.kappa_accepted as f64 / self.kappa_proposed as f64)
    }
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (c, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    weights.len() - 1
}

fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let ga = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let gb = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    ga / (ga + gb)
}

/// Runs one Gibbs chain and retains every `thin`-th post-burn-in draw.
/// The run is a pure function of the dataset, the model, and the seed.
pub fn gibbs_fit(
    spec: &InferenceModelSpec,
    dataset: &Dataset,
    config: &GibbsConfig,
) -> Result<Chain> {
    run_chain(spec, dataset, config, 0)
}

/// Runs independent chains in parallel; chain `k` uses RNG stream `k` of
/// the shared seed, so the set of chains is reproducible as a whole.
pub fn fit_chains(
    spec: &InferenceModelSpec,
    dataset: &Dataset,
    config: &GibbsConfig,
    n_chains: usize,
) -> Result<Vec<Chain>> {
    if n_chains == 0 {
        return Err(Error::InvalidConfig("at least one chain is required".into()));
    }
    let results: Vec<Result<Chain>> = std::thread::scope(|
        scope,
    | {
        let handles: Vec<_> = (0..n_chains)
            .map(|k| scope.spawn(move || run_chain(spec, dataset, config, k as u64)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

fn run_chain(
    spec: &InferenceModelSpec,
    dataset: &Dataset,
    config: &GibbsConfig,
    stream: u64,
) -> Result<Chain> {
    config.validate()?;
    let mut state = GibbsState::new(spec, dataset, config.seed, stream)?;
    let zero_support = state.zero_support();
    let retained = (config.n_iter - config.burn_in).div_ceil(config.thin);
    let mut samples = Vec::with_capacity(retained);
    for iter in 0..config.n_iter {
        state.sweep(config.method)?;
        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            samples.push(state.sample());
        }
    }
    Ok(Chain {
        samples,
        gamma_names: spec.layout.names().to_vec(),
        theta_names: spec.theta_names(),
        kappa_names: spec.kappa_names(),
        missing_slots: state.missing_slots().to_vec(),
        zero_support,
        gamma_acceptance: state.gamma_acceptance(),
        kappa_acceptance: state.kappa_acceptance(),
    })
}
