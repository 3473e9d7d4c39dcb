//! Model state and log densities for the total-landings model and the joint
//! industrial/artisanal shared-parameter model.
//!
//! Total model, for country `i` and year index `t`:
//!
//! ```text
//! y_it ~ N(beta0 + b0_i + b1_i * t, sigma^2)
//! b0_i ~ N(0, sigma0^2),  b1_i ~ N(0, sigma1^2)
//! ```
//!
//! Joint model, one stream per sector sharing the observation sd:
//!
//! ```text
//! y_it^(s) ~ N(beta0^(s) + b0_i^(s) + b1_i^(s) * t, sigma^2),  s in {I, A}
//! (b0_i^(I), b0_i^(A)) ~ N2(0, Sigma0),  (b1_i^(I), b1_i^(A)) ~ N2(0, Sigma1)
//! ```
//!
//! Priors: every fixed intercept is `N(0, 100)` (variance 100, sd 10), every
//! standard deviation is `U(0, 10)` and every correlation is `U(-1, 1)`.
//! States outside prior support evaluate to `-inf` rather than an error.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior variance of every fixed intercept.
pub const BETA_PRIOR_VAR: f64 = 100.0;
/// Upper end of the uniform prior on every standard deviation.
pub const SD_UPPER: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Total,
    Joint,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Total => "total",
            ModelKind::Joint => "joint",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "total" => Ok(ModelKind::Total),
            "joint" => Ok(ModelKind::Joint),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind {other:?} (expected total or joint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Total,
    Industrial,
    Artisanal,
}

impl Sector {
    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Total => "total",
            Sector::Industrial => "industrial",
            Sector::Artisanal => "artisanal",
        }
    }

    /// Whether observations of this sector belong to a model of `kind`.
    pub fn fits(self, kind: ModelKind) -> bool {
        match kind {
            ModelKind::Total => self == Sector::Total,
            ModelKind::Joint => self != Sector::Total,
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "total" => Ok(Sector::Total),
            "industrial" => Ok(Sector::Industrial),
            "artisanal" => Ok(Sector::Artisanal),
            other => Err(Error::InvalidDataset(format!("unknown sector {other:?}"))),
        }
    }
}

/// One log-landings measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub country: usize,
    /// Years since the first year of the span.
    pub t: u32,
    pub sector: Sector,
    /// Log tonnes.
    pub y: f64,
    /// Raw tonnage, kept so that a dataset can be written back out exactly.
    pub tonnes: f64,
}

/// A validated panel of observations for one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    kind: ModelKind,
    labels: Vec<String>,
    span_start: i32,
    horizon: u32,
    observations: Vec<Observation>,
    availability: Vec<BTreeSet<Sector>>,
}

impl Dataset {
    pub fn new(
        kind: ModelKind,
        labels: Vec<String>,
        span_start: i32,
        horizon: u32,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("no countries".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidDataset("empty time horizon".into()));
        }
        let c = labels.len();
        let mut seen = BTreeSet::new();
        let mut availability = vec![BTreeSet::new(); c];
        for obs in &observations {
            if obs.country >= c {
                return Err(Error::InvalidDataset(format!(
                    "country index {} out of range for {c} countries",
                    obs.country
                )));
            }
            if obs.t >= horizon {
                return Err(Error::InvalidDataset(format!(
                    "time index {} outside horizon {horizon}",
                    obs.t
                )));
            }
            if !obs.y.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "non-finite log landings for {} at t={}",
                    labels[obs.country], obs.t
                )));
            }
            if !obs.sector.fits(kind) {
                return Err(Error::SectorMismatch {
                    sector: obs.sector,
                    kind,
                });
            }
            if !seen.insert((obs.country, obs.t, obs.sector)) {
                return Err(Error::DuplicateRow {
                    country: labels[obs.country].clone(),
                    year: span_start + obs.t as i32,
                    sector: obs.sector,
                });
            }
            availability[obs.country].insert(obs.sector);
        }
        Ok(Dataset {
            kind,
            labels,
            span_start,
            horizon,
            observations,
            availability,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_countries(&self) -> usize {
        self.labels.len()
    }

    pub fn span_start(&self) -> i32 {
        self.span_start
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn availability(&self) -> &[BTreeSet<Sector>] {
        &self.availability
    }

    /// Countries observed in both the industrial and the artisanal sector.
    pub fn dual_sector_countries(&self) -> Vec<usize> {
        self.availability
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(&Sector::Industrial) && s.contains(&Sector::Artisanal))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Symmetric 2x2 matrix `[[var_a, cov], [cov, var_b]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub var_a: f64,
    pub cov: f64,
    pub var_b: f64,
}

impl Cov2 {
    pub fn diagonal(var_a: f64, var_b: f64) -> Self {
        Cov2 {
            var_a,
            cov: 0.0,
            var_b,
        }
    }

    pub fn det(&self) -> f64 {
        self.var_a * self.var_b - self.cov * self.cov
    }

    pub fn is_positive_definite(&self) -> bool {
        self.var_a > 0.0 && self.var_b > 0.0 && self.det() > 0.0
    }

    pub fn inverse(&self) -> Result<Cov2> {
        let det = self.det();
        if !(det > 0.0 && self.var_a > 0.0) {
            return Err(self.degenerate());
        }
        Ok(Cov2 {
            var_a: self.var_b / det,
            cov: -self.cov / det,
            var_b: self.var_a / det,
        })
    }

    /// Lower Cholesky factor `(l11, l21, l22)`.
    pub fn cholesky(&self) -> Result<(f64, f64, f64)> {
        if !self.is_positive_definite() {
            return Err(self.degenerate());
        }
        let l11 = self.var_a.sqrt();
        let l21 = self.cov / l11;
        let l22 = (self.var_b - l21 * l21).sqrt();
        Ok((l11, l21, l22))
    }

    /// `x' S^{-1} x` in closed form.
    pub fn quad_form_inv(&self, x: [f64; 2]) -> f64 {
        (self.var_b * x[0] * x[0] - 2.0 * self.cov * x[0] * x[1] + self.var_a * x[1] * x[1])
            / self.det()
    }

    /// Log density of `N2(0, self)` at `x`.
    pub fn ln_pdf(&self, x: [f64; 2]) -> Result<f64> {
        if !self.is_positive_definite() {
            return Err(self.degenerate());
        }
        Ok(-LN_2PI - 0.5 * self.det().ln() - 0.5 * self.quad_form_inv(x))
    }

    fn degenerate(&self) -> Error {
        let sd_a = self.var_a.max(0.0).sqrt();
        let sd_b = self.var_b.max(0.0).sqrt();
        Error::DegenerateCovariance {
            sd_a,
            sd_b,
            rho: self.cov / (sd_a * sd_b),
        }
    }
}

/// Covariance of a correlated pair from its two sds and correlation.
pub fn build_covariance(sd_a: f64, sd_b: f64, rho: f64) -> Result<Cov2> {
    let valid = sd_a > 0.0
        && sd_b > 0.0
        && sd_a.is_finite()
        && sd_b.is_finite()
        && rho.abs() < 1.0
        && rho.is_finite();
    if !valid {
        return Err(Error::DegenerateCovariance { sd_a, sd_b, rho });
    }
    let cov = Cov2 {
        var_a: sd_a * sd_a,
        cov: rho * sd_a * sd_b,
        var_b: sd_b * sd_b,
    };
    if !cov.is_positive_definite() {
        return Err(Error::DegenerateCovariance { sd_a, sd_b, rho });
    }
    Ok(cov)
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalParams {
    pub beta0: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub beta0_i: f64,
    pub beta0_a: f64,
    pub sigma: f64,
    pub sigma0_i: f64,
    pub sigma0_a: f64,
    pub sigma1_i: f64,
    pub sigma1_a: f64,
    pub rho0: f64,
    pub rho1: f64,
}

impl JointParams {
    pub fn intercept_cov(&self) -> Result<Cov2> {
        build_covariance(self.sigma0_i, self.sigma0_a, self.rho0)
    }

    pub fn slope_cov(&self) -> Result<Cov2> {
        build_covariance(self.sigma1_i, self.sigma1_a, self.rho1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Params {
    Total(TotalParams),
    Joint(JointParams),
}

impl Params {
    pub fn kind(&self) -> ModelKind {
        match self {
            Params::Total(_) => ModelKind::Total,
            Params::Joint(_) => ModelKind::Joint,
        }
    }

    /// Top-level parameters in table row order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match self {
            Params::Total(p) => vec![
                ("beta0", p.beta0),
                ("sigma", p.sigma),
                ("sigma0", p.sigma0),
                ("sigma1", p.sigma1),
            ],
            Params::Joint(p) => vec![
                ("beta0_I", p.beta0_i),
                ("beta0_A", p.beta0_a),
                ("sigma", p.sigma),
                ("sigma0_I", p.sigma0_i),
                ("sigma0_A", p.sigma0_a),
                ("sigma1_I", p.sigma1_i),
                ("sigma1_A", p.sigma1_a),
                ("rho0", p.rho0),
                ("rho1", p.rho1),
            ],
        }
    }

    /// Set a top-level parameter by its table name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name:?}")))?;
        *slot = value;
        Ok(())
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        match self {
            Params::Total(p) => match name {
                "beta0" => Some(&mut p.beta0),
                "sigma" => Some(&mut p.sigma),
                "sigma0" => Some(&mut p.sigma0),
                "sigma1" => Some(&mut p.sigma1),
                _ => None,
            },
            Params::Joint(p) => match name {
                "beta0_I" => Some(&mut p.beta0_i),
                "beta0_A" => Some(&mut p.beta0_a),
                "sigma" => Some(&mut p.sigma),
                "sigma0_I" => Some(&mut p.sigma0_i),
                "sigma0_A" => Some(&mut p.sigma0_a),
                "sigma1_I" => Some(&mut p.sigma1_i),
                "sigma1_A" => Some(&mut p.sigma1_a),
                "rho0" => Some(&mut p.rho0),
                "rho1" => Some(&mut p.rho1),
                _ => None,
            },
        }
    }

    /// Check that the values are usable as data-generating parameters.
    pub fn validate_generative(&self) -> Result<()> {
        for (name, value) in self.named() {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
            if name.starts_with("sigma") && value <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be positive")));
            }
            if name.starts_with("rho") && value.abs() >= 1.0 {
                return Err(Error::InvalidParams(format!("{name} must lie in (-1, 1)")));
            }
        }
        Ok(())
    }
}

/// Names of the top-level parameters of `kind` in table row order.
pub fn top_level_names(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Total => &["beta0", "sigma", "sigma0", "sigma1"],
        ModelKind::Joint => &[
            "beta0_I", "beta0_A", "sigma", "sigma0_I", "sigma0_A", "sigma1_I", "sigma1_A", "rho0",
            "rho1",
        ],
    }
}

/// Random-effect name stems of `kind`, e.g. `b0` for `b0[Spain]`.
pub fn effect_stems(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Total => &["b0", "b1"],
        ModelKind::Joint => &["b0_I", "b0_A", "b1_I", "b1_A"],
    }
}

pub fn effect_name(stem: &str, label: &str) -> String {
    format!("{stem}[{label}]")
}

/// All parameter names of a fitted model: top level first, then every
/// random effect grouped by stem in country order.
pub fn parameter_names(kind: ModelKind, labels: &[String]) -> Vec<String> {
    let mut names: Vec<String> = top_level_names(kind)
        .iter()
        .map(|s| s.to_string())
        .collect();
    for stem in effect_stems(kind) {
        names.extend(labels.iter().map(|l| effect_name(stem, l)));
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalEffects {
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
}

impl TotalEffects {
    pub fn zeros(c: usize) -> Self {
        TotalEffects {
            b0: vec![0.0; c],
            b1: vec![0.0; c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEffects {
    pub b0_i: Vec<f64>,
    pub b0_a: Vec<f64>,
    pub b1_i: Vec<f64>,
    pub b1_a: Vec<f64>,
}

impl JointEffects {
    pub fn zeros(c: usize) -> Self {
        JointEffects {
            b0_i: vec![0.0; c],
            b0_a: vec![0.0; c],
            b1_i: vec![0.0; c],
            b1_a: vec![0.0; c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CountryEffects {
    Total(TotalEffects),
    Joint(JointEffects),
}

impl CountryEffects {
    pub fn num_countries(&self) -> usize {
        match self {
            CountryEffects::Total(e) => e.b0.len(),
            CountryEffects::Joint(e) => e.b0_i.len(),
        }
    }

    /// Effect columns in `effect_stems` order.
    pub fn columns(&self) -> Vec<&[f64]> {
        match self {
            CountryEffects::Total(e) => vec![&e.b0, &e.b1],
            CountryEffects::Joint(e) => vec![&e.b0_i, &e.b0_a, &e.b1_i, &e.b1_a],
        }
    }

    fn columns_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            CountryEffects::Total(e) => vec![&mut e.b0, &mut e.b1],
            CountryEffects::Joint(e) => vec![&mut e.b0_i, &mut e.b0_a, &mut e.b1_i, &mut e.b1_a],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalState {
    pub params: TotalParams,
    pub effects: TotalEffects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub params: JointParams,
    pub effects: JointEffects,
}

/// Top-level parameters plus country effects of either model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Total(TotalState),
    Joint(JointState),
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Total(_) => ModelKind::Total,
            ModelState::Joint(_) => ModelKind::Joint,
        }
    }

    pub fn params(&self) -> Params {
        match self {
            ModelState::Total(s) => Params::Total(s.params),
            ModelState::Joint(s) => Params::Joint(s.params),
        }
    }

    pub fn effects(&self) -> CountryEffects {
        match self {
            ModelState::Total(s) => CountryEffects::Total(s.effects.clone()),
            ModelState::Joint(s) => CountryEffects::Joint(s.effects.clone()),
        }
    }

    pub fn from_parts(params: Params, effects: CountryEffects) -> Result<Self> {
        let state = match (params, effects) {
            (Params::Total(params), CountryEffects::Total(effects)) => {
                ModelState::Total(TotalState { params, effects })
            }
            (Params::Joint(params), CountryEffects::Joint(effects)) => {
                ModelState::Joint(JointState { params, effects })
            }
            _ => {
                return Err(Error::StateMismatch(
                    "parameters and effects belong to different models".into(),
                ))
            }
        };
        let lens: Vec<usize> = state.effect_columns().iter().map(|c| c.len()).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::StateMismatch(
                "effect columns differ in length".into(),
            ));
        }
        Ok(state)
    }

    pub fn num_countries(&self) -> usize {
        match self {
            ModelState::Total(s) => s.effects.b0.len(),
            ModelState::Joint(s) => s.effects.b0_i.len(),
        }
    }

    fn effect_columns(&self) -> Vec<&[f64]> {
        match self {
            ModelState::Total(s) => vec![&s.effects.b0, &s.effects.b1],
            ModelState::Joint(s) => vec![
                &s.effects.b0_i,
                &s.effects.b0_a,
                &s.effects.b1_i,
                &s.effects.b1_a,
            ],
        }
    }

    /// Check the state is dimensioned for `data`.
    pub fn check_against(&self, data: &Dataset) -> Result<()> {
        if self.kind() != data.kind() {
            return Err(Error::StateMismatch(format!(
                "{} state against {} dataset",
                self.kind(),
                data.kind()
            )));
        }
        if self.num_countries() != data.num_countries() {
            return Err(Error::StateMismatch(format!(
                "state has {} countries, dataset has {}",
                self.num_countries(),
                data.num_countries()
            )));
        }
        Ok(())
    }

    /// Every value in `parameter_names` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.params().named().into_iter().map(|(_, v)| v).collect();
        for col in self.effect_columns() {
            out.extend_from_slice(col);
        }
        out
    }

    /// Set a parameter by name: a top-level name, `stem[label]`, or
    /// `stem[index]`.
    pub fn set_named(&mut self, name: &str, labels: &[String], value: f64) -> Result<()> {
        let mut params = self.params();
        if let Some(slot) = params.slot(name) {
            *slot = value;
            *self = ModelState::from_parts(params, self.effects())?;
            return Ok(());
        }
        let unknown = || Error::InvalidConfig(format!("unknown parameter {name:?}"));
        let (stem, rest) = name.split_once('[').ok_or_else(unknown)?;
        let key = rest.strip_suffix(']').ok_or_else(unknown)?;
        let stem_idx = effect_stems(self.kind())
            .iter()
            .position(|s| *s == stem)
            .ok_or_else(unknown)?;
        let country = labels
            .iter()
            .position(|l| l == key)
            .or_else(|| key.parse::<usize>().ok())
            .filter(|&i| i < self.num_countries())
            .ok_or_else(unknown)?;
        let mut effects = self.effects();
        effects.columns_mut()[stem_idx][country] = value;
        *self = ModelState::from_parts(params, effects)?;
        Ok(())
    }
}

/// Model mean for one cell.
pub fn linear_predictor(state: &ModelState, country: usize, t: u32, sector: Sector) -> Result<f64> {
    let t = f64::from(t);
    match state {
        ModelState::Total(s) => {
            if sector != Sector::Total {
                return Err(Error::SectorMismatch {
                    sector,
                    kind: ModelKind::Total,
                });
            }
            Ok(s.params.beta0 + s.effects.b0[country] + s.effects.b1[country] * t)
        }
        ModelState::Joint(s) => {
            let (p, e) = (&s.params, &s.effects);
            match sector {
                Sector::Industrial => Ok(p.beta0_i + e.b0_i[country] + e.b1_i[country] * t),
                Sector::Artisanal => Ok(p.beta0_a + e.b0_a[country] + e.b1_a[country] * t),
                Sector::Total => Err(Error::SectorMismatch {
                    sector,
                    kind: ModelKind::Joint,
                }),
            }
        }
    }
}

fn obs_sigma(state: &ModelState) -> f64 {
    match state {
        ModelState::Total(s) => s.params.sigma,
        ModelState::Joint(s) => s.params.sigma,
    }
}

/// Gaussian log likelihood of every observation under one shared sigma.
pub fn log_likelihood(state: &ModelState, data: &Dataset) -> Result<f64> {
    state.check_against(data)?;
    let sigma = obs_sigma(state);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut ss = 0.0;
    for obs in data.observations() {
        let r = obs.y - linear_predictor(state, obs.country, obs.t, obs.sector)?;
        ss += r * r;
    }
    let n = data.len() as f64;
    Ok(-0.5 * n * LN_2PI - n * sigma.ln() - 0.5 * ss / (sigma * sigma))
}

pub fn log_random_effects_density(state: &ModelState) -> Result<f64> {
    match state {
        ModelState::Total(s) => {
            let (p, e) = (&s.params, &s.effects);
            if !(p.sigma0 > 0.0 && p.sigma1 > 0.0) {
                return Err(Error::DegenerateCovariance {
                    sd_a: p.sigma0,
                    sd_b: p.sigma1,
                    rho: 0.0,
                });
            }
            let lp0: f64 = e.b0.iter().map(|&b| normal_ln_pdf(b, 0.0, p.sigma0)).sum();
            let lp1: f64 = e.b1.iter().map(|&b| normal_ln_pdf(b, 0.0, p.sigma1)).sum();
            Ok(lp0 + lp1)
        }
        ModelState::Joint(s) => Ok(joint_intercept_density(&s.params, &s.effects)?
            + joint_slope_density(&s.params, &s.effects)?),
    }
}

pub(crate) fn pair_density(cov: &Cov2, a: &[f64], b: &[f64]) -> Result<f64> {
    if !cov.is_positive_definite() {
        return Err(cov.degenerate());
    }
    let norm = -LN_2PI - 0.5 * cov.det().ln();
    let q: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| cov.quad_form_inv([x, y]))
        .sum();
    Ok(a.len() as f64 * norm - 0.5 * q)
}

pub(crate) fn joint_intercept_density(p: &JointParams, e: &JointEffects) -> Result<f64> {
    pair_density(&p.intercept_cov()?, &e.b0_i, &e.b0_a)
}

pub(crate) fn joint_slope_density(p: &JointParams, e: &JointEffects) -> Result<f64> {
    pair_density(&p.slope_cov()?, &e.b1_i, &e.b1_a)
}

fn ln_beta_prior(beta: f64) -> f64 {
    normal_ln_pdf(beta, 0.0, BETA_PRIOR_VAR.sqrt())
}

pub(crate) fn ln_sd_prior(sd: f64) -> f64 {
    if sd > 0.0 && sd < SD_UPPER {
        -SD_UPPER.ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn ln_rho_prior(rho: f64) -> f64 {
    if rho > -1.0 && rho < 1.0 {
        -(2.0f64.ln())
    } else {
        f64::NEG_INFINITY
    }
}

pub fn log_prior(params: &Params) -> f64 {
    match params {
        Params::Total(p) => {
            ln_beta_prior(p.beta0)
                + ln_sd_prior(p.sigma)
                + ln_sd_prior(p.sigma0)
                + ln_sd_prior(p.sigma1)
        }
        Params::Joint(p) => {
            ln_beta_prior(p.beta0_i)
                + ln_beta_prior(p.beta0_a)
                + ln_sd_prior(p.sigma)
                + ln_sd_prior(p.sigma0_i)
                + ln_sd_prior(p.sigma0_a)
                + ln_sd_prior(p.sigma1_i)
                + ln_sd_prior(p.sigma1_a)
                + ln_rho_prior(p.rho0)
                + ln_rho_prior(p.rho1)
        }
    }
}

/// Unnormalised log posterior; `-inf` outside prior support.
pub fn log_posterior_unnorm(state: &ModelState, data: &Dataset) -> Result<f64> {
    let lp = log_prior(&state.params());
    if lp == f64::NEG_INFINITY {
        state.check_against(data)?;
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood(state, data)? + log_random_effects_density(state)? + lp)
}
