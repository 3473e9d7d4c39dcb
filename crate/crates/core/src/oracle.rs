//! Reference computations the sampler is checked against: the closed-form
//! posterior of a fixed intercept, brute-force grid posteriors on tiny
//! problems, and simulation-based calibration (SBC).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{simulate_dataset, SimulationSpec, Span};
use crate::diagnostics::{iat, split_rhat};
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::model::{
    log_posterior_unnorm, top_level_names, Dataset, JointParams, ModelKind, ModelState, Params,
    Sector, TotalParams, BETA_PRIOR_VAR, SD_UPPER,
};
use crate::sampler::{per_chain, run_chains_sequential, Block, ChainConfig, ChainDraws};

/// Exact posterior `(mean, sd)` of the fixed intercept of `sector` when
/// everything else in `state` is held fixed.
pub fn conjugate_posterior_beta0(
    data: &Dataset,
    state: &ModelState,
    sector: Sector,
) -> Result<(f64, f64)> {
    state.check_against(data)?;
    if !sector.fits(data.kind()) {
        return Err(Error::SectorMismatch {
            sector,
            kind: data.kind(),
        });
    }
    let (sigma, b0, b1): (f64, &[f64], &[f64]) = match (state, sector) {
        (ModelState::Total(s), _) => (s.params.sigma, &s.effects.b0, &s.effects.b1),
        (ModelState::Joint(s), Sector::Industrial) => {
            (s.params.sigma, &s.effects.b0_i, &s.effects.b1_i)
        }
        (ModelState::Joint(s), _) => (s.params.sigma, &s.effects.b0_a, &s.effects.b1_a),
    };
    let mut n = 0.0;
    let mut sum = 0.0;
    for o in data.observations().iter().filter(|o| o.sector == sector) {
        n += 1.0;
        sum += o.y - b0[o.country] - b1[o.country] * f64::from(o.t);
    }
    let precision = 1.0 / BETA_PRIOR_VAR + n / (sigma * sigma);
    Ok((sum / (sigma * sigma) / precision, precision.recip().sqrt()))
}

pub const GRID_LIMIT: u128 = 10_000_000;
pub const GRID_MAX_AXES: usize = 4;

/// One grid axis: `points` cell midpoints spanning `(lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    /// Any name accepted by [`ModelState::set_named`].
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(name: &str, lower: f64, upper: f64, points: usize) -> Self {
        GridAxis {
            name: name.to_string(),
            lower,
            upper,
            points,
        }
    }

    /// Default bounds: prior support for sds and correlations, prior mean
    /// plus or minus six prior sds for intercepts.
    pub fn default_for(name: &str, points: usize) -> Self {
        let (lo, hi) = if name.starts_with("sigma") {
            (0.0, SD_UPPER)
        } else if name.starts_with("rho") {
            (-1.0, 1.0)
        } else {
            let sd = BETA_PRIOR_VAR.sqrt();
            (-6.0 * sd, 6.0 * sd)
        };
        GridAxis::new(name, lo, hi, points)
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.points as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn total_points(&self) -> u128 {
        self.axes.iter().map(|a| a.points as u128).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > GRID_MAX_AXES {
            return Err(Error::InvalidConfig(format!(
                "grid needs 1 to {GRID_MAX_AXES} axes, got {}",
                self.axes.len()
            )));
        }
        for a in &self.axes {
            if a.points == 0 || !a.lower.is_finite() || !a.upper.is_finite() || a.lower >= a.upper {
                return Err(Error::InvalidConfig(format!("bad grid axis {}", a.name)));
            }
        }
        let points = self.total_points();
        if points > GRID_LIMIT {
            return Err(Error::GridTooLarge {
                points,
                limit: GRID_LIMIT,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub axes: Vec<GridAxis>,
    /// Normalised log probability of every cell, last axis fastest.
    pub log_mass: Vec<f64>,
    /// Per axis, the probability of each cell.
    pub marginals: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Log normalising constant (cell volume included).
    pub log_evidence: f64,
}

impl GridPosterior {
    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.axis_index(name).map(|i| self.means[i])
    }

    /// Marginal quantile, with mass spread uniformly inside each cell.
    pub fn quantile(&self, name: &str, p: f64) -> Option<f64> {
        let i = self.axis_index(name)?;
        let axis = &self.axes[i];
        let w = axis.width();
        let mut acc = 0.0;
        for (k, &m) in self.marginals[i].iter().enumerate() {
            if acc + m >= p && m > 0.0 {
                return Some(axis.lower + w * (k as f64 + (p - acc) / m));
            }
            acc += m;
        }
        Some(axis.upper)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Evaluate the unnormalised log posterior on the lattice of `spec`, with
/// every parameter that is not an axis held at its value in `base`.
pub fn grid_log_posterior(
    data: &Dataset,
    base: &ModelState,
    spec: &GridSpec,
) -> Result<GridPosterior> {
    spec.validate()?;
    base.check_against(data)?;
    let labels = data.labels();
    // reject unknown names before the parallel sweep
    for a in &spec.axes {
        base.clone().set_named(&a.name, labels, a.value(0))?;
    }

    let dims: Vec<usize> = spec.axes.iter().map(|a| a.points).collect();
    let inner: usize = dims[1..].iter().product();
    let blocks: Vec<Vec<f64>> = (0..dims[0])
        .into_par_iter()
        .map(|k0| -> Result<Vec<f64>> {
            let mut state = base.clone();
            state.set_named(&spec.axes[0].name, labels, spec.axes[0].value(k0))?;
            let mut out = Vec::with_capacity(inner);
            let mut idx = vec![0usize; dims.len()];
            for flat in 0..inner {
                let mut rem = flat;
                for d in (1..dims.len()).rev() {
                    idx[d] = rem % dims[d];
                    rem /= dims[d];
                }
                for (axis, &k) in spec.axes.iter().zip(&idx).skip(1) {
                    state.set_named(&axis.name, labels, axis.value(k))?;
                }
                out.push(log_posterior_unnorm(&state, data)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut log_mass: Vec<f64> = blocks.into_iter().flatten().collect();

    let norm = log_sum_exp(&log_mass);
    if !norm.is_finite() {
        return Err(Error::Diagnostic("grid carries no posterior mass".into()));
    }
    for v in &mut log_mass {
        *v -= norm;
    }
    let mut marginals: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    for (flat, &lm) in log_mass.iter().enumerate() {
        let p = lm.exp();
        let mut rem = flat;
        for d in (0..dims.len()).rev() {
            marginals[d][rem % dims[d]] += p;
            rem /= dims[d];
        }
    }
    let means = spec
        .axes
        .iter()
        .zip(&marginals)
        .map(|(a, m)| m.iter().enumerate().map(|(k, p)| p * a.value(k)).sum())
        .collect();
    let log_volume: f64 = spec.axes.iter().map(|a| a.width().ln()).sum();
    Ok(GridPosterior {
        axes: spec.axes.clone(),
        log_mass,
        marginals,
        means,
        log_evidence: norm + log_volume,
    })
}

/// splitmix64 finaliser applied to `master + golden * (index + 1)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One draw of the top-level parameters from their priors.
pub fn draw_prior<R: Rng + ?Sized>(kind: ModelKind, rng: &mut R) -> Params {
    let beta = |rng: &mut R| BETA_PRIOR_VAR.sqrt() * std_normal(rng);
    let sd = |rng: &mut R| loop {
        let v = SD_UPPER * rng.random::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let rho = |rng: &mut R| loop {
        let v = rng.random_range(-1.0..1.0);
        if v > -1.0 {
            break v;
        }
    };
    match kind {
        ModelKind::Total => Params::Total(TotalParams {
            beta0: beta(rng),
            sigma: sd(rng),
            sigma0: sd(rng),
            sigma1: sd(rng),
        }),
        ModelKind::Joint => Params::Joint(JointParams {
            beta0_i: beta(rng),
            beta0_a: beta(rng),
            sigma: sd(rng),
            sigma0_i: sd(rng),
            sigma0_a: sd(rng),
            sigma1_i: sd(rng),
            sigma1_a: sd(rng),
            rho0: rho(rng),
            rho1: rho(rng),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub kind: ModelKind,
    pub replicates: usize,
    pub countries: usize,
    pub years: u32,
    pub chains: usize,
    /// Posterior draws ranked against the truth; ranks lie in `0..=draws`.
    pub draws: usize,
    pub bins: usize,
    pub burnin: usize,
    /// Retained iterations per chain in the first attempt; doubled until the
    /// IAT-thinned sample is large enough.
    pub initial_retained: usize,
    pub max_doublings: usize,
    pub rhat_limit: f64,
    pub max_excluded_fraction: f64,
    pub seed: u64,
    /// Blocks held fixed, for negative controls.
    pub frozen: Vec<Block>,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            kind: ModelKind::Total,
            replicates: 200,
            countries: 4,
            years: 10,
            chains: 2,
            draws: 99,
            bins: 10,
            burnin: 1000,
            initial_retained: 1000,
            max_doublings: 5,
            rhat_limit: 1.05,
            max_excluded_fraction: 0.05,
            seed: 2024,
            frozen: Vec::new(),
        }
    }
}

impl SbcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.replicates == 0 || self.countries == 0 || self.years == 0 {
            return bad("SBC needs replicates, countries and years");
        }
        if self.chains < 2 {
            return bad("SBC needs at least 2 chains for R-hat");
        }
        if self.bins == 0 || !(self.draws + 1).is_multiple_of(self.bins) {
            return bad("bins must divide the number of possible ranks (draws + 1)");
        }
        if self.initial_retained < 4 {
            return bad("initial_retained must be at least 4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// `None` when kept; otherwise why it was excluded.
    pub excluded: Option<String>,
    pub max_rhat: f64,
    pub thin: usize,
    /// Rank of the truth per top-level parameter, in table order.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterUniformity {
    pub parameter: String,
    pub histogram: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub config: SbcConfig,
    pub parameters: Vec<String>,
    pub replicates: Vec<ReplicateOutcome>,
    pub used: usize,
    pub excluded: usize,
    pub uniformity: Vec<ParameterUniformity>,
}

#[derive(Serialize)]
struct SbcSummaryJson<'a> {
    config: &'a SbcConfig,
    used: usize,
    excluded: usize,
    excluded_fraction: f64,
    uniformity: &'a [ParameterUniformity],
}

impl SbcReport {
    pub fn p_value(&self, parameter: &str) -> Option<f64> {
        self.uniformity
            .iter()
            .find(|u| u.parameter == parameter)
            .map(|u| u.p_value)
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / self.replicates.len() as f64
    }

    /// Rank table: `parameter,replicate,rank`, kept replicates only.
    pub fn write_ranks_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "replicate", "rank"])?;
        for (j, name) in self.parameters.iter().enumerate() {
            for r in self.replicates.iter().filter(|r| r.excluded.is_none()) {
                w.write_record([
                    name.clone(),
                    r.replicate.to_string(),
                    r.ranks[j].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("writing SBC ranks", e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SbcSummaryJson {
            config: &self.config,
            used: self.used,
            excluded: self.excluded,
            excluded_fraction: self.excluded_fraction(),
            uniformity: &self.uniformity,
        })?)
    }
}

/// Chi-square test of a rank histogram against the uniform distribution.
pub fn uniformity_test(histogram: &[usize]) -> (f64, f64) {
    let n: usize = histogram.iter().sum();
    let bins = histogram.len();
    if n == 0 || bins < 2 {
        return (f64::NAN, f64::NAN);
    }
    let e = n as f64 / bins as f64;
    let stat: f64 = histogram.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let chi = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    (stat, chi.sf(stat))
}

fn varying(seqs: &[&[f64]]) -> bool {
    seqs.iter()
        .any(|s| s.iter().any(|&v| v != s[0]) || s[0] != seqs[0][0])
}

/// Every `thin`-th draw of each chain, `per_chain` of them per chain.
fn thinned(seqs: &[&[f64]], thin: usize, per_chain: usize) -> Vec<f64> {
    seqs.iter()
        .flat_map(|s| {
            s.iter()
                .skip(thin - 1)
                .step_by(thin)
                .take(per_chain)
                .copied()
        })
        .collect()
}

fn run_replicate(cfg: &SbcConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let seed = derive_seed(cfg.seed, replicate as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = draw_prior(cfg.kind, &mut rng);
    let span = Span::new(2000, 2000 + cfg.years as i32 - 1)?;
    let spec = SimulationSpec::balanced(params, cfg.countries, span);
    let sim = simulate_dataset(&spec, derive_seed(seed, 0))?;
    let names = top_level_names(cfg.kind);
    let truth: Vec<f64> = params.named().into_iter().map(|(_, v)| v).collect();

    let per_chain_needed = cfg.draws.div_ceil(cfg.chains);
    let mut retained = cfg.initial_retained;
    let mut attempt = 0;
    loop {
        let chain_cfg = ChainConfig {
            iterations: cfg.burnin + retained,
            burnin: cfg.burnin,
            thin: 1,
            chains: cfg.chains,
            seed: derive_seed(seed, 1 + attempt as u64),
            frozen: cfg.frozen.iter().copied().collect(),
            ..ChainConfig::default()
        };
        let chains: Vec<ChainDraws> = run_chains_sequential(&sim.dataset, &chain_cfg)?;
        let mut max_rhat: f64 = 1.0;
        let mut max_iat: f64 = 1.0;
        for name in names {
            let seqs = per_chain(&chains, name);
            if !varying(&seqs) {
                continue;
            }
            max_rhat = max_rhat.max(split_rhat(&seqs)?);
            max_iat = max_iat.max(iat(&seqs)?);
        }
        let thin = max_iat.ceil() as usize;
        if retained / thin >= per_chain_needed || attempt >= cfg.max_doublings {
            let enough = retained / thin >= per_chain_needed;
            let excluded = if !enough {
                Some(format!("thinned sample too small at thin {thin}"))
            } else if max_rhat.is_nan() || max_rhat >= cfg.rhat_limit {
                Some(format!("R-hat {max_rhat:.3}"))
            } else {
                None
            };
            let ranks = names
                .iter()
                .zip(&truth)
                .map(|(name, &t)| {
                    let seqs = per_chain(&chains, name);
                    let mut d = thinned(&seqs, thin, per_chain_needed);
                    d.truncate(cfg.draws);
                    d.iter().filter(|&&v| v < t).count()
                })
                .collect();
            return Ok(ReplicateOutcome {
                replicate,
                seed,
                excluded,
                max_rhat,
                thin,
                ranks,
            });
        }
        retained *= 2;
        attempt += 1;
    }
}

/// Fit `replicates` prior-predictive datasets and test rank uniformity.
/// Fails if more than `max_excluded_fraction` of replicates are excluded.
pub fn sbc_run(cfg: &SbcConfig) -> Result<SbcReport> {
    cfg.validate()?;
    let replicates: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect::<Result<_>>()?;
    let names = top_level_names(cfg.kind);
    let excluded = replicates.iter().filter(|r| r.excluded.is_some()).count();
    let used = replicates.len() - excluded;
    let per_bin = (cfg.draws + 1) / cfg.bins;
    let uniformity = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut histogram = vec![0usize; cfg.bins];
            for r in replicates.iter().filter(|r| r.excluded.is_none()) {
                histogram[r.ranks[j] / per_bin] += 1;
            }
            let (chi_square, p_value) = uniformity_test(&histogram);
            ParameterUniformity {
                parameter: name.to_string(),
                histogram,
                chi_square,
                p_value,
            }
        })
        .collect();
    let report = SbcReport {
        config: cfg.clone(),
        parameters: names.iter().map(|s| s.to_string()).collect(),
        replicates,
        used,
        excluded,
        uniformity,
    };
    if report.excluded_fraction() > cfg.max_excluded_fraction {
        return Err(Error::Calibration(format!(
            "{excluded} of {} replicates excluded",
            cfg.replicates
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Observation, TotalEffects, TotalState};
    use approx::assert_relative_eq;

    fn total_data(ys: &[(usize, u32, f64)], countries: usize) -> Dataset {
        let obs = ys
            .iter()
            .map(|&(country, t, y)| Observation {
                country,
                t,
                sector: Sector::Total,
                y,
                tonnes: y.exp(),
            })
            .collect();
        let labels = (0..countries).map(|i| format!("c{i}")).collect();
        Dataset::new(ModelKind::Total, labels, 1970, 45, obs).unwrap()
    }

    fn state(beta0: f64, sigma: f64, c: usize) -> ModelState {
        ModelState::Total(TotalState {
            params: TotalParams {
                beta0,
                sigma,
                sigma0: 1.0,
                sigma1: 1.0,
            },
            effects: TotalEffects::zeros(c),
        })
    }

    #[test]
    fn conjugate_examples() {
        let d = total_data(&[(0, 0, 10.0)], 1);
        let (m, s) = conjugate_posterior_beta0(&d, &state(0.0, 1.0, 1), Sector::Total).unwrap();
        assert_relative_eq!(m, 9.90099, epsilon = 1e-5);
        assert_relative_eq!(s, 0.995037, epsilon = 1e-6);

        let d = total_data(&[], 1);
        let (m, s) = conjugate_posterior_beta0(&d, &state(0.0, 1.0, 1), Sector::Total).unwrap();
        assert_eq!((m, s), (0.0, 10.0));

        let d = total_data(&[(0, 0, 0.0), (0, 1, 0.0), (0, 2, 0.0)], 1);
        let (m, s) = conjugate_posterior_beta0(&d, &state(0.0, 2.0, 1), Sector::Total).unwrap();
        assert_eq!(m, 0.0);
        assert_relative_eq!(s, (1.0 / (0.01 + 3.0 / 4.0f64)).sqrt(), epsilon = 1e-12);
        assert!(conjugate_posterior_beta0(&d, &state(0.0, 2.0, 1), Sector::Industrial).is_err());
    }

    #[test]
    fn grid_matches_conjugate() {
        let d = total_data(&[(0, 0, 4.0), (0, 3, 5.5), (1, 1, 6.0)], 2);
        let s = state(0.0, 0.8, 2);
        let (m, sd) = conjugate_posterior_beta0(&d, &s, Sector::Total).unwrap();
        let spec = GridSpec {
            axes: vec![GridAxis::new("beta0", m - 10.0 * sd, m + 10.0 * sd, 10_000)],
        };
        let g = grid_log_posterior(&d, &s, &spec).unwrap();
        assert!((g.mean("beta0").unwrap() - m).abs() / m < 1e-3);
        let q = g.quantile("beta0", 0.975).unwrap();
        assert!((q - (m + 1.959964 * sd)).abs() < 0.01 * sd);
    }

    #[test]
    fn grid_flat_posterior_has_midpoint_mean() {
        let d = total_data(&[], 1);
        let spec = GridSpec {
            axes: vec![GridAxis::default_for("sigma", 101)],
        };
        let s = state(0.0, 1.0, 1);
        let g = grid_log_posterior(&d, &s, &spec).unwrap();
        assert_relative_eq!(g.mean("sigma").unwrap(), 5.0, epsilon = 1e-9);
        // flat in sigma, so the evidence is the constant height times the width
        let height = log_posterior_unnorm(&s, &d).unwrap();
        assert_relative_eq!(g.log_evidence, height + 10f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn grid_guards() {
        let d = total_data(&[(0, 0, 1.0)], 1);
        let s = state(0.0, 1.0, 1);
        let big = GridSpec {
            axes: vec![
                GridAxis::default_for("beta0", 1000),
                GridAxis::default_for("sigma", 1000),
                GridAxis::default_for("sigma0", 11),
            ],
        };
        assert!(matches!(
            grid_log_posterior(&d, &s, &big),
            Err(Error::GridTooLarge { .. })
        ));
        let five = GridSpec {
            axes: ["beta0", "sigma", "sigma0", "sigma1", "b0[c0]"]
                .iter()
                .map(|n| GridAxis::default_for(n, 2))
                .collect(),
        };
        assert!(grid_log_posterior(&d, &s, &five).is_err());
        let unknown = GridSpec {
            axes: vec![GridAxis::default_for("tau", 3)],
        };
        assert!(grid_log_posterior(&d, &s, &unknown).is_err());
    }

    #[test]
    fn grid_refinement_is_stable() {
        let d = total_data(&[(0, 0, 4.0), (0, 3, 5.5), (1, 1, 6.0)], 2);
        let s = state(5.0, 0.8, 2);
        let run = |n: usize| {
            let spec = GridSpec {
                axes: vec![
                    GridAxis::new("beta0", -15.0, 25.0, 2 * n),
                    GridAxis::new("sigma", 0.0, 10.0, n),
                ],
            };
            grid_log_posterior(&d, &s, &spec).unwrap().means
        };
        let (a, b, c) = (run(100), run(200), run(400));
        for k in 0..2 {
            let d1 = (a[k] - b[k]).abs();
            let d2 = (b[k] - c[k]).abs();
            assert!(d2 <= d1 + 1e-9, "axis {k}: {d1} then {d2}");
            assert!(d2 / c[k].abs() < 0.01);
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..10_000).map(|r| derive_seed(7, r)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn prior_draws_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = draw_prior(ModelKind::Joint, &mut rng);
            p.validate_generative().unwrap();
            assert!(crate::model::log_prior(&p).is_finite());
        }
    }

    #[test]
    fn uniformity_test_extremes() {
        let (s, p) = uniformity_test(&[20; 10]);
        assert_eq!(s, 0.0);
        assert_relative_eq!(p, 1.0);
        let mut h = vec![0; 10];
        h[0] = 200;
        assert!(uniformity_test(&h).1 < 1e-10);
    }

    #[test]
    fn small_sbc_ranks_are_in_range() {
        let cfg = SbcConfig {
            replicates: 6,
            burnin: 200,
            initial_retained: 400,
            ..SbcConfig::default()
        };
        let rep = sbc_run(&cfg).unwrap();
        assert_eq!(rep.replicates.len(), 6);
        for r in &rep.replicates {
            assert!(r.ranks.iter().all(|&k| k <= cfg.draws));
        }
        let again = sbc_run(&cfg).unwrap();
        assert_eq!(rep, again);
        let mut buf = Vec::new();
        rep.write_ranks_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * rep.used);
        assert!(rep.summary_json().unwrap().contains("p_value"));
    }

    #[test]
    fn sbc_config_validation() {
        let mut c = SbcConfig::default();
        assert!(c.validate().is_ok());
        c.bins = 7;
        assert!(c.validate().is_err());
        c = SbcConfig {
            chains: 1,
            ..SbcConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
