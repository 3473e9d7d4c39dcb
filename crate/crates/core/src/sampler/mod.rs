//! Metropolis-within-Gibbs sampler for both models.
//!
//! One iteration is one sweep, always in this order:
//!
//! 1. fixed intercepts (conjugate normal)
//! 2. country effects (conjugate normal, bivariate for the joint model)
//! 3. centred re-draw of the fixed intercepts (see [`kernels::interweave_intercepts`])
//! 4. observation sd (truncated inverse gamma)
//! 5. random-effect sds: truncated inverse gamma for the total model;
//!    random-walk MH on `ln sd` and `atanh rho` for the joint model
//!
//! MH step sizes adapt by Robbins-Monro during burn-in only and are frozen
//! afterwards.
//!
//! Chain `k` of a run seeded with `seed` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `k`, so every chain is
//! reproducible on its own and independent of how chains are scheduled.

pub mod kernels;
pub mod mh;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    parameter_names, Dataset, JointEffects, JointParams, JointState, ModelKind, ModelState,
    TotalEffects, TotalParams, TotalState,
};
use kernels::Panel;
use mh::{AdaptiveStep, COV_PARAMS};

/// Groups of parameters that can be held fixed at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    FixedIntercepts,
    RandomEffects,
    ObsSd,
    /// `sigma0`, or `sigma0_I` and `sigma0_A`.
    InterceptSd,
    /// `sigma1`, or `sigma1_I` and `sigma1_A`.
    SlopeSd,
    Correlations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub adapt: bool,
    /// Initial MH step on the `ln sd` scale.
    pub step_log_sd: f64,
    /// Initial MH step on the `atanh rho` scale.
    pub step_atanh_rho: f64,
    /// Run the centred intercept step after the effects update.
    pub interweave: bool,
    #[serde(default)]
    pub frozen: BTreeSet<Block>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 20_000,
            burnin: 10_000,
            thin: 5,
            chains: 4,
            seed: 20_190_101,
            adapt: true,
            step_log_sd: 0.2,
            step_atanh_rho: 0.2,
            interweave: true,
            frozen: BTreeSet::new(),
        }
    }
}

impl ChainConfig {
    pub fn retained(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burnin >= self.iterations {
            return bad(format!(
                "burn-in {} must be below iterations {}",
                self.burnin, self.iterations
            ));
        }
        if self.thin == 0 {
            return bad("thin must be positive".into());
        }
        if self.chains == 0 {
            return bad("chains must be positive".into());
        }
        for (name, v) in [
            ("step_log_sd", self.step_log_sd),
            ("step_atanh_rho", self.step_atanh_rho),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if self.retained() == 0 {
            return bad("no draws would be retained".into());
        }
        if self.retained() < 100 {
            log::warn!("only {} draws retained per chain", self.retained());
        }
        Ok(())
    }

    pub fn is_frozen(&self, block: Block) -> bool {
        self.frozen.contains(&block)
    }
}

/// Retained draws of one chain, one column per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    pub draws: IndexMap<String, Vec<f64>>,
    /// Post-burn-in acceptance rate of every MH kernel.
    pub acceptance: BTreeMap<String, f64>,
    /// Step sizes the MH kernels ran with after burn-in.
    pub step_sizes: BTreeMap<String, f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.draws.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.draws.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.draws.keys().map(String::as_str)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.draws.keys())?;
        let cols: Vec<&Vec<f64>> = self.draws.values().collect();
        let mut buf = ryu_buffer();
        for row in 0..self.len() {
            wtr.write_record(cols.iter().map(|c| format_f64(&mut buf, c[row])))?;
        }
        wtr.flush()
            .map_err(|e| Error::io("flushing draws CSV", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, chain: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut cols = vec![Vec::new(); names.len()];
        for record in rdr.records() {
            let record = record?;
            for (col, field) in cols.iter_mut().zip(record.iter()) {
                col.push(field.parse::<f64>().map_err(|e| {
                    Error::InvalidDataset(format!("bad draw value {field:?}: {e}"))
                })?);
            }
        }
        Ok(ChainDraws {
            chain,
            draws: names.into_iter().zip(cols).collect(),
            acceptance: BTreeMap::new(),
            step_sizes: BTreeMap::new(),
        })
    }
}

fn ryu_buffer() -> String {
    String::with_capacity(32)
}

fn format_f64(buf: &mut String, v: f64) -> String {
    use std::fmt::Write as _;
    buf.clear();
    let _ = write!(buf, "{v}");
    buf.clone()
}

/// Concatenate the chains parameter by parameter.
pub fn pool(chains: &[ChainDraws]) -> IndexMap<String, Vec<f64>> {
    let mut out: IndexMap<String, Vec<f64>> = IndexMap::new();
    for ch in chains {
        for (name, col) in &ch.draws {
            out.entry(name.clone()).or_default().extend_from_slice(col);
        }
    }
    out
}

/// The per-chain sequences of one parameter.
pub fn per_chain<'a>(chains: &'a [ChainDraws], name: &str) -> Vec<&'a [f64]> {
    chains.iter().filter_map(|c| c.get(name)).collect()
}

fn clip_sd(x: f64) -> f64 {
    if x.is_finite() {
        x.clamp(0.01, 9.9)
    } else {
        1.0
    }
}

struct LineFit {
    intercept: f64,
    slope: Option<f64>,
    rss: f64,
    dof: usize,
}

fn fit_line(series: &kernels::Series) -> Option<LineFit> {
    let n = series.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let tm = series.t.iter().sum::<f64>() / nf;
    let ym = series.y.iter().sum::<f64>() / nf;
    let stt: f64 = series.t.iter().map(|t| (t - tm).powi(2)).sum();
    if stt > 0.0 {
        let sty: f64 = series
            .t
            .iter()
            .zip(&series.y)
            .map(|(t, y)| (t - tm) * (y - ym))
            .sum();
        let slope = sty / stt;
        let intercept = ym - slope * tm;
        let rss = series
            .t
            .iter()
            .zip(&series.y)
            .map(|(t, y)| (y - intercept - slope * t).powi(2))
            .sum();
        Some(LineFit {
            intercept,
            slope: Some(slope),
            rss,
            dof: n.saturating_sub(2),
        })
    } else {
        let rss = series.y.iter().map(|y| (y - ym).powi(2)).sum();
        Some(LineFit {
            intercept: ym,
            slope: None,
            rss,
            dof: n - 1,
        })
    }
}

fn spread(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 1.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Starting point: intercepts at the grand mean of each sector, effects at
/// zero, sds from per-series least-squares lines clipped to `[0.01, 9.9]`,
/// correlations at zero.
pub fn initial_state(data: &Dataset) -> ModelState {
    let panel = Panel::new(data);
    let c = data.num_countries();
    let slots = match data.kind() {
        ModelKind::Total => 1,
        ModelKind::Joint => 2,
    };
    let mut grand = [0.0; 2];
    let mut intercepts = [Vec::new(), Vec::new()];
    let mut slopes = [Vec::new(), Vec::new()];
    let (mut rss, mut dof) = (0.0, 0usize);
    for slot in 0..slots {
        let n = panel.slot_len(slot);
        let total: f64 = panel.series.iter().flat_map(|s| s[slot].y.iter()).sum();
        grand[slot] = if n > 0 { total / n as f64 } else { 0.0 };
        for series in &panel.series {
            if let Some(fit) = fit_line(&series[slot]) {
                intercepts[slot].push(fit.intercept);
                if let Some(s) = fit.slope {
                    slopes[slot].push(s);
                }
                rss += fit.rss;
                dof += fit.dof;
            }
        }
    }
    let sigma = clip_sd((rss / dof.max(1) as f64).sqrt());
    match data.kind() {
        ModelKind::Total => ModelState::Total(TotalState {
            params: TotalParams {
                beta0: grand[0],
                sigma,
                sigma0: clip_sd(spread(&intercepts[0])),
                sigma1: clip_sd(spread(&slopes[0])),
            },
            effects: TotalEffects::zeros(c),
        }),
        ModelKind::Joint => ModelState::Joint(JointState {
            params: JointParams {
                beta0_i: grand[0],
                beta0_a: grand[1],
                sigma,
                sigma0_i: clip_sd(spread(&intercepts[0])),
                sigma0_a: clip_sd(spread(&intercepts[1])),
                sigma1_i: clip_sd(spread(&slopes[0])),
                sigma1_a: clip_sd(spread(&slopes[1])),
                rho0: 0.0,
                rho1: 0.0,
            },
            effects: JointEffects::zeros(c),
        }),
    }
}

pub fn chain_rng(seed: u64, chain_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_index as u64);
    rng
}

/// Run one chain from the default starting point.
pub fn run_chain(data: &Dataset, config: &ChainConfig, chain_index: usize) -> Result<ChainDraws> {
    run_chain_from(data, config, chain_index, initial_state(data))
}

/// Run one chain from `init`. Frozen blocks stay at their values in `init`.
pub fn run_chain_from(
    data: &Dataset,
    config: &ChainConfig,
    chain_index: usize,
    init: ModelState,
) -> Result<ChainDraws> {
    config.validate()?;
    init.check_against(data)?;
    if !config.is_frozen(Block::ObsSd) && data.len() < 2 {
        return Err(Error::ImproperConditional {
            parameter: "sigma",
            reason: format!(
                "{} observation(s) cannot identify the observation sd",
                data.len()
            ),
        });
    }
    let panel = Panel::new(data);
    let mut rng = chain_rng(config.seed, chain_index);
    let mut state = init;
    let kind = data.kind();

    let mut steps: Vec<AdaptiveStep> = COV_PARAMS
        .iter()
        .map(|(_, tr)| {
            AdaptiveStep::new(match tr {
                mh::Transform::Log => config.step_log_sd,
                mh::Transform::Atanh => config.step_atanh_rho,
            })
        })
        .collect();
    let active_mh: Vec<bool> = (0..COV_PARAMS.len())
        .map(|k| {
            let block = match k {
                0 | 1 => Block::InterceptSd,
                3 | 4 => Block::SlopeSd,
                _ => Block::Correlations,
            };
            kind == ModelKind::Joint && !config.is_frozen(block)
        })
        .collect();

    let names = parameter_names(kind, data.labels());
    let retained = config.retained();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); names.len()];

    let fixed = !config.is_frozen(Block::FixedIntercepts);
    let effects = !config.is_frozen(Block::RandomEffects);
    let interweave = config.interweave && fixed && effects;

    for iter in 0..config.iterations {
        if fixed {
            kernels::update_fixed_intercepts(&mut state, &panel, &mut rng);
        }
        if effects {
            kernels::update_random_effects(&mut state, &panel, &mut rng)?;
        }
        if interweave {
            kernels::interweave_intercepts(&mut state, &mut rng)?;
        }
        if !config.is_frozen(Block::ObsSd) {
            kernels::update_obs_variance(&mut state, &panel, &mut rng)?;
        }
        match &mut state {
            ModelState::Total(_) => {
                let intercept = !config.is_frozen(Block::InterceptSd);
                let slope = !config.is_frozen(Block::SlopeSd);
                if intercept || slope {
                    kernels::update_re_sd_total(&mut state, intercept, slope, &mut rng)?;
                }
            }
            ModelState::Joint(s) => {
                let burning = iter < config.burnin;
                for (k, step) in steps.iter_mut().enumerate() {
                    if !active_mh[k] {
                        continue;
                    }
                    let accepted = mh::update_cov_param(s, k, step.step(), &mut rng)?;
                    if burning {
                        if config.adapt {
                            step.adapt(iter + 1, accepted);
                        }
                    } else {
                        step.record(accepted);
                    }
                }
            }
        }
        if iter >= config.burnin && (iter - config.burnin + 1).is_multiple_of(config.thin) {
            for (col, v) in columns.iter_mut().zip(state.flatten()) {
                col.push(v);
            }
        }
    }

    let mut acceptance = BTreeMap::new();
    let mut step_sizes = BTreeMap::new();
    for (k, step) in steps.iter().enumerate() {
        if active_mh[k] {
            acceptance.insert(COV_PARAMS[k].0.to_string(), step.acceptance_rate());
            step_sizes.insert(COV_PARAMS[k].0.to_string(), step.step());
        }
    }
    Ok(ChainDraws {
        chain: chain_index,
        draws: names.into_iter().zip(columns).collect(),
        acceptance,
        step_sizes,
    })
}

/// Run `config.chains` chains in parallel; output is ordered by chain index.
pub fn run_chains(data: &Dataset, config: &ChainConfig) -> Result<Vec<ChainDraws>> {
    let init = initial_state(data);
    run_chains_from(data, config, &init)
}

pub fn run_chains_from(
    data: &Dataset,
    config: &ChainConfig,
    init: &ModelState,
) -> Result<Vec<ChainDraws>> {
    config.validate()?;
    (0..config.chains)
        .into_par_iter()
        .map(|k| run_chain_from(data, config, k, init.clone()))
        .collect()
}

pub fn run_chains_sequential(data: &Dataset, config: &ChainConfig) -> Result<Vec<ChainDraws>> {
    config.validate()?;
    (0..config.chains)
        .map(|k| run_chain(data, config, k))
        .collect()
}
