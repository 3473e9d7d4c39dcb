//! Full-conditional updates for one Gibbs sweep.

use rand::Rng;

use crate::dist::{draw_sd_uniform_prior, NormalConditional, PairConditional};
use crate::error::{Error, Result};
use crate::model::{
    Cov2, Dataset, JointState, ModelState, Sector, TotalState, BETA_PRIOR_VAR, SD_UPPER,
};

/// Observations of one (country, sector) series.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub sum_t2: f64,
}

impl Series {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, y: f64) {
        self.t.push(t);
        self.y.push(y);
        self.sum_t2 += t * t;
    }

    /// `(sum r, sum t*r)` for residuals `r = y - intercept - slope * t`.
    fn residual_sums(&self, intercept: f64, slope: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut st = 0.0;
        for (&t, &y) in self.t.iter().zip(&self.y) {
            let r = y - intercept - slope * t;
            s += r;
            st += t * r;
        }
        (s, st)
    }

    fn sum_sq_resid(&self, intercept: f64, slope: f64) -> f64 {
        self.t
            .iter()
            .zip(&self.y)
            .map(|(&t, &y)| {
                let r = y - intercept - slope * t;
                r * r
            })
            .sum()
    }
}

/// The dataset regrouped by country and sector slot. The total model uses
/// slot 0 only; the joint model uses slot 0 for industrial and slot 1 for
/// artisanal landings.
#[derive(Debug, Clone)]
pub struct Panel {
    pub series: Vec<[Series; 2]>,
    pub n_obs: usize,
}

pub(crate) fn slot(sector: Sector) -> usize {
    match sector {
        Sector::Total | Sector::Industrial => 0,
        Sector::Artisanal => 1,
    }
}

impl Panel {
    pub fn new(data: &Dataset) -> Self {
        let mut series = vec![[Series::default(), Series::default()]; data.num_countries()];
        for o in data.observations() {
            series[o.country][slot(o.sector)].push(f64::from(o.t), o.y);
        }
        Panel {
            series,
            n_obs: data.len(),
        }
    }

    pub fn num_countries(&self) -> usize {
        self.series.len()
    }

    pub fn slot_len(&self, slot: usize) -> usize {
        self.series.iter().map(|s| s[slot].len()).sum()
    }
}

const BETA_PRIOR_PREC: f64 = 1.0 / BETA_PRIOR_VAR;

// ---- total model ----

pub fn total_intercept_conditional(s: &TotalState, panel: &Panel) -> NormalConditional {
    let inv_var = 1.0 / (s.params.sigma * s.params.sigma);
    let mut n = 0usize;
    let mut sum_r = 0.0;
    for (i, series) in panel.series.iter().enumerate() {
        let (r, _) = series[0].residual_sums(s.effects.b0[i], s.effects.b1[i]);
        sum_r += r;
        n += series[0].len();
    }
    NormalConditional::from_evidence(BETA_PRIOR_PREC, n as f64 * inv_var, sum_r * inv_var)
}

pub fn total_b0_conditional(s: &TotalState, panel: &Panel, i: usize) -> NormalConditional {
    let p = &s.params;
    let inv_var = 1.0 / (p.sigma * p.sigma);
    let series = &panel.series[i][0];
    let (r, _) = series.residual_sums(p.beta0, s.effects.b1[i]);
    NormalConditional::from_evidence(
        1.0 / (p.sigma0 * p.sigma0),
        series.len() as f64 * inv_var,
        r * inv_var,
    )
}

pub fn total_b1_conditional(s: &TotalState, panel: &Panel, i: usize) -> NormalConditional {
    let p = &s.params;
    let inv_var = 1.0 / (p.sigma * p.sigma);
    let series = &panel.series[i][0];
    let (_, rt) = series.residual_sums(p.beta0 + s.effects.b0[i], 0.0);
    NormalConditional::from_evidence(
        1.0 / (p.sigma1 * p.sigma1),
        series.sum_t2 * inv_var,
        rt * inv_var,
    )
}

fn total_rss(s: &TotalState, panel: &Panel) -> f64 {
    panel
        .series
        .iter()
        .enumerate()
        .map(|(i, series)| {
            series[0].sum_sq_resid(s.params.beta0 + s.effects.b0[i], s.effects.b1[i])
        })
        .sum()
}

// ---- joint model ----

pub fn joint_intercept_conditional(
    s: &JointState,
    panel: &Panel,
    slot: usize,
) -> NormalConditional {
    let inv_var = 1.0 / (s.params.sigma * s.params.sigma);
    let e = &s.effects;
    let (b0, b1) = if slot == 0 {
        (&e.b0_i, &e.b1_i)
    } else {
        (&e.b0_a, &e.b1_a)
    };
    let mut n = 0usize;
    let mut sum_r = 0.0;
    for (i, series) in panel.series.iter().enumerate() {
        let (r, _) = series[slot].residual_sums(b0[i], b1[i]);
        sum_r += r;
        n += series[slot].len();
    }
    NormalConditional::from_evidence(BETA_PRIOR_PREC, n as f64 * inv_var, sum_r * inv_var)
}

pub fn joint_intercept_pair_conditional(
    s: &JointState,
    panel: &Panel,
    i: usize,
    prior: &Cov2,
) -> Result<PairConditional> {
    let (p, e) = (&s.params, &s.effects);
    let inv_var = 1.0 / (p.sigma * p.sigma);
    let [ind, art] = &panel.series[i];
    let (ri, _) = ind.residual_sums(p.beta0_i, e.b1_i[i]);
    let (ra, _) = art.residual_sums(p.beta0_a, e.b1_a[i]);
    PairConditional::from_evidence(
        prior,
        [ind.len() as f64 * inv_var, art.len() as f64 * inv_var],
        [ri * inv_var, ra * inv_var],
    )
}

pub fn joint_slope_pair_conditional(
    s: &JointState,
    panel: &Panel,
    i: usize,
    prior: &Cov2,
) -> Result<PairConditional> {
    let (p, e) = (&s.params, &s.effects);
    let inv_var = 1.0 / (p.sigma * p.sigma);
    let [ind, art] = &panel.series[i];
    let (_, ri) = ind.residual_sums(p.beta0_i + e.b0_i[i], 0.0);
    let (_, ra) = art.residual_sums(p.beta0_a + e.b0_a[i], 0.0);
    PairConditional::from_evidence(
        prior,
        [ind.sum_t2 * inv_var, art.sum_t2 * inv_var],
        [ri * inv_var, ra * inv_var],
    )
}

fn joint_rss(s: &JointState, panel: &Panel) -> f64 {
    let (p, e) = (&s.params, &s.effects);
    panel
        .series
        .iter()
        .enumerate()
        .map(|(i, [ind, art])| {
            ind.sum_sq_resid(p.beta0_i + e.b0_i[i], e.b1_i[i])
                + art.sum_sq_resid(p.beta0_a + e.b0_a[i], e.b1_a[i])
        })
        .sum()
}

// ---- sweep steps on either model ----

/// Draw every fixed intercept from its conjugate normal full conditional.
pub fn update_fixed_intercepts<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) {
    match state {
        ModelState::Total(s) => {
            s.params.beta0 = total_intercept_conditional(s, panel).draw(rng);
        }
        ModelState::Joint(s) => {
            s.params.beta0_i = joint_intercept_conditional(s, panel, 0).draw(rng);
            s.params.beta0_a = joint_intercept_conditional(s, panel, 1).draw(rng);
        }
    }
}

/// Per country, draw `b0` then `b1` from their normal full conditionals.
pub fn update_random_effects_total<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) -> Result<()> {
    let ModelState::Total(s) = state else {
        return Err(Error::StateMismatch(
            "total-model update on a joint state".into(),
        ));
    };
    for i in 0..panel.num_countries() {
        s.effects.b0[i] = total_b0_conditional(s, panel, i).draw(rng);
        s.effects.b1[i] = total_b1_conditional(s, panel, i).draw(rng);
    }
    Ok(())
}

/// Per country, draw the intercept pair then the slope pair from their
/// bivariate normal full conditionals. A sector with no data contributes no
/// evidence and is informed through the correlation alone.
pub fn update_random_effects_joint<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) -> Result<()> {
    let ModelState::Joint(s) = state else {
        return Err(Error::StateMismatch(
            "joint-model update on a total state".into(),
        ));
    };
    let s0 = s.params.intercept_cov()?;
    let s1 = s.params.slope_cov()?;
    for i in 0..panel.num_countries() {
        let [a, b] = joint_intercept_pair_conditional(s, panel, i, &s0)?.draw(rng)?;
        s.effects.b0_i[i] = a;
        s.effects.b0_a[i] = b;
        let [a, b] = joint_slope_pair_conditional(s, panel, i, &s1)?.draw(rng)?;
        s.effects.b1_i[i] = a;
        s.effects.b1_a[i] = b;
    }
    Ok(())
}

pub fn update_random_effects<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) -> Result<()> {
    match state {
        ModelState::Total(_) => update_random_effects_total(state, panel, rng),
        ModelState::Joint(_) => update_random_effects_joint(state, panel, rng),
    }
}

/// Gibbs step on the fixed intercepts in the centred parameterisation
/// `mu_i = beta0 + b0_i`: draw `beta0 | mu` and shift every `b0_i` so that
/// `mu` is unchanged. The map has unit Jacobian, so the joint posterior is
/// invariant. Data-dominated intercepts otherwise pin `beta0` to its
/// non-centred conditional, whose sd is about `sigma / sqrt(N)`.
pub fn interweave_intercepts<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<()> {
    match state {
        ModelState::Total(s) => {
            let c = s.effects.b0.len() as f64;
            let inv_var = 1.0 / (s.params.sigma0 * s.params.sigma0);
            let beta = s.params.beta0;
            let sum_mu: f64 = s.effects.b0.iter().map(|b| beta + b).sum();
            let next =
                NormalConditional::from_evidence(BETA_PRIOR_PREC, c * inv_var, sum_mu * inv_var)
                    .draw(rng);
            for b in &mut s.effects.b0 {
                *b += beta - next;
            }
            s.params.beta0 = next;
        }
        ModelState::Joint(s) => {
            let c = s.effects.b0_i.len() as f64;
            let prec = s.params.intercept_cov()?.inverse()?;
            let (bi, ba) = (s.params.beta0_i, s.params.beta0_a);
            let mut sum_mu = [0.0, 0.0];
            for i in 0..s.effects.b0_i.len() {
                sum_mu[0] += bi + s.effects.b0_i[i];
                sum_mu[1] += ba + s.effects.b0_a[i];
            }
            let post_prec = Cov2 {
                var_a: BETA_PRIOR_PREC + c * prec.var_a,
                cov: c * prec.cov,
                var_b: BETA_PRIOR_PREC + c * prec.var_b,
            };
            let cov = post_prec.inverse()?;
            let lin = [
                prec.var_a * sum_mu[0] + prec.cov * sum_mu[1],
                prec.cov * sum_mu[0] + prec.var_b * sum_mu[1],
            ];
            let mean = [
                cov.var_a * lin[0] + cov.cov * lin[1],
                cov.cov * lin[0] + cov.var_b * lin[1],
            ];
            let [ni, na] = crate::dist::draw_pair(mean, &cov, rng)?;
            for i in 0..s.effects.b0_i.len() {
                s.effects.b0_i[i] += bi - ni;
                s.effects.b0_a[i] += ba - na;
            }
            s.params.beta0_i = ni;
            s.params.beta0_a = na;
        }
    }
    Ok(())
}

/// Draw the shared observation sd from its truncated inverse-gamma law.
pub fn update_obs_variance<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) -> Result<()> {
    match state {
        ModelState::Total(s) => {
            let ss = total_rss(s, panel);
            s.params.sigma =
                draw_sd_uniform_prior("sigma", panel.n_obs, ss, SD_UPPER, s.params.sigma, rng)?;
        }
        ModelState::Joint(s) => {
            let ss = joint_rss(s, panel);
            s.params.sigma =
                draw_sd_uniform_prior("sigma", panel.n_obs, ss, SD_UPPER, s.params.sigma, rng)?;
        }
    }
    Ok(())
}

/// Draw `sigma0` and/or `sigma1` of the total model given the effects.
pub fn update_re_sd_total<R: Rng + ?Sized>(
    state: &mut ModelState,
    intercept: bool,
    slope: bool,
    rng: &mut R,
) -> Result<()> {
    let ModelState::Total(s) = state else {
        return Err(Error::StateMismatch(
            "total-model update on a joint state".into(),
        ));
    };
    let c = s.effects.b0.len();
    if intercept {
        let ss: f64 = s.effects.b0.iter().map(|b| b * b).sum();
        s.params.sigma0 = draw_sd_uniform_prior("sigma0", c, ss, SD_UPPER, s.params.sigma0, rng)?;
    }
    if slope {
        let ss: f64 = s.effects.b1.iter().map(|b| b * b).sum();
        s.params.sigma1 = draw_sd_uniform_prior("sigma1", c, ss, SD_UPPER, s.params.sigma1, rng)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        JointEffects, JointParams, ModelKind, Observation, TotalEffects, TotalParams,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(kind: ModelKind, c: usize, rows: &[(usize, u32, Sector, f64)]) -> Dataset {
        let obs = rows
            .iter()
            .map(|&(country, t, sector, y)| Observation {
                country,
                t,
                sector,
                y,
                tonnes: y.exp(),
            })
            .collect();
        Dataset::new(
            kind,
            (0..c).map(|i| format!("c{i}")).collect(),
            1970,
            45,
            obs,
        )
        .unwrap()
    }

    fn total(beta0: f64, sigma: f64, sigma0: f64, sigma1: f64, c: usize) -> TotalState {
        TotalState {
            params: TotalParams {
                beta0,
                sigma,
                sigma0,
                sigma1,
            },
            effects: TotalEffects::zeros(c),
        }
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (
            m,
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
        )
    }

    #[test]
    fn fixed_intercept_examples() {
        let d = dataset(ModelKind::Total, 1, &[(0, 0, Sector::Total, 10.0)]);
        let c = total_intercept_conditional(&total(0.0, 1.0, 1.0, 1.0, 1), &Panel::new(&d));
        assert_relative_eq!(c.mean, 9.90099, epsilon = 1e-5);
        assert_relative_eq!(c.var, 0.990099, epsilon = 1e-6);

        let d = dataset(
            ModelKind::Total,
            1,
            &[(0, 0, Sector::Total, 4.0), (0, 1, Sector::Total, 6.0)],
        );
        let c = total_intercept_conditional(&total(0.0, 1.0, 1.0, 1.0, 1), &Panel::new(&d));
        assert_relative_eq!(c.mean, 10.0 / 2.01, epsilon = 1e-12);
        assert_relative_eq!(c.mean, 4.97512, epsilon = 1e-5);

        // a sector with no rows falls back to the prior
        let d = dataset(ModelKind::Joint, 1, &[(0, 0, Sector::Industrial, 4.0)]);
        let s = JointState {
            params: JointParams {
                beta0_i: 0.0,
                beta0_a: 0.0,
                sigma: 1.0,
                sigma0_i: 1.0,
                sigma0_a: 1.0,
                sigma1_i: 1.0,
                sigma1_a: 1.0,
                rho0: 0.0,
                rho1: 0.0,
            },
            effects: JointEffects::zeros(1),
        };
        let c = joint_intercept_conditional(&s, &Panel::new(&d), 1);
        assert_eq!(c.mean, 0.0);
        assert_relative_eq!(c.var, 100.0);
    }

    #[test]
    fn fixed_intercept_draws_match_conditional() {
        let d = dataset(
            ModelKind::Total,
            1,
            &[(0, 0, Sector::Total, 4.0), (0, 1, Sector::Total, 6.0)],
        );
        let panel = Panel::new(&d);
        let mut state = ModelState::Total(total(0.0, 1.0, 1.0, 1.0, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                update_fixed_intercepts(&mut state, &panel, &mut rng);
                let ModelState::Total(s) = &state else {
                    unreachable!()
                };
                s.params.beta0
            })
            .collect();
        let (m, sd) = moments(&draws);
        let se = (1.0 / 2.01f64).sqrt() / 100.0;
        assert!((m - 4.97512).abs() < 3.0 * se);
        assert!((sd - (1.0 / 2.01f64).sqrt()).abs() < 3.0 * se);
    }

    #[test]
    fn random_effect_examples() {
        let d = dataset(ModelKind::Total, 2, &[(0, 0, Sector::Total, 2.0)]);
        let panel = Panel::new(&d);
        let s = total(0.0, 1.0, 1.0, 1.0, 2);
        let c = total_b0_conditional(&s, &panel, 0);
        assert_relative_eq!(c.mean, 1.0);
        assert_relative_eq!(c.var, 0.5);
        // no observations: prior
        let s2 = total(0.0, 1.0, 3.0, 1.0, 2);
        let c = total_b0_conditional(&s2, &panel, 1);
        assert_eq!(c.mean, 0.0);
        assert_relative_eq!(c.var, 9.0);
        // observations only at t = 0 carry no slope information
        let s3 = total(0.0, 1.0, 1.0, 0.2, 2);
        let c = total_b1_conditional(&s3, &panel, 0);
        assert_eq!(c.mean, 0.0);
        assert_relative_eq!(c.var, 0.04);
    }

    fn joint_state(rho0: f64, c: usize) -> JointState {
        JointState {
            params: JointParams {
                beta0_i: 0.0,
                beta0_a: 0.0,
                sigma: 1.0,
                sigma0_i: 1.5,
                sigma0_a: 0.5,
                sigma1_i: 1.0,
                sigma1_a: 1.0,
                rho0,
                rho1: 0.0,
            },
            effects: JointEffects::zeros(c),
        }
    }

    #[test]
    fn joint_pair_factorises_without_correlation() {
        let d = dataset(
            ModelKind::Joint,
            1,
            &[
                (0, 0, Sector::Industrial, 2.0),
                (0, 1, Sector::Industrial, 3.0),
                (0, 0, Sector::Artisanal, -1.0),
            ],
        );
        let panel = Panel::new(&d);
        let s = joint_state(0.0, 1);
        let pair =
            joint_intercept_pair_conditional(&s, &panel, 0, &s.params.intercept_cov().unwrap())
                .unwrap();
        let ind = NormalConditional::from_evidence(1.0 / 2.25, 2.0, 5.0);
        let art = NormalConditional::from_evidence(4.0, 1.0, -1.0);
        assert_relative_eq!(pair.mean[0], ind.mean, epsilon = 1e-12);
        assert_relative_eq!(pair.mean[1], art.mean, epsilon = 1e-12);
        assert_relative_eq!(pair.cov.var_a, ind.var, epsilon = 1e-12);
        assert_relative_eq!(pair.cov.var_b, art.var, epsilon = 1e-12);
        assert_relative_eq!(pair.cov.cov, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn missing_sector_follows_correlation() {
        // industrial only, rho0 = 0.9: the artisanal conditional mean given
        // the industrial draw is 0.9 * (sd_A / sd_I) * industrial
        let d = dataset(
            ModelKind::Joint,
            1,
            &[
                (0, 0, Sector::Industrial, 2.0),
                (0, 1, Sector::Industrial, 2.5),
            ],
        );
        let panel = Panel::new(&d);
        let s = joint_state(0.9, 1);
        let pair =
            joint_intercept_pair_conditional(&s, &panel, 0, &s.params.intercept_cov().unwrap())
                .unwrap();
        let slope = pair.cov.cov / pair.cov.var_a;
        assert_relative_eq!(slope, 0.9 * 0.5 / 1.5, epsilon = 1e-12);
        assert_relative_eq!(pair.mean[1], slope * pair.mean[0], epsilon = 1e-12);
        // residual variance of the artisanal side equals its prior
        // conditional variance sd_A^2 (1 - rho^2)
        let resid = pair.cov.var_b - pair.cov.cov * pair.cov.cov / pair.cov.var_a;
        assert_relative_eq!(resid, 0.25 * (1.0 - 0.81), epsilon = 1e-12);

        // no data at all: the conditional is the prior
        let empty = dataset(ModelKind::Joint, 2, &[(0, 0, Sector::Industrial, 1.0)]);
        let panel = Panel::new(&empty);
        let s = joint_state(0.9, 2);
        let prior = s.params.intercept_cov().unwrap();
        let pair = joint_intercept_pair_conditional(&s, &panel, 1, &prior).unwrap();
        assert_eq!(pair.mean, [0.0, 0.0]);
        assert_relative_eq!(pair.cov.var_a, prior.var_a, epsilon = 1e-12);
        assert_relative_eq!(pair.cov.cov, prior.cov, epsilon = 1e-12);
    }

    #[test]
    fn interweaving_preserves_country_means() {
        let mut state = ModelState::Total(TotalState {
            params: TotalParams {
                beta0: 2.0,
                sigma: 1.0,
                sigma0: 3.0,
                sigma1: 1.0,
            },
            effects: TotalEffects {
                b0: vec![1.0, -0.5, 4.0],
                b1: vec![0.0; 3],
            },
        });
        let before: Vec<f64> = match &state {
            ModelState::Total(s) => s.effects.b0.iter().map(|b| b + s.params.beta0).collect(),
            _ => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        interweave_intercepts(&mut state, &mut rng).unwrap();
        let ModelState::Total(s) = &state else {
            unreachable!()
        };
        assert_ne!(s.params.beta0, 2.0);
        for (b, mu) in s.effects.b0.iter().zip(before) {
            assert_relative_eq!(b + s.params.beta0, mu, epsilon = 1e-12);
        }
    }

    #[test]
    fn re_sd_degenerate_effects() {
        let mut state = ModelState::Total(total(0.0, 1.0, 1.0, 1.0, 12));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            update_re_sd_total(&mut state, true, false, &mut rng),
            Err(Error::ImproperConditional { .. })
        ));
    }

    #[test]
    fn obs_variance_rejects_exact_fit() {
        let d = dataset(ModelKind::Total, 1, &[(0, 0, Sector::Total, 3.0)]);
        let panel = Panel::new(&d);
        let mut state = ModelState::Total(total(3.0, 1.0, 1.0, 1.0, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(update_obs_variance(&mut state, &panel, &mut rng).is_err());
    }
}
