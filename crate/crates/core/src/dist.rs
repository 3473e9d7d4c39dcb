//! Sampling primitives shared by the simulator and the Gibbs kernels.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Cov2;

/// Rejection attempts before the truncated inverse-gamma draw switches to
/// slice sampling.
pub const MAX_REJECTIONS: usize = 1000;

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// A univariate normal full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalConditional {
    pub mean: f64,
    pub var: f64,
}

impl NormalConditional {
    /// Combine a zero-mean prior of precision `prior_prec` with Gaussian
    /// evidence: `data_prec = sum(x^2)/sigma^2`, `data_lin = sum(x*r)/sigma^2`.
    pub fn from_evidence(prior_prec: f64, data_prec: f64, data_lin: f64) -> Self {
        let prec = prior_prec + data_prec;
        NormalConditional {
            mean: data_lin / prec,
            var: 1.0 / prec,
        }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mean + self.sd() * std_normal(rng)
    }
}

/// A bivariate normal full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConditional {
    pub mean: [f64; 2],
    pub cov: Cov2,
}

impl PairConditional {
    /// Combine the prior `N2(0, prior)` with independent Gaussian evidence on
    /// each coordinate, given as diagonal precision and linear terms.
    pub fn from_evidence(prior: &Cov2, data_prec: [f64; 2], data_lin: [f64; 2]) -> Result<Self> {
        let p0 = prior.inverse()?;
        let post_prec = Cov2 {
            var_a: p0.var_a + data_prec[0],
            cov: p0.cov,
            var_b: p0.var_b + data_prec[1],
        };
        let cov = post_prec.inverse()?;
        let mean = [
            cov.var_a * data_lin[0] + cov.cov * data_lin[1],
            cov.cov * data_lin[0] + cov.var_b * data_lin[1],
        ];
        Ok(PairConditional { mean, cov })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2]> {
        draw_pair(self.mean, &self.cov, rng)
    }
}

pub fn draw_pair<R: Rng + ?Sized>(mean: [f64; 2], cov: &Cov2, rng: &mut R) -> Result<[f64; 2]> {
    let (l11, l21, l22) = cov.cholesky()?;
    let z1 = std_normal(rng);
    let z2 = std_normal(rng);
    Ok([mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2])
}

/// Log density, up to a constant, of a standard deviation under a `U(0, upper)`
/// prior given `n` zero-mean Gaussian terms with sum of squares `ss`.
pub fn sd_log_density(sd: f64, n: usize, ss: f64, upper: f64) -> f64 {
    if !(sd > 0.0 && sd < upper) {
        return f64::NEG_INFINITY;
    }
    -(n as f64) * sd.ln() - ss / (2.0 * sd * sd)
}

/// Draw a standard deviation whose prior is `U(0, upper)` and whose
/// likelihood is `n` zero-mean normal terms with sum of squares `ss`.
///
/// The variance is then inverse-gamma with shape `(n-1)/2` and rate `ss/2`,
/// truncated to `(0, upper^2)`. Draws come from rejection against the
/// untruncated law; after `MAX_REJECTIONS` misses, or when the shape is not
/// positive, a slice sampler on the sd started at `current` is used instead.
pub fn draw_sd_uniform_prior<R: Rng + ?Sized>(
    parameter: &'static str,
    n: usize,
    ss: f64,
    upper: f64,
    current: f64,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Ok(upper * rng.random::<f64>());
    }
    if !(ss > 0.0 && ss.is_finite()) {
        return Err(Error::ImproperConditional {
            parameter,
            reason: format!("sum of squares {ss} over {n} terms"),
        });
    }
    let shape = 0.5 * (n as f64 - 1.0);
    if shape > 0.0 {
        let gamma = Gamma::new(shape, 2.0 / ss).map_err(|e| Error::ImproperConditional {
            parameter,
            reason: e.to_string(),
        })?;
        let upper_var = upper * upper;
        for _ in 0..MAX_REJECTIONS {
            let var = 1.0 / gamma.sample(rng);
            if var < upper_var {
                return Ok(var.sqrt());
            }
        }
        log::debug!("{parameter}: rejection limit reached, falling back to slice sampling");
    }
    let start = if current > 0.0 && current < upper {
        current
    } else {
        0.5 * upper
    };
    Ok(slice_sample(
        start,
        |s| sd_log_density(s, n, ss, upper),
        0.0,
        upper,
        0.25 * upper,
        rng,
    ))
}

/// Univariate slice sampler with stepping out and shrinkage on `(lo, hi)`.
/// `x0` must have finite log density.
pub fn slice_sample<R, F>(x0: f64, log_f: F, lo: f64, hi: f64, width: f64, rng: &mut R) -> f64
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    const MAX_STEPS: usize = 64;
    let level = log_f(x0) + rng.random::<f64>().ln();
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let mut steps = 0;
    while left > lo && log_f(left) > level && steps < MAX_STEPS {
        left -= width;
        steps += 1;
    }
    steps = 0;
    while right < hi && log_f(right) > level && steps < MAX_STEPS {
        right += width;
        steps += 1;
    }
    left = left.max(lo);
    right = right.min(hi);
    loop {
        let x = left + (right - left) * rng.random::<f64>();
        if log_f(x) > level {
            return x;
        }
        if x < x0 {
            left = x;
        } else {
            right = x;
        }
        if right - left <= f64::EPSILON * x0.abs().max(1e-300) {
            return x0;
        }
    }
}
