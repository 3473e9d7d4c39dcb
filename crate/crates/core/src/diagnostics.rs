//! Posterior summaries, split-R̂ and effective sample size.

use std::fmt::Write as _;
use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::sampler::{per_chain, ChainDraws};

pub const RHAT_THRESHOLD: f64 = 1.01;
pub const ESS_THRESHOLD: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub rows: Vec<ParamSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.name.as_str())
    }

    /// All rows as CSV: `parameter,mean,sd,q0.025,q0.975`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "mean", "sd", "q0.025", "q0.975"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.q025.to_string(),
                r.q975.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("writing summary", e))?;
        Ok(())
    }
}

/// p-quantile of sorted data, interpolating linearly between order
/// statistics with the p-quantile at 1-based position `1 + (n-1)p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator n-1.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn summarize_one(name: &str, draws: &[f64]) -> Result<ParamSummary> {
    if draws.len() < 2 {
        return Err(Error::Diagnostic(format!(
            "{name}: need at least 2 draws, got {}",
            draws.len()
        )));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diagnostic(format!("{name}: non-finite draw")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ParamSummary {
        name: name.to_string(),
        mean: mean(draws),
        sd: variance(draws).max(0.0).sqrt(),
        q025: quantile(&sorted, 0.025),
        q975: quantile(&sorted, 0.975),
    })
}

/// Summaries of pooled draws, in the order of the input columns.
pub fn summarize(pooled: &IndexMap<String, Vec<f64>>) -> Result<PosteriorSummary> {
    if pooled.is_empty() {
        return Err(Error::Diagnostic("no draws to summarize".into()));
    }
    let rows = pooled
        .iter()
        .map(|(name, d)| summarize_one(name, d))
        .collect::<Result<_>>()?;
    Ok(PosteriorSummary { rows })
}

fn check_chains(chains: &[&[f64]]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::Diagnostic(format!(
            "chains need at least 4 draws, shortest has {n}"
        )));
    }
    Ok(n)
}

/// `sqrt(((n-1)/n W + B/n) / W)` for a set of equal-length sequences.
fn rhat_of(seqs: &[&[f64]]) -> Result<f64> {
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let w = mean(&seqs.iter().map(|s| variance(s)).collect::<Vec<_>>());
    if w.is_nan() || w <= 0.0 {
        return Err(Error::Diagnostic(
            "zero within-chain variance, R-hat undefined".into(),
        ));
    }
    let b_over_n = variance(&means);
    Ok((((n - 1.0) / n * w + b_over_n) / w).sqrt())
}

/// Split-R̂: every chain is cut into two halves (the middle draw of an odd
/// chain is dropped) and the halves are treated as separate chains.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    let n = check_chains(chains)?;
    let h = n / 2;
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n];
        halves.push(&c[..h]);
        halves.push(&c[n - h..]);
    }
    rhat_of(&halves)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// Raw estimate exceeded the draw count with clearly negative lag-1
    /// autocorrelation, and is returned uncapped.
    pub anticorrelated: bool,
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size. Autocorrelations are combined across
/// chains and the sum is truncated with Geyer's initial monotone positive
/// sequence.
pub fn ess(chains: &[&[f64]]) -> Result<EssEstimate> {
    let n = check_chains(chains)?;
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let var_plus = (nf - 1.0) / nf * w + variance(&means);
    if !(w > 0.0 && var_plus > 0.0) {
        return Err(Error::Diagnostic("zero variance, ESS undefined".into()));
    }
    let rho = |lag: usize| -> f64 {
        let acov: f64 = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - acov) / var_plus
    };

    let rho1 = rho(1);
    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let even = if t == 0 { 1.0 } else { rho(t) };
        let odd = if t == 0 { rho1 } else { rho(t + 1) };
        let p = even + odd;
        if p <= 0.0 {
            break;
        }
        let p = p.min(prev);
        pair_sum += p;
        prev = p;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * pair_sum).max(1.0 / (m as f64 * nf).log10());
    let total = (m * n) as f64;
    let raw = total / tau;
    if raw > total {
        if rho1 < -2.0 / total.sqrt() {
            return Ok(EssEstimate {
                ess: raw,
                anticorrelated: true,
            });
        }
        return Ok(EssEstimate {
            ess: total,
            anticorrelated: false,
        });
    }
    Ok(EssEstimate {
        ess: raw,
        anticorrelated: false,
    })
}

/// Integrated autocorrelation time in draws: total draw count over ESS.
pub fn iat(chains: &[&[f64]]) -> Result<f64> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let e = ess(chains)?;
    Ok(total as f64 / e.ess)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub anticorrelated: bool,
}

impl ConvergenceRow {
    pub fn rhat_flag(&self) -> bool {
        self.rhat.is_nan() || self.rhat >= RHAT_THRESHOLD
    }

    pub fn ess_flag(&self) -> bool {
        self.ess.is_nan() || self.ess < ESS_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn get(&self, name: &str) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn healthy(&self) -> bool {
        self.rows.iter().all(|r| !r.rhat_flag() && !r.ess_flag())
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(|r| r.rhat_flag() || r.ess_flag())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "parameter",
            "rhat",
            "ess",
            "rhat_flag",
            "ess_flag",
            "anticorrelated",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.rhat.to_string(),
                r.ess.to_string(),
                r.rhat_flag().to_string(),
                r.ess_flag().to_string(),
                r.anticorrelated.to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io("writing convergence report", e))?;
        Ok(())
    }
}

/// Split-R̂ and ESS for each named parameter across chains.
pub fn convergence<S: AsRef<str>>(chains: &[ChainDraws], names: &[S]) -> Result<ConvergenceReport> {
    let rows = names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let seqs = per_chain(chains, name);
            if seqs.len() != chains.len() {
                return Err(Error::Diagnostic(format!("no draws for {name}")));
            }
            let e = ess(&seqs)?;
            Ok(ConvergenceRow {
                name: name.to_string(),
                rhat: split_rhat(&seqs)?,
                ess: e.ess,
                anticorrelated: e.anticorrelated,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport { rows })
}

/// Parameter names and display labels in table row order.
pub fn table_rows(kind: ModelKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        ModelKind::Total => &[
            ("beta0", "β₀"),
            ("sigma", "σ"),
            ("sigma0", "σ₀"),
            ("sigma1", "σ₁"),
        ],
        ModelKind::Joint => &[
            ("beta0_I", "β₀^(I)"),
            ("beta0_A", "β₀^(A)"),
            ("sigma", "σ"),
            ("sigma0_I", "σ₀^(I)"),
            ("sigma0_A", "σ₀^(A)"),
            ("sigma1_I", "σ₁^(I)"),
            ("sigma1_A", "σ₁^(A)"),
            ("rho0", "ρ₀"),
            ("rho1", "ρ₁"),
        ],
    }
}

fn table_title(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Total => "Total fishing",
        ModelKind::Joint => "Artisanal and industrial fishing",
    }
}

fn table_body(
    summary: &PosteriorSummary,
    kind: ModelKind,
) -> Result<Vec<(&'static str, [f64; 4])>> {
    table_rows(kind)
        .iter()
        .map(|&(name, label)| {
            let r = summary
                .get(name)
                .ok_or_else(|| Error::Diagnostic(format!("summary lacks {name}")))?;
            Ok((label, [r.mean, r.sd, r.q025, r.q975]))
        })
        .collect()
}

/// Aligned plain-text table of the top-level parameters.
pub fn render_table(summary: &PosteriorSummary, kind: ModelKind) -> Result<String> {
    let body = table_body(summary, kind)?;
    let label_w = body
        .iter()
        .map(|(l, _)| l.chars().count())
        .max()
        .unwrap_or(0)
        .max(9);
    let heads = ["mean", "sd", "q0.025", "q0.975"];
    let cells: Vec<[String; 4]> = body
        .iter()
        .map(|(_, v)| v.map(|x| format!("{x:.3}")))
        .collect();
    let col_w = cells
        .iter()
        .flat_map(|c| c.iter().map(String::len))
        .chain(heads.iter().map(|h| h.len()))
        .max()
        .unwrap_or(6);

    let mut out = String::new();
    let width = label_w + 4 * (col_w + 2);
    let _ = writeln!(out, "{}", table_title(kind));
    let _ = writeln!(out, "{}", "-".repeat(width));
    let _ = write!(out, "{}", " ".repeat(label_w));
    for h in heads {
        let _ = write!(out, "  {h:>col_w$}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(width));
    for ((label, _), row) in body.iter().zip(&cells) {
        let pad = label_w - label.chars().count();
        let _ = write!(out, "{label}{}", " ".repeat(pad));
        for c in row {
            let _ = write!(out, "  {c:>col_w$}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "{}", "-".repeat(width));
    Ok(out)
}

/// The same table as CSV: `parameter,label,mean,sd,q0.025,q0.975`.
pub fn render_table_csv(summary: &PosteriorSummary, kind: ModelKind) -> Result<String> {
    let body = table_body(summary, kind)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "label", "mean", "sd", "q0.025", "q0.975"])?;
    for (&(name, _), (label, v)) in table_rows(kind).iter().zip(&body) {
        w.write_record([
            name.to_string(),
            label.to_string(),
            v[0].to_string(),
            v[1].to_string(),
            v[2].to_string(),
            v[3].to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("rendering table", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| crate::dist::std_normal(&mut rng)).collect()
    }

    #[test]
    fn summary_examples() {
        let s = summarize_one("x", &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_relative_eq!(s.mean, 3.0);
        assert_relative_eq!(s.sd, 1.581139, epsilon = 1e-6);
        assert_relative_eq!(s.q025, 1.1, epsilon = 1e-12);
        assert_relative_eq!(s.q975, 4.9, epsilon = 1e-12);
        let c = summarize_one("c", &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((c.mean, c.sd, c.q025, c.q975), (2.0, 0.0, 2.0, 2.0));
        assert!(summarize_one("e", &[1.0]).is_err());
        assert!(summarize(&IndexMap::new()).is_err());
    }

    #[test]
    fn summary_keeps_column_order() {
        let mut m = IndexMap::new();
        m.insert("z".to_string(), vec![1.0, 2.0]);
        m.insert("a".to_string(), vec![1.0, 3.0]);
        let s = summarize(&m).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["z", "a"]);
    }

    #[test]
    fn rhat_example() {
        let c = [1.0, 2.0, 3.0, 4.0];
        let r = split_rhat(&[&c, &c]).unwrap();
        assert_relative_eq!(
            r,
            (1.583_333_333_333_333_3f64 / 0.5).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(r, 1.77951, epsilon = 1e-5);
    }

    #[test]
    fn rhat_errors() {
        let k = [2.0; 10];
        assert!(matches!(split_rhat(&[&k, &k]), Err(Error::Diagnostic(_))));
        let c = [1.0, 2.0, 3.0, 4.0];
        assert!(split_rhat(&[&c]).is_err());
        assert!(split_rhat(&[&c[..3], &c[..3]]).is_err());
    }

    #[test]
    fn rhat_iid_chains_near_one() {
        let chains: Vec<Vec<f64>> = (0..4).map(|k| normals(100 + k, 5000)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let r = split_rhat(&refs).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn ess_iid() {
        let a = normals(7, 500);
        let b = normals(8, 500);
        let e = ess(&[&a, &b]).unwrap();
        assert!((800.0..=1200.0).contains(&e.ess), "{}", e.ess);
    }

    #[test]
    fn ess_random_walk_is_small() {
        let walk = |seed| {
            let mut acc = 0.0;
            normals(seed, 1000)
                .into_iter()
                .map(|z| {
                    acc += z;
                    acc
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (walk(1), walk(2));
        let e = ess(&[&a, &b]).unwrap();
        assert!(e.ess < 100.0, "{}", e.ess);
    }

    #[test]
    fn ess_anticorrelated_is_flagged() {
        let alt: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .zip(normals(3, 1000))
            .map(|(s, z)| s + 0.1 * z)
            .collect();
        let alt2: Vec<f64> = alt.iter().map(|v| -v).collect();
        let e = ess(&[&alt, &alt2]).unwrap();
        assert!(e.anticorrelated);
        assert!(e.ess > 2000.0);
    }

    #[test]
    fn ess_constant_errors() {
        let k = [1.0; 50];
        assert!(ess(&[&k, &k]).is_err());
    }

    #[test]
    fn table_row_orders() {
        let names: Vec<_> = table_rows(ModelKind::Total).iter().map(|r| r.0).collect();
        assert_eq!(names, ["beta0", "sigma", "sigma0", "sigma1"]);
        let labels: Vec<_> = table_rows(ModelKind::Joint).iter().map(|r| r.1).collect();
        assert_eq!(
            labels,
            [
                "β₀^(I)",
                "β₀^(A)",
                "σ",
                "σ₀^(I)",
                "σ₀^(A)",
                "σ₁^(I)",
                "σ₁^(A)",
                "ρ₀",
                "ρ₁"
            ]
        );
    }

    #[test]
    fn table_rendering() {
        let rows = ["beta0", "sigma", "sigma0", "sigma1", "b0[x]"]
            .iter()
            .map(|n| ParamSummary {
                name: n.to_string(),
                mean: 1.0,
                sd: 0.5,
                q025: 0.1,
                q975: 1.9,
            })
            .collect();
        let s = PosteriorSummary { rows };
        let text = render_table(&s, ModelKind::Total).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[4].starts_with("β₀"));
        assert!(lines[7].starts_with("σ₁"));
        assert!(!text.contains("b0[x]"));
        let widths: Vec<usize> = lines[4..8].iter().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
        let csv = render_table_csv(&s, ModelKind::Total).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("beta0,β₀,1,0.5"));
        assert!(render_table(&s, ModelKind::Joint).is_err());
    }

    proptest! {
        #[test]
        fn summary_affine_equivariance(
            xs in prop::collection::vec(-100.0f64..100.0, 2..60),
            a in -5.0f64..5.0,
            b in -50.0f64..50.0,
        ) {
            prop_assume!(a.abs() > 1e-3);
            let s = summarize_one("x", &xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let t = summarize_one("y", &ys).unwrap();
            let tol = 1e-12 * (1.0 + s.mean.abs().max(s.sd) * a.abs() + b.abs()) * 100.0;
            prop_assert!((t.mean - (a * s.mean + b)).abs() < tol);
            prop_assert!((t.sd - a.abs() * s.sd).abs() < tol);
            let (lo, hi) = if a > 0.0 { (s.q025, s.q975) } else { (s.q975, s.q025) };
            prop_assert!((t.q025 - (a * lo + b)).abs() < tol);
            prop_assert!((t.q975 - (a * hi + b)).abs() < tol);
            prop_assert!(t.q025 <= t.q975 && t.sd >= 0.0);
        }

        #[test]
        fn rhat_affine_invariance(seed in 0u64..1000, a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let c1 = normals(seed, 40);
            let c2 = normals(seed + 1, 40);
            let r = split_rhat(&[&c1, &c2]).unwrap();
            let f = |c: &[f64]| c.iter().map(|x| -a * x + b).collect::<Vec<_>>();
            let (d1, d2) = (f(&c1), f(&c2));
            let r2 = split_rhat(&[&d1, &d2]).unwrap();
            prop_assert!((r - r2).abs() < 1e-10);
        }
    }
}
