//! Landings CSV ingestion and the generative simulator.
//!
//! The input schema is `country,year,sector,tonnes`, one row per
//! (country, year, sector). Landings enter the models on the log scale with
//! `t = year - span.start`. Zero-tonnage rows are dropped with a warning.
//! The total model uses `total` rows when the file has any; otherwise the
//! industrial and artisanal tonnages of each (country, year) are summed
//! before taking the log.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{draw_pair, std_normal};
use crate::error::{Error, Result};
use crate::model::{
    CountryEffects, Dataset, JointEffects, ModelKind, Observation, Params, Sector, TotalEffects,
};

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: i32,
    pub end: i32,
}

impl Span {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidConfig(format!(
                "empty year span {start}-{end}"
            )));
        }
        Ok(Span { start, end })
    }

    pub fn horizon(&self) -> u32 {
        (self.end - self.start + 1) as u32
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }
}

impl Default for Span {
    fn default() -> Self {
        Span {
            start: 1970,
            end: 2014,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingsRow {
    pub country: String,
    pub year: i32,
    pub sector: Sector,
    pub tonnes: f64,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    country: String,
    year: String,
    sector: String,
    tonnes: String,
}

/// Parse landings rows, reporting the line of the first malformed one.
pub fn read_rows<R: Read>(reader: R, origin: &Path) -> Result<Vec<(u64, LandingsRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let raw: RawRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let year: i32 = raw
            .year
            .parse()
            .map_err(|_| parse_err(line, format!("bad year {:?}", raw.year)))?;
        let sector: Sector = raw
            .sector
            .parse()
            .map_err(|_| parse_err(line, format!("unknown sector {:?}", raw.sector)))?;
        let tonnes: f64 = raw
            .tonnes
            .parse()
            .map_err(|_| parse_err(line, format!("bad tonnage {:?}", raw.tonnes)))?;
        if !(tonnes >= 0.0 && tonnes.is_finite()) {
            return Err(parse_err(
                line,
                format!("tonnage must be finite and >= 0, got {tonnes}"),
            ));
        }
        if raw.country.is_empty() {
            return Err(parse_err(line, "empty country".into()));
        }
        rows.push((
            line,
            LandingsRow {
                country: raw.country,
                year,
                sector,
                tonnes,
            },
        ));
    }
    Ok(rows)
}

/// Build a dataset for `kind` from parsed rows. `line` is only used in
/// error messages.
pub fn dataset_from_rows(
    rows: &[(u64, LandingsRow)],
    kind: ModelKind,
    span: Span,
) -> Result<Dataset> {
    let mut seen = BTreeSet::new();
    for (line, row) in rows {
        if !span.contains(row.year) {
            return Err(Error::YearOutOfSpan {
                line: *line,
                year: row.year,
                start: span.start,
                end: span.end,
            });
        }
        if !seen.insert((row.country.as_str(), row.year, row.sector)) {
            return Err(Error::DuplicateRow {
                country: row.country.clone(),
                year: row.year,
                sector: row.sector,
            });
        }
    }

    let mut kept = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.tonnes == 0.0 {
            log::warn!(
                "line {line}: dropping zero landings for ({}, {}, {})",
                row.country,
                row.year,
                row.sector
            );
        } else {
            kept.push(row);
        }
    }

    let cells: Vec<(String, i32, Sector, f64)> = match kind {
        ModelKind::Joint => kept
            .iter()
            .filter(|r| r.sector != Sector::Total)
            .map(|r| (r.country.clone(), r.year, r.sector, r.tonnes))
            .collect(),
        ModelKind::Total if kept.iter().any(|r| r.sector == Sector::Total) => kept
            .iter()
            .filter(|r| r.sector == Sector::Total)
            .map(|r| (r.country.clone(), r.year, r.sector, r.tonnes))
            .collect(),
        ModelKind::Total => {
            let mut sums: Vec<(String, i32, Sector, f64)> = Vec::new();
            let mut index: HashMap<(&str, i32), usize> = HashMap::new();
            for r in &kept {
                match index.get(&(r.country.as_str(), r.year)) {
                    Some(&k) => sums[k].3 += r.tonnes,
                    None => {
                        index.insert((r.country.as_str(), r.year), sums.len());
                        sums.push((r.country.clone(), r.year, Sector::Total, r.tonnes));
                    }
                }
            }
            sums
        }
    };
    if cells.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no usable rows for the {kind} model"
        )));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut country_index: HashMap<String, usize> = HashMap::new();
    let mut observations = Vec::with_capacity(cells.len());
    for (country, year, sector, tonnes) in cells {
        let c = *country_index.entry(country.clone()).or_insert_with(|| {
            labels.push(country);
            labels.len() - 1
        });
        observations.push(Observation {
            country: c,
            t: (year - span.start) as u32,
            sector,
            y: tonnes.ln(),
            tonnes,
        });
    }
    Dataset::new(kind, labels, span.start, span.horizon(), observations)
}

pub fn load_landings(path: &Path, kind: ModelKind, span: Span) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let rows = read_rows(file, path)?;
    dataset_from_rows(&rows, kind, span)
}

/// Rows of a dataset in the input schema.
pub fn dataset_rows(data: &Dataset) -> Vec<LandingsRow> {
    data.observations()
        .iter()
        .map(|o| LandingsRow {
            country: data.labels()[o.country].clone(),
            year: data.span_start() + o.t as i32,
            sector: o.sector,
            tonnes: o.tonnes,
        })
        .collect()
}

pub fn write_rows<W: Write>(writer: W, rows: &[LandingsRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()
        .map_err(|e| Error::io("flushing landings CSV", e))?;
    Ok(())
}

pub fn write_landings(path: &Path, data: &Dataset) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_rows(file, &dataset_rows(data))
}

/// Inputs of the generative simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub params: Params,
    pub labels: Vec<String>,
    pub span_start: i32,
    pub horizon: u32,
    /// Sectors observed per country (joint model only; the total model
    /// always observes `total`).
    pub availability: Vec<BTreeSet<Sector>>,
}

impl SimulationSpec {
    /// `countries` countries named `C01`, `C02`, ..., every one observed in
    /// every sector of the model.
    pub fn balanced(params: Params, countries: usize, span: Span) -> Self {
        let sectors: BTreeSet<Sector> = match params.kind() {
            ModelKind::Total => [Sector::Total].into(),
            ModelKind::Joint => [Sector::Industrial, Sector::Artisanal].into(),
        };
        SimulationSpec {
            params,
            labels: (1..=countries).map(|i| format!("C{i:02}")).collect(),
            span_start: span.start,
            horizon: span.horizon(),
            availability: vec![sectors; countries],
        }
    }

    pub fn span(&self) -> Span {
        Span {
            start: self.span_start,
            end: self.span_start + self.horizon as i32 - 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: Dataset,
    pub effects: CountryEffects,
    pub rows: Vec<LandingsRow>,
}

/// Draw country effects and then observations from the model.
pub fn simulate_dataset(spec: &SimulationSpec, seed: u64) -> Result<Simulated> {
    spec.params.validate_generative()?;
    let c = spec.labels.len();
    if c == 0 || spec.horizon == 0 {
        return Err(Error::InvalidParams(
            "need at least one country and one year".into(),
        ));
    }
    if spec.availability.len() != c {
        return Err(Error::InvalidParams(format!(
            "availability lists {} countries, labels {c}",
            spec.availability.len()
        )));
    }
    let kind = spec.params.kind();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut push = |country: &str, t: u32, sector: Sector, y: f64| {
        rows.push(LandingsRow {
            country: country.to_string(),
            year: spec.span_start + t as i32,
            sector,
            tonnes: y.exp(),
        });
    };

    let effects = match spec.params {
        Params::Total(p) => {
            let mut e = TotalEffects::zeros(c);
            for i in 0..c {
                e.b0[i] = p.sigma0 * std_normal(&mut rng);
                e.b1[i] = p.sigma1 * std_normal(&mut rng);
            }
            for (i, label) in spec.labels.iter().enumerate() {
                for t in 0..spec.horizon {
                    let mean = p.beta0 + e.b0[i] + e.b1[i] * f64::from(t);
                    push(
                        label,
                        t,
                        Sector::Total,
                        mean + p.sigma * std_normal(&mut rng),
                    );
                }
            }
            CountryEffects::Total(e)
        }
        Params::Joint(p) => {
            let s0 = p.intercept_cov()?;
            let s1 = p.slope_cov()?;
            let mut e = JointEffects::zeros(c);
            for i in 0..c {
                let [a, b] = draw_pair([0.0, 0.0], &s0, &mut rng)?;
                e.b0_i[i] = a;
                e.b0_a[i] = b;
                let [a, b] = draw_pair([0.0, 0.0], &s1, &mut rng)?;
                e.b1_i[i] = a;
                e.b1_a[i] = b;
            }
            for (i, label) in spec.labels.iter().enumerate() {
                for t in 0..spec.horizon {
                    let tf = f64::from(t);
                    if spec.availability[i].contains(&Sector::Industrial) {
                        let mean = p.beta0_i + e.b0_i[i] + e.b1_i[i] * tf;
                        push(
                            label,
                            t,
                            Sector::Industrial,
                            mean + p.sigma * std_normal(&mut rng),
                        );
                    }
                    if spec.availability[i].contains(&Sector::Artisanal) {
                        let mean = p.beta0_a + e.b0_a[i] + e.b1_a[i] * tf;
                        push(
                            label,
                            t,
                            Sector::Artisanal,
                            mean + p.sigma * std_normal(&mut rng),
                        );
                    }
                }
            }
            CountryEffects::Joint(e)
        }
    };

    for row in &rows {
        if !(row.tonnes > 0.0 && row.tonnes.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "simulated log landings for {} out of floating-point range",
                row.country
            )));
        }
    }
    let numbered: Vec<(u64, LandingsRow)> = rows
        .iter()
        .cloned()
        .enumerate()
        .map(|(k, r)| (k as u64 + 2, r))
        .collect();
    let mut dataset = dataset_from_rows(&numbered, kind, spec.span())?;
    // countries without rows still belong to the panel
    if dataset.num_countries() != c {
        dataset = reindex(&dataset, &spec.labels)?;
    }
    let effects = align_effects(effects, &spec.labels, dataset.labels());
    Ok(Simulated {
        dataset,
        effects,
        rows,
    })
}

fn reindex(data: &Dataset, labels: &[String]) -> Result<Dataset> {
    let pos: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let observations = data
        .observations()
        .iter()
        .map(|o| Observation {
            country: pos[data.labels()[o.country].as_str()],
            ..*o
        })
        .collect();
    Dataset::new(
        data.kind(),
        labels.to_vec(),
        data.span_start(),
        data.horizon(),
        observations,
    )
}

fn align_effects(effects: CountryEffects, from: &[String], to: &[String]) -> CountryEffects {
    if from == to {
        return effects;
    }
    let pos: HashMap<&str, usize> = from
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let pick = |col: &[f64]| -> Vec<f64> { to.iter().map(|l| col[pos[l.as_str()]]).collect() };
    match effects {
        CountryEffects::Total(e) => CountryEffects::Total(TotalEffects {
            b0: pick(&e.b0),
            b1: pick(&e.b1),
        }),
        CountryEffects::Joint(e) => CountryEffects::Joint(JointEffects {
            b0_i: pick(&e.b0_i),
            b0_a: pick(&e.b0_a),
            b1_i: pick(&e.b1_i),
            b1_a: pick(&e.b1_a),
        }),
    }
}

/// Ground truth written next to a simulated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub seed: u64,
    pub span: Span,
    pub params: Params,
    pub labels: Vec<String>,
    /// Effect columns keyed by stem (`b0`, `b1_I`, ...), in label order.
    pub effects: BTreeMap<String, Vec<f64>>,
}

impl TruthSidecar {
    pub fn new(spec: &SimulationSpec, sim: &Simulated, seed: u64) -> Self {
        let effects = crate::model::effect_stems(spec.params.kind())
            .iter()
            .zip(sim.effects.columns())
            .map(|(stem, col)| (stem.to_string(), col.to_vec()))
            .collect();
        TruthSidecar {
            seed,
            span: spec.span(),
            params: spec.params,
            labels: sim.dataset.labels().to_vec(),
            effects,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Sidecar path for a simulated CSV: `x.csv` -> `x.truth.json`.
pub fn truth_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("truth.json")
}
