//! ISE/MISE evaluation and the Monte-Carlo scenario runner.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;

use crate::distributions::{ErrorFamily, ErrorModel, TrueDistribution};
use crate::error::{PmleError, Result};
use crate::io::write_atomic;
use crate::pipeline::{fit, DensityEstimate, FitConfig};
use crate::rng;

/// Evaluation points of the rectangle rule.
pub const ISE_POINTS: usize = 1000;

/// One cell of the simulation grid: `y = x + C e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: TrueDistribution,
    pub error: ErrorFamily,
    pub c: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(PmleError::InvalidArgument(format!("error scale C = {} must be positive", self.c)));
        }
        if self.n < 2 {
            return Err(PmleError::InvalidArgument(format!("sample size {} is too small", self.n)));
        }
        if self.replicates == 0 {
            return Err(PmleError::InvalidArgument("at least one replicate is required".into()));
        }
        Ok(())
    }

    /// Signal-to-noise ratio `1/C²` for unit-variance truths.
    pub fn snr(&self) -> Option<f64> {
        (self.truth != TrueDistribution::Cauchy).then(|| 1.0 / (self.c * self.c))
    }

    pub fn error_model(&self) -> ErrorModel {
        self.error.scaled(self.c)
    }

    fn order(&self, other: &Self) -> Ordering {
        self.truth
            .name()
            .cmp(other.truth.name())
            .then_with(|| self.error.name().cmp(other.error.name()))
            .then_with(|| self.n.cmp(&other.n))
            .then_with(|| self.c.total_cmp(&other.c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    /// ISE of every successful replicate, in replicate order.
    pub ise: Vec<f64>,
    pub failures: usize,
    pub mise: f64,
    /// `sd(ISE)/√k` over the `k` successful replicates; zero when `k = 1`.
    pub se: f64,
}

impl ScenarioResult {
    fn from_ise(scenario: Scenario, ise: Vec<f64>, failures: usize) -> Self {
        let k = ise.len() as f64;
        let mise = if ise.is_empty() { f64::NAN } else { ise.iter().sum::<f64>() / k };
        let se = if ise.len() > 1 {
            let var = ise.iter().map(|v| (v - mise).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        Self {
            scenario,
            ise,
            failures,
            mise,
            se,
        }
    }

    /// More than 10% of replicates failed.
    pub fn flagged(&self) -> bool {
        self.failures * 10 > self.scenario.replicates
    }
}

/// Rectangle-rule ISE of `estimate` against `truth` on `points` midpoints of
/// `interval`.
pub fn ise_on<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(estimate: F, truth: G, interval: (f64, f64), points: usize) -> f64 {
    let (a, b) = interval;
    let h = (b - a) / points as f64;
    (0..points)
        .map(|m| {
            let x = a + (m as f64 + 0.5) * h;
            (estimate(x) - truth(x)).powi(2)
        })
        .sum::<f64>()
        * h
}

/// The interval covering the truth's 0.01%-99.99% range and the estimate's support.
pub fn ise_interval(support: (f64, f64), truth: TrueDistribution) -> (f64, f64) {
    let (lo, hi) = truth.central_range();
    (lo.min(support.0), hi.max(support.1))
}

pub fn ise(est: &DensityEstimate, truth: TrueDistribution) -> f64 {
    ise_on(|x| est.eval(x), |x| truth.pdf(x), ise_interval(est.support, truth), ISE_POINTS)
}

/// Draws the data and pure-error sample of one replicate.
pub fn replicate_data(s: &Scenario, replicate: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = replicate as u64;
    let x = s.truth.sample(s.n, &mut rng::child(s.seed, &[r, 0]))?;
    let model = s.error_model();
    let e = model.sample(s.n, &mut rng::child(s.seed, &[r, 1]))?;
    let pure = model.sample(s.n, &mut rng::child(s.seed, &[r, 2]))?;
    let y = x.iter().zip(&e).map(|(a, b)| a + b).collect();
    Ok((y, pure))
}

fn run_replicate(s: &Scenario, config: &FitConfig, replicate: usize) -> Result<f64> {
    let (y, pure) = replicate_data(s, replicate)?;
    let error = ErrorModel::empirical(&pure)?;
    let cfg = FitConfig {
        seed: rng::child_seed(s.seed, &[replicate as u64, 3]),
        ..config.clone()
    };
    let est = fit(&y, &error, &cfg)?;
    Ok(ise(&est, s.truth))
}

/// Runs every replicate: data `y = x + C e`, an independent pure-error sample
/// of the same size as the error model, a fit, and its ISE.
pub fn run_scenario(s: &Scenario, config: &FitConfig) -> Result<ScenarioResult> {
    s.validate()?;
    config.validate()?;
    let outcomes: Vec<Result<f64>> = (0..s.replicates)
        .into_par_iter()
        .map(|r| run_replicate(s, config, r))
        .collect();
    let mut ise = Vec::with_capacity(s.replicates);
    let mut failures = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => ise.push(v),
            Err(e) => {
                warn!("{} / {} n={} C={}: replicate {r} failed: {e}", s.truth.name(), s.error.name(), s.n, s.c);
                failures += 1;
            }
        }
    }
    let res = ScenarioResult::from_ise(s.clone(), ise, failures);
    info!(
        "{} / {} n={} C={}: MISE {:.5} (se {:.5}, {} failures)",
        s.truth.name(),
        s.error.name(),
        s.n,
        s.c,
        res.mise,
        res.se,
        res.failures
    );
    if res.flagged() {
        warn!("more than 10% of replicates failed for {} / {} n={} C={}", s.truth.name(), s.error.name(), s.n, s.c);
    }
    Ok(res)
}

fn sorted(results: &[ScenarioResult]) -> Vec<&ScenarioResult> {
    let mut rows: Vec<&ScenarioResult> = results.iter().collect();
    rows.sort_by(|a, b| a.scenario.order(&b.scenario));
    rows
}

pub const TABLE_HEADER: &str = "truth,error,n,C,mise,se,failures";

/// The MISE table as CSV text, rows ordered by truth, error, n and C.
pub fn format_table(results: &[ScenarioResult]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in sorted(results) {
        let s = &r.scenario;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.truth.name(),
            s.error.name(),
            s.n,
            s.c,
            r.mise,
            r.se,
            r.failures
        );
    }
    out
}

pub fn emit_table(results: &[ScenarioResult], path: &Path) -> Result<()> {
    write_atomic(path, format_table(results).as_bytes())
}

/// Per-replicate ISE values, one row per successful replicate.
pub fn format_ise(results: &[ScenarioResult]) -> String {
    let mut out = String::from("truth,error,n,C,replicate,ise\n");
    for r in sorted(results) {
        let s = &r.scenario;
        for (i, v) in r.ise.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.truth.name(), s.error.name(), s.n, s.c, i, v);
        }
    }
    out
}

pub fn emit_ise(results: &[ScenarioResult], path: &Path) -> Result<()> {
    write_atomic(path, format_ise(results).as_bytes())
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|v| !v.is_empty())
}

/// Parses `[scenario]` sections of `key=value` lines. `truth`, `error`, `n`
/// and `c` accept comma-separated lists and expand to their product;
/// `replicates` and `seed` fall back to the given defaults. `#` starts a
/// comment.
pub fn parse_scenarios(text: &str, default_replicates: usize, default_seed: u64) -> Result<Vec<Scenario>> {
    struct Section {
        line: usize,
        truths: Vec<TrueDistribution>,
        errors: Vec<ErrorFamily>,
        sizes: Vec<usize>,
        scales: Vec<f64>,
        replicates: usize,
        seed: u64,
    }
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| PmleError::Parse { line: line_no, message };
        if line.starts_with('[') {
            if line != "[scenario]" {
                return Err(parse_err(format!("unknown section {line}")));
            }
            sections.push(Section {
                line: line_no,
                truths: Vec::new(),
                errors: Vec::new(),
                sizes: Vec::new(),
                scales: Vec::new(),
                replicates: default_replicates,
                seed: default_seed,
            });
            continue;
        }
        let sec = sections
            .last_mut()
            .ok_or_else(|| parse_err("key outside a [scenario] section".into()))?;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key=value, found '{line}'")))?;
        let value = value.trim();
        let wrap = |e: PmleError| parse_err(e.to_string());
        match key.trim() {
            "truth" => {
                for v in split_list(value) {
                    sec.truths.push(TrueDistribution::parse(v).map_err(wrap)?);
                }
            }
            "error" => {
                for v in split_list(value) {
                    sec.errors.push(ErrorFamily::parse(v).map_err(wrap)?);
                }
            }
            "n" => {
                for v in split_list(value) {
                    sec.sizes.push(v.parse().map_err(|_| parse_err(format!("invalid sample size '{v}'")))?);
                }
            }
            "c" | "C" => {
                for v in split_list(value) {
                    sec.scales.push(v.parse().map_err(|_| parse_err(format!("invalid scale '{v}'")))?);
                }
            }
            "replicates" => {
                sec.replicates = value.parse().map_err(|_| parse_err(format!("invalid replicate count '{value}'")))?;
            }
            "seed" => {
                sec.seed = value.parse().map_err(|_| parse_err(format!("invalid seed '{value}'")))?;
            }
            other => return Err(parse_err(format!("unknown key '{other}'"))),
        }
    }
    let mut out = Vec::new();
    for sec in sections {
        let missing = [
            ("truth", sec.truths.is_empty()),
            ("error", sec.errors.is_empty()),
            ("n", sec.sizes.is_empty()),
            ("c", sec.scales.is_empty()),
        ];
        if let Some((key, _)) = missing.iter().find(|(_, m)| *m) {
            return Err(PmleError::Parse {
                line: sec.line,
                message: format!("section is missing '{key}'"),
            });
        }
        for &truth in &sec.truths {
            for &error in &sec.errors {
                for &n in &sec.sizes {
                    for &c in &sec.scales {
                        let s = Scenario {
                            truth,
                            error,
                            c,
                            n,
                            replicates: sec.replicates,
                            seed: sec.seed,
                        };
                        s.validate().map_err(|e| PmleError::Parse {
                            line: sec.line,
                            message: e.to_string(),
                        })?;
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}
