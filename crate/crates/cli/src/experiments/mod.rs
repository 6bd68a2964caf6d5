//! The four experiments and their reports.

pub mod converge;
pub mod dynamics;
pub mod equivalence;
pub mod stochastic;

use crate::config::Config;
use crate::error::{LabError, LabResult};
use crate::table::{fmt_float, Table};

pub const EXPERIMENTS: [&str; 4] = ["converge-1d", "stochastic-2d", "dynamics-1d", "equivalence"];

/// A value checked against a closed interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Check {
        Check {
            name: name.into(),
            value,
            lo,
            hi,
        }
    }

    pub fn pass(&self) -> bool {
        self.value >= self.lo && self.value <= self.hi
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} = {:.6e} (accept [{:e}, {:e}])",
            if self.pass() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.lo,
            self.hi
        )
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: String,
    pub table: Table,
    pub summary: Vec<String>,
    pub checks: Vec<Check>,
    /// rows whose solve failed
    pub failures: Vec<String>,
}

impl Report {
    pub fn text(&self) -> String {
        let mut s = format!("experiment {}\n", self.experiment);
        for l in &self.summary {
            s.push_str(l);
            s.push('\n');
        }
        for c in &self.checks {
            s.push_str(&c.line());
            s.push('\n');
        }
        for f in &self.failures {
            s.push_str("solver failure: ");
            s.push_str(f);
            s.push('\n');
        }
        s
    }
}

pub(crate) fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub(crate) fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub(crate) fn window(
    cfg: &mut Config,
    key: &str,
    default: (usize, usize),
) -> LabResult<(usize, usize)> {
    let v: Vec<usize> = cfg.take_list(key, vec![default.0, default.1])?;
    if v.len() != 2 || v[0] >= v[1] {
        return Err(LabError::Config(format!(
            "`{key}` must be two increasing indices"
        )));
    }
    Ok((v[0], v[1]))
}

/// Parse the configuration for `experiment` and run it.
pub fn run(experiment: &str, mut cfg: Config, seed: Option<u64>) -> LabResult<Report> {
    if let Some(name) = cfg.take_opt::<String>("experiment")? {
        if name != experiment {
            return Err(LabError::Config(format!(
                "config is for `{name}`, not `{experiment}`"
            )));
        }
    }
    let report = match experiment {
        "converge-1d" => {
            let e = converge::Converge1d::from_config(&mut cfg, seed)?;
            cfg.finish()?;
            e.run()?.report(&e)
        }
        "stochastic-2d" => {
            let e = stochastic::Stochastic2d::from_config(&mut cfg, seed)?;
            cfg.finish()?;
            e.run()?.report(&e)
        }
        "dynamics-1d" => {
            let e = dynamics::Dynamics1d::from_config(&mut cfg, seed)?;
            cfg.finish()?;
            e.run()?.report(&e)
        }
        "equivalence" => {
            let e = equivalence::Equivalence::from_config(&mut cfg, seed)?;
            cfg.finish()?;
            e.run()?.report(&e)
        }
        other => {
            return Err(LabError::Config(format!(
                "unknown experiment `{other}` (expected one of {})",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    Ok(report)
}
