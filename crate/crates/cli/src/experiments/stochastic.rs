//! 2D random bond network: energy error of HQC and the affine closure.

use hqc_core::atomistic::{solve_equilibrium, total_energy, EquilibriumProblem, NewtonOptions};
use hqc_core::fem::build_mesh;
use hqc_core::hqc::{Closure, Hqc, HqcOptions, LoadRule};
use hqc_core::lattice::LatticeField;
use hqc_core::potential::{make_stochastic_model, InteractionModel};

use super::{opt_float, window, Check, Report};
use crate::config::{require, Config};
use crate::error::{LabError, LabResult};
use crate::slope::{clamp_window, fit_slope};
use crate::table::{fmt_float, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct Stochastic2d {
    pub n: usize,
    pub seed: u64,
    pub mesh: Vec<usize>,
    pub n_rep: Vec<usize>,
    pub tol: f64,
    pub load: LoadRule,
    pub fit_hqc: (usize, usize),
}

fn parse_load(s: &str) -> LabResult<LoadRule> {
    match s {
        "representative" => Ok(LoadRule::Representative),
        "domain" => Ok(LoadRule::Domain),
        _ => Err(LabError::Config(format!(
            "load must be `representative` or `domain`, got `{s}`"
        ))),
    }
}

fn load_name(l: LoadRule) -> &'static str {
    match l {
        LoadRule::Representative => "representative",
        LoadRule::Domain => "domain",
    }
}

impl Stochastic2d {
    pub fn from_config(cfg: &mut Config, seed: Option<u64>) -> LabResult<Self> {
        let n: usize = cfg.take("n", 128)?;
        let load: String = cfg.take("load", "representative".to_string())?;
        let e = Stochastic2d {
            n,
            seed: seed.unwrap_or(cfg.take("seed", 1)?),
            mesh: cfg.take_list("mesh", vec![4, 8, 16, 32])?,
            n_rep: cfg.take_list("n_rep", vec![8, 32, n])?,
            tol: cfg.take("tol", 1e-9)?,
            load: parse_load(&load)?,
            fit_hqc: window(cfg, "fit_hqc", (0, 3))?,
        };
        require(e.n > 0 && e.n.is_power_of_two(), "n must be a power of two")?;
        require(e.tol > 0.0, "tol must be positive")?;
        require(
            !e.mesh.is_empty() && !e.n_rep.is_empty(),
            "mesh and n_rep lists must be nonempty",
        )?;
        for &k in &e.mesh {
            require(
                k > 0 && e.n.is_multiple_of(k),
                format!("mesh size 1/{k} does not divide 1/eps = {}", e.n),
            )?;
        }
        for &r in &e.n_rep {
            require(
                r > 0 && e.n.is_multiple_of(r),
                format!("n_rep = {r} does not divide n = {}", e.n),
            )?;
        }
        Ok(e)
    }

    fn hqc_row(
        &self,
        lat: &hqc_core::lattice::Multilattice,
        model: &InteractionModel,
        force: &LatticeField,
        k: usize,
        n_rep: usize,
        closure: Closure,
    ) -> hqc_core::Result<f64> {
        let mesh = build_mesh(2, k)?;
        let opts = HqcOptions {
            tol: self.tol,
            domain_size: n_rep,
            load: self.load,
            ..HqcOptions::default()
        };
        let hqc = Hqc::new(lat, model, &mesh, opts)?;
        Ok(hqc.solve_force(force, closure)?.energy)
    }

    pub fn run(&self) -> LabResult<Stochastic2dResult> {
        let (lat, model, force) = make_stochastic_model(self.n, self.seed)?;
        let problem = EquilibriumProblem::new(lat.clone(), model.clone(), force.clone())?;
        let opts = NewtonOptions {
            tol: self.tol,
            ..NewtonOptions::default()
        };
        let exact = solve_equilibrium(&problem, &LatticeField::zeros(&lat), &opts)?.u;
        let energy = total_energy(
            &EquilibriumProblem::unloaded(lat.clone(), model.clone())?,
            &exact,
        )?;
        let mut rows = Vec::new();
        for &k in &self.mesh {
            let full = self.n_rep.iter().copied().max().unwrap_or(self.n);
            let ad = self.hqc_row(&lat, &model, &force, k, full, Closure::Affine);
            let (e_ad, ad_err) = match ad {
                Ok(e) => (Some(((e - energy) / energy).abs()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            for &r in &self.n_rep {
                let (e_hqc, err) = match self.hqc_row(&lat, &model, &force, k, r, Closure::Relaxed)
                {
                    Ok(e) => (Some(((e - energy) / energy).abs()), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                rows.push(StochasticRow {
                    mesh_n: k,
                    h: 1.0 / k as f64,
                    n_rep: r,
                    rel_hqc: e_hqc,
                    rel_ad: e_ad,
                    error: err.or_else(|| ad_err.clone()),
                });
            }
        }
        Ok(Stochastic2dResult { rows, energy })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticRow {
    pub mesh_n: usize,
    pub h: f64,
    pub n_rep: usize,
    pub rel_hqc: Option<f64>,
    pub rel_ad: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stochastic2dResult {
    pub rows: Vec<StochasticRow>,
    /// interaction energy of the atomistic solution
    pub energy: f64,
}

impl Stochastic2dResult {
    pub fn series(&self, n_rep: usize) -> Vec<&StochasticRow> {
        self.rows.iter().filter(|r| r.n_rep == n_rep).collect()
    }

    pub fn slope_hqc(&self, n_rep: usize, w: (usize, usize)) -> Option<f64> {
        let s = self.series(n_rep);
        let h: Vec<f64> = s.iter().map(|r| r.h).collect();
        let e: Vec<f64> = s.iter().map(|r| r.rel_hqc.unwrap_or(f64::NAN)).collect();
        let (lo, hi) = clamp_window(w, h.len());
        fit_slope(&h, &e, lo, hi)
    }

    /// Smallest affine-closure error over its coarsest value.
    pub fn affine_min_ratio(&self) -> f64 {
        let Some(first) = self.rows.iter().map(|r| r.n_rep).max() else {
            return f64::NAN;
        };
        let v: Vec<f64> = self
            .series(first)
            .iter()
            .map(|r| r.rel_ad.unwrap_or(f64::NAN))
            .collect();
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return f64::NAN;
        }
        v.iter().cloned().fold(f64::MAX, f64::min) / v[0]
    }

    /// Smallest ratio of a reduced-domain error to the full-domain error at the finest mesh.
    pub fn floor_ratio(&self, full: usize) -> f64 {
        let Some(k) = self.rows.iter().map(|r| r.mesh_n).max() else {
            return f64::NAN;
        };
        let at = |r: usize| {
            self.rows
                .iter()
                .find(|x| x.mesh_n == k && x.n_rep == r)
                .and_then(|x| x.rel_hqc)
                .unwrap_or(f64::NAN)
        };
        let base = at(full);
        let reps: Vec<usize> = {
            let mut v: Vec<usize> = self
                .rows
                .iter()
                .map(|r| r.n_rep)
                .filter(|&r| r != full)
                .collect();
            v.dedup();
            v
        };
        if reps.is_empty() {
            return f64::NAN;
        }
        reps.iter()
            .map(|&r| at(r) / base)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn report(&self, cfg: &Stochastic2d) -> Report {
        let mut table = Table::new(&[
            "h",
            "n_rep",
            "rel_err_hqc",
            "rel_err_ad",
            "mesh_n",
            "n",
            "seed",
            "tol",
            "load",
            "status",
        ]);
        for r in &self.rows {
            table.push(vec![
                fmt_float(r.h),
                r.n_rep.to_string(),
                opt_float(r.rel_hqc),
                opt_float(r.rel_ad),
                r.mesh_n.to_string(),
                cfg.n.to_string(),
                cfg.seed.to_string(),
                fmt_float(cfg.tol),
                load_name(cfg.load).into(),
                r.error
                    .clone()
                    .map_or("ok".into(), |e| format!("failed: {}", e.replace(',', ";"))),
            ]);
        }
        let full = cfg.n_rep.iter().copied().max().unwrap_or(cfg.n);
        let mut summary = vec![format!(
            "n = {}, seed = {}, atomistic interaction energy E = {:.10e}",
            cfg.n, cfg.seed, self.energy
        )];
        for &r in &cfg.n_rep {
            summary.push(format!(
                "n_rep = {r}: hqc slope {:.4} over {:?}",
                self.slope_hqc(r, cfg.fit_hqc).unwrap_or(f64::NAN),
                cfg.fit_hqc
            ));
        }
        let ad: Vec<f64> = self
            .series(full)
            .iter()
            .map(|r| r.rel_ad.unwrap_or(f64::NAN))
            .collect();
        if ad.len() >= 2 {
            summary.push(format!(
                "affine closure: last/previous error {:.4}",
                ad[ad.len() - 1] / ad[ad.len() - 2]
            ));
        }
        let mut checks = vec![
            Check::new(
                "slope of |E^hqc - E|/|E| (full sampling domains)",
                self.slope_hqc(full, cfg.fit_hqc).unwrap_or(f64::NAN),
                1.6,
                2.4,
            ),
            Check::new(
                "min/coarsest of |E^ad - E|/|E|",
                self.affine_min_ratio(),
                0.5,
                f64::INFINITY,
            ),
        ];
        if cfg.n_rep.iter().any(|&r| r != full) {
            checks.push(Check::new(
                "reduced n_rep error over full n_rep error (finest h)",
                self.floor_ratio(full),
                1.0,
                f64::INFINITY,
            ));
        }
        Report {
            experiment: "stochastic-2d".into(),
            table,
            summary,
            checks,
            failures: self.rows.iter().filter_map(|r| r.error.clone()).collect(),
        }
    }
}
