//! Static 1D convergence of `u^h` and `u^{h,c}` against the atomistic solution.

use hqc_core::atomistic::{solve_equilibrium, EquilibriumProblem, NewtonOptions};
use hqc_core::fem::{build_mesh, lattice_error, sample};
use hqc_core::hqc::{Closure, Hqc, HqcOptions};
use hqc_core::lattice::{discrete_norms, project_zero_mean, LatticeField, Multilattice};
use hqc_core::potential::InteractionModel;

use super::{join, opt_float, window, Check, Report};
use crate::config::{require, Config};
use crate::error::LabResult;
use crate::slope::{clamp_window, fit_slope};
use crate::table::{fmt_float, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct Converge1d {
    /// Bravais cells, `ε = 1/n`
    pub n: usize,
    pub psi: Vec<f64>,
    /// force `A sin(2πx)`
    pub amplitude: f64,
    /// elements per unit length, coarse to fine
    pub mesh: Vec<usize>,
    pub tol: f64,
    pub seed: u64,
    pub fit_h1_uhc: (usize, usize),
    pub fit_l2_uh: (usize, usize),
}

impl Converge1d {
    pub fn from_config(cfg: &mut Config, seed: Option<u64>) -> LabResult<Self> {
        let e = Converge1d {
            n: cfg.take("n", 4096)?,
            psi: cfg.take_list("psi", vec![1.0, 3.0])?,
            amplitude: cfg.take("amplitude", 1.0)?,
            mesh: cfg.take_list("mesh", vec![4, 8, 16, 32, 64])?,
            tol: cfg.take("tol", 1e-10)?,
            seed: seed.unwrap_or(cfg.take("seed", 0)?),
            fit_h1_uhc: window(cfg, "fit_h1_uhc", (0, 4))?,
            fit_l2_uh: window(cfg, "fit_l2_uh", (0, 4))?,
        };
        require(e.n > 0, "n must be positive")?;
        require(
            !e.psi.is_empty() && e.psi.iter().all(|p| *p > 0.0),
            "psi must be positive",
        )?;
        require(e.tol > 0.0, "tol must be positive")?;
        require(!e.mesh.is_empty(), "mesh list is empty")?;
        for &k in &e.mesh {
            require(
                k > 0 && e.n.is_multiple_of(k),
                format!("mesh size 1/{k} does not divide 1/eps = {}", e.n),
            )?;
        }
        Ok(e)
    }

    pub fn run(&self) -> LabResult<Converge1dResult> {
        let m = self.psi.len();
        let lat = Multilattice::chain(self.n, m)?;
        let model = InteractionModel::linear_spring_1d(&self.psi)?;
        let two_pi = 2.0 * std::f64::consts::PI;
        let force = project_zero_mean(&LatticeField::from_fn(&lat, |x, _| {
            [self.amplitude * (two_pi * x[0]).sin(), 0.0]
        }));
        let problem = EquilibriumProblem::new(lat.clone(), model.clone(), force.clone())?;
        let opts = NewtonOptions {
            tol: self.tol,
            ..NewtonOptions::default()
        };
        let exact = solve_equilibrium(&problem, &LatticeField::zeros(&lat), &opts)?.u;
        let norms = discrete_norms(&lat, &exact)?;
        let rows = self
            .mesh
            .iter()
            .map(|&k| {
                let run = || -> hqc_core::Result<ConvergeRow> {
                    let mesh = build_mesh(1, k)?;
                    let hqc = Hqc::new(
                        &lat,
                        &model,
                        &mesh,
                        HqcOptions {
                            tol: self.tol,
                            ..HqcOptions::default()
                        },
                    )?;
                    let sol = hqc.solve_force(&force, Closure::Relaxed)?;
                    let uhc = hqc.reconstruct(&sol)?;
                    let uh = sample(&mesh, &sol.u, &lat);
                    let ec = lattice_error(&lat, &uhc, &exact)?;
                    let em = lattice_error(&lat, &uh, &exact)?;
                    Ok(ConvergeRow {
                        mesh_n: k,
                        h: mesh.h(),
                        h1_uhc: Some(ec.h1),
                        h1_uh: Some(em.h1),
                        l2_uh: Some(em.l2),
                        outer_iterations: sol.report.iterations,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| ConvergeRow {
                    mesh_n: k,
                    h: 1.0 / k as f64,
                    h1_uhc: None,
                    h1_uh: None,
                    l2_uh: None,
                    outer_iterations: 0,
                    error: Some(e.to_string()),
                })
            })
            .collect();
        Ok(Converge1dResult {
            rows,
            u_l2: norms.l2,
            u_h1: norms.h1,
            eps: lat.eps(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeRow {
    pub mesh_n: usize,
    pub h: f64,
    pub h1_uhc: Option<f64>,
    pub h1_uh: Option<f64>,
    pub l2_uh: Option<f64>,
    pub outer_iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Converge1dResult {
    pub rows: Vec<ConvergeRow>,
    pub u_l2: f64,
    pub u_h1: f64,
    pub eps: f64,
}

impl Converge1dResult {
    fn series(&self, f: impl Fn(&ConvergeRow) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
        self.rows
            .iter()
            .map(|r| (r.h, f(r).unwrap_or(f64::NAN)))
            .unzip()
    }

    pub fn slope_h1_uhc(&self, w: (usize, usize)) -> Option<f64> {
        let (h, e) = self.series(|r| r.h1_uhc);
        let (lo, hi) = clamp_window(w, h.len());
        fit_slope(&h, &e, lo, hi)
    }

    pub fn slope_l2_uh(&self, w: (usize, usize)) -> Option<f64> {
        let (h, e) = self.series(|r| r.l2_uh);
        let (lo, hi) = clamp_window(w, h.len());
        fit_slope(&h, &e, lo, hi)
    }

    /// `max/min` of `‖u^h − u‖_{H¹}` over all meshes.
    pub fn h1_uh_ratio(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.h1_uh).collect();
        if v.len() != self.rows.len() || v.is_empty() {
            return f64::NAN;
        }
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// `‖u^h − u‖_{L²}/‖u‖_{L²}` on the finest mesh, in units of `ε`.
    pub fn terminal_l2_over_eps(&self) -> f64 {
        self.rows
            .last()
            .and_then(|r| r.l2_uh)
            .map_or(f64::NAN, |e| e / self.u_l2 / self.eps)
    }

    pub fn report(&self, cfg: &Converge1d) -> Report {
        let mut table = Table::new(&[
            "h",
            "h1_uhc_u",
            "h1_uh_u",
            "l2_uh_u",
            "mesh_n",
            "n",
            "m",
            "psi",
            "amplitude",
            "tol",
            "seed",
            "status",
        ]);
        for r in &self.rows {
            table.push(vec![
                fmt_float(r.h),
                opt_float(r.h1_uhc),
                opt_float(r.h1_uh),
                opt_float(r.l2_uh),
                r.mesh_n.to_string(),
                cfg.n.to_string(),
                cfg.psi.len().to_string(),
                join(&cfg.psi),
                fmt_float(cfg.amplitude),
                fmt_float(cfg.tol),
                cfg.seed.to_string(),
                r.error
                    .clone()
                    .map_or("ok".into(), |e| format!("failed: {}", e.replace(',', ";"))),
            ]);
        }
        let s1 = self.slope_h1_uhc(cfg.fit_h1_uhc).unwrap_or(f64::NAN);
        let s2 = self.slope_l2_uh(cfg.fit_l2_uh).unwrap_or(f64::NAN);
        let checks = vec![
            Check::new("slope of |u^hc - u|_H1", s1, 0.85, 1.15),
            Check::new("slope of |u^h - u|_L2 (pre-stagnation)", s2, 1.8, 2.2),
            Check::new("max/min of |u^h - u|_H1", self.h1_uh_ratio(), 0.0, 3.0),
            Check::new(
                "terminal relative |u^h - u|_L2 / eps",
                self.terminal_l2_over_eps(),
                0.0,
                10.0,
            ),
        ];
        Report {
            experiment: "converge-1d".into(),
            table,
            summary: vec![
                format!(
                    "eps = {:e}, |u|_L2 = {:.6e}, |u|_H1 = {:.6e}",
                    self.eps, self.u_l2, self.u_h1
                ),
                format!(
                    "fit windows: H1(u^hc) {:?}, L2(u^h) {:?}",
                    cfg.fit_h1_uhc, cfg.fit_l2_uh
                ),
            ],
            checks,
            failures: self.rows.iter().filter_map(|r| r.error.clone()).collect(),
        }
    }
}
