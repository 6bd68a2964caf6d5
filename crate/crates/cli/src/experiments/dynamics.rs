//! Slow dynamics of the LJ chain: HQC against the atomistic reference.

use hqc_core::atomistic::EquilibriumProblem;
use hqc_core::dynamics::{
    initial_condition, macro_initial_condition, run_atomistic_dynamics, run_hqc_dynamics,
    trajectory_error,
};
use hqc_core::fem::build_mesh;
use hqc_core::hqc::{Hqc, HqcOptions};
use hqc_core::lattice::{LatticeField, Multilattice};
use hqc_core::potential::{dynamics_lattice, make_dynamics_model, mass_field, InteractionModel};

use super::{opt_float, window, Check, Report};
use crate::config::{require, Config};
use crate::error::LabResult;
use crate::slope::{clamp_window, fit_slope};
use crate::table::{fmt_float, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics1d {
    /// Bravais cells; the chain has `2n` atoms
    pub n: usize,
    pub t_final: f64,
    pub mesh: Vec<usize>,
    /// averaged macro mass
    pub m0: f64,
    /// reference time step `ε / ref_steps_per_cell`
    pub ref_steps_per_cell: usize,
    /// HQC time step `h / steps_per_h`
    pub steps_per_h: usize,
    pub tol: f64,
    pub seed: u64,
    pub fit_linf_l2: (usize, usize),
    pub fit_l2_h1: (usize, usize),
}

impl Dynamics1d {
    pub fn from_config(cfg: &mut Config, seed: Option<u64>) -> LabResult<Self> {
        let e = Dynamics1d {
            n: cfg.take("n", 512)?,
            t_final: cfg.take("t_final", 0.05)?,
            mesh: cfg.take_list("mesh", vec![4, 8, 16, 32, 64])?,
            m0: cfg.take("m0", 1.5)?,
            ref_steps_per_cell: cfg.take("ref_steps_per_cell", 40)?,
            steps_per_h: cfg.take("steps_per_h", 20)?,
            tol: cfg.take("tol", 1e-10)?,
            seed: seed.unwrap_or(cfg.take("seed", 0)?),
            fit_linf_l2: window(cfg, "fit_linf_l2", (0, 2))?,
            fit_l2_h1: window(cfg, "fit_l2_h1", (0, 2))?,
        };
        require(e.n > 0, "n must be positive")?;
        require(e.t_final > 0.0, "t_final must be positive")?;
        require(e.m0 > 0.0, "m0 must be positive")?;
        require(
            e.ref_steps_per_cell > 0 && e.steps_per_h > 0,
            "step counts must be positive",
        )?;
        require(e.tol > 0.0, "tol must be positive")?;
        require(!e.mesh.is_empty(), "mesh list is empty")?;
        let finest = *e.mesh.iter().max().unwrap_or(&1);
        for &k in &e.mesh {
            require(
                k > 0 && e.n.is_multiple_of(k),
                format!("mesh size 1/{k} does not divide 1/eps = {}", e.n),
            )?;
            require(
                finest.is_multiple_of(k),
                format!("mesh size 1/{k} does not divide the finest mesh 1/{finest}"),
            )?;
        }
        require(
            (e.ref_steps_per_cell * e.n).is_multiple_of(e.steps_per_h * finest),
            "HQC sample times must fall on reference steps",
        )?;
        Ok(e)
    }

    fn hqc_row(
        &self,
        lat: &Multilattice,
        model: &InteractionModel,
        u0: &LatticeField,
        k: usize,
        reference: (&[f64], &[LatticeField]),
    ) -> hqc_core::Result<DynamicsRow> {
        let mesh = build_mesh(1, k)?;
        let hqc = Hqc::new(
            lat,
            model,
            &mesh,
            HqcOptions {
                tol: self.tol,
                ..HqcOptions::default()
            },
        )?;
        let macro_u0 = macro_initial_condition(&mesh, lat, u0)?;
        let tau = mesh.h() / self.steps_per_h as f64;
        let traj = run_hqc_dynamics(&hqc, self.m0, &macro_u0, self.t_final, tau, true)?;
        let err = trajectory_error(
            lat,
            reference.0,
            reference.1,
            &traj.times,
            &traj.reconstructions,
        )?;
        Ok(DynamicsRow {
            mesh_n: k,
            h: mesh.h(),
            linf_l2: Some(err.linf_l2),
            l2_h1: Some(err.l2_h1),
            drift: Some(traj.max_drift),
            error: None,
        })
    }

    pub fn run(&self) -> LabResult<Dynamics1dResult> {
        let lat = dynamics_lattice(self.n)?;
        let (model, masses) = make_dynamics_model();
        let mass = mass_field(&lat, &masses);
        let problem = EquilibriumProblem::unloaded(lat.clone(), model.clone())?;
        let init = initial_condition(&problem, &mass)?;
        let finest = *self.mesh.iter().max().unwrap_or(&1);
        let tau = lat.eps() / self.ref_steps_per_cell as f64;
        let stride = self.ref_steps_per_cell * self.n / (self.steps_per_h * finest);
        let reference =
            run_atomistic_dynamics(&problem, &mass, &init.u0, self.t_final, tau, stride)?;
        let rows = self
            .mesh
            .iter()
            .map(|&k| {
                let (t, s) = reference.subsample(finest / k);
                self.hqc_row(&lat, &model, &init.u0, k, (&t, &s))
                    .unwrap_or_else(|e| DynamicsRow {
                        mesh_n: k,
                        h: 1.0 / k as f64,
                        linf_l2: None,
                        l2_h1: None,
                        drift: None,
                        error: Some(e.to_string()),
                    })
            })
            .collect();
        Ok(Dynamics1dResult {
            rows,
            reference_drift: reference.max_drift,
            reference_abs_drift: reference.max_abs_drift,
            eigenvalue: init.eigenvalue,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsRow {
    pub mesh_n: usize,
    pub h: f64,
    pub linf_l2: Option<f64>,
    pub l2_h1: Option<f64>,
    /// relative energy drift of the HQC trajectory
    pub drift: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics1dResult {
    pub rows: Vec<DynamicsRow>,
    pub reference_drift: f64,
    pub reference_abs_drift: f64,
    pub eigenvalue: f64,
}

impl Dynamics1dResult {
    fn slope(&self, w: (usize, usize), f: impl Fn(&DynamicsRow) -> Option<f64>) -> Option<f64> {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let e: Vec<f64> = self.rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect();
        let (lo, hi) = clamp_window(w, h.len());
        fit_slope(&h, &e, lo, hi)
    }

    pub fn slope_linf_l2(&self, w: (usize, usize)) -> Option<f64> {
        self.slope(w, |r| r.linf_l2)
    }

    pub fn slope_l2_h1(&self, w: (usize, usize)) -> Option<f64> {
        self.slope(w, |r| r.l2_h1)
    }

    pub fn report(&self, cfg: &Dynamics1d) -> Report {
        let mut table = Table::new(&[
            "h",
            "linf_l2",
            "l2_h1",
            "hqc_drift",
            "mesh_n",
            "n",
            "t_final",
            "m0",
            "ref_steps_per_cell",
            "steps_per_h",
            "tol",
            "seed",
            "status",
        ]);
        for r in &self.rows {
            table.push(vec![
                fmt_float(r.h),
                opt_float(r.linf_l2),
                opt_float(r.l2_h1),
                opt_float(r.drift),
                r.mesh_n.to_string(),
                cfg.n.to_string(),
                fmt_float(cfg.t_final),
                fmt_float(cfg.m0),
                cfg.ref_steps_per_cell.to_string(),
                cfg.steps_per_h.to_string(),
                fmt_float(cfg.tol),
                cfg.seed.to_string(),
                r.error
                    .clone()
                    .map_or("ok".into(), |e| format!("failed: {}", e.replace(',', ";"))),
            ]);
        }
        let checks = vec![
            Check::new(
                "slope of Linf(L2) error",
                self.slope_linf_l2(cfg.fit_linf_l2).unwrap_or(f64::NAN),
                1.6,
                2.4,
            ),
            Check::new(
                "slope of L2(H1) error",
                self.slope_l2_h1(cfg.fit_l2_h1).unwrap_or(f64::NAN),
                0.7,
                1.3,
            ),
            Check::new(
                "relative energy drift of the atomistic reference",
                self.reference_drift,
                0.0,
                1e-4,
            ),
        ];
        Report {
            experiment: "dynamics-1d".into(),
            table,
            summary: vec![
                format!(
                    "{} atoms, T = {}, slowest mode eigenvalue {:.6e}",
                    2 * cfg.n,
                    cfg.t_final,
                    self.eigenvalue
                ),
                format!(
                    "reference drift: relative {:.3e}, absolute {:.3e}",
                    self.reference_drift, self.reference_abs_drift
                ),
                format!(
                    "fit windows: Linf(L2) {:?}, L2(H1) {:?}",
                    cfg.fit_linf_l2, cfg.fit_l2_h1
                ),
            ],
            checks,
            failures: self.rows.iter().filter_map(|r| r.error.clone()).collect(),
        }
    }
}
