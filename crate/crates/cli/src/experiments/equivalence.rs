//! Random macro fields: HQC, homogenized and MQC energies agree.

use hqc_core::fem::{build_mesh, project_zero_mean_p1, P1Field};
use hqc_core::lattice::Multilattice;
use hqc_core::mqc::equivalence_report;
use hqc_core::par;
use hqc_core::potential::{make_asymmetric_lj_model, make_dynamics_model, InteractionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{join, Check, Report};
use crate::config::{require, Config};
use crate::error::LabResult;
use crate::table::{fmt_float, Table};

/// Model families cycled through by the trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Linear(usize),
    /// the two-species dynamics chain (m = 2) or the A-B-C chain (m = 3)
    LennardJones(usize),
}

impl Family {
    const CYCLE: [Family; 6] = [
        Family::Linear(2),
        Family::Linear(3),
        Family::Linear(4),
        Family::LennardJones(2),
        Family::LennardJones(3),
        Family::Linear(1),
    ];

    pub fn name(&self) -> String {
        match self {
            Family::Linear(m) => format!("linear-m{m}"),
            Family::LennardJones(m) => format!("lj-m{m}"),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Family::Linear(m) | Family::LennardJones(m) => *m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equivalence {
    pub trials: usize,
    pub n: usize,
    pub mesh: usize,
    pub seed: u64,
    /// nodal amplitude of the random field, linear springs
    pub amplitude: f64,
    /// nodal amplitude for LJ, small enough to stay near equilibrium
    pub lj_amplitude: f64,
    pub tol_linear: f64,
    pub tol_lj: f64,
    pub tol_simple: f64,
}

impl Equivalence {
    pub fn from_config(cfg: &mut Config, seed: Option<u64>) -> LabResult<Self> {
        let e = Equivalence {
            trials: cfg.take("trials", 72)?,
            n: cfg.take("n", 64)?,
            mesh: cfg.take("mesh", 8)?,
            seed: seed.unwrap_or(cfg.take("seed", 2024)?),
            amplitude: cfg.take("amplitude", 0.05)?,
            lj_amplitude: cfg.take("lj_amplitude", 0.002)?,
            tol_linear: cfg.take("tol_linear", 1e-10)?,
            tol_lj: cfg.take("tol_lj", 1e-9)?,
            tol_simple: cfg.take("tol_simple", 1e-12)?,
        };
        require(e.trials > 0, "trials must be positive")?;
        require(
            e.mesh > 0 && e.n.is_multiple_of(e.mesh),
            "mesh size must divide n",
        )?;
        require(
            e.amplitude >= 0.0 && e.lj_amplitude >= 0.0,
            "amplitudes must be nonnegative",
        )?;
        require(
            e.tol_linear > 0.0 && e.tol_lj > 0.0 && e.tol_simple > 0.0,
            "tolerances must be positive",
        )?;
        Ok(e)
    }

    /// Parameters of trial `i`, drawn from one seeded stream in trial order.
    pub fn draw(&self) -> Vec<TrialSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let nodes = self.mesh + 1;
        (0..self.trials)
            .map(|i| {
                let family = Family::CYCLE[i % Family::CYCLE.len()];
                let psi = match family {
                    Family::Linear(m) => (0..m).map(|_| rng.gen_range(0.5..3.0)).collect(),
                    Family::LennardJones(_) => Vec::new(),
                };
                let amp = match family {
                    Family::LennardJones(_) => self.lj_amplitude,
                    _ => self.amplitude,
                };
                let nodal = (0..nodes - 1)
                    .map(|_| amp * rng.gen_range(-1.0..1.0))
                    .collect();
                TrialSpec {
                    index: i,
                    family,
                    psi,
                    nodal,
                }
            })
            .collect()
    }

    fn tol(&self, f: Family) -> f64 {
        match f {
            Family::Linear(1) => self.tol_simple,
            Family::Linear(_) => self.tol_linear,
            Family::LennardJones(_) => self.tol_lj,
        }
    }

    fn trial(&self, spec: &TrialSpec) -> hqc_core::Result<(f64, f64, f64, f64)> {
        let mesh = build_mesh(1, self.mesh)?;
        let lat = Multilattice::chain(self.n, spec.family.m())?;
        let model = match spec.family {
            Family::Linear(_) => InteractionModel::linear_spring_1d(&spec.psi)?,
            Family::LennardJones(3) => make_asymmetric_lj_model(),
            Family::LennardJones(_) => make_dynamics_model().0,
        };
        let u = project_zero_mean_p1(
            &mesh,
            &P1Field {
                d: 1,
                values: spec.nodal.clone(),
            },
        );
        let r = equivalence_report(&lat, &model, &mesh, &u)?;
        Ok((r.hqc, r.homogenized, r.mqc, r.max_gap))
    }

    pub fn run(&self) -> LabResult<EquivalenceResult> {
        let specs = self.draw();
        let rows = par::map(specs.len(), |i| {
            let spec = &specs[i];
            let out = self.trial(spec);
            let tol = self.tol(spec.family);
            match out {
                Ok((hqc, hom, mqc, gap)) => TrialRow {
                    spec: spec.clone(),
                    hqc: Some(hqc),
                    homogenized: Some(hom),
                    mqc: Some(mqc),
                    gap: Some(gap),
                    tol,
                    pass: gap <= tol * (1.0 + hqc.abs()),
                    error: None,
                },
                Err(e) => TrialRow {
                    spec: spec.clone(),
                    hqc: None,
                    homogenized: None,
                    mqc: None,
                    gap: None,
                    tol,
                    pass: false,
                    error: Some(e.to_string()),
                },
            }
        });
        Ok(EquivalenceResult { rows })
    }
}

/// The periodic nodal values exclude the repeated last node.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSpec {
    pub index: usize,
    pub family: Family,
    pub psi: Vec<f64>,
    pub nodal: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub spec: TrialSpec,
    pub hqc: Option<f64>,
    pub homogenized: Option<f64>,
    pub mqc: Option<f64>,
    pub gap: Option<f64>,
    pub tol: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceResult {
    pub rows: Vec<TrialRow>,
}

impl EquivalenceResult {
    /// Largest `gap / (1 + |E|)` over the trials of the selected families.
    pub fn worst(&self, select: impl Fn(Family) -> bool) -> f64 {
        self.rows
            .iter()
            .filter(|r| select(r.spec.family))
            .map(|r| match (r.gap, r.hqc) {
                (Some(g), Some(e)) => g / (1.0 + e.abs()),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn report(&self, cfg: &Equivalence) -> Report {
        let mut table = Table::new(&[
            "trial", "family", "e_hqc", "e_hom", "e_mqc", "max_gap", "tol", "pass", "m", "n",
            "mesh_n", "seed", "psi", "nodal_u", "status",
        ]);
        let f = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        for r in &self.rows {
            table.push(vec![
                r.spec.index.to_string(),
                r.spec.family.name(),
                f(r.hqc),
                f(r.homogenized),
                f(r.mqc),
                f(r.gap),
                fmt_float(r.tol),
                r.pass.to_string(),
                r.spec.family.m().to_string(),
                cfg.n.to_string(),
                cfg.mesh.to_string(),
                cfg.seed.to_string(),
                join(&r.spec.psi.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>()),
                join(
                    &r.spec
                        .nodal
                        .iter()
                        .map(|v| fmt_float(*v))
                        .collect::<Vec<_>>(),
                ),
                r.error
                    .clone()
                    .map_or("ok".into(), |e| format!("failed: {}", e.replace(',', ";"))),
            ]);
        }
        let passed = self.rows.iter().filter(|r| r.pass).count();
        let checks = vec![
            Check::new(
                "worst gap/(1+|E|), linear m = 2..4",
                self.worst(|f| matches!(f, Family::Linear(m) if m > 1)),
                0.0,
                cfg.tol_linear,
            ),
            Check::new(
                "worst gap/(1+|E|), LJ m = 2, 3",
                self.worst(|f| matches!(f, Family::LennardJones(_))),
                0.0,
                cfg.tol_lj,
            ),
            Check::new(
                "worst gap/(1+|E|), m = 1",
                self.worst(|f| f == Family::Linear(1)),
                0.0,
                cfg.tol_simple,
            ),
        ];
        Report {
            experiment: "equivalence".into(),
            table,
            summary: vec![format!(
                "{passed}/{} trials within tolerance",
                self.rows.len()
            )],
            checks,
            failures: self
                .rows
                .iter()
                .filter_map(|r| {
                    r.error
                        .as_ref()
                        .map(|e| format!("trial {}: {e}", r.spec.index))
                })
                .collect(),
        }
    }
}
