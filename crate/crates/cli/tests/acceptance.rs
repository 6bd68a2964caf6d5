//! Acceptance criteria 1-8, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.

use std::time::Instant;

use hqc_core::atomistic::{
    energy_gradient, energy_hessian, solve_equilibrium, total_energy, EquilibriumProblem,
    NewtonOptions, Patch,
};
use hqc_core::dynamics::{verlet_step, DynamicState};
use hqc_core::fem::{build_mesh, integral, project_zero_mean_p1, P1Field};
use hqc_core::homog::{solve_cell_problem, CellProblem, HomogenizedDensity};
use hqc_core::hqc::{
    hqc_energy, hqc_gradient, hqc_hessian, micro_sensitivity, Closure, Hqc, HqcOptions,
};
use hqc_core::lattice::{
    average, discrete_derivative, inner_product, project_zero_mean, LatticeField, Multilattice,
    Offset,
};
use hqc_core::linalg::dot;
use hqc_core::mqc::{
    corrector_from_shifts, shift_residual, shifts_from_corrector, solve_shift_vectors,
};
use hqc_core::par;
use hqc_core::potential::{
    dynamics_lattice, make_asymmetric_lj_model, make_dynamics_model, make_stochastic_model,
    mass_field, InteractionModel,
};
use hqc_lab::config::Config;
use hqc_lab::experiments::{self, converge, dynamics, equivalence, stochastic, Check, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sub-checks that fail for documented reasons (README, "Known deviations").
const KNOWN_FAILURES: &[&str] = &["min/coarsest of |E^ad - E|/|E|"];

struct Outcome {
    id: usize,
    title: &'static str,
    checks: Vec<Check>,
    seconds: f64,
    budget: f64,
}

impl Outcome {
    fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass()).collect()
    }

    fn pass(&self) -> bool {
        self.failed().is_empty() && self.seconds <= self.budget
    }

    fn unexpected(&self) -> bool {
        self.seconds > self.budget
            || self
                .failed()
                .iter()
                .any(|c| !KNOWN_FAILURES.contains(&c.name.as_str()))
    }
}

fn run(id: usize, title: &'static str, budget: f64, f: impl FnOnce() -> Vec<Check>) -> Outcome {
    let t = Instant::now();
    let checks = f();
    Outcome {
        id,
        title,
        checks,
        seconds: t.elapsed().as_secs_f64(),
        budget,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn le(name: &str, value: f64, hi: f64) -> Check {
    Check::new(name, value, 0.0, hi)
}

fn report_checks(r: &Report) -> Vec<Check> {
    let mut c = r.checks.clone();
    c.push(le("solver failures", r.failures.len() as f64, 0.0));
    c
}

fn criterion_1() -> Vec<Check> {
    let cfg =
        equivalence::Equivalence::from_config(&mut Config::default(), None).expect("defaults");
    let res = cfg.run().expect("equivalence run");
    let counted = res
        .rows
        .iter()
        .filter(|r| !matches!(r.spec.family, equivalence::Family::Linear(1)))
        .count();
    let mut c = report_checks(&res.report(&cfg));
    c.push(Check::new(
        "trials with m in {2,3,4} or LJ",
        counted as f64,
        50.0,
        f64::INFINITY,
    ));
    c
}

fn criterion_2() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = rng.gen_range(1..=5);
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..5.0)).collect();
        let f = rng.gen_range(-2.0..2.0);
        let lat = Multilattice::chain(1, m).unwrap();
        let cell =
            CellProblem::new(&InteractionModel::linear_spring_1d(&psi).unwrap(), &lat).unwrap();
        let phi = solve_cell_problem(&cell, &[f, 0.0, 0.0, 0.0], None)
            .unwrap()
            .phi;
        let inv_mean = psi.iter().map(|p| 1.0 / p).sum::<f64>() / m as f64;
        let r = 1.0 / m as f64;
        worst = worst.max(rel(phi, (f * r).powi(2) / (2.0 * inv_mean)));
    }
    let mut worst2 = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(0.2..5.0), rng.gen_range(0.2..5.0));
        let lat = Multilattice::chain(1, 2).unwrap();
        let cell =
            CellProblem::new(&InteractionModel::linear_spring_1d(&[a, b]).unwrap(), &lat).unwrap();
        let phi = solve_cell_problem(&cell, &[2.0, 0.0, 0.0, 0.0], None)
            .unwrap()
            .phi;
        // Φ⁰ = ψ⁰ (F/2)² / 2 with F = 2
        worst2 = worst2.max(rel(phi / 0.5, 2.0 * a * b / (a + b)));
    }
    vec![
        le("Phi0 vs harmonic-average formula, 20 tuples", worst, 1e-12),
        le(
            "m = 2 coefficient vs 2 psi1 psi2/(psi1 + psi2)",
            worst2,
            1e-12,
        ),
    ]
}

fn criterion_3() -> Vec<Check> {
    let cfg = converge::Converge1d::from_config(&mut Config::default(), None).expect("defaults");
    let mut c = report_checks(&cfg.run().expect("converge run").report(&cfg));
    c.push(Check::new(
        "eps = 2^-12",
        1.0 / cfg.n as f64,
        1.0 / 4096.0,
        1.0 / 4096.0,
    ));
    c
}

fn criterion_4() -> Vec<Check> {
    let cfg =
        stochastic::Stochastic2d::from_config(&mut Config::default(), None).expect("defaults");
    report_checks(&cfg.run().expect("stochastic run").report(&cfg))
}

fn criterion_5() -> Vec<Check> {
    let cfg = dynamics::Dynamics1d::from_config(&mut Config::default(), None).expect("defaults");
    report_checks(&cfg.run().expect("dynamics run").report(&cfg))
}

/// Central difference of `f` along `dir`.
fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], t: f64) -> f64 {
    let shifted = |s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, b)| a + s * b).collect() };
    (f(&shifted(t)) - f(&shifted(-t))) / (2.0 * t)
}

fn central_vec(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    let shifted = |s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, b)| a + s * b).collect() };
    let (p, m) = (f(&shifted(t)), f(&shifted(-t)));
    p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * t)).collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| a * rng.gen_range(-1.0..1.0)).collect()
}

fn criterion_6() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (lj, _) = make_dynamics_model();
    let lj_lat = dynamics_lattice(16).unwrap();
    let abc = make_asymmetric_lj_model();
    let abc_lat = Multilattice::chain(16, 3).unwrap();
    let (st_lat, st_model, _) = make_stochastic_model(8, 3).unwrap();

    // site gradients and Hessians
    let mut site_g = 0.0f64;
    let mut site_h = 0.0f64;
    for (model, cell) in [(&lj, 0), (&abc, 0), (&st_model, 5)] {
        for a in 0..model.m() {
            let nb = model.bonds(a).len() * model.d();
            let gaps = random_vec(&mut rng, nb, 0.02);
            let g = model.site_gradient(cell, a, &gaps).unwrap();
            let h = model.site_hessian(cell, a, &gaps).unwrap();
            for k in 0..nb {
                let mut e = vec![0.0; nb];
                e[k] = 1.0;
                let fd = central(|x| model.site_energy(cell, a, x).unwrap(), &gaps, &e, 1e-6);
                site_g = site_g.max((fd - g[k]).abs() / (1.0 + g[k].abs()));
                let fdh = central_vec(
                    |x| model.site_gradient(cell, a, x).unwrap(),
                    &gaps,
                    &e,
                    1e-6,
                );
                let col: Vec<f64> = (0..nb).map(|p| h[p * nb + k]).collect();
                site_h = site_h.max(max_rel(&fdh, &col));
            }
        }
    }

    // total energy: Riesz gradient is N ∂E/∂u
    let mut total_g = 0.0f64;
    let mut total_h = 0.0f64;
    for (lat, model, amp) in [
        (&lj_lat, &lj, 0.002),
        (&abc_lat, &abc, 0.001),
        (&st_lat, &st_model, 0.05),
    ] {
        let p = EquilibriumProblem::unloaded(lat.clone(), model.clone()).unwrap();
        let nsites = lat.num_sites() as f64;
        let u = LatticeField::from_values(
            lat.d(),
            random_vec(&mut rng, lat.num_sites() * lat.d(), amp),
        );
        let g = energy_gradient(&p, &u).unwrap();
        let h = energy_hessian(&p, &u).unwrap();
        for _ in 0..4 {
            let dir = random_vec(&mut rng, u.values.len(), 1.0);
            let fd = nsites
                * central(
                    |x| total_energy(&p, &LatticeField::from_values(lat.d(), x.to_vec())).unwrap(),
                    &u.values,
                    &dir,
                    1e-5 * amp.max(1e-3),
                );
            let an = dot(&g.values, &dir);
            total_g = total_g.max((fd - an).abs() / an.abs().max(1e-12));
            let fdh = central_vec(
                |x| {
                    energy_gradient(&p, &LatticeField::from_values(lat.d(), x.to_vec()))
                        .unwrap()
                        .values
                },
                &u.values,
                &dir,
                1e-6,
            );
            total_h = total_h.max(max_rel(&fdh, &h.matvec(&dir)));
        }
    }

    // HQC energy, gradient, Hessian and corrector sensitivities on the A-B-C chain
    let lat = Multilattice::chain(32, 3).unwrap();
    let mesh = build_mesh(1, 4).unwrap();
    let hqc = Hqc::new(&lat, &abc, &mesh, HqcOptions::default()).unwrap();
    let u = project_zero_mean_p1(
        &mesh,
        &P1Field {
            d: 1,
            values: random_vec(&mut rng, mesh.num_nodes(), 0.004),
        },
    );
    let states = hqc.states(&u, None, Closure::Relaxed).unwrap();
    let g = hqc_gradient(&mesh, &states);
    let k = hqc_hessian(&mesh, &states);
    let energy_at = |x: &[f64]| {
        let f = P1Field {
            d: 1,
            values: x.to_vec(),
        };
        hqc_energy(&mesh, &hqc.states(&f, None, Closure::Relaxed).unwrap())
    };
    let grad_at = |x: &[f64]| {
        let f = P1Field {
            d: 1,
            values: x.to_vec(),
        };
        hqc_gradient(&mesh, &hqc.states(&f, None, Closure::Relaxed).unwrap())
    };
    let mut hqc_g = 0.0f64;
    let mut hqc_h = 0.0f64;
    for _ in 0..3 {
        let dir = random_vec(&mut rng, u.values.len(), 1.0);
        let fd = central(energy_at, &u.values, &dir, 1e-6);
        let an = dot(&g, &dir);
        hqc_g = hqc_g.max((fd - an).abs() / an.abs().max(1e-12));
        let fdh = central_vec(grad_at, &u.values, &dir, 1e-6);
        hqc_h = hqc_h.max(max_rel(&fdh, &k.matvec(&dir)));
    }

    // envelope property: δΦ⁰ is the derivative of Φ⁰ without corrector terms
    let cell = CellProblem::new(&abc, &Multilattice::chain(1, 3).unwrap()).unwrap();
    let density = HomogenizedDensity::new(cell);
    let mut envelope = 0.0f64;
    for f0 in [-0.03, 0.01, 0.05] {
        let s = density.dphi0(&[f0, 0.0, 0.0, 0.0]).unwrap()[0];
        let fd = central(
            |x| density.phi0(&[x[0], 0.0, 0.0, 0.0]).unwrap(),
            &[f0],
            &[1.0],
            1e-5,
        );
        envelope = envelope.max((fd - s).abs() / s.abs().max(1e-12));
    }

    // corrector sensitivity along a basis-function direction
    let mut sens = 0.0f64;
    for e in 0..mesh.num_elements() {
        let f = states[e].grad;
        let grad_lambda = mesh.element(e).grads[1][0];
        let z = &micro_sensitivity(&states[e], [grad_lambda, 0.0])[0];
        let fd = central_vec(
            |x| {
                hqc.micro_solve(e, &[x[0], 0.0, 0.0, 0.0], None, Closure::Relaxed)
                    .unwrap()
                    .corrector()
            },
            &[f[0]],
            &[grad_lambda],
            1e-5,
        );
        sens = sens.max(max_rel(&fd, z));
    }

    vec![
        le("site gradient vs central differences", site_g, 1e-6),
        le("site Hessian vs gradient differences", site_h, 1e-5),
        le("total gradient vs central differences", total_g, 1e-6),
        le("total Hessian vs gradient differences", total_h, 1e-5),
        le("HQC gradient vs central differences", hqc_g, 1e-6),
        le("HQC Hessian vs gradient differences", hqc_h, 1e-5),
        le("envelope dPhi0 vs differences of Phi0", envelope, 1e-6),
        le("micro sensitivity vs corrector differences", sens, 1e-5),
    ]
}

/// Zero-mean solution of `K u = f` for the nearest-neighbour chain, built densely.
fn dense_chain_solve(psi: &[f64], n: usize, f: &[f64]) -> Vec<f64> {
    let m = psi.len();
    let ns = n * m;
    let inv_eps2 = (n * n) as f64;
    let mut k = nalgebra::DMatrix::<f64>::zeros(ns, ns);
    for s in 0..ns {
        let t = (s + 1) % ns;
        let c = psi[s % m] * inv_eps2;
        k[(s, s)] += c;
        k[(t, t)] += c;
        k[(s, t)] -= c;
        k[(t, s)] -= c;
    }
    k.add_scalar_mut(1.0 / ns as f64);
    let u = k
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(f))
        .expect("nonsingular");
    let mean = u.mean();
    u.iter().map(|v| v - mean).collect()
}

fn criterion_7() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // atomistic equilibrium vs dense solve
    let mut eq = 0.0f64;
    for (m, n) in [(2, 16), (3, 21), (4, 16), (1, 64)] {
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..3.0)).collect();
        let lat = Multilattice::chain(n, m).unwrap();
        let f = project_zero_mean(&LatticeField::from_values(
            1,
            random_vec(&mut rng, n * m, 1.0),
        ));
        let p = EquilibriumProblem::new(
            lat.clone(),
            InteractionModel::linear_spring_1d(&psi).unwrap(),
            f.clone(),
        )
        .unwrap();
        let u = solve_equilibrium(&p, &LatticeField::zeros(&lat), &NewtonOptions::default())
            .unwrap()
            .u;
        let dense = dense_chain_solve(&psi, n, &f.values);
        eq = eq.max(
            max_abs_diff(&u.values, &dense) / dense.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        );
    }

    // micro corrector vs the analytic cell solution, HQC stiffness vs ψ⁰ r² FEM
    let mut corr = 0.0f64;
    let mut stiff = 0.0f64;
    for m in 2..=4 {
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..3.0)).collect();
        let lat = Multilattice::chain(32, m).unwrap();
        let model = InteractionModel::linear_spring_1d(&psi).unwrap();
        let mesh = build_mesh(1, 8).unwrap();
        let hqc = Hqc::new(&lat, &model, &mesh, HqcOptions::default()).unwrap();
        let psi0 = m as f64 / psi.iter().map(|p| 1.0 / p).sum::<f64>();
        let r = 1.0 / m as f64;
        let f = rng.gen_range(-1.0..1.0);
        let mut chi = vec![0.0; m];
        for a in 1..m {
            chi[a] = chi[a - 1] + (psi0 / psi[a - 1] - 1.0) * f * r;
        }
        let mean = chi.iter().sum::<f64>() / m as f64;
        let exact: Vec<f64> = chi.iter().map(|c| (c - mean) * lat.eps()).collect();
        let state = hqc
            .micro_solve(3, &[f, 0.0, 0.0, 0.0], None, Closure::Relaxed)
            .unwrap();
        corr = corr.max(max_abs_diff(&state.corrector(), &exact) / lat.eps());

        let u = P1Field::zeros(&mesh);
        let k = hqc_hessian(&mesh, &hqc.states(&u, None, Closure::Relaxed).unwrap());
        let nn = mesh.num_nodes();
        let c = psi0 * r * r / mesh.h();
        for i in 0..nn {
            for j in 0..nn {
                let expect = if i == j {
                    2.0 * c
                } else if (i + 1) % nn == j || (j + 1) % nn == i {
                    -c
                } else {
                    0.0
                };
                stiff = stiff.max((k.get(i, j) - expect).abs() / c);
            }
        }
    }

    // shift/corrector bijection on both LJ chains
    let mut bij = 0.0f64;
    let mut moved = 0.0f64;
    for (model, m) in [
        (make_dynamics_model().0, 2),
        (make_asymmetric_lj_model(), 3),
    ] {
        let lat = Multilattice::chain(32, m).unwrap();
        let mesh = build_mesh(1, 4).unwrap();
        let hqc = Hqc::new(&lat, &model, &mesh, HqcOptions::default()).unwrap();
        let cell = CellProblem::new(&model, &Multilattice::chain(1, m).unwrap()).unwrap();
        for f0 in [-0.02, 0.015, 0.04] {
            let f = [f0, 0.0, 0.0, 0.0];
            let state = hqc.micro_solve(0, &f, None, Closure::Relaxed).unwrap();
            let q = shifts_from_corrector(&lat, &state).unwrap();
            bij = bij.max(shift_residual(&cell, &f, &q).unwrap());
            let shifts = solve_shift_vectors(&cell, &f, None).unwrap();
            let u = corrector_from_shifts(&lat, &shifts.q);
            let patch = hqc.patch(0, &f).unwrap();
            let g = patch.gradient(&u).unwrap();
            bij = bij.max(lat.eps() * dot(&g, &g).sqrt() / (patch.num_sites() as f64).sqrt());
            bij = bij.max((patch.energy(&u).unwrap() - state.energy).abs());
            moved = moved.max(q.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }

    vec![
        le("atomistic equilibrium vs dense solve (relative)", eq, 1e-10),
        le("micro corrector vs analytic cell solution", corr, 1e-12),
        le(
            "HQC stiffness vs psi0 r^2 P1 matrix (relative)",
            stiff,
            1e-12,
        ),
        le("shift/corrector bijection residuals", bij, 1e-10),
        Check::new(
            "largest relaxed shift (nontrivial corrector)",
            moved,
            1e-6,
            f64::INFINITY,
        ),
    ]
}

fn csv(experiment: &str, text: &str, seed: Option<u64>) -> String {
    experiments::run(experiment, Config::parse(text).unwrap(), seed)
        .expect("experiment run")
        .table
        .render()
}

fn criterion_8() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // summation by parts ⟨D_r u, v⟩ = ⟨u, D_{−r} v⟩
    let mut sbp = 0.0f64;
    let lats = [
        (
            Multilattice::chain(12, 3).unwrap(),
            vec![Offset::new1(1, 3), Offset::new1(-2, 3), Offset::new1(5, 3)],
        ),
        (
            Multilattice::square(6).unwrap(),
            vec![Offset::int2(1, 0), Offset::int2(-1, 1), Offset::int2(2, 3)],
        ),
    ];
    for (lat, offsets) in &lats {
        let len = lat.num_sites() * lat.d();
        let u = LatticeField::from_values(lat.d(), random_vec(&mut rng, len, 1.0));
        let v = LatticeField::from_values(lat.d(), random_vec(&mut rng, len, 1.0));
        for r in offsets {
            let lhs = inner_product(&discrete_derivative(lat, &u, r).unwrap(), &v).unwrap();
            let rhs = inner_product(&u, &discrete_derivative(lat, &v, &r.neg()).unwrap()).unwrap();
            sbp = sbp.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }

    // translation invariance of energy and gradient
    let (lj, masses) = make_dynamics_model();
    let lj_lat = dynamics_lattice(16).unwrap();
    let (st_lat, st_model, _) = make_stochastic_model(8, 5).unwrap();
    let mut trans = 0.0f64;
    for (lat, model) in [(&lj_lat, &lj), (&st_lat, &st_model)] {
        let p = EquilibriumProblem::unloaded(lat.clone(), model.clone()).unwrap();
        let u = LatticeField::from_values(
            lat.d(),
            random_vec(&mut rng, lat.num_sites() * lat.d(), 0.003),
        );
        let mut shifted = u.clone();
        for (i, v) in shifted.values.iter_mut().enumerate() {
            *v += if i % lat.d() == 0 { 0.37 } else { -1.1 };
        }
        let e0 = total_energy(&p, &u).unwrap();
        trans = trans.max((total_energy(&p, &shifted).unwrap() - e0).abs() / (1.0 + e0.abs()));
        let g0 = energy_gradient(&p, &u).unwrap().values;
        trans = trans.max(
            max_abs_diff(&energy_gradient(&p, &shifted).unwrap().values, &g0)
                / (1.0 + g0.iter().fold(0.0f64, |a, v| a.max(v.abs()))),
        );
    }

    // zero-mean projections
    let u = LatticeField::from_values(
        2,
        random_vec(&mut rng, st_lat.num_sites() * 2, 1.0)
            .into_iter()
            .map(|v| v + 3.0)
            .collect(),
    );
    let pu = project_zero_mean(&u);
    let mut zm = average(&pu).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    zm = zm.max(max_abs_diff(&project_zero_mean(&pu).values, &pu.values));
    let mesh = build_mesh(2, 4).unwrap();
    let w = P1Field {
        d: 2,
        values: random_vec(&mut rng, mesh.num_nodes() * 2, 1.0)
            .into_iter()
            .map(|v| v - 2.0)
            .collect(),
    };
    zm = zm.max(
        integral(&mesh, &project_zero_mean_p1(&mesh, &w))
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs())),
    );

    // Verlet: reversibility on a quadratic chain, momentum on the LJ chain
    let lat = Multilattice::chain(16, 2).unwrap();
    let spring = EquilibriumProblem::unloaded(
        lat.clone(),
        InteractionModel::linear_spring_1d(&[1.0, 3.0]).unwrap(),
    )
    .unwrap();
    let patch = spring.patch().unwrap();
    let mut force = |u: &[f64]| -> hqc_core::Result<Vec<f64>> {
        Ok(patch.gradient(u)?.into_iter().map(|g| -g).collect())
    };
    let u0 = random_vec(&mut rng, lat.num_sites(), 0.01);
    let mut s = DynamicState::at_rest(
        u0.clone(),
        mass_field(&lat, &masses),
        1,
        1.0 / 32.0,
        &mut force,
    )
    .unwrap();
    let tau = lat.eps() / 20.0;
    for _ in 0..200 {
        verlet_step(&mut s, &mut force, tau).unwrap();
    }
    s.v.iter_mut().for_each(|v| *v = -*v);
    for _ in 0..200 {
        verlet_step(&mut s, &mut force, tau).unwrap();
    }
    let rev = max_abs_diff(&s.u, &u0) + s.v.iter().fold(0.0f64, |a, v| a.max(v.abs())) * tau;

    let ljp = EquilibriumProblem::unloaded(lj_lat.clone(), lj.clone()).unwrap();
    let ljpatch: Patch = ljp.patch().unwrap();
    let mut ljforce = |u: &[f64]| -> hqc_core::Result<Vec<f64>> {
        Ok(ljpatch.gradient(u)?.into_iter().map(|g| -g).collect())
    };
    let mut s = DynamicState::at_rest(
        random_vec(&mut rng, lj_lat.num_sites(), 2e-4),
        mass_field(&lj_lat, &masses),
        1,
        1.0 / 32.0,
        &mut ljforce,
    )
    .unwrap();
    s.v = random_vec(&mut rng, lj_lat.num_sites(), 1e-3);
    let p0 = s.momentum()[0];
    let mut mom = 0.0f64;
    for _ in 0..100 {
        let before = s.momentum()[0];
        verlet_step(&mut s, &mut ljforce, lj_lat.eps() / 80.0).unwrap();
        mom = mom.max((s.momentum()[0] - before).abs());
    }
    let mom_total = (s.momentum()[0] - p0).abs();

    // byte-identical CSV for a fixed seed, independent of the thread count
    let eq_cfg = "trials = 15\nn = 16\nmesh = 4\n";
    let st_cfg = "n = 16\nmesh = 2,4\nn_rep = 4,16\n";
    let a = csv("equivalence", eq_cfg, Some(11));
    let b = par::with_threads(1, || csv("equivalence", eq_cfg, Some(11)));
    let c = csv("equivalence", eq_cfg, Some(12));
    let d = csv("stochastic-2d", st_cfg, Some(3));
    let e = par::with_threads(3, || csv("stochastic-2d", st_cfg, Some(3)));
    let same = (a == b && d == e) as u8 as f64;
    let differs = (a != c) as u8 as f64;

    vec![
        le("summation by parts", sbp, 1e-13),
        le("translation invariance of E and its gradient", trans, 1e-12),
        le("zero-mean projections", zm, 1e-12),
        le("Verlet reversibility (quadratic chain)", rev, 1e-10),
        le("momentum change per step", mom, 1e-12),
        le("momentum change over 100 steps", mom_total, 1e-11),
        Check::new("same seed gives byte-identical CSV", same, 1.0, 1.0),
        Check::new("different seed changes the CSV", differs, 1.0, 1.0),
    ]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let all: Vec<(usize, &'static str, f64, fn() -> Vec<Check>)> = vec![
        (
            1,
            "equivalence of HQC, homogenized FEM and MQC",
            30.0,
            criterion_1,
        ),
        (2, "harmonic mean", 30.0, criterion_2),
        (3, "1D static convergence", 120.0, criterion_3),
        (4, "2D stochastic energy convergence", 300.0, criterion_4),
        (5, "slow dynamics convergence", 300.0, criterion_5),
        (6, "derivative consistency", 30.0, criterion_6),
        (7, "small-instance oracles", 30.0, criterion_7),
        (8, "structural invariants", 60.0, criterion_8),
    ];
    let mut unexpected = 0;
    for (id, title, budget, f) in all {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let o = run(id, title, budget, f);
        let status = if o.pass() {
            "PASS"
        } else if o.unexpected() {
            unexpected += 1;
            "FAIL"
        } else {
            "FAIL (known deviation)"
        };
        let failed: Vec<String> = o.failed().iter().map(|c| c.line()).collect();
        println!(
            "criterion {}: {status}: {} [{} checks, {:.1}s of {:.0}s]{}",
            o.id,
            o.title,
            o.checks.len(),
            o.seconds,
            o.budget,
            if failed.is_empty() {
                String::new()
            } else {
                format!(" -- {}", failed.join("; "))
            }
        );
        for c in &o.checks {
            println!("    {}", c.line());
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
