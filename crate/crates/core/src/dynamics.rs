//! Zero-temperature dynamics: velocity Verlet for the full lattice and for
//! the HQC macro field with lumped mass.

use crate::atomistic::{
    slowest_eigenmode, solve_equilibrium, total_energy, EquilibriumProblem, NewtonOptions,
};
use crate::error::{Error, Result};
use crate::fem::{lattice_error, project_zero_mean_p1, MacroMesh, P1Field};
use crate::hqc::{hqc_energy, hqc_gradient, Closure, Hqc, MicroState};
use crate::lattice::{discrete_derivative, LatticeField, Multilattice};

/// Positions, velocities and the force at the current positions, with the
/// diagonal mass per node or site. Kinetic energy is `½ w Σ M v²`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub force: Vec<f64>,
    pub t: f64,
    pub mass: Vec<f64>,
    pub d: usize,
    pub weight: f64,
}

impl DynamicState {
    /// State at rest at `u`.
    pub fn at_rest<F>(
        u: Vec<f64>,
        mass: Vec<f64>,
        d: usize,
        weight: f64,
        force: &mut F,
    ) -> Result<DynamicState>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        if mass.len() * d != u.len() || mass.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidInput(
                "one positive mass per node is required".into(),
            ));
        }
        let f = force(&u)?;
        Ok(DynamicState {
            v: vec![0.0; u.len()],
            u,
            force: f,
            t: 0.0,
            mass,
            d,
            weight,
        })
    }

    pub fn kinetic(&self) -> f64 {
        let s: f64 = self
            .v
            .iter()
            .enumerate()
            .map(|(i, v)| self.mass[i / self.d] * v * v)
            .sum();
        0.5 * self.weight * s
    }

    /// `Σ M v` per component.
    pub fn momentum(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.d];
        for (i, v) in self.v.iter().enumerate() {
            p[i % self.d] += self.mass[i / self.d] * v;
        }
        p
    }
}

/// Half kick, drift, force update, half kick.
pub fn verlet_step<F>(state: &mut DynamicState, force: &mut F, tau: f64) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!(
            "time step {tau} must be positive"
        )));
    }
    let d = state.d;
    for i in 0..state.v.len() {
        state.v[i] += 0.5 * tau * state.force[i] / state.mass[i / d];
        state.u[i] += tau * state.v[i];
    }
    state.force = force(&state.u)?;
    for i in 0..state.v.len() {
        state.v[i] += 0.5 * tau * state.force[i] / state.mass[i / d];
    }
    state.t += tau;
    Ok(())
}

fn step_count(t_final: f64, tau: f64) -> Result<usize> {
    if !(t_final >= 0.0) || !(tau > 0.0) {
        return Err(Error::InvalidInput(
            "final time and step must be positive".into(),
        ));
    }
    let n = (t_final / tau).round();
    if (n * tau - t_final).abs() > 1e-9 * t_final.max(tau) {
        return Err(Error::InvalidInput(format!(
            "step {tau} does not divide final time {t_final}"
        )));
    }
    Ok(n as usize)
}

/// Equilibrium, slowest mode and `u⁰ = u + 0.01 u₁/‖D u₁‖_∞`.
#[derive(Clone, Debug)]
pub struct InitialCondition {
    pub equilibrium: LatticeField,
    pub mode: LatticeField,
    pub eigenvalue: f64,
    pub u0: LatticeField,
}

/// Largest nearest-neighbour difference quotient.
pub fn max_difference_quotient(lat: &Multilattice, u: &LatticeField) -> Result<f64> {
    let mut m = 0.0f64;
    for r in lat.norm_offsets() {
        m = m.max(discrete_derivative(lat, u, &r)?.max_abs());
    }
    Ok(m)
}

pub fn initial_condition(p: &EquilibriumProblem, mass: &[f64]) -> Result<InitialCondition> {
    let eq = solve_equilibrium(
        p,
        &LatticeField::zeros(&p.lattice),
        &NewtonOptions::default(),
    )?;
    let mode = slowest_eigenmode(p, &eq.u, mass)?;
    let dmax = max_difference_quotient(&p.lattice, &mode.mode)?;
    if !(dmax > 0.0) {
        return Err(Error::Singular("eigenmode has no gradient".into()));
    }
    let mut u0 = eq.u.clone();
    u0.axpy(0.01 / dmax, &mode.mode);
    Ok(InitialCondition {
        equilibrium: eq.u,
        mode: mode.mode,
        eigenvalue: mode.eigenvalue,
        u0,
    })
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub samples: Vec<LatticeField>,
    /// total energy at every sample
    pub energy: Vec<f64>,
    /// `max_t |H(t) − H(0)| / |H(0)|` over all steps
    pub max_drift: f64,
    /// `max_t |H(t) − H(0)|` over all steps
    pub max_abs_drift: f64,
    pub final_state: DynamicState,
}

impl Trajectory {
    /// Every `k`-th sample.
    pub fn subsample(&self, k: usize) -> (Vec<f64>, Vec<LatticeField>) {
        let k = k.max(1);
        let t = self.times.iter().step_by(k).cloned().collect();
        let s = self.samples.iter().step_by(k).cloned().collect();
        (t, s)
    }
}

/// Atomistic Verlet from rest at `u0`, sampled every `stride` steps.
pub fn run_atomistic_dynamics(
    p: &EquilibriumProblem,
    mass: &[f64],
    u0: &LatticeField,
    t_final: f64,
    tau: f64,
    stride: usize,
) -> Result<Trajectory> {
    let patch = p.patch()?;
    let d = p.lattice.d();
    let steps = step_count(t_final, tau)?;
    let stride = stride.max(1);
    let weight = 1.0 / p.lattice.num_sites() as f64;
    let mut force = |u: &[f64]| -> Result<Vec<f64>> {
        Ok(patch.gradient(u)?.into_iter().map(|g| -g).collect())
    };
    let mut state = DynamicState::at_rest(u0.values.clone(), mass.to_vec(), d, weight, &mut force)?;
    let h0 = patch.energy(&state.u)? + state.kinetic();
    let mut out = Trajectory {
        times: vec![0.0],
        samples: vec![u0.clone()],
        energy: vec![h0],
        max_drift: 0.0,
        max_abs_drift: 0.0,
        final_state: state.clone(),
    };
    for step in 1..=steps {
        verlet_step(&mut state, &mut force, tau).map_err(|e| match e {
            Error::Element { .. } | Error::SingularBond { .. } => Error::Unstable {
                time: step as f64 * tau,
                reason: e.to_string(),
            },
            other => other,
        })?;
        let h = patch.energy(&state.u)? + state.kinetic();
        let drift = (h - h0).abs();
        if !drift.is_finite() || drift > h0.abs().max(1.0) {
            return Err(Error::Unstable {
                time: step as f64 * tau,
                reason: format!("energy drift {drift:e}"),
            });
        }
        out.max_abs_drift = out.max_abs_drift.max(drift);
        if step % stride == 0 {
            out.times.push(step as f64 * tau);
            out.samples
                .push(LatticeField::from_values(d, state.u.clone()));
            out.energy.push(h);
        }
    }
    out.max_drift = out.max_abs_drift / h0.abs().max(f64::MIN_POSITIVE);
    out.final_state = state;
    Ok(out)
}

/// Nodal values of a lattice field at the mesh vertices, projected to zero mean.
pub fn macro_initial_condition(
    mesh: &MacroMesh,
    lat: &Multilattice,
    u: &LatticeField,
) -> Result<P1Field> {
    mesh.check_aligned(lat)?;
    let d = mesh.d();
    let k = (lat.n() / mesh.n()) as i64;
    let mut out = P1Field::zeros(mesh);
    for a in 0..mesh.num_nodes() {
        let c = crate::lattice::cell_coords(a, mesh.n(), d);
        let cell = lat.cell_index([c[0] * k, c[1] * k]);
        let site = lat.site(cell, 0);
        out.values[a * d..(a + 1) * d].copy_from_slice(u.at(site));
    }
    Ok(project_zero_mean_p1(mesh, &out))
}

#[derive(Clone, Debug)]
pub struct HqcTrajectory {
    pub times: Vec<f64>,
    pub macro_u: Vec<P1Field>,
    pub reconstructions: Vec<LatticeField>,
    pub energy: Vec<f64>,
    pub max_drift: f64,
}

/// Lumped mass `M⁰ × nodal share` per macro node.
pub fn lumped_mass(mesh: &MacroMesh, m0: f64) -> Vec<f64> {
    mesh.node_shares().into_iter().map(|s| s * m0).collect()
}

/// HQC force `−δE^hqc(u^h)` with the micro states of the last evaluation.
pub struct HqcForce<'h, 'a> {
    hqc: &'h Hqc<'a>,
    pub states: Option<Vec<MicroState>>,
    pub energy: f64,
}

impl<'h, 'a> HqcForce<'h, 'a> {
    pub fn new(hqc: &'h Hqc<'a>) -> Self {
        HqcForce {
            hqc,
            states: None,
            energy: 0.0,
        }
    }

    pub fn eval(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let mesh = self.hqc.mesh();
        let field = P1Field {
            d: mesh.d(),
            values: u.to_vec(),
        };
        let states = self
            .hqc
            .states(&field, self.states.as_deref(), Closure::Relaxed)?;
        let g = hqc_gradient(mesh, &states);
        self.energy = hqc_energy(mesh, &states);
        self.states = Some(states);
        Ok(g.into_iter().map(|v| -v).collect())
    }

    fn reconstruct(&self, u: &[f64]) -> Result<LatticeField> {
        let field = P1Field {
            d: self.hqc.mesh().d(),
            values: u.to_vec(),
        };
        let s = self
            .states
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("no micro states".into()))?;
        self.hqc.reconstruct_states(&field, s)
    }
}

/// Macro Verlet with micro correctors warm-started between force
/// evaluations; every step is sampled.
pub fn run_hqc_dynamics(
    hqc: &Hqc,
    m0: f64,
    u0: &P1Field,
    t_final: f64,
    tau: f64,
    reconstruct: bool,
) -> Result<HqcTrajectory> {
    let mesh = hqc.mesh();
    let d = mesh.d();
    let steps = step_count(t_final, tau)?;
    let mut hf = HqcForce::new(hqc);
    let mut state = DynamicState::at_rest(
        u0.values.clone(),
        lumped_mass(mesh, m0),
        d,
        1.0,
        &mut |u: &[f64]| hf.eval(u),
    )?;
    let h0 = hf.energy + state.kinetic();
    let mut out = HqcTrajectory {
        times: vec![0.0],
        macro_u: vec![u0.clone()],
        reconstructions: Vec::new(),
        energy: vec![h0],
        max_drift: 0.0,
    };
    if reconstruct {
        out.reconstructions.push(hf.reconstruct(&state.u)?);
    }
    for step in 1..=steps {
        verlet_step(&mut state, &mut |u: &[f64]| hf.eval(u), tau).map_err(|e| Error::Unstable {
            time: step as f64 * tau,
            reason: e.to_string(),
        })?;
        let h = hf.energy + state.kinetic();
        out.max_drift = out
            .max_drift
            .max((h - h0).abs() / h0.abs().max(f64::MIN_POSITIVE));
        out.times.push(step as f64 * tau);
        out.macro_u.push(P1Field {
            d,
            values: state.u.clone(),
        });
        if reconstruct {
            out.reconstructions.push(hf.reconstruct(&state.u)?);
        }
        out.energy.push(h);
    }
    Ok(out)
}

/// Discrete `L∞(0,T; L²)` and `L²(0,T; H¹)` norms of the difference of two
/// sampled trajectories (trapezoid rule in time).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryError {
    pub linf_l2: f64,
    pub l2_h1: f64,
}

pub fn trajectory_error(
    lat: &Multilattice,
    ref_times: &[f64],
    reference: &[LatticeField],
    times: &[f64],
    approx: &[LatticeField],
) -> Result<TrajectoryError> {
    if ref_times.len() != times.len()
        || reference.len() != times.len()
        || approx.len() != times.len()
    {
        return Err(Error::LengthMismatch {
            expected: ref_times.len(),
            got: times.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    for (a, b) in ref_times.iter().zip(times) {
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::InvalidInput(format!(
                "sample times {a} and {b} differ"
            )));
        }
    }
    let errs = (0..times.len())
        .map(|k| lattice_error(lat, &reference[k], &approx[k]))
        .collect::<Result<Vec<_>>>()?;
    let linf_l2 = errs.iter().fold(0.0f64, |m, e| m.max(e.l2));
    let l2_h1 = if errs.len() == 1 {
        errs[0].h1
    } else {
        let mut acc = 0.0;
        for k in 0..errs.len() - 1 {
            acc += 0.5 * (times[k + 1] - times[k]) * (errs[k].h1.powi(2) + errs[k + 1].h1.powi(2));
        }
        acc.sqrt()
    };
    Ok(TrajectoryError { linf_l2, l2_h1 })
}

/// Total energy of an atomistic state.
pub fn atomistic_hamiltonian(p: &EquilibriumProblem, state: &DynamicState) -> Result<f64> {
    Ok(total_energy(p, &LatticeField::from_values(state.d, state.u.clone()))? + state.kinetic())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_drift() {
        let mut zero = |u: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; u.len()]) };
        let mut s =
            DynamicState::at_rest(vec![1.0, 2.0], vec![1.0, 3.0], 1, 1.0, &mut zero).unwrap();
        s.v = vec![0.5, -1.0];
        verlet_step(&mut s, &mut zero, 0.1).unwrap();
        assert_eq!(s.u, vec![1.05, 1.9]);
        assert_eq!(s.v, vec![0.5, -1.0]);
    }

    #[test]
    fn oscillator_energy_error_is_second_order() {
        let k = 4.0;
        let run = |tau: f64| {
            let mut f = |u: &[f64]| -> Result<Vec<f64>> { Ok(vec![-k * u[0]]) };
            let mut s = DynamicState::at_rest(vec![1.0], vec![1.0], 1, 1.0, &mut f).unwrap();
            let period = 2.0 * std::f64::consts::PI / k.sqrt();
            let n = (period / tau).round() as usize;
            let mut worst = 0.0f64;
            for _ in 0..n {
                verlet_step(&mut s, &mut f, tau).unwrap();
                let h = s.kinetic() + 0.5 * k * s.u[0] * s.u[0];
                worst = worst.max((h - 0.5 * k).abs());
            }
            worst
        };
        let e1 = run(0.01);
        let e2 = run(0.005);
        assert!((e1 / e2).log2() > 1.9 && (e1 / e2).log2() < 2.1);
    }
}
