//! Multilattice quasicontinuum through per-element shift vectors, and the
//! three-way energy comparison between HQC, homogenized FEM and MQC.

use crate::error::{Error, Result};
use crate::fem::{element_gradient, Grad, MacroMesh, P0Field, P1Field};
use crate::homog::{homogenized_energy, CellProblem, HomogenizedDensity, CELL_TOL};
use crate::hqc::{hqc_energy, Closure, Hqc, HqcOptions, MicroState};
use crate::lattice::Multilattice;
use crate::linalg::dense_solve;
use crate::par;
use crate::potential::InteractionModel;

/// Shift vectors `q_0 = 0, q_1, …, q_{m−1}` in gap units, stride `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftState {
    pub q: Vec<f64>,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn frob(f: &Grad) -> f64 {
    f.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Norm of the stationarity equations in `q_1 … q_{m−1}`.
pub fn shift_residual(cell: &CellProblem, f: &Grad, q: &[f64]) -> Result<f64> {
    let d = cell.d();
    let m = cell.m() as f64;
    let t = cell.terms(f, q)?;
    Ok((t.grad[d..].iter().map(|g| (m * g).powi(2)).sum::<f64>() / m).sqrt())
}

/// Newton on the shift vectors with `q_0` held at zero.
pub fn solve_shift_vectors(
    cell: &CellProblem,
    f: &Grad,
    guess: Option<&[f64]>,
) -> Result<ShiftState> {
    let d = cell.d();
    let m = cell.m();
    let md = m * d;
    let mut q = match guess {
        Some(g) if g.len() == md => g.to_vec(),
        Some(g) => {
            return Err(Error::LengthMismatch {
                expected: md,
                got: g.len(),
            })
        }
        None => vec![0.0; md],
    };
    for i in 0..d {
        let q0 = q[i];
        for a in 0..m {
            q[a * d + i] -= q0;
        }
    }
    let target = CELL_TOL * (1.0 + frob(f));
    let nr = md - d;
    let max_iter = 50;
    let mut t = cell.terms(f, &q)?;
    let mut rn = shift_residual(cell, f, &q)?;
    for it in 0..=max_iter {
        if rn <= target || nr == 0 {
            return Ok(ShiftState {
                q,
                energy: t.phi,
                residual: rn,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let mut h = vec![0.0; nr * nr];
        for p in 0..nr {
            for s in 0..nr {
                h[p * nr + s] = t.hess[(p + d) * md + s + d];
            }
        }
        let neg: Vec<f64> = t.grad[d..].iter().map(|v| -v).collect();
        let step = dense_solve(&h, nr, &neg)?;
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = q.clone();
            for (p, st) in step.iter().enumerate() {
                trial[p + d] += s * st;
            }
            if let Ok(tt) = cell.terms(f, &trial) {
                let trn = shift_residual(cell, f, &trial)?;
                if tt.phi <= t.phi + 1e-14 * (1.0 + t.phi.abs()) || trn < rn {
                    q = trial;
                    t = tt;
                    rn = trn;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearch {
                context: "shift vectors".into(),
                residual: rn,
            });
        }
    }
    Err(Error::NoConvergence {
        context: "shift vectors".into(),
        iterations: max_iter,
        residual: rn,
    })
}

/// `(1/m) Σ_β V_β(F R_β + q_{target} − q_β)`
pub fn mqc_element_energy(cell: &CellProblem, f: &Grad, q: &[f64]) -> Result<f64> {
    Ok(cell.terms(f, q)?.phi)
}

/// `Σ_T |T| Ẽ^mqc` with shifts solved per element; returns the shifts too.
pub fn mqc_energy(
    cell: &CellProblem,
    mesh: &MacroMesh,
    u: &P1Field,
    guesses: Option<&P0Field>,
) -> Result<(f64, P0Field)> {
    let md = cell.m() * cell.d();
    let per = par::try_map(mesh.num_elements(), |e| -> Result<ShiftState> {
        let f = element_gradient(mesh, u, e)?;
        let guess = guesses.map(|g| g.get(e));
        solve_shift_vectors(cell, &f, guess).map_err(|err| err.in_element(e))
    })?;
    let mut shifts = P0Field::zeros(mesh, md);
    let mut energy = 0.0;
    for (e, s) in per.iter().enumerate() {
        shifts.get_mut(e).copy_from_slice(&s.q);
        energy += mesh.element(e).measure * s.energy;
    }
    Ok((energy, shifts))
}

/// `q_α = (U(εp_α) − U(0))/ε` from a single-period corrector.
pub fn shifts_from_corrector(lat: &Multilattice, state: &MicroState) -> Result<Vec<f64>> {
    let d = lat.d();
    let m = lat.m();
    if state.dofs() != m * d {
        return Err(Error::InvalidInput(
            "shift vectors need single-period sampling domains".into(),
        ));
    }
    let u = state.corrector();
    let inv = lat.n() as f64;
    Ok((0..m * d).map(|k| (u[k] - u[k % d]) * inv).collect())
}

/// Zero-mean corrector `U = ε(q − ⟨q⟩)` from shift vectors.
pub fn corrector_from_shifts(lat: &Multilattice, q: &[f64]) -> Vec<f64> {
    let d = lat.d();
    let mut u: Vec<f64> = q.iter().map(|v| v * lat.eps()).collect();
    crate::lattice::remove_mean(&mut u, d);
    u
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub hqc: f64,
    pub homogenized: f64,
    pub mqc: f64,
    pub max_gap: f64,
}

/// The three energies of one macro field, micro guesses matched through
/// the shift/corrector map.
pub fn equivalence_report(
    lat: &Multilattice,
    model: &InteractionModel,
    mesh: &MacroMesh,
    u: &P1Field,
) -> Result<EquivalenceReport> {
    let hqc = Hqc::new(lat, model, mesh, HqcOptions::default())?;
    let states = hqc.states(u, None, Closure::Relaxed)?;
    let e_hqc = hqc_energy(mesh, &states);
    let cell = CellProblem::new(model, lat)?;
    let md = cell.m() * cell.d();
    let mut guesses = P0Field::zeros(mesh, md);
    for (e, s) in states.iter().enumerate() {
        guesses
            .get_mut(e)
            .copy_from_slice(&shifts_from_corrector(lat, s)?);
    }
    let (e_mqc, _) = mqc_energy(&cell, mesh, u, Some(&guesses))?;
    let density = HomogenizedDensity::new(cell);
    let e_hom = homogenized_energy(mesh, &density, u)?;
    let max_gap = (e_hqc - e_hom)
        .abs()
        .max((e_hqc - e_mqc).abs())
        .max((e_hom - e_mqc).abs());
    Ok(EquivalenceReport {
        hqc: e_hqc,
        homogenized: e_hom,
        mqc: e_mqc,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(psi: &[f64]) -> CellProblem {
        let lat = Multilattice::chain(1, psi.len()).unwrap();
        CellProblem::new(&InteractionModel::linear_spring_1d(psi).unwrap(), &lat).unwrap()
    }

    #[test]
    fn two_spring_shift() {
        let c = cell(&[1.0, 3.0]);
        let s = solve_shift_vectors(&c, &[1.0, 0.0, 0.0, 0.0], None).unwrap();
        assert_eq!(s.q[0], 0.0);
        assert!((s.q[1] - 0.25).abs() < 1e-14);
        assert!((s.energy - 0.1875).abs() < 1e-14);
        let sym = solve_shift_vectors(&cell(&[2.0, 2.0]), &[0.7, 0.0, 0.0, 0.0], None).unwrap();
        assert!(sym.q[1].abs() < 1e-15);
    }

    #[test]
    fn zero_shifts_give_cauchy_born() {
        let c = cell(&[1.0, 3.0]);
        let e = mqc_element_energy(&c, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((e - 0.5 * (0.5 * 0.25 + 1.5 * 0.25)).abs() < 1e-15);
    }
}
