//! Cell problems, the homogenized density `Φ⁰` and its derivatives, and a
//! P1 finite element solver for the homogenized equation.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stress, assemble_tangent, element_gradient, macro_newton, Grad, MacroMesh,
    MacroReport, P1Field,
};
use crate::lattice::{remove_mean, Link, Multilattice};
use crate::linalg::{dense_solve, CsrMatrix};
use crate::par;
use crate::potential::InteractionModel;

/// One period `P` of a crystal, in cell units `y = x/ε`.
#[derive(Clone, Debug)]
pub struct CellProblem {
    model: InteractionModel,
    links: Vec<Vec<Link>>,
    offsets: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSolution {
    /// corrector values per species, stride `d`, zero mean
    pub chi: Vec<f64>,
    /// relaxed gaps `F r + D_{y,r} χ`, per species, bond-major with stride `d`
    pub gaps: Vec<Vec<f64>>,
    pub phi: f64,
    pub stress: Grad,
    pub residual: f64,
    pub iterations: usize,
}

pub struct CellTerms {
    pub phi: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub stress: Grad,
    pub gaps: Vec<Vec<f64>>,
}

impl CellProblem {
    pub fn new(model: &InteractionModel, lat: &Multilattice) -> Result<CellProblem> {
        if !model.is_periodic() {
            return Err(Error::InvalidInput(
                "cell problems need a periodic model".into(),
            ));
        }
        model.check_lattice(lat)?;
        let mut links = Vec::new();
        let mut offsets = Vec::new();
        for a in 0..model.m() {
            let mut l = Vec::new();
            let mut o = Vec::new();
            for b in model.bonds(a) {
                l.push(lat.resolve(a, &b.offset)?);
                o.push(b.offset.to_f64());
            }
            links.push(l);
            offsets.push(o);
        }
        Ok(CellProblem {
            model: model.clone(),
            links,
            offsets,
        })
    }

    pub fn model(&self) -> &InteractionModel {
        &self.model
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }

    /// `Φ(χ) = ⟨V(F R + D_{y,R} χ)⟩_P` with its χ-gradient (Euclidean),
    /// χ-Hessian and stress `⟨Σ V'_r ⊗ r⟩_P`.
    pub fn terms(&self, f: &Grad, chi: &[f64]) -> Result<CellTerms> {
        let d = self.d();
        let m = self.m();
        let md = m * d;
        let mut out = CellTerms {
            phi: 0.0,
            grad: vec![0.0; md],
            hess: vec![0.0; md * md],
            stress: [0.0; 4],
            gaps: Vec::with_capacity(m),
        };
        let w = 1.0 / m as f64;
        for beta in 0..m {
            let mut gaps = Vec::with_capacity(self.links[beta].len() * d);
            for (b, link) in self.links[beta].iter().enumerate() {
                let r = self.offsets[beta][b];
                let a = link.target;
                let mut g = [0.0; 2];
                for i in 0..d {
                    let mut fr = 0.0;
                    for j in 0..d {
                        fr += f[i * d + j] * r[j];
                    }
                    g[i] = fr + chi[a * d + i] - chi[beta * d + i];
                }
                gaps.extend_from_slice(&g[..d]);
                let e = self.model.bond_eval(0, beta, b, &g[..d])?;
                out.phi += w * e.energy;
                for i in 0..d {
                    out.grad[a * d + i] += w * e.grad[i];
                    out.grad[beta * d + i] -= w * e.grad[i];
                    for j in 0..d {
                        out.stress[i * d + j] += w * e.grad[i] * r[j];
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        let h = w * e.hess[i * d + j];
                        out.hess[(a * d + i) * md + a * d + j] += h;
                        out.hess[(beta * d + i) * md + beta * d + j] += h;
                        out.hess[(a * d + i) * md + beta * d + j] -= h;
                        out.hess[(beta * d + i) * md + a * d + j] -= h;
                    }
                }
            }
            out.gaps.push(gaps);
        }
        Ok(out)
    }

    /// `L²(P)` norm of the Riesz residual `m ∂Φ/∂χ`.
    fn residual_norm(&self, grad: &[f64]) -> f64 {
        let m = self.m() as f64;
        (grad.iter().map(|g| (m * g).powi(2)).sum::<f64>() / m).sqrt()
    }
}

fn frob(f: &Grad) -> f64 {
    f.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub const CELL_TOL: f64 = 1e-12;

/// Zero-mean corrector reached by Newton from `guess` (zero by default).
pub fn solve_cell_problem(
    cell: &CellProblem,
    f: &Grad,
    guess: Option<&[f64]>,
) -> Result<CellSolution> {
    let d = cell.d();
    let m = cell.m();
    let md = m * d;
    let mut chi = match guess {
        Some(g) if g.len() == md => g.to_vec(),
        Some(g) => {
            return Err(Error::LengthMismatch {
                expected: md,
                got: g.len(),
            })
        }
        None => vec![0.0; md],
    };
    remove_mean(&mut chi, d);
    let target = CELL_TOL * (1.0 + frob(f));
    let max_iter = 50;
    let mut t = cell.terms(f, &chi)?;
    let mut rn = cell.residual_norm(&t.grad);
    for it in 0..=max_iter {
        if rn <= target || m == 1 {
            return Ok(CellSolution {
                chi,
                gaps: t.gaps,
                phi: t.phi,
                stress: t.stress,
                residual: rn,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        // shift the translation mode out of the kernel
        let mut h = t.hess.clone();
        let c = (0..md).map(|i| h[i * md + i].abs()).sum::<f64>() / md as f64 + 1.0;
        for a in 0..m {
            for b in 0..m {
                for k in 0..d {
                    h[(a * d + k) * md + b * d + k] += c / m as f64;
                }
            }
        }
        let neg: Vec<f64> = t.grad.iter().map(|v| -v).collect();
        let mut step = dense_solve(&h, md, &neg)?;
        remove_mean(&mut step, d);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = chi.iter().zip(&step).map(|(a, b)| a + s * b).collect();
            if let Ok(tt) = cell.terms(f, &trial) {
                let trn = cell.residual_norm(&tt.grad);
                if tt.phi <= t.phi + 1e-14 * (1.0 + t.phi.abs()) || trn < rn {
                    chi = trial;
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
                context: "cell problem".into(),
                residual: rn,
            });
        }
        remove_mean(&mut chi, d);
    }
    Err(Error::NoConvergence {
        context: "cell problem".into(),
        iterations: max_iter,
        residual: rn,
    })
}

/// `⟨1/ψ⟩⁻¹`
pub fn harmonic_mean(psi: &[f64]) -> Result<f64> {
    if psi.is_empty() || psi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidInput(
            "harmonic mean needs positive values".into(),
        ));
    }
    let s: f64 = psi.iter().map(|p| 1.0 / p).sum();
    Ok(psi.len() as f64 / s)
}

/// `Φ⁰`, `δΦ⁰` and a differenced `δ²Φ⁰` with a cache of cell solutions.
pub struct HomogenizedDensity {
    cell: CellProblem,
    cache: Mutex<HashMap<[i64; 4], CellSolution>>,
}

fn cache_key(f: &Grad) -> [i64; 4] {
    let mut k = [0i64; 4];
    for i in 0..4 {
        k[i] = (f[i] * 1e12).round() as i64;
    }
    k
}

impl HomogenizedDensity {
    pub fn new(cell: CellProblem) -> HomogenizedDensity {
        HomogenizedDensity {
            cell,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cell(&self) -> &CellProblem {
        &self.cell
    }

    pub fn d(&self) -> usize {
        self.cell.d()
    }

    /// Cell solution from the zero guess, cached on `F` rounded to 12 digits.
    pub fn solution(&self, f: &Grad) -> Result<CellSolution> {
        let key = cache_key(f);
        if let Some(s) = self
            .cache
            .lock()
            .map_err(|_| Error::Singular("cache poisoned".into()))?
            .get(&key)
        {
            return Ok(s.clone());
        }
        let s = solve_cell_problem(&self.cell, f, None)?;
        if let Ok(mut c) = self.cache.lock() {
            c.insert(key, s.clone());
        }
        Ok(s)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    pub fn phi0(&self, f: &Grad) -> Result<f64> {
        Ok(self.solution(f)?.phi)
    }

    pub fn dphi0(&self, f: &Grad) -> Result<Grad> {
        Ok(self.solution(f)?.stress)
    }

    /// `d²×d²` tangent by centred differences of `δΦ⁰`, symmetrized.
    pub fn d2phi0(&self, f: &Grad) -> Result<Vec<f64>> {
        let d = self.d();
        let dd = d * d;
        let scale = f[..dd].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let t = 1e-5 * scale;
        let mut c = vec![0.0; dd * dd];
        for kl in 0..dd {
            let mut fp = *f;
            let mut fm = *f;
            fp[kl] += t;
            fm[kl] -= t;
            // bypass the cache: the perturbed points are never reused
            let sp = solve_cell_problem(&self.cell, &fp, None)?.stress;
            let sm = solve_cell_problem(&self.cell, &fm, None)?.stress;
            for ij in 0..dd {
                c[ij * dd + kl] = (sp[ij] - sm[ij]) / (2.0 * t);
            }
        }
        for a in 0..dd {
            for b in a + 1..dd {
                let s = 0.5 * (c[a * dd + b] + c[b * dd + a]);
                c[a * dd + b] = s;
                c[b * dd + a] = s;
            }
        }
        Ok(c)
    }
}

/// `E⁰(u^h) = Σ_T |T| Φ⁰(∇u^h|_T)`.
pub fn homogenized_energy(
    mesh: &MacroMesh,
    density: &HomogenizedDensity,
    u: &P1Field,
) -> Result<f64> {
    let vals = par::try_map(mesh.num_elements(), |e| -> Result<f64> {
        let f = element_gradient(mesh, u, e)?;
        Ok(mesh.element(e).measure * density.phi0(&f)?)
    })?;
    Ok(vals.iter().sum())
}

/// Gradient and stiffness of `E⁰` at `u^h`.
pub fn homogenized_system(
    mesh: &MacroMesh,
    density: &HomogenizedDensity,
    u: &P1Field,
) -> Result<(Vec<f64>, CsrMatrix)> {
    let per = par::try_map(mesh.num_elements(), |e| -> Result<(Grad, Vec<f64>)> {
        let f = element_gradient(mesh, u, e)?;
        Ok((density.dphi0(&f)?, density.d2phi0(&f)?))
    })?;
    let stress: Vec<Grad> = per.iter().map(|p| p.0).collect();
    let tangent: Vec<Vec<f64>> = per.into_iter().map(|p| p.1).collect();
    Ok((
        assemble_stress(mesh, &stress),
        assemble_tangent(mesh, &tangent),
    ))
}

/// Zero-mean critical point of `E⁰(u^h) − load·u^h` for a nodal load vector.
pub fn solve_homogenized_fem(
    mesh: &MacroMesh,
    density: &HomogenizedDensity,
    load: &[f64],
) -> Result<(P1Field, MacroReport)> {
    if load.len() != mesh.num_nodes() * mesh.d() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_nodes() * mesh.d(),
            got: load.len(),
        });
    }
    let u0 = P1Field::zeros(mesh);
    macro_newton(mesh, load, &u0, 1e-10, 50, |u| {
        homogenized_system(mesh, density, u)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_cell(psi: &[f64]) -> CellProblem {
        let lat = Multilattice::chain(1, psi.len()).unwrap();
        CellProblem::new(&InteractionModel::linear_spring_1d(psi).unwrap(), &lat).unwrap()
    }

    #[test]
    fn worked_two_spring_cell() {
        let cell = chain_cell(&[1.0, 3.0]);
        let s = solve_cell_problem(&cell, &[1.0, 0.0, 0.0, 0.0], None).unwrap();
        assert!((s.gaps[0][0] - 0.75).abs() < 1e-14);
        assert!((s.gaps[1][0] - 0.25).abs() < 1e-14);
        assert!((s.phi - 0.1875).abs() < 1e-14);
        assert!((s.stress[0] - 1.5 * 0.25).abs() < 1e-14);
    }

    #[test]
    fn simple_lattice_has_no_corrector() {
        let cell = chain_cell(&[2.0]);
        let s = solve_cell_problem(&cell, &[0.4, 0.0, 0.0, 0.0], None).unwrap();
        assert_eq!(s.chi, vec![0.0]);
        assert!((s.phi - 2.0 * 0.16 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_means() {
        assert!((harmonic_mean(&[1.0, 3.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!((harmonic_mean(&[2.5; 4]).unwrap() - 2.5).abs() < 1e-15);
        let (a, b) = (0.7, 4.2);
        assert!((harmonic_mean(&[a, b]).unwrap() - 2.0 * a * b / (a + b)).abs() < 1e-15);
        assert!(harmonic_mean(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_gradient_zero_density() {
        let d = HomogenizedDensity::new(chain_cell(&[1.0, 3.0]));
        assert_eq!(d.phi0(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(d.dphi0(&[0.0; 4]).unwrap(), [0.0; 4]);
        d.phi0(&[0.3, 0.0, 0.0, 0.0]).unwrap();
        d.phi0(&[0.3, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.cached_entries(), 2);
    }
}
