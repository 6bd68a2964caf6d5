//! Full atomistic energy, equilibrium and eigenmodes.
//!
//! [`Patch`] is the periodic assembly kernel shared with the HQC micro
//! problems: a block of `size^d` Bravais cells with wrap-around bonds whose
//! model parameters are read at the block's global position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{
    average, cell_coords, cell_index, frac_f64, remove_mean, LatticeField, Link, Multilattice,
};
use crate::linalg::{dot, norm, CsrMatrix, Method, ZeroMeanSolver};
use crate::par;
use crate::potential::{BondEval, InteractionModel};

#[derive(Clone, Debug)]
pub struct Patch<'a> {
    lat: &'a Multilattice,
    model: &'a InteractionModel,
    origin: [i64; 2],
    size: usize,
    links: Vec<Vec<Link>>,
    base: Option<Vec<Vec<f64>>>,
}

impl<'a> Patch<'a> {
    /// The whole periodic lattice.
    pub fn full(lat: &'a Multilattice, model: &'a InteractionModel) -> Result<Patch<'a>> {
        Patch::block(lat, model, [0, 0], lat.n())
    }

    /// `size^d` cells starting at global cell coordinates `origin`, periodic
    /// with period `size ε`.
    pub fn block(
        lat: &'a Multilattice,
        model: &'a InteractionModel,
        origin: [i64; 2],
        size: usize,
    ) -> Result<Patch<'a>> {
        model.check_lattice(lat)?;
        if size == 0 || size > lat.n() {
            return Err(Error::InvalidInput(format!(
                "block size {size} out of range"
            )));
        }
        let links = (0..lat.m())
            .map(|a| {
                model
                    .bonds(a)
                    .iter()
                    .map(|b| lat.resolve(a, &b.offset))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Patch {
            lat,
            model,
            origin,
            size,
            links,
            base: None,
        })
    }

    /// Affine part added to every gap, per species and bond (stride `d`).
    pub fn with_base(mut self, base: Vec<Vec<f64>>) -> Patch<'a> {
        self.base = Some(base);
        self
    }

    pub fn lattice(&self) -> &Multilattice {
        self.lat
    }

    pub fn model(&self) -> &InteractionModel {
        self.model
    }

    pub fn origin(&self) -> [i64; 2] {
        self.origin
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn d(&self) -> usize {
        self.lat.d()
    }

    pub fn num_cells(&self) -> usize {
        self.size.pow(self.lat.d() as u32)
    }

    pub fn num_sites(&self) -> usize {
        self.num_cells() * self.lat.m()
    }

    pub fn dofs(&self) -> usize {
        self.num_sites() * self.d()
    }

    /// Global Bravais cell index of a local cell.
    pub fn global_cell(&self, local: usize) -> usize {
        let c = cell_coords(local, self.size, self.d());
        cell_index(
            [c[0] + self.origin[0], c[1] + self.origin[1]],
            self.lat.n(),
            self.d(),
        )
    }

    /// Unwrapped absolute position of a local site.
    pub fn position(&self, site: usize) -> [f64; 2] {
        let m = self.lat.m();
        let c = cell_coords(site / m, self.size, self.d());
        let p = self.lat.shift(site % m);
        let eps = self.lat.eps();
        let mut x = [0.0; 2];
        for k in 0..self.d() {
            x[k] = ((c[k] + self.origin[k]) as f64 + frac_f64(p[k])) * eps;
        }
        x
    }

    pub fn neighbor(&self, site: usize, link: &Link) -> usize {
        let m = self.lat.m();
        let c = cell_coords(site / m, self.size, self.d());
        let cell = cell_index(
            [c[0] + link.cell_shift[0], c[1] + link.cell_shift[1]],
            self.size,
            self.d(),
        );
        cell * m + link.target
    }

    pub fn links(&self, species: usize) -> &[Link] {
        &self.links[species]
    }

    /// Gap of bond `b` at `site`: base + (w_t − w_s)/ε.
    pub fn gap(&self, w: &[f64], site: usize, b: usize, out: &mut [f64]) {
        let d = self.d();
        let a = site % self.lat.m();
        let t = self.neighbor(site, &self.links[a][b]);
        let inv = self.lat.n() as f64;
        for k in 0..d {
            let base = self.base.as_ref().map_or(0.0, |v| v[a][b * d + k]);
            out[k] = base + (w[t * d + k] - w[site * d + k]) * inv;
        }
    }

    fn eval_site(&self, w: &[f64], site: usize, out: &mut [BondEval]) -> Result<()> {
        let a = site % self.lat.m();
        let cell = self.global_cell(site / self.lat.m());
        let mut g = [0.0; 2];
        for b in 0..self.links[a].len() {
            self.gap(w, site, b, &mut g);
            out[b] = self.model.bond_eval(cell, a, b, &g[..self.d()])?;
        }
        Ok(())
    }

    fn eval_all(&self, w: &[f64]) -> Result<Vec<BondEval>> {
        if w.len() != self.dofs() {
            return Err(Error::LengthMismatch {
                expected: self.dofs(),
                got: w.len(),
            });
        }
        let k = self.model.max_bonds().max(1);
        let n = self.num_sites();
        let chunk = 256;
        let parts = par::try_map(n.div_ceil(chunk), |c| -> Result<Vec<BondEval>> {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            let mut local = vec![BondEval::default(); (hi - lo) * k];
            for s in lo..hi {
                self.eval_site(w, s, &mut local[(s - lo) * k..(s - lo + 1) * k])?;
            }
            Ok(local)
        })?;
        let evals: Vec<BondEval> = parts.concat();
        Ok(evals)
    }

    /// Bond evaluations, [`Patch::stride`] slots per site.
    pub fn bond_evals(&self, w: &[f64]) -> Result<Vec<BondEval>> {
        self.eval_all(w)
    }

    pub fn stride(&self) -> usize {
        self.model.max_bonds().max(1)
    }

    /// Riesz-scaled adjoint of the gap map: given one vector per bond slot,
    /// returns `Σ_b v_b (δ_t − δ_s)/ε`.
    pub fn scatter(&self, per_bond: &[[f64; 2]]) -> Vec<f64> {
        let k = self.stride();
        let d = self.d();
        let m = self.lat.m();
        let inv = self.lat.n() as f64;
        let mut g = vec![0.0; self.dofs()];
        for s in 0..self.num_sites() {
            for (b, link) in self.links[s % m].iter().enumerate() {
                let t = self.neighbor(s, link);
                let v = per_bond[s * k + b];
                for i in 0..d {
                    g[t * d + i] += v[i] * inv;
                    g[s * d + i] -= v[i] * inv;
                }
            }
        }
        g
    }

    /// Per-site energies `V(D_R w)`.
    pub fn site_energies(&self, w: &[f64]) -> Result<Vec<f64>> {
        let k = self.model.max_bonds().max(1);
        let evals = self.eval_all(w)?;
        let m = self.lat.m();
        Ok((0..self.num_sites())
            .map(|s| {
                let nb = self.links[s % m].len();
                evals[s * k..s * k + nb].iter().map(|e| e.energy).sum()
            })
            .collect())
    }

    /// Average site energy over the patch.
    pub fn energy(&self, w: &[f64]) -> Result<f64> {
        let e = self.site_energies(w)?;
        Ok(e.iter().sum::<f64>() / e.len() as f64)
    }

    /// Riesz representer of the energy derivative with respect to the patch
    /// average inner product (`N ∂E/∂w`).
    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let k = self.model.max_bonds().max(1);
        let evals = self.eval_all(w)?;
        let d = self.d();
        let m = self.lat.m();
        let inv = self.lat.n() as f64;
        let mut g = vec![0.0; w.len()];
        for s in 0..self.num_sites() {
            let a = s % m;
            for (b, link) in self.links[a].iter().enumerate() {
                let t = self.neighbor(s, link);
                let e = &evals[s * k + b];
                for i in 0..d {
                    g[t * d + i] += e.grad[i] * inv;
                    g[s * d + i] -= e.grad[i] * inv;
                }
            }
        }
        Ok(g)
    }

    /// Riesz Hessian `N ∂²E/∂w²`.
    pub fn hessian(&self, w: &[f64]) -> Result<CsrMatrix> {
        let k = self.model.max_bonds().max(1);
        let evals = self.eval_all(w)?;
        let d = self.d();
        let m = self.lat.m();
        let inv2 = (self.lat.n() as f64).powi(2);
        let mut t = Vec::with_capacity(self.num_sites() * k * 4 * d * d);
        for s in 0..self.num_sites() {
            let a = s % m;
            for (b, link) in self.links[a].iter().enumerate() {
                let tt = self.neighbor(s, link);
                let e = &evals[s * k + b];
                for i in 0..d {
                    for j in 0..d {
                        let h = e.hess[i * d + j] * inv2;
                        t.push((tt * d + i, tt * d + j, h));
                        t.push((s * d + i, s * d + j, h));
                        t.push((s * d + i, tt * d + j, -h));
                        t.push((tt * d + i, s * d + j, -h));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(w.len(), t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            method: Method::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Newton for `min E(w) − ⟨f, w⟩` on a patch over zero-mean fields.
///
/// The residual is measured as `res_scale · ‖∇E − f‖_{L²(patch)}` and the
/// iteration stops once it is at most `opts.tol · tol_scale`.
pub fn newton_zero_mean(
    patch: &Patch,
    load: Option<&[f64]>,
    guess: &[f64],
    opts: &NewtonOptions,
    res_scale: f64,
    tol_scale: f64,
    context: &str,
) -> Result<(Vec<f64>, NewtonReport)> {
    let d = patch.d();
    let nsites = patch.num_sites() as f64;
    let mut w = guess.to_vec();
    remove_mean(&mut w, d);
    let objective = |w: &[f64]| -> Result<f64> {
        let e = patch.energy(w)?;
        Ok(match load {
            Some(f) => e - dot(f, w) / nsites,
            None => e,
        })
    };
    let residual = |w: &[f64]| -> Result<(Vec<f64>, f64)> {
        let mut r = patch.gradient(w)?;
        if let Some(f) = load {
            for (ri, fi) in r.iter_mut().zip(f) {
                *ri -= fi;
            }
        }
        let n = res_scale * norm(&r) / nsites.sqrt();
        Ok((r, n))
    };
    let target = opts.tol * tol_scale;
    let (mut r, mut rn) = residual(&w)?;
    let mut obj = objective(&w)?;
    let mut history = vec![rn];
    let mut stalled = 0;
    for it in 0..=opts.max_iter {
        // round-off floor: the residual sits near the target and Newton no longer reduces it
        if rn <= target || (stalled >= 2 && rn <= 100.0 * target) {
            return Ok((
                w,
                NewtonReport {
                    iterations: it,
                    residual: rn,
                    history,
                },
            ));
        }
        if it == opts.max_iter {
            break;
        }
        let h = patch.hessian(&w)?;
        let solver = ZeroMeanSolver::new(&h, d, opts.method)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = solver.solve(&neg)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            if let (Ok(o), Ok((rt, rtn))) = (objective(&trial), residual(&trial)) {
                if o <= obj + 1e-13 * (1.0 + obj.abs()) || rtn < rn {
                    w = trial;
                    obj = o;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearch {
                context: context.to_string(),
                residual: rn,
            });
        }
        remove_mean(&mut w, d);
        let prev = *history.last().unwrap_or(&f64::INFINITY);
        stalled = if rn > 0.5 * prev { stalled + 1 } else { 0 };
        history.push(rn);
    }
    Err(Error::NoConvergence {
        context: context.to_string(),
        iterations: opts.max_iter,
        residual: rn,
    })
}

/// `Π(u) = E(u) − ⟨f, u⟩_ℳ` on the full lattice.
#[derive(Clone, Debug)]
pub struct EquilibriumProblem {
    pub lattice: Multilattice,
    pub model: InteractionModel,
    pub force: LatticeField,
}

impl EquilibriumProblem {
    pub fn new(
        lattice: Multilattice,
        model: InteractionModel,
        force: LatticeField,
    ) -> Result<Self> {
        model.check_lattice(&lattice)?;
        if force.d != lattice.d() || force.sites() != lattice.num_sites() {
            return Err(Error::LengthMismatch {
                expected: lattice.num_sites() * lattice.d(),
                got: force.values.len(),
            });
        }
        let avg = average(&force);
        let scale = force.max_abs().max(1.0);
        if avg.iter().any(|a| a.abs() > 1e-12 * scale) {
            return Err(Error::InvalidInput(
                "external force must have zero mean".into(),
            ));
        }
        Ok(EquilibriumProblem {
            lattice,
            model,
            force,
        })
    }

    pub fn unloaded(lattice: Multilattice, model: InteractionModel) -> Result<Self> {
        let f = LatticeField::zeros(&lattice);
        EquilibriumProblem::new(lattice, model, f)
    }

    pub fn patch(&self) -> Result<Patch<'_>> {
        Patch::full(&self.lattice, &self.model)
    }
}

pub fn total_energy(p: &EquilibriumProblem, u: &LatticeField) -> Result<f64> {
    p.patch()?.energy(&u.values)
}

pub fn energy_gradient(p: &EquilibriumProblem, u: &LatticeField) -> Result<LatticeField> {
    Ok(LatticeField::from_values(
        u.d,
        p.patch()?.gradient(&u.values)?,
    ))
}

pub fn energy_hessian(p: &EquilibriumProblem, u: &LatticeField) -> Result<CsrMatrix> {
    p.patch()?.hessian(&u.values)
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub u: LatticeField,
    pub report: NewtonReport,
}

/// Zero-mean critical point of `Π`, residual `≤ tol (1 + ‖f‖)` in the discrete L² norm.
pub fn solve_equilibrium(
    p: &EquilibriumProblem,
    guess: &LatticeField,
    opts: &NewtonOptions,
) -> Result<Equilibrium> {
    let patch = p.patch()?;
    let fnorm = crate::lattice::inner_product(&p.force, &p.force)?.sqrt();
    let (w, report) = newton_zero_mean(
        &patch,
        Some(&p.force.values),
        &guess.values,
        opts,
        1.0,
        1.0 + fnorm,
        "atomistic equilibrium",
    )?;
    Ok(Equilibrium {
        u: LatticeField::from_values(p.lattice.d(), w),
        report,
    })
}

#[derive(Clone, Debug)]
pub struct Eigenmode {
    pub mode: LatticeField,
    pub eigenvalue: f64,
    pub iterations: usize,
}

/// Mass-weighted projection removing the translation mode.
fn mass_orthogonalize(v: &mut [f64], mass: &[f64], d: usize) {
    let total: f64 = mass.iter().sum();
    for k in 0..d {
        let c: f64 = (0..mass.len()).map(|i| mass[i] * v[i * d + k]).sum::<f64>() / total;
        for i in 0..mass.len() {
            v[i * d + k] -= c;
        }
    }
}

fn mass_norm(v: &[f64], mass: &[f64], d: usize) -> f64 {
    let s: f64 = (0..v.len()).map(|i| mass[i / d] * v[i] * v[i]).sum();
    (s / mass.len() as f64).sqrt()
}

/// Rayleigh quotient `vᵀHv / vᵀMv`.
pub fn rayleigh_quotient(h: &CsrMatrix, mass: &[f64], v: &[f64], d: usize) -> f64 {
    let hv = h.matvec(v);
    let mv: f64 = (0..v.len()).map(|i| mass[i / d] * v[i] * v[i]).sum();
    dot(v, &hv) / mv
}

/// Generalized eigenvector of `(δ²E(u_eq), M)` with the smallest nonzero
/// eigenvalue, by inverse iteration on the mass-orthogonal complement of
/// translations. Normalized to unit mass norm; first significant entry positive.
pub fn slowest_eigenmode(
    p: &EquilibriumProblem,
    u_eq: &LatticeField,
    mass: &[f64],
) -> Result<Eigenmode> {
    let d = p.lattice.d();
    let nsites = p.lattice.num_sites();
    if mass.len() != nsites || mass.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidInput(
            "masses must be positive, one per site".into(),
        ));
    }
    let h = energy_hessian(p, u_eq)?;
    let solver = ZeroMeanSolver::new(&h, d, Method::Auto)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut v: Vec<f64> = (0..nsites * d)
        .map(|i| {
            let x = p.lattice.position(i / d)[0];
            (two_pi * x).cos() + 0.5 * (two_pi * x).sin() + 1e-3 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    mass_orthogonalize(&mut v, mass, d);
    let nv = mass_norm(&v, mass, d);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = rayleigh_quotient(&h, mass, &v, d);
    let max_iter = 1000;
    for it in 1..=max_iter {
        let mv: Vec<f64> = (0..v.len()).map(|i| mass[i / d] * v[i]).collect();
        let mut next = solver.solve(&mv)?;
        mass_orthogonalize(&mut next, mass, d);
        let nn = mass_norm(&next, mass, d);
        if !(nn > 0.0) {
            return Err(Error::Singular("inverse iteration collapsed".into()));
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let new_lambda = rayleigh_quotient(&h, mass, &next, d);
        v = next;
        let hv = h.matvec(&v);
        let res: Vec<f64> = (0..v.len())
            .map(|i| hv[i] - new_lambda * mass[i / d] * v[i])
            .collect();
        let scale = new_lambda.abs()
            * (v.iter()
                .enumerate()
                .map(|(i, x)| (mass[i / d] * x).powi(2))
                .sum::<f64>())
            .sqrt();
        let converged = (new_lambda - lambda).abs() <= 1e-13 * new_lambda.abs()
            && norm(&res) <= 1e-7 * scale.max(1e-300);
        lambda = new_lambda;
        if converged {
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * vmax) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            return Ok(Eigenmode {
                mode: LatticeField::from_values(d, v),
                eigenvalue: lambda,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        context: "inverse iteration".into(),
        iterations: max_iter,
        residual: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_chain_energy() {
        let lat = Multilattice::chain(2, 2).unwrap();
        let model = InteractionModel::linear_spring_1d(&[1.0, 3.0]).unwrap();
        let p = EquilibriumProblem::unloaded(lat, model).unwrap();
        let u = LatticeField::from_values(1, vec![0.0, 0.05, 0.0, 0.05]);
        // gaps are 0.05 / ε = ±0.1 on alternating springs
        let e = total_energy(&p, &u).unwrap();
        let by_hand =
            (1.0 * 0.01 / 2.0 + 3.0 * 0.01 / 2.0 + 1.0 * 0.01 / 2.0 + 3.0 * 0.01 / 2.0) / 4.0;
        assert!((e - by_hand).abs() < 1e-15);
        let c = LatticeField::from_values(1, vec![0.3; 4]);
        assert_eq!(total_energy(&p, &c).unwrap(), 0.0);
    }

    #[test]
    fn unloaded_spring_equilibrium_is_zero() {
        let lat = Multilattice::chain(8, 2).unwrap();
        let model = InteractionModel::linear_spring_1d(&[1.0, 3.0]).unwrap();
        let p = EquilibriumProblem::unloaded(lat.clone(), model).unwrap();
        let g = energy_gradient(&p, &LatticeField::zeros(&lat)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        let eq =
            solve_equilibrium(&p, &LatticeField::zeros(&lat), &NewtonOptions::default()).unwrap();
        assert_eq!(eq.u.max_abs(), 0.0);
    }

    #[test]
    fn rejects_unbalanced_force() {
        let lat = Multilattice::chain(4, 1).unwrap();
        let model = InteractionModel::linear_spring_1d(&[1.0]).unwrap();
        let f = LatticeField::from_values(1, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(EquilibriumProblem::new(lat, model, f).is_err());
    }
}
