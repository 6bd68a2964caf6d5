//! Heterogeneous quasicontinuum: micro problems on sampling domains, the
//! macro energy with its gradient and stiffness, nested Newton and
//! reconstruction of the atomistic field.

use std::sync::{Arc, OnceLock};

use num_rational::Rational64;

use crate::atomistic::{newton_zero_mean, NewtonOptions, Patch};
use crate::error::{Error, Result};
use crate::fem::{
    affine_extension, assemble_stress, assemble_tangent, element_gradient, macro_newton, Grad,
    MacroMesh, MacroReport, P1Field,
};
use crate::lattice::{cell_index, LatticeField, Multilattice};
use crate::linalg::{dense_min_eigenvalue, dot, CsrMatrix, Method, ZeroMeanSolver};
use crate::par;
use crate::potential::InteractionModel;

/// Block of `size^d` Bravais cells around the representative site of an
/// element. `size = 1` is the single period `x_rep + ε𝒫`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingDomain {
    pub element: usize,
    /// cell coordinates of `x_rep`, unwrapped next to the element
    pub rep: [i64; 2],
    /// first cell of the block, unwrapped
    pub origin: [i64; 2],
    pub size: usize,
}

impl SamplingDomain {
    pub fn rep_position(&self, lat: &Multilattice) -> [f64; 2] {
        let eps = lat.eps();
        let mut x = [0.0; 2];
        for k in 0..lat.d() {
            x[k] = self.rep[k] as f64 * eps;
        }
        x
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Representative Bravais site nearest each barycenter (ties toward the
/// smaller coordinate) with a block of `size` cells per axis around it.
pub fn place_sampling_domains(
    mesh: &MacroMesh,
    lat: &Multilattice,
    size: usize,
) -> Result<Vec<SamplingDomain>> {
    mesh.check_aligned(lat)?;
    let n = lat.n();
    if size == 0 || size > n || !n.is_multiple_of(size) {
        return Err(Error::InvalidInput(format!(
            "sampling domain of {size} cells does not tile 1/eps = {n}"
        )));
    }
    let d = mesh.d();
    let k = (n / mesh.n()) as i64;
    let den = (d + 1) as i64;
    Ok(mesh
        .elements()
        .iter()
        .enumerate()
        .map(|(e, el)| {
            let mut rep = [0i64; 2];
            let mut origin = [0i64; 2];
            for j in 0..d {
                let num: i64 = el.corners.iter().map(|c| c[j]).sum::<i64>() * k;
                rep[j] = ceil_div(2 * num - den, 2 * den);
                origin[j] = if size == n {
                    0
                } else {
                    rep[j] - (size / 2) as i64
                };
            }
            SamplingDomain {
                element: e,
                rep,
                origin,
                size,
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
enum Corrector {
    Owned(Vec<f64>),
    /// `Σ F_kl Z^{kl}` for quadratic models
    Linear,
    Zero,
}

/// Converged micro problem of one element.
#[derive(Clone, Debug)]
pub struct MicroState {
    pub domain: SamplingDomain,
    pub grad: Grad,
    /// `⟨V⟩` over the sampling domain
    pub energy: f64,
    /// `⟨Σ V'_r ⊗ r⟩` over the sampling domain
    pub stress: Grad,
    /// relaxed tangent `C[(i,j),(k,l)]`, `d²×d²`
    pub tangent: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `Some(false)` when the micro Hessian has a negative direction
    pub stable: Option<bool>,
    d: usize,
    dofs: usize,
    corrector: Corrector,
    basis: Arc<Vec<Vec<f64>>>,
}

impl MicroState {
    /// Zero-mean corrector `R_T(u^h) − u^h_lin` on the sampling domain.
    pub fn corrector(&self) -> Vec<f64> {
        match &self.corrector {
            Corrector::Owned(v) => v.clone(),
            Corrector::Zero => vec![0.0; self.dofs],
            Corrector::Linear => {
                let dd = self.d * self.d;
                let mut u = vec![0.0; self.dofs];
                for kl in 0..dd {
                    if self.grad[kl] != 0.0 {
                        for (ui, zi) in u.iter_mut().zip(&self.basis[kl]) {
                            *ui += self.grad[kl] * zi;
                        }
                    }
                }
                u
            }
        }
    }

    /// Corrector derivatives `Z^{kl} = ∂U/∂F_kl`; empty for affine closure.
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dofs(&self) -> usize {
        self.dofs
    }
}

/// `δR_T(λ e_i) − (λ e_i)_lin` for a basis function with gradient `g`, one
/// field per component `i`.
pub fn micro_sensitivity(state: &MicroState, g: [f64; 2]) -> Vec<Vec<f64>> {
    let d = state.d;
    (0..d)
        .map(|i| {
            let mut s = vec![0.0; state.dofs];
            if state.basis.is_empty() {
                return s;
            }
            for l in 0..d {
                for (si, zi) in s.iter_mut().zip(&state.basis[i * d + l]) {
                    *si += g[l] * zi;
                }
            }
            s
        })
        .collect()
}

/// `Σ_T |T| ⟨V(D R_T(u^h))⟩_{S_T}`
pub fn hqc_energy(mesh: &MacroMesh, states: &[MicroState]) -> f64 {
    mesh.elements()
        .iter()
        .zip(states)
        .map(|(el, s)| el.measure * s.energy)
        .sum()
}

/// Nodal residual `Σ_T |T| S_T ∇λ_a`.
pub fn hqc_gradient(mesh: &MacroMesh, states: &[MicroState]) -> Vec<f64> {
    let stress: Vec<Grad> = states.iter().map(|s| s.stress).collect();
    assemble_stress(mesh, &stress)
}

pub fn hqc_hessian(mesh: &MacroMesh, states: &[MicroState]) -> CsrMatrix {
    let tangent: Vec<Vec<f64>> = states.iter().map(|s| s.tangent.clone()).collect();
    assemble_tangent(mesh, &tangent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadRule {
    /// average of `f·v^h` over each sampling domain
    Domain,
    /// `f·v^h` at the representative site only
    Representative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closure {
    /// relaxed micro correctors
    Relaxed,
    /// corrector forced to zero (Cauchy–Born)
    Affine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HqcOptions {
    /// relative macro residual
    pub tol: f64,
    pub max_iter: usize,
    /// Bravais cells per axis in each sampling domain
    pub domain_size: usize,
    pub load: LoadRule,
    pub check_stability: bool,
    pub method: Method,
}

impl Default for HqcOptions {
    fn default() -> Self {
        HqcOptions {
            tol: 1e-10,
            max_iter: 30,
            domain_size: 1,
            load: LoadRule::Domain,
            check_stability: false,
            method: Method::Auto,
        }
    }
}

impl HqcOptions {
    pub fn inner_tol(&self) -> f64 {
        0.01 * self.tol
    }
}

#[derive(Clone, Debug)]
pub struct HqcSolution {
    pub u: P1Field,
    pub states: Vec<MicroState>,
    pub energy: f64,
    pub closure: Closure,
    pub report: MacroReport,
}

/// Precomputed linear response of one sampling domain for quadratic models.
#[derive(Debug)]
struct LinearCell {
    basis: Arc<Vec<Vec<f64>>>,
    tangent: Vec<f64>,
    residual: [f64; 4],
}

/// HQC discretization of a lattice model on a macro mesh.
pub struct Hqc<'a> {
    lat: &'a Multilattice,
    model: &'a InteractionModel,
    mesh: &'a MacroMesh,
    opts: HqcOptions,
    domains: Vec<SamplingDomain>,
    keys: Vec<usize>,
    key_origins: Vec<[i64; 2]>,
    relaxed: OnceLock<Vec<Arc<LinearCell>>>,
    affine: OnceLock<Vec<Arc<LinearCell>>>,
    owners: OnceLock<Vec<(usize, [f64; 2])>>,
}

struct Linearization {
    energy: f64,
    stress: Grad,
    tangent: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl<'a> Hqc<'a> {
    pub fn new(
        lat: &'a Multilattice,
        model: &'a InteractionModel,
        mesh: &'a MacroMesh,
        opts: HqcOptions,
    ) -> Result<Hqc<'a>> {
        model.check_lattice(lat)?;
        if !(opts.tol > 0.0) || opts.max_iter == 0 {
            return Err(Error::InvalidInput(
                "tolerance and iteration budget must be positive".into(),
            ));
        }
        let domains = place_sampling_domains(mesh, lat, opts.domain_size)?;
        let n = lat.n() as i64;
        let mut key_origins: Vec<[i64; 2]> = Vec::new();
        let mut keys = Vec::with_capacity(domains.len());
        for dom in &domains {
            let key = if model.is_periodic() {
                [0, 0]
            } else {
                [dom.origin[0].rem_euclid(n), dom.origin[1].rem_euclid(n)]
            };
            let idx = match key_origins.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    key_origins.push(key);
                    key_origins.len() - 1
                }
            };
            keys.push(idx);
        }
        Ok(Hqc {
            lat,
            model,
            mesh,
            opts,
            domains,
            keys,
            key_origins,
            relaxed: OnceLock::new(),
            affine: OnceLock::new(),
            owners: OnceLock::new(),
        })
    }

    pub fn lattice(&self) -> &Multilattice {
        self.lat
    }

    pub fn model(&self) -> &InteractionModel {
        self.model
    }

    pub fn mesh(&self) -> &MacroMesh {
        self.mesh
    }

    pub fn options(&self) -> &HqcOptions {
        &self.opts
    }

    pub fn domains(&self) -> &[SamplingDomain] {
        &self.domains
    }

    /// Number of distinct micro problems up to translation.
    pub fn distinct_domains(&self) -> usize {
        self.key_origins.len()
    }

    fn base(&self, f: &Grad) -> Vec<Vec<f64>> {
        let d = self.lat.d();
        (0..self.lat.m())
            .map(|a| {
                let mut v = Vec::new();
                for b in self.model.bonds(a) {
                    let r = b.offset.to_f64();
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += f[i * d + j] * r[j];
                        }
                        v.push(acc);
                    }
                }
                v
            })
            .collect()
    }

    /// Micro patch of an element with affine data `F`.
    pub fn patch(&self, e: usize, f: &Grad) -> Result<Patch<'a>> {
        let dom = &self.domains[e];
        Ok(Patch::block(self.lat, self.model, dom.origin, dom.size)?.with_base(self.base(f)))
    }

    fn linearize(&self, patch: &Patch, w: &[f64], closure: Closure) -> Result<Linearization> {
        let d = patch.d();
        let dd = d * d;
        let m = self.lat.m();
        let k = patch.stride();
        let nsites = patch.num_sites();
        let inv_n = 1.0 / nsites as f64;
        let evals = patch.bond_evals(w)?;
        let mut energy = 0.0;
        let mut stress = [0.0; 4];
        let mut c = vec![0.0; dd * dd];
        for s in 0..nsites {
            let a = s % m;
            for (b, bond) in self.model.bonds(a).iter().enumerate() {
                let r = bond.offset.to_f64();
                let ev = &evals[s * k + b];
                energy += ev.energy;
                for i in 0..d {
                    for j in 0..d {
                        stress[i * d + j] += ev.grad[i] * r[j] * inv_n;
                        for kk in 0..d {
                            for l in 0..d {
                                c[(i * d + j) * dd + kk * d + l] +=
                                    ev.hess[i * d + kk] * r[j] * r[l] * inv_n;
                            }
                        }
                    }
                }
            }
        }
        energy *= inv_n;
        let mut basis = Vec::new();
        if closure == Closure::Relaxed && nsites > 1 {
            let rb: Vec<Vec<f64>> = (0..dd)
                .map(|kl| {
                    let (kk, l) = (kl / d, kl % d);
                    let per: Vec<[f64; 2]> = (0..nsites * k)
                        .map(|slot| {
                            let s = slot / k;
                            let b = slot % k;
                            let bonds = self.model.bonds(s % m);
                            if b >= bonds.len() {
                                return [0.0; 2];
                            }
                            let r = bonds[b].offset.to_f64();
                            let ev = &evals[slot];
                            let mut v = [0.0; 2];
                            for i in 0..d {
                                v[i] = ev.hess[i * d + kk] * r[l];
                            }
                            v
                        })
                        .collect();
                    patch.scatter(&per)
                })
                .collect();
            let solver = ZeroMeanSolver::new(&patch.hessian(w)?, d, self.opts.method)?;
            for kl in 0..dd {
                let z: Vec<f64> = solver.solve(&rb[kl])?.into_iter().map(|v| -v).collect();
                for ij in 0..dd {
                    c[ij * dd + kl] += dot(&rb[ij], &z) * inv_n;
                }
                basis.push(z);
            }
            for p in 0..dd {
                for q in p + 1..dd {
                    let s = 0.5 * (c[p * dd + q] + c[q * dd + p]);
                    c[p * dd + q] = s;
                    c[q * dd + p] = s;
                }
            }
        } else if closure == Closure::Relaxed {
            basis = vec![vec![0.0; patch.dofs()]; dd];
        }
        Ok(Linearization {
            energy,
            stress,
            tangent: c,
            basis,
        })
    }

    fn stability(&self, patch: &Patch, w: &[f64]) -> Result<Option<bool>> {
        if !self.opts.check_stability || patch.dofs() > 600 {
            return Ok(None);
        }
        let n = patch.dofs();
        let d = patch.d();
        let mut h = patch.hessian(w)?.to_dense();
        let shift = h.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
        let nodes = (n / d) as f64;
        for p in 0..n {
            for q in 0..n {
                if p % d == q % d {
                    h[p * n + q] += shift / nodes;
                }
            }
        }
        let lmin = dense_min_eigenvalue(&h, n)?;
        Ok(Some(lmin >= -1e-10 * shift))
    }

    fn linear_cells(&self, closure: Closure) -> Result<&[Arc<LinearCell>]> {
        let lock = match closure {
            Closure::Relaxed => &self.relaxed,
            Closure::Affine => &self.affine,
        };
        if let Some(v) = lock.get() {
            return Ok(v);
        }
        let d = self.lat.d();
        let dd = d * d;
        let cells = par::try_map(self.key_origins.len(), |key| -> Result<Arc<LinearCell>> {
            let e = self.keys.iter().position(|k| *k == key).unwrap_or(0);
            let zero = [0.0; 4];
            let patch = self.patch(e, &zero)?;
            let w = vec![0.0; patch.dofs()];
            let lin = self
                .linearize(&patch, &w, closure)
                .map_err(|err| err.in_element(e))?;
            let mut residual = [0.0; 4];
            if closure == Closure::Relaxed {
                let eps = self.lat.eps();
                for kl in 0..dd {
                    let mut unit = [0.0; 4];
                    unit[kl] = 1.0;
                    let g = self.patch(e, &unit)?.gradient(&lin.basis[kl])?;
                    residual[kl] = eps * dot(&g, &g).sqrt() / (patch.num_sites() as f64).sqrt();
                }
            }
            Ok(Arc::new(LinearCell {
                basis: Arc::new(lin.basis),
                tangent: lin.tangent,
                residual,
            }))
        })?;
        let _ = lock.set(cells);
        Ok(lock.get().map(|v| v.as_slice()).unwrap_or(&[]))
    }

    /// Micro problem of element `e` under affine data with gradient `f`.
    pub fn micro_solve(
        &self,
        e: usize,
        f: &Grad,
        guess: Option<&[f64]>,
        closure: Closure,
    ) -> Result<MicroState> {
        self.micro_solve_inner(e, f, guess, closure)
            .map_err(|err| err.in_element(e))
    }

    fn micro_solve_inner(
        &self,
        e: usize,
        f: &Grad,
        guess: Option<&[f64]>,
        closure: Closure,
    ) -> Result<MicroState> {
        let d = self.lat.d();
        let dd = d * d;
        let dom = self.domains[e];
        let dofs = dom.size.pow(d as u32) * self.lat.m() * d;
        if self.model.is_quadratic() {
            let cell = self.linear_cells(closure)?[self.keys[e]].clone();
            let c = &cell.tangent;
            let mut stress = [0.0; 4];
            let mut energy = 0.0;
            let mut residual = 0.0;
            for ij in 0..dd {
                for kl in 0..dd {
                    stress[ij] += c[ij * dd + kl] * f[kl];
                }
                energy += 0.5 * f[ij] * stress[ij];
                residual += f[ij].abs() * cell.residual[ij];
            }
            return Ok(MicroState {
                domain: dom,
                grad: *f,
                energy,
                stress,
                tangent: cell.tangent.clone(),
                residual,
                iterations: 0,
                stable: None,
                d,
                dofs,
                corrector: match closure {
                    Closure::Relaxed => Corrector::Linear,
                    Closure::Affine => Corrector::Zero,
                },
                basis: cell.basis.clone(),
            });
        }
        let patch = self.patch(e, f)?;
        let (w, residual, iterations) = match closure {
            Closure::Affine => (vec![0.0; dofs], 0.0, 0),
            Closure::Relaxed => {
                let zero;
                let guess = match guess {
                    Some(g) => g,
                    None => {
                        zero = vec![0.0; dofs];
                        &zero
                    }
                };
                let opts = NewtonOptions {
                    tol: self.opts.inner_tol(),
                    max_iter: 50,
                    method: self.opts.method,
                };
                let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (w, rep) = newton_zero_mean(
                    &patch,
                    None,
                    guess,
                    &opts,
                    self.lat.eps(),
                    1.0 + fnorm,
                    &format!("micro problem of element {e}"),
                )?;
                (w, rep.residual, rep.iterations)
            }
        };
        let lin = self.linearize(&patch, &w, closure)?;
        let stable = match closure {
            Closure::Relaxed => self.stability(&patch, &w)?,
            Closure::Affine => None,
        };
        Ok(MicroState {
            domain: dom,
            grad: *f,
            energy: lin.energy,
            stress: lin.stress,
            tangent: lin.tangent,
            residual,
            iterations,
            stable,
            d,
            dofs,
            corrector: match closure {
                Closure::Relaxed => Corrector::Owned(w),
                Closure::Affine => Corrector::Zero,
            },
            basis: Arc::new(lin.basis),
        })
    }

    /// Micro states for every element at `u`, warm-started from `prev`.
    pub fn states(
        &self,
        u: &P1Field,
        prev: Option<&[MicroState]>,
        closure: Closure,
    ) -> Result<Vec<MicroState>> {
        par::try_map(self.mesh.num_elements(), |e| {
            let f = element_gradient(self.mesh, u, e)?;
            let guess = match (prev, &closure) {
                (Some(p), Closure::Relaxed) if !self.model.is_quadratic() => Some(p[e].corrector()),
                _ => None,
            };
            self.micro_solve(e, &f, guess.as_deref(), closure)
        })
    }

    pub fn energy(&self, u: &P1Field, closure: Closure) -> Result<f64> {
        Ok(hqc_energy(self.mesh, &self.states(u, None, closure)?))
    }

    /// Macro load `Σ_T |T| ⟨f, v^h⟩_{S_T}` for a lattice force.
    pub fn rhs(&self, f: &LatticeField) -> Result<Vec<f64>> {
        let lat = self.lat;
        let d = lat.d();
        if f.d != d || f.sites() != lat.num_sites() {
            return Err(Error::LengthMismatch {
                expected: lat.num_sites() * d,
                got: f.values.len(),
            });
        }
        let m = lat.m();
        let per = par::try_map(self.mesh.num_elements(), |e| -> Result<Vec<f64>> {
            let el = self.mesh.element(e);
            let dom = &self.domains[e];
            let mut acc = vec![0.0; (d + 1) * d];
            let mut add = |x: [f64; 2], site: usize, w: f64| {
                for a in 0..=d {
                    let mut lam = if a == 0 { 1.0 } else { 0.0 };
                    for k in 0..d {
                        lam += el.grads[a][k] * (x[k] - el.coords[0][k]);
                    }
                    for i in 0..d {
                        acc[a * d + i] += w * lam * f.values[site * d + i];
                    }
                }
            };
            match self.opts.load {
                LoadRule::Representative => {
                    let site = lat.site(cell_index(dom.rep, lat.n(), d), 0);
                    add(dom.rep_position(lat), site, el.measure);
                }
                LoadRule::Domain => {
                    let patch = Patch::block(lat, self.model, dom.origin, dom.size)?;
                    let w = el.measure / patch.num_sites() as f64;
                    for s in 0..patch.num_sites() {
                        let site = lat.site(patch.global_cell(s / m), s % m);
                        add(patch.position(s), site, w);
                    }
                }
            }
            Ok(acc)
        })?;
        let mut load = vec![0.0; self.mesh.num_nodes() * d];
        for (el, acc) in self.mesh.elements().iter().zip(&per) {
            for (a, &v) in el.vertices.iter().enumerate() {
                for i in 0..d {
                    load[v * d + i] += acc[a * d + i];
                }
            }
        }
        Ok(load)
    }

    /// Nested Newton for `δE^hqc(u^h) = F^hqc` on zero-mean P1 fields.
    pub fn solve(
        &self,
        load: &[f64],
        u0: Option<&P1Field>,
        guesses: Option<Vec<MicroState>>,
        closure: Closure,
    ) -> Result<HqcSolution> {
        let mut states = guesses;
        let zero = P1Field::zeros(self.mesh);
        let (u, report) = macro_newton(
            self.mesh,
            load,
            u0.unwrap_or(&zero),
            self.opts.tol,
            self.opts.max_iter,
            |u| {
                let s = self.states(u, states.as_deref(), closure)?;
                let g = hqc_gradient(self.mesh, &s);
                let k = hqc_hessian(self.mesh, &s);
                states = Some(s);
                Ok((g, k))
            },
        )?;
        let states = states.ok_or_else(|| Error::InvalidInput("no macro iterations".into()))?;
        let energy = hqc_energy(self.mesh, &states);
        Ok(HqcSolution {
            u,
            states,
            energy,
            closure,
            report,
        })
    }

    /// Solve with the load of a lattice force.
    pub fn solve_force(&self, f: &LatticeField, closure: Closure) -> Result<HqcSolution> {
        let load = self.rhs(f)?;
        self.solve(&load, None, None, closure)
    }

    /// Element owning each lattice site and the site's position unwrapped
    /// into that element.
    pub fn owners(&self) -> &[(usize, [f64; 2])] {
        self.owners.get_or_init(|| self.compute_owners())
    }

    fn compute_owners(&self) -> Vec<(usize, [f64; 2])> {
        let lat = self.lat;
        let mesh = self.mesh;
        let d = lat.d();
        let nm = mesh.n() as i64;
        let ratio = Rational64::new(nm, lat.n() as i64);
        let h = mesh.h();
        par::map(lat.num_sites(), |site| {
            let c = lat.cell_coords(lat.cell_of(site));
            let p = lat.shift(lat.species_of(site));
            let x = lat.position(site);
            let mut xs = [Rational64::from_integer(0); 2];
            let mut cands: [Vec<i64>; 2] = [vec![0], vec![0]];
            for k in 0..d {
                xs[k] = (Rational64::from_integer(c[k]) + p[k]) * ratio;
                let fl = xs[k].floor().to_integer();
                cands[k] = if xs[k].is_integer() {
                    vec![fl - 1, fl]
                } else {
                    vec![fl]
                };
            }
            let mut best: Option<(usize, [i64; 2], [f64; 2])> = None;
            let mut consider = |e: usize, shift: [i64; 2]| {
                let el = mesh.element(e);
                let key = [
                    el.corners.iter().map(|c| c[0]).sum::<i64>(),
                    el.corners.iter().map(|c| c[1]).sum::<i64>(),
                ];
                if best.as_ref().is_none_or(|b| key < b.1) {
                    let mut y = x;
                    for k in 0..d {
                        y[k] += shift[k] as f64 * h;
                    }
                    best = Some((e, key, y));
                }
            };
            if d == 1 {
                for &i in &cands[0] {
                    let iw = i.rem_euclid(nm);
                    consider(iw as usize, [iw - i, 0]);
                }
            } else {
                for &i in &cands[0] {
                    for &j in &cands[1] {
                        let xi = xs[0] - i;
                        let eta = xs[1] - j;
                        let (iw, jw) = (i.rem_euclid(nm), j.rem_euclid(nm));
                        let base = 2 * (iw + nm * jw) as usize;
                        if eta <= xi {
                            consider(base, [iw - i, jw - j]);
                        }
                        if xi <= eta {
                            consider(base + 1, [iw - i, jw - j]);
                        }
                    }
                }
            }
            let (e, _, y) = best.unwrap_or((0, [0, 0], x));
            (e, y)
        })
    }

    /// `u^{h,c}`: on each element the affine part plus the periodically
    /// tiled corrector.
    pub fn reconstruct(&self, sol: &HqcSolution) -> Result<LatticeField> {
        self.reconstruct_states(&sol.u, &sol.states)
    }

    /// Reconstruction from a macro field and its micro states.
    pub fn reconstruct_states(&self, u: &P1Field, states: &[MicroState]) -> Result<LatticeField> {
        let lat = self.lat;
        let d = lat.d();
        let m = lat.m();
        if states.len() != self.mesh.num_elements() {
            return Err(Error::LengthMismatch {
                expected: self.mesh.num_elements(),
                got: states.len(),
            });
        }
        let affine = (0..self.mesh.num_elements())
            .map(|e| affine_extension(self.mesh, u, e))
            .collect::<Result<Vec<_>>>()?;
        let correctors: Vec<Vec<f64>> = par::map(states.len(), |e| states[e].corrector());
        let owners = self.owners();
        let mut out = LatticeField::zeros(lat);
        for (site, &(e, y)) in owners.iter().enumerate() {
            let dom = &states[e].domain;
            let c = lat.cell_coords(lat.cell_of(site));
            let n = dom.size as i64;
            let local = cell_index(
                [
                    (c[0] - dom.origin[0]).rem_euclid(n),
                    (c[1] - dom.origin[1]).rem_euclid(n),
                ],
                dom.size,
                d,
            );
            let ls = local * m + lat.species_of(site);
            let lin = affine[e].eval(y);
            let v = out.at_mut(site);
            for i in 0..d {
                v[i] = lin[i] + correctors[e][ls * d + i];
            }
        }
        Ok(out)
    }
}

/// Macro energy with every corrector forced to zero.
pub fn affine_closure_energy(hqc: &Hqc, u: &P1Field) -> Result<f64> {
    hqc.energy(u, Closure::Affine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_mesh;
    use crate::homog::{harmonic_mean, solve_cell_problem, CellProblem};

    #[test]
    fn representative_site_of_an_interval() {
        let lat = Multilattice::chain(16, 1).unwrap();
        let mesh = build_mesh(1, 4).unwrap();
        let doms = place_sampling_domains(&mesh, &lat, 1).unwrap();
        assert_eq!(doms[0].rep[0], 2);
        assert!((doms[0].rep_position(&lat)[0] - 0.125).abs() < 1e-15);
        // ties go to the smaller site
        let lat = Multilattice::chain(4, 1).unwrap();
        let mesh = build_mesh(1, 4).unwrap();
        let doms = place_sampling_domains(&mesh, &lat, 1).unwrap();
        assert_eq!(doms[1].rep[0], 1);
    }

    #[test]
    fn corrector_matches_cell_solution() {
        let psi = [1.0, 3.0];
        let lat = Multilattice::chain(16, 2).unwrap();
        let model = InteractionModel::linear_spring_1d(&psi).unwrap();
        let mesh = build_mesh(1, 4).unwrap();
        let hqc = Hqc::new(&lat, &model, &mesh, HqcOptions::default()).unwrap();
        let s = hqc
            .micro_solve(0, &[1.0, 0.0, 0.0, 0.0], None, Closure::Relaxed)
            .unwrap();
        let cell = solve_cell_problem(
            &CellProblem::new(&model, &lat).unwrap(),
            &[1.0, 0.0, 0.0, 0.0],
            None,
        )
        .unwrap();
        let u = s.corrector();
        for a in 0..2 {
            assert!((u[a] - lat.eps() * cell.chi[a]).abs() < 1e-12);
        }
        let psi0 = harmonic_mean(&psi).unwrap();
        assert!((s.energy - psi0 * 0.25 / 2.0).abs() < 1e-14);
    }
}
