//! Pair site potentials `V(D_R u; x)` with analytic derivatives.
//!
//! Every model here is a sum of per-bond terms, so the site Hessian is block
//! diagonal in the bonds. The dense tuple form is still available through
//! [`InteractionModel::site_hessian`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::lattice::{remove_mean, Frac, LatticeField, Multilattice, Offset};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BondLaw {
    /// `ψ |g|² / 2`
    Spring { psi: f64 },
    /// `s (−2 (ρ/ℓ)^−6 + (ρ/ℓ)^−12)` with `ρ = λ |r + g|`
    LennardJones { s: f64, ell: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bond {
    pub offset: Offset,
    pub law: BondLaw,
}

/// Per-bond energy, gradient and `d×d` Hessian (row-major, 2×2 storage).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BondEval {
    pub energy: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LennardJonesParams {
    /// strength per species of the site owning the bond
    pub s: Vec<f64>,
    /// equilibrium distance per species
    pub ell: Vec<f64>,
    /// interaction range in lattice units
    pub cutoff: f64,
    /// distances are `unit · |r + g|`
    pub unit: f64,
}

/// Random spring constants on the square lattice, one per site and offset.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomBond2D {
    pub n: usize,
    pub seed: u64,
    pub psi: Vec<f64>,
}

pub const RANDOM_OFFSETS: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

impl RandomBond2D {
    /// Draws strengths site-major, then offset, from a ChaCha20 stream.
    pub fn generate(n: usize, seed: u64) -> RandomBond2D {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut psi = Vec::with_capacity(n * n * 4);
        for _ in 0..n * n {
            for (k, _) in RANDOM_OFFSETS.iter().enumerate() {
                let v = if k < 2 {
                    rng.gen_range(0.5..10.0)
                } else {
                    rng.gen_range(0.1..5.0)
                };
                psi.push(v);
            }
        }
        RandomBond2D { n, seed, psi }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionModel {
    d: usize,
    bonds: Vec<Vec<Bond>>,
    unit: f64,
    random: Option<Arc<RandomBond2D>>,
}

impl InteractionModel {
    pub fn new(d: usize, bonds: Vec<Vec<Bond>>, unit: f64) -> Result<InteractionModel> {
        if bonds.is_empty() {
            return Err(Error::InvalidInput(
                "model needs at least one species".into(),
            ));
        }
        for list in &bonds {
            for b in list {
                match b.law {
                    BondLaw::Spring { psi } if !(psi > 0.0) => {
                        return Err(Error::InvalidInput(format!(
                            "spring constant {psi} must be positive"
                        )))
                    }
                    BondLaw::LennardJones { s, ell } if !(s > 0.0 && ell > 0.0) => {
                        return Err(Error::InvalidInput(
                            "LJ strength and distance must be positive".into(),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(InteractionModel {
            d,
            bonds,
            unit,
            random: None,
        })
    }

    /// Nearest-neighbour chain: species `α` carries one spring `ψ_α` to the
    /// next site at `r = 1/m`.
    pub fn linear_spring_1d(psi: &[f64]) -> Result<InteractionModel> {
        let m = psi.len() as i64;
        let bonds = psi
            .iter()
            .map(|&p| {
                vec![Bond {
                    offset: Offset::new1(1, m),
                    law: BondLaw::Spring { psi: p },
                }]
            })
            .collect();
        InteractionModel::new(1, bonds, 1.0)
    }

    /// 1D springs with arbitrary per-species offsets.
    pub fn springs_1d(bonds: Vec<Vec<(Offset, f64)>>) -> Result<InteractionModel> {
        let bonds = bonds
            .into_iter()
            .map(|l| {
                l.into_iter()
                    .map(|(offset, psi)| Bond {
                        offset,
                        law: BondLaw::Spring { psi },
                    })
                    .collect()
            })
            .collect();
        InteractionModel::new(1, bonds, 1.0)
    }

    /// Lennard–Jones chain on the uniform m-species multilattice: every
    /// offset `k/m` with `0 < |k/m| ≤ cutoff`, parameters keyed on the
    /// species of the site owning the bond.
    pub fn lennard_jones_1d(params: &LennardJonesParams) -> Result<InteractionModel> {
        let m = params.s.len();
        if m == 0 || params.ell.len() != m {
            return Err(Error::InvalidInput("LJ parameter lists must match".into()));
        }
        if !(params.cutoff >= 1.0) || !(params.unit > 0.0) {
            return Err(Error::InvalidInput("LJ cutoff must be at least 1".into()));
        }
        let kmax = (params.cutoff * m as f64 + 1e-9).floor() as i64;
        let mut bonds = Vec::with_capacity(m);
        for a in 0..m {
            let mut list = Vec::new();
            for k in (-kmax..=kmax).filter(|&k| k != 0) {
                list.push(Bond {
                    offset: Offset::new1(k, m as i64),
                    law: BondLaw::LennardJones {
                        s: params.s[a],
                        ell: params.ell[a],
                    },
                });
            }
            bonds.push(list);
        }
        InteractionModel::new(1, bonds, params.unit)
    }

    pub fn random_bond_2d(random: RandomBond2D) -> InteractionModel {
        let bonds = vec![RANDOM_OFFSETS
            .iter()
            .map(|&(a, b)| Bond {
                offset: Offset::int2(a, b),
                law: BondLaw::Spring { psi: 1.0 },
            })
            .collect()];
        InteractionModel {
            d: 2,
            bonds,
            unit: 1.0,
            random: Some(Arc::new(random)),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.bonds.len()
    }

    pub fn bonds(&self, species: usize) -> &[Bond] {
        &self.bonds[species]
    }

    pub fn random(&self) -> Option<&RandomBond2D> {
        self.random.as_deref()
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn is_quadratic(&self) -> bool {
        self.bonds
            .iter()
            .flatten()
            .all(|b| matches!(b.law, BondLaw::Spring { .. }))
    }

    /// Parameters depend on the species only (a crystal).
    pub fn is_periodic(&self) -> bool {
        self.random.is_none()
    }

    pub fn max_bonds(&self) -> usize {
        self.bonds.iter().map(|b| b.len()).max().unwrap_or(0)
    }

    /// Check that the model's species and offsets fit the lattice.
    pub fn check_lattice(&self, lat: &Multilattice) -> Result<()> {
        if lat.d() != self.d || lat.m() != self.m() {
            return Err(Error::InvalidInput(format!(
                "model (d={}, m={}) does not fit lattice (d={}, m={})",
                self.d,
                self.m(),
                lat.d(),
                lat.m()
            )));
        }
        if let Some(r) = &self.random {
            if r.n != lat.n() {
                return Err(Error::InvalidInput(
                    "random field size differs from lattice".into(),
                ));
            }
        }
        for a in 0..self.m() {
            for b in &self.bonds[a] {
                lat.resolve(a, &b.offset)?;
            }
        }
        Ok(())
    }

    fn law_at(&self, cell: usize, species: usize, bond: usize) -> BondLaw {
        match &self.random {
            Some(r) => BondLaw::Spring {
                psi: r.psi[cell * RANDOM_OFFSETS.len() + bond],
            },
            None => self.bonds[species][bond].law,
        }
    }

    /// Evaluate one bond term at gap `g` (length `d`). `cell` is the global
    /// Bravais cell of the owning site; it only matters for random media.
    pub fn bond_eval(
        &self,
        cell: usize,
        species: usize,
        bond: usize,
        g: &[f64],
    ) -> Result<BondEval> {
        let law = self.law_at(cell, species, bond);
        let d = self.d;
        match law {
            BondLaw::Spring { psi } => {
                let mut e = BondEval::default();
                for k in 0..d {
                    e.energy += 0.5 * psi * g[k] * g[k];
                    e.grad[k] = psi * g[k];
                    e.hess[k * d + k] = psi;
                }
                Ok(e)
            }
            BondLaw::LennardJones { s, ell } => {
                let r = self.bonds[species][bond].offset.to_f64();
                let mut y = [0.0; 2];
                let mut len2 = 0.0;
                for k in 0..d {
                    y[k] = r[k] + g[k];
                    len2 += y[k] * y[k];
                }
                let len = len2.sqrt();
                if !(len > 1e-300) || !len.is_finite() {
                    return Err(Error::SingularBond { site: cell });
                }
                let lam = self.unit;
                let x = lam * len / ell;
                let x6 = x.powi(-6);
                let x12 = x6 * x6;
                let energy = s * (-2.0 * x6 + x12);
                // derivatives with respect to ρ = λ|y|
                let d1 = s * (12.0 * x6 - 12.0 * x12) / (lam * len);
                let d2 = s * (-84.0 * x6 + 156.0 * x12) / (lam * len * lam * len);
                let mut e = BondEval {
                    energy,
                    ..Default::default()
                };
                for i in 0..d {
                    let ni = y[i] / len;
                    e.grad[i] = d1 * lam * ni;
                    for j in 0..d {
                        let nj = y[j] / len;
                        let delta = if i == j { 1.0 } else { 0.0 };
                        e.hess[i * d + j] =
                            lam * lam * d2 * ni * nj + d1 * lam / len * (delta - ni * nj);
                    }
                }
                Ok(e)
            }
        }
    }

    fn check_gaps(&self, species: usize, gaps: &[f64]) -> Result<()> {
        let expected = self.bonds[species].len() * self.d;
        if gaps.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: gaps.len(),
            });
        }
        Ok(())
    }

    /// `V_α(gaps)`, gaps laid out bond-major with stride `d`.
    pub fn site_energy(&self, cell: usize, species: usize, gaps: &[f64]) -> Result<f64> {
        self.check_gaps(species, gaps)?;
        let d = self.d;
        let mut e = 0.0;
        for b in 0..self.bonds[species].len() {
            e += self
                .bond_eval(cell, species, b, &gaps[b * d..(b + 1) * d])?
                .energy;
        }
        Ok(e)
    }

    /// `(V'_r)_r`, same layout as the gaps.
    pub fn site_gradient(&self, cell: usize, species: usize, gaps: &[f64]) -> Result<Vec<f64>> {
        self.check_gaps(species, gaps)?;
        let d = self.d;
        let mut out = vec![0.0; gaps.len()];
        for b in 0..self.bonds[species].len() {
            let e = self.bond_eval(cell, species, b, &gaps[b * d..(b + 1) * d])?;
            out[b * d..(b + 1) * d].copy_from_slice(&e.grad[..d]);
        }
        Ok(out)
    }

    /// Dense `(k d)×(k d)` Hessian, row-major.
    pub fn site_hessian(&self, cell: usize, species: usize, gaps: &[f64]) -> Result<Vec<f64>> {
        self.check_gaps(species, gaps)?;
        let d = self.d;
        let kd = gaps.len();
        let mut out = vec![0.0; kd * kd];
        for b in 0..self.bonds[species].len() {
            let e = self.bond_eval(cell, species, b, &gaps[b * d..(b + 1) * d])?;
            for i in 0..d {
                for j in 0..d {
                    out[(b * d + i) * kd + b * d + j] = e.hess[i * d + j];
                }
            }
        }
        Ok(out)
    }
}

/// Slow-dynamics chain: two species at integer and half-integer `x/ε`,
/// LJ with cutoff 3. Returns the model and the species masses.
///
/// Distances are measured in nearest-neighbour spacings (`unit = 2`).
pub fn make_dynamics_model() -> (InteractionModel, Vec<f64>) {
    let params = LennardJonesParams {
        s: vec![1.6, 0.4],
        ell: vec![0.99, 1.01],
        cutoff: 3.0,
        unit: 2.0,
    };
    let model = InteractionModel::lennard_jones_1d(&params).expect("valid dynamics parameters");
    (model, vec![2.0, 1.0])
}

/// Three-species LJ chain A-B-C whose sites are not inversion centres, so
/// uniform strain relaxes the shifts (the two-species chain never does).
pub fn make_asymmetric_lj_model() -> InteractionModel {
    let params = LennardJonesParams {
        s: vec![1.6, 0.4, 1.0],
        ell: vec![0.99, 1.01, 1.0],
        cutoff: 3.0,
        unit: 3.0,
    };
    InteractionModel::lennard_jones_1d(&params).expect("valid parameters")
}

pub fn dynamics_lattice(n: usize) -> Result<Multilattice> {
    Multilattice::chain(n, 2)
}

/// Per-site masses from per-species values.
pub fn mass_field(lat: &Multilattice, masses: &[f64]) -> Vec<f64> {
    (0..lat.num_sites())
        .map(|s| masses[lat.species_of(s)])
        .collect()
}

/// The external force of the stochastic example before mean removal.
pub fn stochastic_force(x: [f64; 2]) -> [f64; 2] {
    let pi = std::f64::consts::PI;
    let c0 = (pi * x[0]).cos();
    let c1 = (pi * x[1]).cos();
    let a = 10.0 * (-c0 * c0 - c1 * c1).exp();
    [a * (2.0 * pi * x[0]).sin(), a * (2.0 * pi * x[1]).sin()]
}

/// Random bond network on `εZ²` with `ε = 1/n` and its zero-mean load.
pub fn make_stochastic_model(
    n: usize,
    seed: u64,
) -> Result<(Multilattice, InteractionModel, LatticeField)> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "grid size {n} is not a power of two"
        )));
    }
    let lat = Multilattice::new(2, n, &[[Frac::from_integer(0); 2]])?;
    let model = InteractionModel::random_bond_2d(RandomBond2D::generate(n, seed));
    let mut f = LatticeField::from_fn(&lat, |x, _| stochastic_force(x));
    remove_mean(&mut f.values, 2);
    Ok((lat, model, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spring_values() {
        let m = InteractionModel::linear_spring_1d(&[2.0]).unwrap();
        assert!((m.site_energy(0, 0, &[0.3]).unwrap() - 0.09).abs() < 1e-15);
        assert!((m.site_gradient(0, 0, &[0.3]).unwrap()[0] - 0.6).abs() < 1e-15);
        assert_eq!(m.site_hessian(0, 0, &[0.3]).unwrap(), vec![2.0]);
        assert_eq!(m.site_energy(0, 0, &[0.0]).unwrap(), 0.0);
        assert!(m.site_energy(0, 0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn lj_minimum() {
        let p = LennardJonesParams {
            s: vec![1.0],
            ell: vec![1.0],
            cutoff: 1.0,
            unit: 1.0,
        };
        let m = InteractionModel::lennard_jones_1d(&p).unwrap();
        assert_eq!(m.bonds(0).len(), 2);
        let e = m.bond_eval(0, 0, 1, &[0.0]).unwrap();
        assert_eq!(m.bonds(0)[1].offset, Offset::new1(1, 1));
        assert!((e.energy + 1.0).abs() < 1e-15);
        assert!(e.grad[0].abs() < 1e-13);
        assert!((e.hess[0] - 72.0).abs() < 1e-12);
        assert!(m.bond_eval(0, 0, 1, &[-1.0]).is_err());
    }

    #[test]
    fn dynamics_model_layout() {
        let (m, masses) = make_dynamics_model();
        assert_eq!(m.m(), 2);
        assert_eq!(m.bonds(0).len(), 12);
        assert_eq!(m.bonds(1).len(), 12);
        assert_eq!(
            m.bonds(0)[0].law,
            BondLaw::LennardJones { s: 1.6, ell: 0.99 }
        );
        assert_eq!(
            m.bonds(1)[0].law,
            BondLaw::LennardJones { s: 0.4, ell: 1.01 }
        );
        assert_eq!(masses, vec![2.0, 1.0]);
        let lat = dynamics_lattice(8).unwrap();
        m.check_lattice(&lat).unwrap();
    }

    #[test]
    fn stochastic_force_value() {
        let f = stochastic_force([0.25, 0.25]);
        let want = 10.0 * (-1.0f64).exp();
        assert!((f[0] - want).abs() < 1e-13 && (f[1] - want).abs() < 1e-13);
    }

    #[test]
    fn stochastic_model_reproducible() {
        let (_, m1, f) = make_stochastic_model(16, 7).unwrap();
        let (_, m2, _) = make_stochastic_model(16, 7).unwrap();
        let (_, m3, _) = make_stochastic_model(16, 8).unwrap();
        assert_eq!(m1.random().unwrap().psi, m2.random().unwrap().psi);
        assert_ne!(m1.random().unwrap().psi, m3.random().unwrap().psi);
        let avg = crate::lattice::average(&f);
        assert!(avg.iter().all(|a| a.abs() < 1e-12));
        for (i, p) in m1.random().unwrap().psi.iter().enumerate() {
            if i % 4 < 2 {
                assert!((0.5..10.0).contains(p));
            } else {
                assert!((0.1..5.0).contains(p));
            }
        }
        assert!(make_stochastic_model(12, 1).is_err());
    }
}
