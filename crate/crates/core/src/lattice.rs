//! Periodic multilattices `εZ^d + εP` on the unit torus, lattice fields and
//! the discrete calculus on them.

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Frac = Rational64;

/// A lattice vector in units of ε. Only the first `d` components are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Offset {
    pub r: [Frac; 2],
}

impl Offset {
    pub fn new1(num: i64, den: i64) -> Offset {
        Offset {
            r: [Frac::new(num, den), Frac::zero()],
        }
    }

    pub fn new2(r0: Frac, r1: Frac) -> Offset {
        Offset { r: [r0, r1] }
    }

    pub fn int2(a: i64, b: i64) -> Offset {
        Offset::new2(Frac::from_integer(a), Frac::from_integer(b))
    }

    pub fn neg(&self) -> Offset {
        Offset {
            r: [-self.r[0], -self.r[1]],
        }
    }

    pub fn to_f64(&self) -> [f64; 2] {
        [frac_f64(self.r[0]), frac_f64(self.r[1])]
    }

    pub fn norm(&self) -> f64 {
        let v = self.to_f64();
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    }
}

impl std::fmt::Display for Offset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.r[0], self.r[1])
    }
}

pub fn frac_f64(q: Frac) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Resolution of an offset from a given species: the neighbour of site
/// `(j, α)` is `(j + cell_shift, target)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub cell_shift: [i64; 2],
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multilattice {
    d: usize,
    n: usize,
    shifts: Vec<[Frac; 2]>,
}

/// Build `ℳ = (εZ^d + εP) ∩ [0,1)^d` from a spacing with `1/ε` integral.
pub fn build_multilattice(d: usize, eps: f64, shifts: &[[Frac; 2]]) -> Result<Multilattice> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidLattice(format!(
            "spacing {eps} is not positive"
        )));
    }
    let inv = 1.0 / eps;
    let n = inv.round();
    if n < 1.0 || (n - inv).abs() > 1e-9 * inv.max(1.0) {
        return Err(Error::InvalidLattice(format!(
            "1/eps = {inv} is not an integer"
        )));
    }
    Multilattice::new(d, n as usize, shifts)
}

impl Multilattice {
    pub fn new(d: usize, n: usize, shifts: &[[Frac; 2]]) -> Result<Multilattice> {
        if d != 1 && d != 2 {
            return Err(Error::InvalidLattice(format!(
                "dimension {d} not supported"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidLattice("no cells".into()));
        }
        if shifts.is_empty() {
            return Err(Error::InvalidLattice("empty shift set".into()));
        }
        if shifts[0] != [Frac::zero(), Frac::zero()] {
            return Err(Error::InvalidLattice("first shift must be zero".into()));
        }
        let one = Frac::from_integer(1);
        for (a, p) in shifts.iter().enumerate() {
            for (k, c) in p.iter().enumerate() {
                let active = k < d;
                if (active && (*c < Frac::zero() || *c >= one)) || (!active && !c.is_zero()) {
                    return Err(Error::InvalidLattice(format!(
                        "shift {a} lies outside [0,1)^{d}"
                    )));
                }
            }
            if shifts[..a].contains(p) {
                return Err(Error::InvalidLattice(format!("shift {a} is duplicated")));
            }
        }
        Ok(Multilattice {
            d,
            n,
            shifts: shifts.to_vec(),
        })
    }

    /// Uniform 1D multilattice with `P = {0, 1/m, …, (m−1)/m}`.
    pub fn chain(n: usize, m: usize) -> Result<Multilattice> {
        let shifts: Vec<[Frac; 2]> = (0..m as i64)
            .map(|a| [Frac::new(a, m as i64), Frac::zero()])
            .collect();
        Multilattice::new(1, n, &shifts)
    }

    /// Simple square lattice in 2D.
    pub fn square(n: usize) -> Result<Multilattice> {
        Multilattice::new(2, n, &[[Frac::zero(), Frac::zero()]])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Bravais cells per axis, `1/ε`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn m(&self) -> usize {
        self.shifts.len()
    }

    pub fn shift(&self, species: usize) -> [Frac; 2] {
        self.shifts[species]
    }

    pub fn shifts(&self) -> &[[Frac; 2]] {
        &self.shifts
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn num_sites(&self) -> usize {
        self.num_cells() * self.m()
    }

    pub fn site(&self, cell: usize, species: usize) -> usize {
        cell * self.m() + species
    }

    pub fn cell_of(&self, site: usize) -> usize {
        site / self.m()
    }

    pub fn species_of(&self, site: usize) -> usize {
        site % self.m()
    }

    pub fn cell_coords(&self, cell: usize) -> [i64; 2] {
        cell_coords(cell, self.n, self.d)
    }

    pub fn cell_index(&self, coords: [i64; 2]) -> usize {
        cell_index(coords, self.n, self.d)
    }

    /// Site coordinates in `[0,1)^d`; the unused component is zero.
    pub fn position(&self, site: usize) -> [f64; 2] {
        let c = self.cell_coords(self.cell_of(site));
        let p = self.shifts[self.species_of(site)];
        let eps = self.eps();
        let mut x = [0.0; 2];
        for k in 0..self.d {
            x[k] = (c[k] as f64 + frac_f64(p[k])) * eps;
        }
        x
    }

    /// Solve `p_α + r = k + p_β` for the integer cell shift `k` and species `β`.
    pub fn resolve(&self, species: usize, r: &Offset) -> Result<Link> {
        let pa = self.shifts[species];
        for (b, pb) in self.shifts.iter().enumerate() {
            let mut shift = [0i64; 2];
            let mut ok = true;
            for k in 0..2 {
                let diff = pa[k] + r.r[k] - pb[k];
                if k >= self.d {
                    ok &= diff.is_zero();
                } else if diff.is_integer() {
                    shift[k] = diff.to_integer();
                } else {
                    ok = false;
                }
            }
            if ok {
                return Ok(Link {
                    cell_shift: shift,
                    target: b,
                });
            }
        }
        Err(Error::OffsetOffLattice(r.to_string(), species))
    }

    pub fn neighbor(&self, site: usize, link: &Link) -> usize {
        let c = self.cell_coords(self.cell_of(site));
        let cell = self.cell_index([c[0] + link.cell_shift[0], c[1] + link.cell_shift[1]]);
        self.site(cell, link.target)
    }

    /// Offsets used by the discrete H¹ norm: the smallest inter-site step
    /// `1/m` along the chain in 1D when it resolves for every species,
    /// otherwise the Bravais axis vectors.
    pub fn norm_offsets(&self) -> Vec<Offset> {
        if self.d == 1 {
            let r = Offset::new1(1, self.m() as i64);
            if (0..self.m()).all(|a| self.resolve(a, &r).is_ok()) {
                return vec![r];
            }
            vec![Offset::new1(1, 1)]
        } else {
            vec![Offset::int2(1, 0), Offset::int2(0, 1)]
        }
    }
}

pub fn cell_coords(cell: usize, n: usize, d: usize) -> [i64; 2] {
    if d == 1 {
        [cell as i64, 0]
    } else {
        [(cell % n) as i64, (cell / n) as i64]
    }
}

pub fn cell_index(coords: [i64; 2], n: usize, d: usize) -> usize {
    let n = n as i64;
    let i = coords[0].rem_euclid(n) as usize;
    if d == 1 {
        i
    } else {
        i + n as usize * coords[1].rem_euclid(n) as usize
    }
}

/// Vector-valued field on lattice sites, stored site-major with stride `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    pub d: usize,
    pub values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(lat: &Multilattice) -> LatticeField {
        LatticeField {
            d: lat.d(),
            values: vec![0.0; lat.num_sites() * lat.d()],
        }
    }

    pub fn from_values(d: usize, values: Vec<f64>) -> LatticeField {
        LatticeField { d, values }
    }

    /// Evaluate `f(position, species)` at every site.
    pub fn from_fn<F: Fn([f64; 2], usize) -> [f64; 2]>(lat: &Multilattice, f: F) -> LatticeField {
        let d = lat.d();
        let mut values = Vec::with_capacity(lat.num_sites() * d);
        for s in 0..lat.num_sites() {
            let v = f(lat.position(s), lat.species_of(s));
            values.extend_from_slice(&v[..d]);
        }
        LatticeField { d, values }
    }

    pub fn sites(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn at(&self, site: usize) -> &[f64] {
        &self.values[site * self.d..(site + 1) * self.d]
    }

    pub fn at_mut(&mut self, site: usize) -> &mut [f64] {
        &mut self.values[site * self.d..(site + 1) * self.d]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn sub(&self, other: &LatticeField) -> Result<LatticeField> {
        check_same(self, other)?;
        Ok(LatticeField {
            d: self.d,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn axpy(&mut self, a: f64, x: &LatticeField) {
        for (v, xv) in self.values.iter_mut().zip(&x.values) {
            *v += a * xv;
        }
    }
}

fn check_same(u: &LatticeField, v: &LatticeField) -> Result<()> {
    if u.d != v.d || u.values.len() != v.values.len() {
        return Err(Error::LengthMismatch {
            expected: u.values.len(),
            got: v.values.len(),
        });
    }
    Ok(())
}

fn check_on(lat: &Multilattice, u: &LatticeField) -> Result<()> {
    let expected = lat.num_sites() * lat.d();
    if u.d != lat.d() || u.values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: u.values.len(),
        });
    }
    Ok(())
}

/// `D_r u(x) = (u(x + εr) − u(x))/ε` with periodic wrap.
pub fn discrete_derivative(
    lat: &Multilattice,
    u: &LatticeField,
    r: &Offset,
) -> Result<LatticeField> {
    check_on(lat, u)?;
    let links: Vec<Link> = (0..lat.m())
        .map(|a| lat.resolve(a, r))
        .collect::<Result<_>>()?;
    let d = lat.d();
    let inv = lat.n() as f64;
    let mut out = vec![0.0; u.values.len()];
    for s in 0..lat.num_sites() {
        let t = lat.neighbor(s, &links[lat.species_of(s)]);
        for k in 0..d {
            out[s * d + k] = (u.values[t * d + k] - u.values[s * d + k]) * inv;
        }
    }
    Ok(LatticeField { d, values: out })
}

/// `⟨u⟩_S`, one component per dimension.
pub fn average(u: &LatticeField) -> Vec<f64> {
    let d = u.d;
    let n = u.sites();
    let mut acc = vec![0.0; d];
    for s in 0..n {
        for k in 0..d {
            acc[k] += u.values[s * d + k];
        }
    }
    acc.iter().map(|a| a / n.max(1) as f64).collect()
}

/// `⟨u, v⟩_S = ⟨u·v⟩_S`.
pub fn inner_product(u: &LatticeField, v: &LatticeField) -> Result<f64> {
    check_same(u, v)?;
    let sum: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok(sum / u.sites().max(1) as f64)
}

pub fn project_zero_mean(u: &LatticeField) -> LatticeField {
    let mut out = u.clone();
    remove_mean(&mut out.values, u.d);
    out
}

/// Subtract the per-component mean of a stride-`d` vector in place.
pub fn remove_mean(values: &mut [f64], d: usize) {
    let n = values.len() / d;
    if n == 0 {
        return;
    }
    for k in 0..d {
        let mean = values.iter().skip(k).step_by(d).sum::<f64>() / n as f64;
        for v in values.iter_mut().skip(k).step_by(d) {
            *v -= mean;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
}

/// Discrete `L²` and `H¹` norms over ℳ.
pub fn discrete_norms(lat: &Multilattice, u: &LatticeField) -> Result<Norms> {
    check_on(lat, u)?;
    let l2sq = inner_product(u, u)?;
    let mut dsq = 0.0;
    for r in lat.norm_offsets() {
        let du = discrete_derivative(lat, u, &r)?;
        dsq += inner_product(&du, &du)?;
    }
    Ok(Norms {
        l2: l2sq.sqrt(),
        h1: (l2sq + dsq).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> [Frac; 2] {
        [Frac::new(1, 2), Frac::zero()]
    }

    #[test]
    fn two_species_chain_sites() {
        let lat = build_multilattice(1, 0.25, &[[Frac::zero(); 2], half()]).unwrap();
        assert_eq!(lat.num_sites(), 8);
        let xs: Vec<f64> = (0..8).map(|s| lat.position(s)[0]).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        for (k, x) in sorted.iter().enumerate() {
            assert!((x - k as f64 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_lattices() {
        let lat = build_multilattice(1, 0.25, &[[Frac::zero(); 2]]).unwrap();
        assert_eq!(lat.num_sites(), 4);
        let sq = build_multilattice(2, 0.5, &[[Frac::zero(); 2]]).unwrap();
        assert_eq!(sq.num_sites(), 4);
        let mut pts: Vec<[f64; 2]> = (0..4).map(|s| sq.position(s)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![[0.0, 0.0], [0.0, 0.5], [0.5, 0.0], [0.5, 0.5]]);
    }

    #[test]
    fn rejects_bad_input() {
        let z = [Frac::zero(); 2];
        assert!(build_multilattice(1, 0.3, &[z]).is_err());
        assert!(build_multilattice(1, 0.25, &[z, z]).is_err());
        assert!(build_multilattice(1, 0.25, &[z, [Frac::from_integer(1), Frac::zero()]]).is_err());
        assert!(build_multilattice(1, 0.25, &[half()]).is_err());
    }

    #[test]
    fn derivative_with_wrap() {
        let lat = build_multilattice(1, 0.5, &[[Frac::zero(); 2]]).unwrap();
        let u = LatticeField::from_values(1, vec![0.0, 0.1]);
        let du = discrete_derivative(&lat, &u, &Offset::new1(1, 1)).unwrap();
        assert!((du.values[0] - 0.2).abs() < 1e-15);
        assert!((du.values[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_constant_and_affine() {
        let lat = Multilattice::chain(8, 2).unwrap();
        let c = LatticeField::from_fn(&lat, |_, _| [3.0, 0.0]);
        let dc = discrete_derivative(&lat, &c, &Offset::new1(1, 2)).unwrap();
        assert!(dc.max_abs() == 0.0);
        let a = LatticeField::from_fn(&lat, |x, _| [0.7 * x[0], 0.0]);
        let da = discrete_derivative(&lat, &a, &Offset::new1(3, 2)).unwrap();
        // away from the wrap the quotient is F r
        for s in 0..lat.num_sites() {
            if lat.position(s)[0] + 1.5 * lat.eps() < 1.0 {
                assert!((da.values[s] - 0.7 * 1.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn off_lattice_offset() {
        let lat = Multilattice::chain(4, 2).unwrap();
        let u = LatticeField::zeros(&lat);
        assert!(discrete_derivative(&lat, &u, &Offset::new1(1, 3)).is_err());
    }

    #[test]
    fn averages_and_products() {
        let lat = Multilattice::chain(4, 1).unwrap();
        let c = LatticeField::from_fn(&lat, |_, _| [2.5, 0.0]);
        assert_eq!(average(&c), vec![2.5]);
        let z = project_zero_mean(&LatticeField::from_values(1, vec![1.0, -2.0, 4.0, 5.0]));
        assert!(inner_product(&z, &c).unwrap().abs() < 1e-15);
        let e = LatticeField::from_values(1, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(inner_product(&e, &e).unwrap(), 0.25);
        let p = project_zero_mean(&LatticeField::from_values(1, vec![1.0, 3.0]));
        assert_eq!(p.values, vec![-1.0, 1.0]);
        assert!(project_zero_mean(&c).max_abs() == 0.0);
        assert!(inner_product(&e, &LatticeField::from_values(1, vec![0.0; 3])).is_err());
    }

    #[test]
    fn norms() {
        let lat = Multilattice::chain(2, 1).unwrap();
        let z = LatticeField::zeros(&lat);
        let n0 = discrete_norms(&lat, &z).unwrap();
        assert_eq!((n0.l2, n0.h1), (0.0, 0.0));
        let c = LatticeField::from_values(1, vec![-1.5, -1.5]);
        let nc = discrete_norms(&lat, &c).unwrap();
        assert!((nc.l2 - 1.5).abs() < 1e-15 && (nc.h1 - 1.5).abs() < 1e-15);
        let u = LatticeField::from_values(1, vec![0.0, 1.0]);
        let nu = discrete_norms(&lat, &u).unwrap();
        assert!((nu.l2 - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((nu.h1 - 4.5f64.sqrt()).abs() < 1e-14);
    }
}
