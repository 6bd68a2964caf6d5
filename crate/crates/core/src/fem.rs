//! Uniform periodic simplicial meshes and P1/P0 fields on them.

use crate::error::{Error, Result};
use crate::lattice::{discrete_norms, LatticeField, Multilattice, Norms};
use crate::linalg::{norm, CsrMatrix, Method, ZeroMeanSolver};

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    /// periodic node indices
    pub vertices: Vec<usize>,
    /// unwrapped vertex coordinates, consistent within the element
    pub coords: Vec<[f64; 2]>,
    /// gradients of the barycentric coordinates
    pub grads: Vec<[f64; 2]>,
    pub measure: f64,
    pub barycenter: [f64; 2],
    /// integer corner coordinates in units of `1/n`
    pub corners: Vec<[i64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroMesh {
    d: usize,
    n: usize,
    elements: Vec<Element>,
}

/// Uniform periodic mesh: `n` intervals in 1D, `n²` squares split along
/// their main diagonal in 2D.
pub fn build_mesh(d: usize, n: usize) -> Result<MacroMesh> {
    if n == 0 {
        return Err(Error::InvalidMesh(
            "need at least one element per axis".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let mut elements = Vec::new();
    match d {
        1 => {
            for i in 0..n as i64 {
                let corners = vec![[i, 0], [i + 1, 0]];
                elements.push(make_element(1, n, corners, h));
            }
        }
        2 => {
            for j in 0..n as i64 {
                for i in 0..n as i64 {
                    let a = vec![[i, j], [i + 1, j], [i + 1, j + 1]];
                    let b = vec![[i, j], [i + 1, j + 1], [i, j + 1]];
                    elements.push(make_element(2, n, a, h));
                    elements.push(make_element(2, n, b, h));
                }
            }
        }
        _ => return Err(Error::InvalidMesh(format!("dimension {d} not supported"))),
    }
    Ok(MacroMesh { d, n, elements })
}

fn make_element(d: usize, n: usize, corners: Vec<[i64; 2]>, h: f64) -> Element {
    let coords: Vec<[f64; 2]> = corners
        .iter()
        .map(|c| [c[0] as f64 * h, c[1] as f64 * h])
        .collect();
    let vertices = corners
        .iter()
        .map(|c| crate::lattice::cell_index(*c, n, d))
        .collect();
    let (grads, measure) = if d == 1 {
        let len = coords[1][0] - coords[0][0];
        (vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]], len)
    } else {
        let (x0, x1, x2) = (coords[0], coords[1], coords[2]);
        let det = (x1[0] - x0[0]) * (x2[1] - x0[1]) - (x2[0] - x0[0]) * (x1[1] - x0[1]);
        let g1 = [(x2[1] - x0[1]) / det, -(x2[0] - x0[0]) / det];
        let g2 = [-(x1[1] - x0[1]) / det, (x1[0] - x0[0]) / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        (vec![g0, g1, g2], det.abs() / 2.0)
    };
    let k = coords.len() as f64;
    let mut barycenter = [0.0; 2];
    for c in &coords {
        barycenter[0] += c[0] / k;
        barycenter[1] += c[1] / k;
    }
    Element {
        vertices,
        coords,
        grads,
        measure,
        barycenter,
        corners,
    }
}

impl MacroMesh {
    pub fn d(&self) -> usize {
        self.d
    }

    /// Elements per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Element leg length `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Largest element diameter.
    pub fn diameter(&self) -> f64 {
        if self.d == 1 {
            self.h()
        } else {
            self.h() * 2f64.sqrt()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let c = crate::lattice::cell_coords(node, self.n, self.d);
        [c[0] as f64 * self.h(), c[1] as f64 * self.h()]
    }

    /// Element boundaries must fall on Bravais sites.
    pub fn check_aligned(&self, lat: &Multilattice) -> Result<()> {
        if lat.d() != self.d {
            return Err(Error::InvalidMesh(
                "mesh and lattice dimensions differ".into(),
            ));
        }
        if !lat.n().is_multiple_of(self.n) {
            return Err(Error::InvalidMesh(format!(
                "{} elements per axis do not divide 1/eps = {}",
                self.n,
                lat.n()
            )));
        }
        Ok(())
    }

    /// Lumped nodal share of `Ω`, `Σ_{T∋a} |T|/(d+1)`.
    pub fn node_shares(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.num_nodes()];
        for el in &self.elements {
            for &v in &el.vertices {
                s[v] += el.measure / (self.d + 1) as f64;
            }
        }
        s
    }

    /// Element containing `x ∈ [0,1)^d`.
    pub fn locate(&self, x: [f64; 2]) -> usize {
        let n = self.n as f64;
        let i = ((x[0] * n).floor() as i64).rem_euclid(self.n as i64) as usize;
        if self.d == 1 {
            return i;
        }
        let j = ((x[1] * n).floor() as i64).rem_euclid(self.n as i64) as usize;
        let xi = x[0] * n - (x[0] * n).floor();
        let eta = x[1] * n - (x[1] * n).floor();
        2 * (i + self.n * j) + usize::from(eta > xi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct P1Field {
    pub d: usize,
    pub values: Vec<f64>,
}

impl P1Field {
    pub fn zeros(mesh: &MacroMesh) -> P1Field {
        P1Field {
            d: mesh.d(),
            values: vec![0.0; mesh.num_nodes() * mesh.d()],
        }
    }

    pub fn node(&self, a: usize) -> &[f64] {
        &self.values[a * self.d..(a + 1) * self.d]
    }
}

/// One vector of `k` values per element.
#[derive(Clone, Debug, PartialEq)]
pub struct P0Field {
    pub k: usize,
    pub values: Vec<f64>,
}

impl P0Field {
    pub fn zeros(mesh: &MacroMesh, k: usize) -> P0Field {
        P0Field {
            k,
            values: vec![0.0; mesh.num_elements() * k],
        }
    }

    pub fn get(&self, e: usize) -> &[f64] {
        &self.values[e * self.k..(e + 1) * self.k]
    }

    pub fn get_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.values[e * self.k..(e + 1) * self.k]
    }
}

/// Row-major `d×d` gradient `F_ij = ∂u_i/∂x_j` stored in a 2×2 array.
pub type Grad = [f64; 4];

pub fn element_gradient(mesh: &MacroMesh, u: &P1Field, e: usize) -> Result<Grad> {
    let el = mesh
        .elements
        .get(e)
        .ok_or_else(|| Error::InvalidMesh(format!("no element {e}")))?;
    if !(el.measure > 0.0) {
        return Err(Error::InvalidMesh(format!("element {e} is degenerate")));
    }
    let d = mesh.d();
    let mut f = [0.0; 4];
    for (a, &v) in el.vertices.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                f[i * d + j] += u.values[v * d + i] * el.grads[a][j];
            }
        }
    }
    Ok(f)
}

/// `u_lin(x) = c + F (x − x_0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub d: usize,
    pub anchor: [f64; 2],
    pub value: [f64; 2],
    pub grad: Grad,
}

impl AffineMap {
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.d;
        let mut out = self.value;
        for i in 0..d {
            for j in 0..d {
                out[i] += self.grad[i * d + j] * (x[j] - self.anchor[j]);
            }
        }
        out
    }
}

pub fn affine_extension(mesh: &MacroMesh, u: &P1Field, e: usize) -> Result<AffineMap> {
    let grad = element_gradient(mesh, u, e)?;
    let el = &mesh.elements[e];
    let d = mesh.d();
    let mut value = [0.0; 2];
    value[..d].copy_from_slice(u.node(el.vertices[0]));
    Ok(AffineMap {
        d,
        anchor: el.coords[0],
        value,
        grad,
    })
}

/// Nodal interpolant of a function.
pub fn interpolate<F: Fn([f64; 2]) -> [f64; 2]>(mesh: &MacroMesh, f: F) -> P1Field {
    let d = mesh.d();
    let mut values = Vec::with_capacity(mesh.num_nodes() * d);
    for a in 0..mesh.num_nodes() {
        values.extend_from_slice(&f(mesh.node_coords(a))[..d]);
    }
    P1Field { d, values }
}

/// Evaluate `u^h` at an arbitrary point of the torus.
pub fn evaluate(mesh: &MacroMesh, u: &P1Field, x: [f64; 2]) -> [f64; 2] {
    let e = mesh.locate(x);
    let el = &mesh.elements[e];
    let d = mesh.d();
    // unwrap x next to the element
    let mut y = x;
    for k in 0..d {
        let shift = ((el.barycenter[k] - x[k]) + 0.5).floor();
        y[k] = x[k] + shift;
    }
    let mut out = [0.0; 2];
    for (a, &v) in el.vertices.iter().enumerate() {
        let mut lam = if a == 0 { 1.0 } else { 0.0 };
        for k in 0..d {
            lam += el.grads[a][k] * (y[k] - el.coords[0][k]);
        }
        for i in 0..d {
            out[i] += lam * u.values[v * d + i];
        }
    }
    out
}

/// `u^h` sampled at every lattice site.
pub fn sample(mesh: &MacroMesh, u: &P1Field, lat: &Multilattice) -> LatticeField {
    LatticeField::from_fn(lat, |x, _| evaluate(mesh, u, x))
}

/// `∫_Ω u^h`, per component.
pub fn integral(mesh: &MacroMesh, u: &P1Field) -> Vec<f64> {
    let shares = mesh.node_shares();
    let d = mesh.d();
    let mut acc = vec![0.0; d];
    for (a, s) in shares.iter().enumerate() {
        for i in 0..d {
            acc[i] += s * u.values[a * d + i];
        }
    }
    acc
}

/// Subtract `∫_Ω u^h` so that the field lies in the zero-mean space.
pub fn project_zero_mean_p1(mesh: &MacroMesh, u: &P1Field) -> P1Field {
    let mean = integral(mesh, u);
    let mut out = u.clone();
    for a in 0..mesh.num_nodes() {
        for i in 0..mesh.d() {
            out.values[a * mesh.d() + i] -= mean[i];
        }
    }
    out
}

/// Discrete norms of `u − v` on ℳ.
pub fn lattice_error(lat: &Multilattice, u: &LatticeField, v: &LatticeField) -> Result<Norms> {
    discrete_norms(lat, &u.sub(v)?)
}

/// Stiffness matrix of `∫ C ∇u : ∇v` for a constant isotropic-in-1D
/// coefficient, as triplets. Used by oracles and the homogenized solver.
pub fn p1_stiffness_1d(mesh: &MacroMesh, coefficient: f64) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::new();
    for el in mesh.elements() {
        for a in 0..2 {
            for b in 0..2 {
                let k = el.measure * coefficient * el.grads[a][0] * el.grads[b][0];
                t.push((el.vertices[a], el.vertices[b], k));
            }
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroReport {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Newton on a macro energy: `eval(u)` returns the nodal gradient and
/// stiffness; iterates `u ← u + K⁻¹(load − grad)` on zero-mean fields until
/// `‖grad − load‖ ≤ tol (1 + ‖load‖)`.
pub fn macro_newton<F>(
    mesh: &MacroMesh,
    load: &[f64],
    u0: &P1Field,
    tol: f64,
    max_iter: usize,
    mut eval: F,
) -> Result<(P1Field, MacroReport)>
where
    F: FnMut(&P1Field) -> Result<(Vec<f64>, CsrMatrix)>,
{
    let d = mesh.d();
    let mut u = project_zero_mean_p1(mesh, u0);
    let target = tol * (1.0 + norm(load));
    let mut history = Vec::new();
    for it in 0..=max_iter {
        let (g, k) = eval(&u)?;
        let r: Vec<f64> = g.iter().zip(load).map(|(a, b)| a - b).collect();
        let rn = norm(&r);
        history.push(rn);
        if rn <= target {
            return Ok((
                u,
                MacroReport {
                    iterations: it,
                    residual: rn,
                    history,
                },
            ));
        }
        if it == max_iter {
            break;
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = ZeroMeanSolver::new(&k, d, Method::Auto)?.solve(&neg)?;
        for (ui, si) in u.values.iter_mut().zip(&step) {
            *ui += si;
        }
        u = project_zero_mean_p1(mesh, &u);
    }
    Err(Error::NoConvergence {
        context: "macro Newton".into(),
        iterations: max_iter,
        residual: *history.last().unwrap_or(&f64::NAN),
    })
}

/// Assemble `Σ_T |T| S_T ∇λ_a` from per-element stresses (row-major `d×d`).
pub fn assemble_stress(mesh: &MacroMesh, stress: &[Grad]) -> Vec<f64> {
    let d = mesh.d();
    let mut g = vec![0.0; mesh.num_nodes() * d];
    for (el, s) in mesh.elements().iter().zip(stress) {
        for (a, &v) in el.vertices.iter().enumerate() {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += s[i * d + j] * el.grads[a][j];
                }
                g[v * d + i] += el.measure * acc;
            }
        }
    }
    g
}

/// Assemble `Σ_T |T| C_T[e_i ⊗ ∇λ_a, e_k ⊗ ∇λ_b]` from per-element tangents
/// `C[(i,j),(k,l)]` stored as `d²×d²` row-major.
pub fn assemble_tangent(mesh: &MacroMesh, tangent: &[Vec<f64>]) -> CsrMatrix {
    let d = mesh.d();
    let dd = d * d;
    let mut t = Vec::with_capacity(mesh.num_elements() * (d + 1) * (d + 1) * dd);
    for (el, c) in mesh.elements().iter().zip(tangent) {
        for (a, &va) in el.vertices.iter().enumerate() {
            for (b, &vb) in el.vertices.iter().enumerate() {
                for i in 0..d {
                    for k in 0..d {
                        let mut acc = 0.0;
                        for j in 0..d {
                            for l in 0..d {
                                acc += c[(i * d + j) * dd + k * d + l]
                                    * el.grads[a][j]
                                    * el.grads[b][l];
                            }
                        }
                        t.push((va * d + i, vb * d + k, el.measure * acc));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_nodes() * d, t)
}
