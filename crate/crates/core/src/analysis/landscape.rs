//! Loss-landscape export around a relaxed cell: finite-difference Hessian,
//! its two leading eigenvectors, and the surrogate on a grid spanned by them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{multilinear_eval_flat, Objective};
use crate::space::{discretize, RelaxedCell};
use crate::{Error, Result};

/// Dense square matrix, row-major as nested rows.
pub type Matrix = Vec<Vec<f64>>;

const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Offsets `(low, mid, high)` for coordinate `x`: centered when `x ≥ h`,
/// otherwise shifted forward so no coordinate goes negative.
fn stencil(x: f64, h: f64) -> (f64, f64, f64) {
    if x >= h {
        (-h, 0.0, h)
    } else {
        (0.0, h, 2.0 * h)
    }
}

/// Second differences of `f` on raw coordinates around `center`.
///
/// Coordinates closer than `h` to zero use a forward stencil instead of a
/// centered one. Entries are computed once per unordered pair, so the result
/// is exactly symmetric.
pub fn hessian_fd<F>(f: F, center: &[f64], h: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param("h", format!("{h} must be positive")));
    }
    if center.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::param("center", "coordinates must be finite and non-negative"));
    }
    let n = center.len();
    let st: Vec<(f64, f64, f64)> = center.iter().map(|&x| stencil(x, h)).collect();
    let eval = |moves: &[(usize, f64)]| {
        let mut x = center.to_vec();
        for &(i, dx) in moves {
            x[i] += dx;
        }
        f(&x)
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (lo_i, mid_i, hi_i) = st[i];
            if i == j {
                (eval(&[(i, hi_i)]) - 2.0 * eval(&[(i, mid_i)]) + eval(&[(i, lo_i)])) / (h * h)
            } else {
                let (lo_j, _, hi_j) = st[j];
                (eval(&[(i, hi_i), (j, hi_j)]) - eval(&[(i, hi_i), (j, lo_j)]) - eval(&[(i, lo_i), (j, hi_j)])
                    + eval(&[(i, lo_i), (j, lo_j)]))
                    / (4.0 * h * h)
            }
        })
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), &v) in pairs.iter().zip(&entries) {
        out[i][j] = v;
        out[j][i] = v;
    }
    Ok(out)
}

/// Hessian of the multilinear surrogate with respect to the flattened `α`.
pub fn surrogate_hessian(obj: &Objective, center: &RelaxedCell, h: f64) -> Result<Matrix> {
    obj.spec().check_relaxed(center)?;
    crate::bench::multilinear_eval(obj, center)?;
    hessian_fd(|x| multilinear_eval_flat(obj, x), center.as_flat(), h)
}

fn check_symmetric(a: &[Vec<f64>]) -> Result<()> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::param("matrix", "must be square"));
    }
    let scale = a.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            if !(a[i][j] - a[j][i]).abs().le(&(1e-12 * scale)) {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Eigenvector `k` is `vectors[k]`; order is unspecified.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
    check_symmetric(a)?;
    let n = a.len();
    let mut m: Matrix = a.to_vec();
    let mut v: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let norm = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = JACOBI_TOL * norm.max(1.0);
    for _ in 0..MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[p][k], m[q][k]);
                    m[p][k] = c * x - s * y;
                    m[q][k] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i][i]).collect();
    let vectors = (0..n).map(|k| (0..n).map(|i| v[i][k]).collect()).collect();
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEigen {
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub lambda0: f64,
    pub lambda1: f64,
}

fn canonical(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut big = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[big].abs() {
            big = i;
        }
    }
    if v[big] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Unit eigenvectors of the two largest eigenvalues, each signed so its
/// largest-magnitude component is positive.
pub fn top2_eigvecs(h: &[Vec<f64>]) -> Result<TopEigen> {
    if h.len() < 2 {
        return Err(Error::param("matrix", "need at least a 2x2 matrix"));
    }
    let (values, mut vectors) = jacobi_eigen(h)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let v1 = canonical(std::mem::take(&mut vectors[order[1]]));
    let v0 = canonical(std::mem::take(&mut vectors[order[0]]));
    Ok(TopEigen { v0, v1, lambda0: values[order[0]], lambda1: values[order[1]] })
}

/// `n` points from `−radius` to `radius`; the middle one is exactly zero.
pub fn grid_axis(n: usize, radius: f64) -> Vec<f64> {
    let half = (n - 1) as f64;
    (0..n).map(|i| radius * (2.0 * i as f64 - half) / half).collect()
}

/// Adds `q` to `center` through the additive representation: `q` is clamped
/// to `q_k ≥ −α_k` and each edge renormalized. Edges with zero `q`, or whose
/// clamped mass vanishes, keep their distribution.
pub fn perturb(center: &RelaxedCell, q: &[f64]) -> RelaxedCell {
    let m = center.op_count();
    let mut out = center.as_flat().to_vec();
    for (row, dq) in out.chunks_mut(m).zip(q.chunks(m)) {
        if dq.iter().all(|x| *x == 0.0) {
            continue;
        }
        let moved: Vec<f64> = row.iter().zip(dq).map(|(a, b)| (a + b).max(0.0)).collect();
        let sum: f64 = moved.iter().sum();
        if sum > 0.0 {
            for (r, x) in row.iter_mut().zip(&moved) {
                *r = x / sum;
            }
        }
    }
    RelaxedCell::from_flat_unchecked(m, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeParams {
    pub grid_n: usize,
    pub radius: f64,
    /// Finite-difference step for the Hessian.
    pub h: f64,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        Self { grid_n: 41, radius: 1.0, h: 1e-3 }
    }
}

impl LandscapeParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 3 || self.grid_n % 2 == 0 {
            return Err(Error::param("grid_n", format!("{} must be odd and at least 3", self.grid_n)));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::param("radius", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub center: Vec<Vec<f64>>,
    pub center_cell: String,
    pub eigen: TopEigen,
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    /// `values[i][j]` at `(lambda0[i], lambda1[j])`.
    pub values: Matrix,
}

impl LandscapeGrid {
    pub fn center_value(&self) -> f64 {
        self.values[self.lambda0.len() / 2][self.lambda1.len() / 2]
    }

    /// Header row of `λ1` values, then one row per `λ0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda0\\lambda1");
        for l in &self.lambda1 {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (l0, row) in self.lambda0.iter().zip(&self.values) {
            out.push_str(&l0.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Values of `f` over the grid `center ⊕ (λ0·v0 + λ1·v1)`.
pub fn landscape_grid_along<F>(
    f: F,
    center: &RelaxedCell,
    v0: &[f64],
    v1: &[f64],
    grid_n: usize,
    radius: f64,
) -> Result<(Vec<f64>, Matrix)>
where
    F: Fn(&RelaxedCell) -> f64 + Sync,
{
    LandscapeParams { grid_n, radius, h: 1e-3 }.validate()?;
    let n = center.as_flat().len();
    if v0.len() != n || v1.len() != n {
        return Err(Error::LengthMismatch { left: n, right: v0.len().max(v1.len()) });
    }
    let axis = grid_axis(grid_n, radius);
    let values = axis
        .par_iter()
        .map(|&l0| {
            axis.iter()
                .map(|&l1| {
                    let q: Vec<f64> = v0.iter().zip(v1).map(|(a, b)| l0 * a + l1 * b).collect();
                    f(&perturb(center, &q))
                })
                .collect()
        })
        .collect();
    Ok((axis, values))
}

/// Hessian, leading eigenvectors and surrogate grid around `center`.
pub fn landscape_grid(obj: &Objective, center: &RelaxedCell, params: &LandscapeParams) -> Result<LandscapeGrid> {
    params.validate()?;
    let hess = surrogate_hessian(obj, center, params.h)?;
    let eigen = top2_eigvecs(&hess)?;
    let (axis, values) = landscape_grid_along(
        |c| multilinear_eval_flat(obj, c.as_flat()),
        center,
        &eigen.v0,
        &eigen.v1,
        params.grid_n,
        params.radius,
    )?;
    Ok(LandscapeGrid {
        center: center.dists().map(<[f64]>::to_vec).collect(),
        center_cell: obj.spec().render_cell(&discretize(center)),
        eigen,
        lambda0: axis.clone(),
        lambda1: axis,
        values,
    })
}
