//! Complex-analytic kernel: fixed-capacity complex vectors, the boundary
//! functional L, inner normals, the boundary quasimetric, the curvature
//! invariant nu, and the Moebius transformation law.
//!
//! Conventions: domains are D = {rho < 0}, the complex gradient is
//! d rho = (drho/dz_j) with d/dz = (d/dx - i d/dy)/2, pairings <a, b> are
//! bilinear (no conjugation) unless named hermitian, and
//! L(z, w) = <d rho(w), w - z> / ||d rho(w)|| for a source w on the boundary.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::domains::Domain;
use crate::error::{CcvxError, Result};
use crate::pp::RngStream;

/// Largest supported complex dimension; enough for desk-scale runs.
pub const MAX_D: usize = 4;

type C64 = Complex64;

const C_ZERO: C64 = C64::new(0.0, 0.0);

/// A point of C^d, d <= MAX_D, stored inline so hot loops never allocate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CVec {
    len: u8,
    data: [C64; MAX_D],
}

impl CVec {
    pub fn zero(d: usize) -> CVec {
        assert!(d >= 1 && d <= MAX_D);
        CVec { len: d as u8, data: [C_ZERO; MAX_D] }
    }

    pub fn from_slice(v: &[C64]) -> CVec {
        assert!(!v.is_empty() && v.len() <= MAX_D);
        let mut data = [C_ZERO; MAX_D];
        data[..v.len()].copy_from_slice(v);
        CVec { len: v.len() as u8, data }
    }

    /// Builds from interleaved real coordinates (x1, y1, ..., xd, yd).
    pub fn from_real(r: &[f64]) -> CVec {
        assert!(r.len() % 2 == 0);
        let d = r.len() / 2;
        let mut v = CVec::zero(d);
        for j in 0..d {
            v.data[j] = C64::new(r[2 * j], r[2 * j + 1]);
        }
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data[..self.len as usize]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data[..self.len as usize]
    }

    /// Writes interleaved real coordinates into `out[..2d]`.
    #[inline]
    pub fn write_real(&self, out: &mut [f64]) {
        let d = self.dim();
        for j in 0..d {
            out[2 * j] = self.data[j].re;
            out[2 * j + 1] = self.data[j].im;
        }
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.as_slice().iter().map(|c| c.norm_sqr()).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, other: &CVec) -> f64 {
        debug_assert_eq!(self.len, other.len);
        let mut s = 0.0;
        for j in 0..self.dim() {
            s += (self.data[j] - other.data[j]).norm_sqr();
        }
        s
    }

    #[inline]
    pub fn dist(&self, other: &CVec) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn add(&self, other: &CVec) -> CVec {
        let mut out = *self;
        for j in 0..self.dim() {
            out.data[j] += other.data[j];
        }
        out
    }

    pub fn sub(&self, other: &CVec) -> CVec {
        let mut out = *self;
        for j in 0..self.dim() {
            out.data[j] -= other.data[j];
        }
        out
    }

    pub fn scale(&self, s: f64) -> CVec {
        let mut out = *self;
        for j in 0..self.dim() {
            out.data[j] *= s;
        }
        out
    }

    pub fn scale_c(&self, s: C64) -> CVec {
        let mut out = *self;
        for j in 0..self.dim() {
            out.data[j] *= s;
        }
        out
    }

    pub fn conj(&self) -> CVec {
        let mut out = *self;
        for j in 0..self.dim() {
            out.data[j] = out.data[j].conj();
        }
        out
    }

    /// Bilinear pairing sum_j a_j b_j (no conjugation).
    #[inline]
    pub fn bilinear(&self, other: &CVec) -> C64 {
        debug_assert_eq!(self.len, other.len);
        let mut s = C_ZERO;
        for j in 0..self.dim() {
            s += self.data[j] * other.data[j];
        }
        s
    }

    /// Hermitian pairing sum_j a_j conj(b_j).
    #[inline]
    pub fn hermitian(&self, other: &CVec) -> C64 {
        debug_assert_eq!(self.len, other.len);
        let mut s = C_ZERO;
        for j in 0..self.dim() {
            s += self.data[j] * other.data[j].conj();
        }
        s
    }
}

impl std::ops::Index<usize> for CVec {
    type Output = C64;
    #[inline]
    fn index(&self, i: usize) -> &C64 {
        &self.data[..self.len as usize][i]
    }
}

impl std::ops::IndexMut<usize> for CVec {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[..self.len as usize][i]
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 || d > MAX_D {
        return Err(CcvxError::Dimension(d, MAX_D));
    }
    Ok(())
}

fn check_on_boundary(dom: &Domain, w: &CVec) -> Result<()> {
    if !dom.on_boundary(w) {
        return Err(CcvxError::OffBoundary { rho: dom.rho(w) });
    }
    Ok(())
}

/// Unit complex gradient d rho(w)/||d rho(w)|| together with the norm.
pub(crate) fn unit_grad(dom: &Domain, w: &CVec) -> Result<(CVec, f64)> {
    let g = dom.grad(w);
    let n = g.norm();
    if n < 1e-12 {
        return Err(CcvxError::GradientDegenerate(n));
    }
    Ok((g.scale(1.0 / n), n))
}

/// L(z, w) = <d rho(w), w - z> / ||d rho(w)||; w must lie on the boundary.
/// |L(z, w)| is the distance from z to the affine complex tangent
/// hyperplane at w.
pub fn boundary_functional(dom: &Domain, z: &CVec, w: &CVec) -> Result<C64> {
    check_dim(dom.dim())?;
    check_on_boundary(dom, w)?;
    let (gn, _) = unit_grad(dom, w)?;
    Ok(functional_from_unit_grad(&gn, w, z))
}

/// Hot-path form of L with the unit gradient at w precomputed.
#[inline]
pub(crate) fn functional_from_unit_grad(gn: &CVec, w: &CVec, z: &CVec) -> C64 {
    let mut s = C_ZERO;
    for j in 0..w.dim() {
        s += gn[j] * (w[j] - z[j]);
    }
    s
}

/// Inward unit normal at a boundary point, as a complex vector; equals
/// -conj(d rho)/||d rho|| since the real gradient of rho points outward.
pub fn inner_normal(dom: &Domain, w: &CVec) -> Result<CVec> {
    check_on_boundary(dom, w)?;
    let (gn, _) = unit_grad(dom, w)?;
    Ok(gn.conj().scale(-1.0))
}

/// Boundary quasimetric d(a, b) = |L(a, b)|^(1/2); a genuine metric on the
/// sphere, a quasimetric with constants close to 1 on the other catalogue
/// domains.
pub fn quasimetric(dom: &Domain, a: &CVec, b: &CVec) -> Result<f64> {
    check_on_boundary(dom, a)?;
    Ok(boundary_functional(dom, a, b)?.norm().sqrt())
}

/// Measured quasimetric constants over a set of boundary points:
/// `sym_max` = sup d(a,b)/d(b,a), `tri_max` = sup d(a,c)/(d(a,b)+d(b,c)).
/// `q` is the larger of the two.
#[derive(Clone, Copy, Debug)]
pub struct QuasiStats {
    pub sym_max: f64,
    pub tri_max: f64,
    pub q: f64,
    pub pairs: usize,
    pub triples: usize,
}

pub fn quasimetric_stats(dom: &Domain, pts: &[CVec]) -> Result<QuasiStats> {
    if pts.len() < 3 {
        return Err(CcvxError::Range("quasimetric_stats needs at least 3 points"));
    }
    let m = pts.len();
    let mut dm = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                dm[i * m + j] = quasimetric(dom, &pts[i], &pts[j])?;
            }
        }
    }
    let mut sym_max: f64 = 0.0;
    let mut pairs = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (dab, dba) = (dm[i * m + j], dm[j * m + i]);
            if dba > 1e-12 {
                sym_max = sym_max.max(dab / dba);
                pairs += 1;
            }
        }
    }
    // Full triple scan is O(m^3); stride the middle index when m is large.
    let stride = (m * m * m / 2_000_000).max(1);
    let mut tri_max: f64 = 0.0;
    let mut triples = 0usize;
    for i in 0..m {
        for k in 0..m {
            if i == k {
                continue;
            }
            let dik = dm[i * m + k];
            let mut j = (i + k) % stride;
            while j < m {
                if j != i && j != k {
                    let s = dm[i * m + j] + dm[j * m + k];
                    if s > 1e-12 {
                        tri_max = tri_max.max(dik / s);
                        triples += 1;
                    }
                }
                j += stride;
            }
        }
    }
    Ok(QuasiStats { sym_max, tri_max, q: sym_max.max(tri_max), pairs, triples })
}

/// Evaluates the boundary functional from an explicitly supplied gradient
/// vector instead of the domain's own: callers can pass the gradient of any
/// defining function for the same hypersurface and must get the same value
/// up to normalization by its length.
pub fn functional_from_grad(grad: &CVec, z: &CVec, w: &CVec) -> Result<C64> {
    let n = grad.norm();
    if n < 1e-12 {
        return Err(CcvxError::GradientDegenerate(n));
    }
    Ok(grad.bilinear(&w.sub(z)) / n)
}

/// Sampled lower bound on inf |L(z, w)| / ||w - z||^2 over
/// closure(D) x boundary; the strong-convexity margin used to size
/// spatial-index query radii.
pub fn strong_convexity_margin(dom: &Domain, samples: usize, seed: u128) -> Result<f64> {
    if samples < 1000 {
        return Err(CcvxError::Range("strong_convexity_margin needs at least 1000 samples"));
    }
    let mut stream = RngStream::new(seed, 0x6d61_7267_696e);
    let mut min_ratio = f64::INFINITY;
    for i in 0..samples {
        let w = crate::pp::sample_boundary_uniform(dom, &mut stream)?;
        // Alternate interior points with boundary points; the infimum for
        // the ball is attained on the boundary (antipodes).
        let z = if i % 2 == 0 {
            crate::pp::sample_interior_uniform(dom, &mut stream)?
        } else {
            crate::pp::sample_boundary_uniform(dom, &mut stream)?
        };
        let dsq = w.dist_sq(&z);
        if dsq < 1e-18 {
            continue;
        }
        let l = boundary_functional(dom, &z, &w)?.norm();
        min_ratio = min_ratio.min(l / dsq);
    }
    if !min_ratio.is_finite() || min_ratio <= 0.0 {
        return Err(CcvxError::Range("degenerate strong-convexity margin"));
    }
    if min_ratio < 1e-6 {
        eprintln!(
            "warning: strong-convexity margin {min_ratio:.3e} is nearly degenerate; \
             spatial queries will be slow and certificates weak"
        );
    }
    Ok(min_ratio)
}

/// Margin constant actually used for index sizing: the exact 1/2 for the
/// ball, a halved sampled estimate otherwise (halving guards against the
/// sample missing the true infimum).
pub fn margin_for_queries(dom: &Domain) -> Result<f64> {
    if let Some(exact) = dom.margin_lower_bound() {
        return Ok(exact);
    }
    Ok(0.5 * strong_convexity_margin(dom, 4096, 0x636d_6172)?)
}

/// The invariant nu_D(w) = (-1)^(d+1) det Q[rho](w) / ||grad rho(w)||^(2d+2)
/// with Q the bordered complex Hessian; positive exactly on strongly
/// C-convex boundaries, and equal to (1/16) prod(alpha_j^2 - beta_j^2) at
/// the base point of a model quadric.
pub fn curvature_nu(dom: &Domain, w: &CVec) -> Result<f64> {
    let d = dom.dim();
    check_dim(d)?;
    check_on_boundary(dom, w)?;
    let g = dom.grad(w);
    let (hzz, hzzb) = dom.hess_complex(w);
    let n = 2 * d + 2;
    let mut m = DMatrix::<C64>::zeros(n, n);
    for k in 0..d {
        m[(0, 2 + k)] = g[k];
        m[(1, 2 + d + k)] = g[k].conj();
        m[(2 + k, 0)] = g[k];
        m[(2 + d + k, 1)] = g[k].conj();
        for j in 0..d {
            m[(2 + j, 2 + k)] = hzz[(j, k)];
            m[(2 + j, 2 + d + k)] = hzzb[(j, k)];
            m[(2 + d + j, 2 + k)] = hzzb[(j, k)].conj();
            m[(2 + d + j, 2 + d + k)] = hzz[(j, k)].conj();
        }
    }
    let det = m.lu().determinant();
    if det.im.abs() > 1e-8 * det.re.abs().max(1e-300) {
        return Err(CcvxError::Range("bordered determinant not real"));
    }
    let grad_real_norm = 2.0 * g.norm();
    let sign = if d % 2 == 0 { -1.0 } else { 1.0 };
    let nu = sign * det.re / grad_real_norm.powi(2 * d as i32 + 2);
    if nu <= 0.0 {
        return Err(CcvxError::CurvatureSign(nu));
    }
    Ok(nu)
}

/// Projective linear map z -> (b_{j0} + sum_k b_{jk} z_k) / beta0(z) with
/// beta0(z) = b_{00} + sum_k b_{0k} z_k, encoded by an invertible
/// (d+1) x (d+1) complex matrix.
#[derive(Clone, Debug)]
pub struct MoebiusMap {
    d: usize,
    b: DMatrix<C64>,
}

impl MoebiusMap {
    pub fn from_matrix(b: DMatrix<C64>) -> Result<MoebiusMap> {
        let n = b.nrows();
        if n != b.ncols() || n < 3 || n > MAX_D + 1 {
            return Err(CcvxError::Range("moebius matrix must be square, size d+1"));
        }
        let det = b.clone().lu().determinant();
        if det.norm() < 1e-12 {
            return Err(CcvxError::Singular("moebius matrix"));
        }
        Ok(MoebiusMap { d: n - 1, b })
    }

    pub fn identity(d: usize) -> Result<MoebiusMap> {
        check_dim(d)?;
        Ok(MoebiusMap { d, b: DMatrix::identity(d + 1, d + 1) })
    }

    /// Embeds a d x d linear map with translation as the affine Moebius map
    /// z -> a z + t.
    pub fn affine(a: &DMatrix<C64>, t: &CVec) -> Result<MoebiusMap> {
        let d = t.dim();
        check_dim(d)?;
        if a.nrows() != d || a.ncols() != d {
            return Err(CcvxError::Range("affine block size mismatch"));
        }
        let mut b = DMatrix::<C64>::zeros(d + 1, d + 1);
        b[(0, 0)] = C64::new(1.0, 0.0);
        for j in 0..d {
            b[(j + 1, 0)] = t[j];
            for k in 0..d {
                b[(j + 1, k + 1)] = a[(j, k)];
            }
        }
        MoebiusMap::from_matrix(b)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.b
    }

    pub fn beta0(&self, z: &CVec) -> C64 {
        let mut s = self.b[(0, 0)];
        for k in 0..self.d {
            s += self.b[(0, k + 1)] * z[k];
        }
        s
    }

    pub fn apply(&self, z: &CVec) -> Result<CVec> {
        let b0 = self.beta0(z);
        if b0.norm() < 1e-12 {
            return Err(CcvxError::Indeterminacy(b0.norm()));
        }
        let mut out = CVec::zero(self.d);
        for j in 0..self.d {
            let mut s = self.b[(j + 1, 0)];
            for k in 0..self.d {
                s += self.b[(j + 1, k + 1)] * z[k];
            }
            out[j] = s / b0;
        }
        Ok(out)
    }

    /// Complex Jacobian at z: J_{jk} = (b_{jk} - w_j b_{0k}) / beta0(z)
    /// where w = apply(z).
    pub fn jacobian(&self, z: &CVec) -> Result<DMatrix<C64>> {
        let b0 = self.beta0(z);
        if b0.norm() < 1e-12 {
            return Err(CcvxError::Indeterminacy(b0.norm()));
        }
        let w = self.apply(z)?;
        let mut j = DMatrix::<C64>::zeros(self.d, self.d);
        for r in 0..self.d {
            for c in 0..self.d {
                j[(r, c)] = (self.b[(r + 1, c + 1)] - w[r] * self.b[(0, c + 1)]) / b0;
            }
        }
        Ok(j)
    }

    pub fn inverse(&self) -> Result<MoebiusMap> {
        let inv = self
            .b
            .clone()
            .try_inverse()
            .ok_or(CcvxError::Singular("moebius matrix"))?;
        Ok(MoebiusMap { d: self.d, b: inv })
    }
}

/// Haar-ish random unitary from QR of a complex Gaussian matrix, with the
/// phase convention that the R diagonal is positive.
pub fn random_unitary(d: usize, stream: &mut RngStream) -> Result<DMatrix<C64>> {
    check_dim(d)?;
    let g = DMatrix::<C64>::from_fn(d, d, |_, _| C64::new(stream.gaussian(), stream.gaussian()));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        let rkk = r[(k, k)];
        if rkk.norm() > 0.0 {
            let phase = rkk / rkk.norm();
            for j in 0..d {
                q[(j, k)] *= phase;
            }
        }
    }
    Ok(q)
}

/// Transport of L under a Moebius map: with rho* = rho o M^{-1},
///   L_rho(z, w) = (||d rho*(Mw)|| / ||d rho(w)||) (beta0(z)/beta0(w))
///                 L_rho*(Mz, Mw).
/// Returns |lhs - rhs| and the gradient-norm ratio.
pub struct TransformCheck {
    pub residual: f64,
    pub norm_ratio: f64,
}

pub fn transform_law_check(
    dom: &Domain,
    map: &MoebiusMap,
    z: &CVec,
    w: &CVec,
) -> Result<TransformCheck> {
    let d = dom.dim();
    if map.dim() != d {
        return Err(CcvxError::Range("map/domain dimension mismatch"));
    }
    let lhs = boundary_functional(dom, z, w)?;
    let g = dom.grad(w);
    let gnorm = g.norm();
    if gnorm < 1e-12 {
        return Err(CcvxError::GradientDegenerate(gnorm));
    }
    let jac = map.jacobian(w)?;
    let jinv = jac
        .try_inverse()
        .ok_or(CcvxError::Singular("moebius jacobian"))?;
    // d rho*(Mw) = d rho(w) . J_M(w)^{-1}  (row vector times matrix).
    let mut gstar = CVec::zero(d);
    for k in 0..d {
        let mut s = C_ZERO;
        for j in 0..d {
            s += g[j] * jinv[(j, k)];
        }
        gstar[k] = s;
    }
    let gstar_norm = gstar.norm();
    if gstar_norm < 1e-12 {
        return Err(CcvxError::GradientDegenerate(gstar_norm));
    }
    let wstar = map.apply(w)?;
    let zstar = map.apply(z)?;
    let diff = wstar.sub(&zstar);
    let lstar = gstar.bilinear(&diff) / gstar_norm;
    let b0z = map.beta0(z);
    let b0w = map.beta0(w);
    if b0w.norm() < 1e-12 {
        return Err(CcvxError::Indeterminacy(b0w.norm()));
    }
    let norm_ratio = gstar_norm / gnorm;
    let rhs = lstar * norm_ratio * (b0z / b0w);
    Ok(TransformCheck { residual: (lhs - rhs).norm(), norm_ratio })
}

/// Convenience wrapper returning only the residual.
pub fn transform_law_residual(dom: &Domain, map: &MoebiusMap, z: &CVec, w: &CVec) -> Result<f64> {
    Ok(transform_law_check(dom, map, z, w)?.residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::Domain;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn ball2() -> Domain {
        Domain::ball(2).unwrap()
    }

    #[test]
    fn functional_on_ball_matches_hermitian_form() {
        let dom = ball2();
        // L(z, w) = 1 - <z, w>_H on the unit sphere.
        let w = CVec::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let z = CVec::zero(2);
        let l = boundary_functional(&dom, &z, &w).unwrap();
        assert!((l - c(1.0, 0.0)).norm() < 1e-14);

        let w2 = CVec::from_slice(&[c(0.0, 0.0), c(0.0, 1.0)]);
        let z2 = CVec::from_slice(&[c(0.3, -0.2), c(0.1, 0.4)]);
        let l2 = boundary_functional(&dom, &z2, &w2).unwrap();
        let herm = c(1.0, 0.0) - z2.hermitian(&w2);
        assert!((l2 - herm).norm() < 1e-14);
    }

    #[test]
    fn functional_vanishes_at_source_and_is_bounded_by_distance() {
        let dom = ball2();
        let mut stream = RngStream::new(7, 1);
        for _ in 0..200 {
            let w = crate::pp::sample_boundary_uniform(&dom, &mut stream).unwrap();
            let z = crate::pp::sample_interior_uniform(&dom, &mut stream).unwrap();
            let lww = boundary_functional(&dom, &w, &w).unwrap();
            assert!(lww.norm() < 1e-12);
            let l = boundary_functional(&dom, &z, &w).unwrap().norm();
            assert!(l <= w.dist(&z) + 1e-12);
            assert!(l >= 0.5 * w.dist_sq(&z) - 1e-12);
        }
    }

    #[test]
    fn functional_at_model_base_point_is_minus_i_last_coordinate() {
        let dom = Domain::model(2, &[1.0], &[0.0], 1.0).unwrap();
        let w = CVec::zero(2);
        let z = CVec::from_slice(&[c(0.05, -0.03), c(0.02, 0.07)]);
        let l = boundary_functional(&dom, &z, &w).unwrap();
        let expect = c(0.0, -1.0) * z[1];
        assert!((l - expect).norm() < 1e-14);
        assert!((l.norm() - z[1].norm()).abs() < 1e-14);
    }

    #[test]
    fn inner_normal_examples() {
        let dom = ball2();
        let w = CVec::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let n = inner_normal(&dom, &w).unwrap();
        assert!((n[0] - c(-1.0, 0.0)).norm() < 1e-14);
        assert!(n[1].norm() < 1e-14);

        let model = Domain::model(2, &[1.0], &[0.0], 1.0).unwrap();
        let n0 = inner_normal(&model, &CVec::zero(2)).unwrap();
        assert!(n0[0].norm() < 1e-14);
        assert!((n0[1] - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn quasimetric_ball_examples() {
        let dom = ball2();
        let a = CVec::from_slice(&[c(0.0, 0.0), c(1.0, 0.0)]);
        let b = CVec::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let dab = quasimetric(&dom, &a, &b).unwrap();
        assert!((dab - 1.0).abs() < 1e-14);
        // Antipodes realize the diameter sqrt(2).
        let nb = CVec::from_slice(&[c(-1.0, 0.0), c(0.0, 0.0)]);
        let dd = quasimetric(&dom, &b, &nb).unwrap();
        assert!((dd - 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn quasimetric_stats_on_ball_are_metric() {
        let dom = ball2();
        let mut stream = RngStream::new(11, 3);
        let pts: Vec<CVec> = (0..60)
            .map(|_| crate::pp::sample_boundary_uniform(&dom, &mut stream).unwrap())
            .collect();
        let st = quasimetric_stats(&dom, &pts).unwrap();
        assert!((st.sym_max - 1.0).abs() < 1e-9);
        assert!(st.tri_max <= 1.0 + 1e-9);
    }

    #[test]
    fn margin_of_ball_is_half() {
        let dom = ball2();
        let m = strong_convexity_margin(&dom, 2000, 5).unwrap();
        assert!(m >= 0.5 - 1e-9);
        assert!(m < 0.75);
        assert!((margin_for_queries(&dom).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn curvature_nu_catalogue_values() {
        let ball = ball2();
        let w = CVec::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert!((curvature_nu(&ball, &w).unwrap() - 1.0 / 64.0).abs() < 1e-12);
        let w2 = CVec::from_slice(&[c(0.0, 0.6), c(-0.8, 0.0)]);
        assert!((curvature_nu(&ball, &w2).unwrap() - 1.0 / 64.0).abs() < 1e-12);

        let m1 = Domain::model(2, &[1.0], &[0.0], 1.0).unwrap();
        assert!((curvature_nu(&m1, &CVec::zero(2)).unwrap() - 1.0 / 16.0).abs() < 1e-12);
        let m2 = Domain::model(2, &[1.0], &[0.6], 1.0).unwrap();
        assert!((curvature_nu(&m2, &CVec::zero(2)).unwrap() - 0.04).abs() < 1e-12);

        let ball3 = Domain::ball(3).unwrap();
        let w3 = CVec::from_slice(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!((curvature_nu(&ball3, &w3).unwrap() - 1.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn moebius_jacobian_matches_finite_differences() {
        let mut stream = RngStream::new(23, 9);
        let mut b = DMatrix::<C64>::identity(3, 3);
        for r in 0..3 {
            for cc in 0..3 {
                b[(r, cc)] += c(0.05 * stream.gaussian(), 0.05 * stream.gaussian());
            }
        }
        let map = MoebiusMap::from_matrix(b).unwrap();
        let z = CVec::from_slice(&[c(0.2, -0.1), c(-0.3, 0.25)]);
        let jac = map.jacobian(&z).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z;
            zp[k] += c(h, 0.0);
            let fp = map.apply(&zp).unwrap();
            let f0 = map.apply(&z).unwrap();
            for j in 0..2 {
                let fd = (fp[j] - f0[j]) / h;
                assert!((fd - jac[(j, k)]).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn moebius_inverse_round_trips() {
        let mut stream = RngStream::new(29, 2);
        let u = random_unitary(2, &mut stream).unwrap();
        let map = MoebiusMap::affine(&u, &CVec::from_slice(&[c(0.1, 0.0), c(0.0, -0.2)])).unwrap();
        let inv = map.inverse().unwrap();
        let z = CVec::from_slice(&[c(0.4, 0.1), c(-0.2, 0.3)]);
        let back = inv.apply(&map.apply(&z).unwrap()).unwrap();
        assert!(back.dist(&z) < 1e-12);
    }

    #[test]
    fn transform_law_holds_for_unitary_affine_and_moebius() {
        let dom = ball2();
        let mut stream = RngStream::new(31, 4);
        for i in 0..50 {
            let w = crate::pp::sample_boundary_uniform(&dom, &mut stream).unwrap();
            let z = crate::pp::sample_interior_uniform(&dom, &mut stream).unwrap();
            let map = match i % 3 {
                0 => {
                    let u = random_unitary(2, &mut stream).unwrap();
                    MoebiusMap::affine(&u, &CVec::zero(2)).unwrap()
                }
                1 => {
                    let mut a = DMatrix::<C64>::identity(2, 2);
                    for r in 0..2 {
                        for cc in 0..2 {
                            a[(r, cc)] += c(0.2 * stream.gaussian(), 0.2 * stream.gaussian());
                        }
                    }
                    let t = CVec::from_slice(&[c(0.05, -0.02), c(0.01, 0.03)]);
                    MoebiusMap::affine(&a, &t).unwrap()
                }
                _ => {
                    let mut b = DMatrix::<C64>::identity(3, 3);
                    for r in 0..3 {
                        for cc in 0..3 {
                            b[(r, cc)] += c(0.08 * stream.gaussian(), 0.08 * stream.gaussian());
                        }
                    }
                    MoebiusMap::from_matrix(b).unwrap()
                }
            };
            let chk = transform_law_check(&dom, &map, &z, &w).unwrap();
            assert!(chk.residual < 1e-11, "residual {} at case {}", chk.residual, i);
            if i % 3 == 0 {
                assert!((chk.norm_ratio - 1.0).abs() < 1e-11);
            }
        }
    }
}
