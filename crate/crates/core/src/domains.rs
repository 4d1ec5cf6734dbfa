//! Domain catalogue and special constants: the unit ball, truncated model
//! quadratic domains, affine images, exact ball oracles by 2-D quadrature,
//! the model closed forms, and principal-curvature data for tube formulas.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CcvxError, Result};
use crate::kernel::{CVec, MAX_D};

type C64 = Complex64;

/// Points count as boundary points when |rho| is below this after projection.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// kappa_m: Lebesgue volume of the unit ball of R^m. Exact for every m
/// (half-integer Gamma values expand into factorials).
pub fn kappa(m: usize) -> f64 {
    if m % 2 == 0 {
        let k = m / 2;
        let mut v = 1.0;
        for j in 1..=k {
            v *= std::f64::consts::PI / j as f64;
        }
        v
    } else {
        // kappa_{2k+1} = pi^k 4^{k+1} (k+1)! / (2k+2)!
        let k = (m - 1) / 2;
        let mut num = 1.0f64;
        for _ in 0..k {
            num *= std::f64::consts::PI;
        }
        for _ in 0..(k + 1) {
            num *= 4.0;
        }
        for j in 1..=(k + 1) {
            num *= j as f64;
        }
        let mut den = 1.0f64;
        for j in 1..=(2 * k + 2) {
            den *= j as f64;
        }
        num / den
    }
}

/// h_m = 2 int_0^{pi/2} cos^m(theta) dtheta, by adaptive quadrature.
pub fn h_int(m: usize) -> f64 {
    2.0 * quad::integrate(
        |th| th.cos().powi(m as i32),
        0.0,
        std::f64::consts::FRAC_PI_2,
        1e-13,
    )
}

/// h_m(t) = 2 int_0^{arccos t} (cos theta - t)^{m-1} cos theta dtheta;
/// decreasing in t with h_m(0) = h_m and h_m(1) = 0.
pub fn h_profile(m: usize, t: f64) -> Result<f64> {
    if m < 1 {
        return Err(CcvxError::Range("h_profile needs m >= 1"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(CcvxError::Range("h_profile argument t outside [0,1]"));
    }
    if t >= 1.0 {
        return Ok(0.0);
    }
    let upper = t.acos();
    Ok(2.0 * quad::integrate(
        |th| {
            let c = th.cos();
            (c - t).max(0.0).powi(m as i32 - 1) * c
        },
        0.0,
        upper,
        1e-11,
    ))
}

/// The grouped constants entering the leading-order laws.
#[derive(Clone, Copy, Debug)]
pub struct Constants {
    pub kappa_2dm2: f64,
    pub kappa_2d: f64,
    pub h_d: f64,
    pub h_dp1: f64,
}

pub fn constants(d: usize) -> Result<Constants> {
    if d < 2 {
        return Err(CcvxError::Range("constants need d >= 2"));
    }
    Ok(Constants {
        kappa_2dm2: kappa(2 * d - 2),
        kappa_2d: kappa(2 * d),
        h_d: h_int(d),
        h_dp1: h_int(d + 1),
    })
}

/// Parameters of a truncated model quadratic domain
/// { y_d > sum_j alpha_j |z_j|^2 + beta_j Re(z_j^2) } intersected with the
/// ball of radius r_trunc.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub r_trunc: f64,
}

impl ModelParams {
    pub fn new(alpha: &[f64], beta: &[f64], r_trunc: f64) -> Result<ModelParams> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return Err(CcvxError::Config(
                "model: alpha and beta must have equal positive length".into(),
            ));
        }
        for (&a, &b) in alpha.iter().zip(beta) {
            if !(a > 0.0) || !(0.0..a).contains(&b) {
                return Err(CcvxError::Config(
                    "model: parameters must satisfy 0 <= beta_j < alpha_j".into(),
                ));
            }
        }
        if !(r_trunc > 0.0) {
            return Err(CcvxError::Config("model: r_trunc must be positive".into()));
        }
        Ok(ModelParams { alpha: alpha.to_vec(), beta: beta.to_vec(), r_trunc })
    }

    /// v_{alpha,beta} = prod (alpha_j^2 - beta_j^2) = 16 nu at the base point.
    pub fn v(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| a * a - b * b)
            .product()
    }

    /// Graph height f(z') over the complex tangent coordinates.
    pub fn f(&self, zp: &[C64]) -> f64 {
        let mut s = 0.0;
        for (j, z) in zp.iter().enumerate() {
            s += self.alpha[j] * z.norm_sqr() + self.beta[j] * (z * z).re;
        }
        s
    }

    /// |grad f|^2 in the 2(d-1) real chart coordinates.
    pub fn grad_f_norm_sq(&self, zp: &[C64]) -> f64 {
        let mut s = 0.0;
        for (j, z) in zp.iter().enumerate() {
            let gx = 2.0 * (self.alpha[j] + self.beta[j]) * z.re;
            let gy = 2.0 * (self.alpha[j] - self.beta[j]) * z.im;
            s += gx * gx + gy * gy;
        }
        s
    }

    /// Chart area element sqrt(1 + |grad f|^2).
    pub fn area_element(&self, zp: &[C64]) -> f64 {
        (1.0 + self.grad_f_norm_sq(zp)).sqrt()
    }

    /// max_j (alpha_j + beta_j): bounds f(z') <= A+ |z'|^2.
    pub fn a_plus(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| a + b)
            .fold(0.0, f64::max)
    }

    /// Radius of the (z', x_d) chart ball whose graph stays within
    /// frac * r_trunc of the origin: solves r^2 (1 + A+^2 r^2) = (frac R)^2.
    pub fn chart_radius(&self, frac: f64) -> f64 {
        let target = (frac * self.r_trunc).powi(2);
        let a2 = self.a_plus().powi(2);
        if a2 == 0.0 {
            return target.sqrt();
        }
        (((1.0 + 4.0 * a2 * target).sqrt() - 1.0) / (2.0 * a2)).sqrt()
    }
}

/// The domain catalogue. All geometry flows through rho and its derivatives.
#[derive(Clone, Debug)]
pub enum Domain {
    Ball { d: usize },
    Model { d: usize, p: ModelParams },
    Affine { base: Box<Domain>, a: DMatrix<C64>, a_inv: DMatrix<C64>, t: CVec },
}

impl Domain {
    pub fn ball(d: usize) -> Result<Domain> {
        check_d(d)?;
        Ok(Domain::Ball { d })
    }

    pub fn model(d: usize, alpha: &[f64], beta: &[f64], r_trunc: f64) -> Result<Domain> {
        check_d(d)?;
        if alpha.len() != d - 1 {
            return Err(CcvxError::Config("model: needs d-1 alpha/beta entries".into()));
        }
        Ok(Domain::Model { d, p: ModelParams::new(alpha, beta, r_trunc)? })
    }

    pub fn affine(base: Domain, a: DMatrix<C64>, t: CVec) -> Result<Domain> {
        let d = base.dim();
        if a.nrows() != d || a.ncols() != d || t.dim() != d {
            return Err(CcvxError::Config("affine: block sizes must match d".into()));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or(CcvxError::Singular("affine matrix"))?;
        Ok(Domain::Affine { base: Box::new(base), a, a_inv, t })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { d } => *d,
            Domain::Model { d, .. } => *d,
            Domain::Affine { base, .. } => base.dim(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Domain::Ball { .. } => "ball",
            Domain::Model { .. } => "model",
            Domain::Affine { .. } => "affine",
        }
    }

    /// Pulls z back through the affine map if this is an affine image.
    pub fn pullback(&self, z: &CVec) -> CVec {
        match self {
            Domain::Affine { a_inv, t, .. } => {
                let d = self.dim();
                let mut out = CVec::zero(d);
                for j in 0..d {
                    let mut s = C64::new(0.0, 0.0);
                    for k in 0..d {
                        s += a_inv[(j, k)] * (z[k] - t[k]);
                    }
                    out[j] = s;
                }
                out
            }
            _ => *z,
        }
    }

    pub fn pushforward(&self, z: &CVec) -> CVec {
        match self {
            Domain::Affine { a, t, .. } => {
                let d = self.dim();
                let mut out = CVec::zero(d);
                for j in 0..d {
                    let mut s = t[j];
                    for k in 0..d {
                        s += a[(j, k)] * z[k];
                    }
                    out[j] = s;
                }
                out
            }
            _ => *z,
        }
    }

    pub fn rho(&self, z: &CVec) -> f64 {
        match self {
            Domain::Ball { .. } => z.norm_sq() - 1.0,
            Domain::Model { d, p } => {
                let zp = &z.as_slice()[..d - 1];
                p.f(zp) - z[d - 1].im
            }
            Domain::Affine { base, .. } => base.rho(&self.pullback(z)),
        }
    }

    /// Complex gradient (d rho / d z_j), with d/dz = (d/dx - i d/dy)/2.
    pub fn grad(&self, z: &CVec) -> CVec {
        match self {
            Domain::Ball { .. } => z.conj(),
            Domain::Model { d, p } => {
                let mut g = CVec::zero(*d);
                for j in 0..d - 1 {
                    g[j] = z[j].conj() * p.alpha[j] + z[j] * p.beta[j];
                }
                g[d - 1] = C64::new(0.0, 0.5);
                g
            }
            Domain::Affine { base, a_inv, .. } => {
                let d = self.dim();
                let gb = base.grad(&self.pullback(z));
                let mut g = CVec::zero(d);
                for j in 0..d {
                    let mut s = C64::new(0.0, 0.0);
                    for k in 0..d {
                        s += gb[k] * a_inv[(k, j)];
                    }
                    g[j] = s;
                }
                g
            }
        }
    }

    /// Complex Hessians (rho_{z_j z_k}, rho_{z_j zbar_k}).
    pub fn hess_complex(&self, z: &CVec) -> (DMatrix<C64>, DMatrix<C64>) {
        let d = self.dim();
        match self {
            Domain::Ball { .. } => {
                (DMatrix::zeros(d, d), DMatrix::identity(d, d))
            }
            Domain::Model { p, .. } => {
                let mut hzz = DMatrix::zeros(d, d);
                let mut hzzb = DMatrix::zeros(d, d);
                for j in 0..d - 1 {
                    hzz[(j, j)] = C64::new(p.beta[j], 0.0);
                    hzzb[(j, j)] = C64::new(p.alpha[j], 0.0);
                }
                (hzz, hzzb)
            }
            Domain::Affine { base, a_inv, .. } => {
                let (hb, hbb) = base.hess_complex(&self.pullback(z));
                let bt = a_inv.transpose();
                let bc = a_inv.map(|c| c.conj());
                (&bt * &hb * a_inv, &bt * &hbb * bc)
            }
        }
    }

    /// Real 2d x 2d Hessian in coordinates (x1, y1, ..., xd, yd), assembled
    /// from the complex Hessians.
    pub fn hess_real(&self, z: &CVec) -> DMatrix<f64> {
        let d = self.dim();
        let (hzz, hzzb) = self.hess_complex(z);
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        for j in 0..d {
            for k in 0..d {
                let s = hzz[(j, k)];
                let m = hzzb[(j, k)];
                h[(2 * j, 2 * k)] = 2.0 * (s + m).re;
                h[(2 * j, 2 * k + 1)] = -2.0 * (s - m).im;
                h[(2 * j + 1, 2 * k)] = -2.0 * (s + m).im;
                h[(2 * j + 1, 2 * k + 1)] = -2.0 * (s - m).re;
            }
        }
        h
    }

    pub fn contains(&self, z: &CVec) -> bool {
        match self {
            Domain::Model { p, .. } => self.rho(z) < 0.0 && z.norm() < p.r_trunc,
            _ => self.rho(z) < 0.0,
        }
    }

    pub fn in_closure(&self, z: &CVec, tol: f64) -> bool {
        match self {
            Domain::Model { p, .. } => self.rho(z) <= tol && z.norm() <= p.r_trunc + tol,
            _ => self.rho(z) <= tol,
        }
    }

    pub fn on_boundary(&self, w: &CVec) -> bool {
        if self.rho(w).abs() > BOUNDARY_TOL {
            return false;
        }
        match self {
            // Only the graph part of the truncated boundary is catalogued.
            Domain::Model { p, .. } => w.norm() <= p.r_trunc,
            _ => true,
        }
    }

    /// Projects z onto bD: exact for the ball and the model graph, Newton
    /// steps along the real gradient otherwise.
    pub fn project_boundary(&self, z: &CVec) -> Result<CVec> {
        match self {
            Domain::Ball { .. } => {
                let n = z.norm();
                if n < 1e-12 {
                    return Err(CcvxError::Range("cannot project the origin"));
                }
                Ok(z.scale(1.0 / n))
            }
            Domain::Model { d, p } => {
                let mut w = *z;
                let im = p.f(&z.as_slice()[..d - 1]);
                w[d - 1] = C64::new(z[d - 1].re, im);
                Ok(w)
            }
            Domain::Affine { base, .. } => {
                let w = base.project_boundary(&self.pullback(z))?;
                Ok(self.pushforward(&w))
            }
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match self {
            Domain::Ball { .. } => 1.0,
            Domain::Model { p, .. } => p.r_trunc,
            Domain::Affine { base, a, t, .. } => {
                let fro: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                fro * base.bounding_radius() + t.norm()
            }
        }
    }

    /// Exact lower bound for |L(z,w)| / ||w-z||^2 when one is known.
    pub fn margin_lower_bound(&self) -> Option<f64> {
        match self {
            Domain::Ball { .. } => Some(0.5),
            _ => None,
        }
    }

    /// Lebesgue volume of D: closed form for the ball, quadrature for the
    /// d=2 model, seeded Monte Carlo otherwise.
    pub fn volume(&self) -> Result<f64> {
        match self {
            Domain::Ball { d } => Ok(kappa(2 * d)),
            Domain::Model { d: 2, p } => Ok(model_volume_2d(p)),
            Domain::Model { d, p } => Ok(model_volume_mc(*d, p)),
            Domain::Affine { base, a, .. } => {
                let det = a.clone().lu().determinant().norm();
                Ok(det * det * base.volume()?)
            }
        }
    }

    /// Surface area of bD (the graph part for truncated models).
    pub fn surface_area(&self) -> Result<f64> {
        match self {
            Domain::Ball { d } => {
                let mut s = 2.0;
                for j in 1..*d {
                    s *= std::f64::consts::PI / j as f64;
                }
                Ok(s * std::f64::consts::PI)
            }
            Domain::Model { d, p } => Ok(model_surface_mc(*d, p)),
            Domain::Affine { .. } => Err(CcvxError::Range(
                "surface area not available for affine images",
            )),
        }
    }

    /// Parses catalogue identifiers: "ball(2)" or "ball2",
    /// "model(2, alpha=[1], beta=[0.6], r=1)",
    /// "affine(ball(2), matrix=[[2,0],[0,2]], shift=[0,0])".
    pub fn parse(s: &str) -> Result<Domain> {
        parse::domain(s.trim())
    }
}

fn check_d(d: usize) -> Result<()> {
    if d < 2 || d > MAX_D {
        return Err(CcvxError::Dimension(d, MAX_D));
    }
    Ok(())
}

/// Area of the circular segment {x^2+y^2 < s^2, y > q} for q >= 0.
fn segment_area(q: f64, s: f64) -> f64 {
    if s <= 0.0 || q >= s {
        return 0.0;
    }
    let ratio = (q / s).clamp(-1.0, 1.0);
    s * s * ratio.acos() - q * (s * s - q * q).max(0.0).sqrt()
}

/// lambda(D) for the d=2 truncated model by nested quadrature: integrate the
/// z_2 segment area over the z_1 chart in polar coordinates.
fn model_volume_2d(p: &ModelParams) -> f64 {
    let r2 = p.r_trunc * p.r_trunc;
    let outer = |th: f64| {
        let q = p.alpha[0] + p.beta[0] * (2.0 * th).cos();
        // f = q r^2 must stay below sqrt(R^2 - r^2)
        let rlim2 = if q > 0.0 {
            ((1.0 + 4.0 * q * q * r2).sqrt() - 1.0) / (2.0 * q * q)
        } else {
            r2
        };
        let rlim = rlim2.min(r2).sqrt();
        quad::integrate(
            |r| {
                let s = (r2 - r * r).max(0.0).sqrt();
                segment_area(q * r * r, s) * r
            },
            0.0,
            rlim,
            1e-10,
        )
    };
    4.0 * quad::integrate(outer, 0.0, std::f64::consts::FRAC_PI_2, 1e-9)
}

/// Monte Carlo lambda(D) for truncated models in d >= 3; fixed internal seed.
fn model_volume_mc(d: usize, p: &ModelParams) -> f64 {
    let mut stream = crate::pp::RngStream::new(0x6d6f64656c_u128, 0x766f6c);
    let n = 400_000usize;
    let r = p.r_trunc;
    let mut hits = 0usize;
    let mut pt = [0.0f64; 2 * MAX_D];
    for _ in 0..n {
        // uniform in the 2d-ball of radius r by normalized Gaussian + radius
        let mut nrm = 0.0;
        for x in pt.iter_mut().take(2 * d) {
            *x = stream.gaussian();
            nrm += *x * *x;
        }
        let nrm = nrm.sqrt();
        let rad = r * stream.uniform().powf(1.0 / (2.0 * d as f64));
        for x in pt.iter_mut().take(2 * d) {
            *x *= rad / nrm;
        }
        let z = CVec::from_real(&pt[..2 * d]);
        if z[d - 1].im > p.f(&z.as_slice()[..d - 1]) {
            hits += 1;
        }
    }
    kappa(2 * d) * r.powi(2 * d as i32) * hits as f64 / n as f64
}

/// Monte Carlo surface area of the truncated model graph; fixed seed.
fn model_surface_mc(d: usize, p: &ModelParams) -> f64 {
    let mut stream = crate::pp::RngStream::new(0x6d6f64656c_u128, 0x737572);
    let n = 400_000usize;
    let m = 2 * d - 1;
    let r2 = p.r_trunc * p.r_trunc;
    // chart radius covering the whole truncated graph
    let a2 = p.a_plus().powi(2);
    let rmax = if a2 == 0.0 {
        p.r_trunc
    } else {
        (((1.0 + 4.0 * a2 * r2).sqrt() - 1.0) / (2.0 * a2)).sqrt()
    };
    let mut acc = 0.0;
    let mut pt = [0.0f64; 2 * MAX_D];
    for _ in 0..n {
        let mut nrm = 0.0;
        for x in pt.iter_mut().take(m) {
            *x = stream.gaussian();
            nrm += *x * *x;
        }
        let nrm = nrm.sqrt();
        let rad = rmax * stream.uniform().powf(1.0 / m as f64);
        for x in pt.iter_mut().take(m) {
            *x *= rad / nrm;
        }
        let mut zp = [C64::new(0.0, 0.0); MAX_D];
        for j in 0..d - 1 {
            zp[j] = C64::new(pt[2 * j], pt[2 * j + 1]);
        }
        let f = p.f(&zp[..d - 1]);
        // graph point (z', x_d + i f) must stay in the truncation ball
        let total = pt[..m].iter().map(|x| x * x).sum::<f64>() + f * f;
        if total <= r2 {
            acc += p.area_element(&zp[..d - 1]);
        }
    }
    kappa(m) * rmax.powi(m as i32) * acc / n as f64
}

/// Exact closed form lambda(C(0;delta)) = h_{d+1} kappa_{2d-2} / (d sqrt v)
/// * delta^{d+1} for the untruncated model domain.
pub fn model_cut_volume(p: &ModelParams, d: usize, delta: f64) -> Result<f64> {
    check_d(d)?;
    if delta < 0.0 {
        return Err(CcvxError::Range("delta must be nonnegative"));
    }
    let c = constants(d)?;
    Ok(c.h_dp1 * c.kappa_2dm2 / (d as f64 * p.v().sqrt()) * delta.powi(d as i32 + 1))
}

/// Leading term h_d kappa_{2d-2} / sqrt(v) * delta^d of the cap area.
pub fn model_cap_area_leading(p: &ModelParams, d: usize, delta: f64) -> Result<f64> {
    check_d(d)?;
    if delta < 0.0 {
        return Err(CcvxError::Range("delta must be nonnegative"));
    }
    let c = constants(d)?;
    Ok(c.h_d * c.kappa_2dm2 / p.v().sqrt() * delta.powi(d as i32))
}

/// Two-sided visibility-region area band at level t, valid for
/// delta < 1/(2 max alpha_j).
pub fn model_visibility_band(
    p: &ModelParams,
    d: usize,
    delta: f64,
    t: f64,
) -> Result<(f64, f64)> {
    check_d(d)?;
    if !(0.0..1.0).contains(&t) {
        return Err(CcvxError::Range("visibility level t must lie in [0,1)"));
    }
    let a = p.alpha.iter().copied().fold(0.0, f64::max);
    if !(delta > 0.0) || delta >= 1.0 / (2.0 * a) {
        return Err(CcvxError::Range("delta outside the visibility validity range"));
    }
    let c = constants(d)?;
    let hdt = h_profile(d, t)?;
    let lower = c.kappa_2dm2 / p.v().sqrt() * hdt * delta.powi(d as i32);
    let blow = (1.0 + 8.0 * a * delta).powi(d as i32);
    let extra = (d as f64 - 1.0) * h_int(d - 1) * 8.0 * a * t * delta / (1.0 + 8.0 * a * delta);
    let upper = c.kappa_2dm2 / p.v().sqrt() * delta.powi(d as i32) * blow * (hdt + extra);
    Ok((lower, upper))
}

/// lambda(C(w;delta)) for the unit ball: slice by u = <z,w>_H; the fiber over
/// u is a (d-1)-complex-dimensional ball of radius sqrt(1-|u|^2). Polar
/// coordinates around u = 1 split at the corner s = 2 cos(theta).
pub fn ball_cut_volume_oracle(d: usize, delta: f64) -> Result<f64> {
    check_d(d)?;
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(CcvxError::Range("ball oracle needs 0 < delta <= 2"));
    }
    let val = disc_slice_integral(delta, d as i32 - 1, 1e-11);
    Ok(kappa(2 * d - 2) * val)
}

/// sigma(S(w;delta)) for the unit ball: pushforward of surface measure under
/// zeta -> <zeta,w>_H has density sigma_tot (d-1)/pi (1-|u|^2)^{d-2} on the
/// unit disc.
pub fn ball_cap_area_oracle(d: usize, delta: f64) -> Result<f64> {
    check_d(d)?;
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(CcvxError::Range("ball oracle needs 0 < delta <= 2"));
    }
    let sigma_tot = Domain::ball(d)?.surface_area()?;
    let val = disc_slice_integral(delta, d as i32 - 2, 1e-11);
    Ok(sigma_tot * (d as f64 - 1.0) / std::f64::consts::PI * val)
}

/// int over {|1-u| < delta, |u| < 1} of (1-|u|^2)^pow dA(u), in polar
/// coordinates u = 1 - s e^{i theta}: 1-|u|^2 = 2 s cos(theta) - s^2.
fn disc_slice_integral(delta: f64, pow: i32, tol: f64) -> f64 {
    let inner = |th: f64| {
        let c = th.cos();
        let smax = delta.min(2.0 * c);
        if smax <= 0.0 {
            return 0.0;
        }
        quad::integrate(
            |s| (2.0 * s * c - s * s).max(0.0).powi(pow) * s,
            0.0,
            smax,
            tol,
        )
    };
    let theta_c = (delta / 2.0).clamp(-1.0, 1.0).acos();
    let lo = quad::integrate(inner, 0.0, theta_c, tol);
    let hi = quad::integrate(inner, theta_c, std::f64::consts::FRAC_PI_2, tol);
    2.0 * (lo + hi)
}

/// Elementary symmetric polynomial values s_1..s_{2d-1} of the principal
/// curvatures, oriented so the unit sphere gives all +1.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub s: Vec<f64>,
}

impl CurvatureData {
    /// s_j with the s_0 = 1 convention.
    pub fn sj(&self, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            self.s[j - 1]
        }
    }
}

/// Principal-curvature symmetric polynomials from the shape operator of
/// {rho = 0}: restrict Hess(rho)/|grad rho| to the tangent space.
pub fn curvature_polys(dom: &Domain, zeta: &CVec) -> Result<CurvatureData> {
    if !dom.on_boundary(zeta) {
        return Err(CcvxError::OffBoundary { rho: dom.rho(zeta) });
    }
    let d = dom.dim();
    let m = 2 * d;
    let g = dom.grad(zeta);
    let grad_norm = 2.0 * g.norm();
    if grad_norm < 1e-12 {
        return Err(CcvxError::GradientDegenerate(grad_norm));
    }
    // real outward normal: grad rho = 2 conj(d rho)
    let mut n = vec![0.0f64; m];
    for j in 0..d {
        n[2 * j] = 2.0 * g[j].re / grad_norm;
        n[2 * j + 1] = -2.0 * g[j].im / grad_norm;
    }
    // Householder frame sending e_1 to n; columns 2.. are a tangent basis.
    let mut v = n.clone();
    v[0] -= 1.0;
    let vn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let h = dom.hess_real(zeta);
    let mut shape = DMatrix::<f64>::zeros(m - 1, m - 1);
    let col = |k: usize, v: &[f64], vn: f64| -> Vec<f64> {
        // k-th column of I - 2 v v^T / |v|^2 (identity when v ~ 0)
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        if vn > 1e-12 {
            let f = 2.0 * v[k] / (vn * vn);
            for (ej, &vj) in e.iter_mut().zip(v) {
                *ej -= f * vj;
            }
        }
        e
    };
    let tangent: Vec<Vec<f64>> = (1..m).map(|k| col(k, &v, vn)).collect();
    for (r, tr) in tangent.iter().enumerate() {
        let ht: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| h[(i, j)] * tr[j]).sum::<f64>())
            .collect();
        for (c, tc) in tangent.iter().enumerate() {
            shape[(r, c)] = tc.iter().zip(&ht).map(|(a, b)| a * b).sum::<f64>() / grad_norm;
        }
    }
    let eig = shape.symmetric_eigen();
    let kappas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    // elementary symmetric polynomials via prod (1 + kappa_i x)
    let mut coeff = vec![0.0f64; m];
    coeff[0] = 1.0;
    for &k in &kappas {
        for j in (1..m).rev() {
            coeff[j] += k * coeff[j - 1];
        }
    }
    Ok(CurvatureData { s: coeff[1..].to_vec() })
}

/// Central-difference complex Hessians, for checking the analytic ones.
pub fn hess_complex_fd(dom: &Domain, w: &CVec, h: f64) -> (DMatrix<C64>, DMatrix<C64>) {
    let d = dom.dim();
    let mut hzz = DMatrix::zeros(d, d);
    let mut hzzb = DMatrix::zeros(d, d);
    let gj = |z: &CVec, j: usize| dom.grad(z)[j];
    for j in 0..d {
        for k in 0..d {
            let mut zp = *w;
            let mut zm = *w;
            zp[k] += C64::new(h, 0.0);
            zm[k] -= C64::new(h, 0.0);
            let fx = (gj(&zp, j) - gj(&zm, j)) / (2.0 * h);
            let mut zp = *w;
            let mut zm = *w;
            zp[k] += C64::new(0.0, h);
            zm[k] -= C64::new(0.0, h);
            let fy = (gj(&zp, j) - gj(&zm, j)) / (2.0 * h);
            hzz[(j, k)] = (fx - fy * C64::new(0.0, 1.0)) * 0.5;
            hzzb[(j, k)] = (fx + fy * C64::new(0.0, 1.0)) * 0.5;
        }
    }
    (hzz, hzzb)
}

pub(crate) mod quad {
    //! Adaptive Gauss-Kronrod (G7, K15) quadrature.

    const XGK: [f64; 7] = [
        0.991455371120813,
        0.949107912342759,
        0.864864423359769,
        0.741531185599394,
        0.586087235467691,
        0.405845151377397,
        0.207784955007898,
    ];
    const WGK: [f64; 8] = [
        0.022935322010529,
        0.063092092629979,
        0.104790010322250,
        0.140653259715525,
        0.169004726639267,
        0.190350578064785,
        0.204432940075298,
        0.209482141084728,
    ];
    const WG: [f64; 4] = [
        0.129484966168870,
        0.279705391489277,
        0.381830050505119,
        0.417959183673469,
    ];

    fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut ik = WGK[7] * fc;
        let mut ig = WG[3] * fc;
        for (i, &x) in XGK.iter().enumerate() {
            let dx = h * x;
            let s = f(c + dx) + f(c - dx);
            ik += WGK[i] * s;
            if i % 2 == 1 {
                ig += WG[i / 2] * s;
            }
        }
        (ik * h, ((ik - ig) * h).abs())
    }

    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32, scale: f64) -> f64 {
        let (v, e) = gk15(f, a, b);
        if depth >= 45 || e <= tol || e <= 1e-16 * scale {
            return v;
        }
        let c = 0.5 * (a + b);
        let half = 0.5 * tol;
        rec(f, a, c, half, depth + 1, scale) + rec(f, c, b, half, depth + 1, scale)
    }

    /// Adaptive integral of f over [a,b] to the given relative tolerance.
    pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let (v0, _) = gk15(&f, a, b);
        let scale = v0.abs().max(1e-14);
        rec(&f, a, b, rel_tol * scale, 0, scale)
    }
}

mod parse {
    //! Tiny recursive parser for catalogue identifiers.

    use super::*;

    pub fn domain(s: &str) -> Result<Domain> {
        if let Some(rest) = s.strip_prefix("ball") {
            let inner = rest.trim();
            let digits = inner
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .unwrap_or(inner);
            let d: usize = digits
                .trim()
                .parse()
                .map_err(|_| CcvxError::Config(format!("bad ball dimension in {s:?}")))?;
            return Domain::ball(d);
        }
        if let Some(rest) = s.strip_prefix("model") {
            let inner = unwrap_parens(rest, s)?;
            let parts = split_top(inner);
            if parts.is_empty() {
                return Err(CcvxError::Config(format!("model needs arguments in {s:?}")));
            }
            let d: usize = parts[0]
                .trim()
                .parse()
                .map_err(|_| CcvxError::Config(format!("bad model dimension in {s:?}")))?;
            let mut alpha = None;
            let mut beta = None;
            let mut r = 1.0;
            for part in &parts[1..] {
                let (key, val) = split_kv(part)?;
                match key {
                    "alpha" => alpha = Some(real_list(val)?),
                    "beta" => beta = Some(real_list(val)?),
                    "r" => {
                        r = val.trim().parse().map_err(|_| {
                            CcvxError::Config(format!("bad truncation radius in {s:?}"))
                        })?
                    }
                    _ => {
                        return Err(CcvxError::Config(format!(
                            "unknown model key {key:?} in {s:?}"
                        )))
                    }
                }
            }
            let alpha =
                alpha.ok_or_else(|| CcvxError::Config(format!("model missing alpha in {s:?}")))?;
            let beta = beta.unwrap_or_else(|| vec![0.0; alpha.len()]);
            return Domain::model(d, &alpha, &beta, r);
        }
        if let Some(rest) = s.strip_prefix("affine") {
            let inner = unwrap_parens(rest, s)?;
            let parts = split_top(inner);
            if parts.len() != 3 {
                return Err(CcvxError::Config(format!(
                    "affine needs (base, matrix=..., shift=...) in {s:?}"
                )));
            }
            let base = domain(parts[0].trim())?;
            let d = base.dim();
            let (mk, mv) = split_kv(&parts[1])?;
            let (sk, sv) = split_kv(&parts[2])?;
            if mk != "matrix" || sk != "shift" {
                return Err(CcvxError::Config(format!(
                    "affine keys must be matrix= and shift= in {s:?}"
                )));
            }
            let rows = split_top(unwrap_brackets(mv)?);
            if rows.len() != d {
                return Err(CcvxError::Config(format!("matrix must have {d} rows in {s:?}")));
            }
            let mut a = DMatrix::<C64>::zeros(d, d);
            for (i, row) in rows.iter().enumerate() {
                let entries = split_top(unwrap_brackets(row.trim())?);
                if entries.len() != d {
                    return Err(CcvxError::Config(format!(
                        "matrix row {i} must have {d} entries in {s:?}"
                    )));
                }
                for (j, e) in entries.iter().enumerate() {
                    a[(i, j)] = complex_lit(e.trim())?;
                }
            }
            let shift_entries = split_top(unwrap_brackets(sv)?);
            if shift_entries.len() != d {
                return Err(CcvxError::Config(format!("shift must have {d} entries in {s:?}")));
            }
            let mut t = CVec::zero(d);
            for (j, e) in shift_entries.iter().enumerate() {
                t[j] = complex_lit(e.trim())?;
            }
            return Domain::affine(base, a, t);
        }
        Err(CcvxError::Config(format!("unknown domain identifier {s:?}")))
    }

    fn unwrap_parens<'a>(rest: &'a str, whole: &str) -> Result<&'a str> {
        rest.trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| CcvxError::Config(format!("expected (...) in {whole:?}")))
    }

    fn unwrap_brackets(s: &str) -> Result<&str> {
        s.trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| CcvxError::Config(format!("expected [...] in {s:?}")))
    }

    /// Splits on top-level commas (outside any bracket nesting).
    fn split_top(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut depth = 0i32;
        let mut cur = String::new();
        for ch in s.chars() {
            match ch {
                '(' | '[' => {
                    depth += 1;
                    cur.push(ch);
                }
                ')' | ']' => {
                    depth -= 1;
                    cur.push(ch);
                }
                ',' if depth == 0 => {
                    out.push(cur.trim().to_string());
                    cur = String::new();
                }
                _ => cur.push(ch),
            }
        }
        if !cur.trim().is_empty() {
            out.push(cur.trim().to_string());
        }
        out
    }

    fn split_kv(s: &str) -> Result<(&str, &str)> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CcvxError::Config(format!("expected key=value in {s:?}")))?;
        Ok((k.trim(), v.trim()))
    }

    fn real_list(s: &str) -> Result<Vec<f64>> {
        split_top(unwrap_brackets(s)?)
            .iter()
            .map(|e| {
                e.trim()
                    .parse()
                    .map_err(|_| CcvxError::Config(format!("bad number {e:?}")))
            })
            .collect()
    }

    /// Complex literals: "1.5", "-2i", "1+0.5i", "0.3-0.2i", "i", "-i".
    pub fn complex_lit(s: &str) -> Result<C64> {
        let parse_err = || CcvxError::Config(format!("bad complex literal {s:?}"));
        let t = s.trim();
        if t.is_empty() {
            return Err(parse_err());
        }
        if let Some(im) = t.strip_suffix('i') {
            // pure imaginary or a+bi form; find the split sign after index 0
            let body = im;
            let mut split = None;
            for (idx, ch) in body.char_indices().skip(1) {
                if (ch == '+' || ch == '-')
                    && !matches!(body.as_bytes()[idx - 1], b'e' | b'E')
                {
                    split = Some(idx);
                }
            }
            if let Some(idx) = split {
                let re: f64 = body[..idx].trim().parse().map_err(|_| parse_err())?;
                let imtxt = body[idx..].trim();
                let im = parse_signed_unit(imtxt).ok_or_else(parse_err)?;
                return Ok(C64::new(re, im));
            }
            let im = parse_signed_unit(body.trim()).ok_or_else(parse_err)?;
            return Ok(C64::new(0.0, im));
        }
        let re: f64 = t.parse().map_err(|_| parse_err())?;
        Ok(C64::new(re, 0.0))
    }

    fn parse_signed_unit(s: &str) -> Option<f64> {
        match s {
            "" | "+" => Some(1.0),
            "-" => Some(-1.0),
            _ => s.parse().ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const KAPPA4: f64 = 4.934_802_200_544_679_3;

    #[test]
    fn kappa_known_values() {
        assert!((kappa(1) - 2.0).abs() < 1e-15);
        assert!((kappa(2) - PI).abs() < 1e-15);
        assert!((kappa(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((kappa(4) - KAPPA4).abs() < 1e-14);
        assert!((kappa(6) - PI.powi(3) / 6.0).abs() < 1e-14);
    }

    #[test]
    fn h_known_values_and_monotonicity() {
        assert!((h_int(2) - PI / 2.0).abs() < 1e-12);
        assert!((h_int(3) - 4.0 / 3.0).abs() < 1e-12);
        assert!((h_int(4) - 3.0 * PI / 8.0).abs() < 1e-12);
        assert!((h_int(5) - 16.0 / 15.0).abs() < 1e-12);
        for d in 2..=6 {
            assert!(h_int(d + 1) < h_int(d));
        }
    }

    #[test]
    fn h_profile_values() {
        assert!((h_profile(1, 0.6).unwrap() - 1.6).abs() < 1e-12);
        assert!((h_profile(2, 0.5).unwrap() - 0.614184849304378422772).abs() < 1e-11);
        assert!((h_profile(3, 0.25).unwrap() - 0.672279989432390571408).abs() < 1e-11);
        for d in 2..=4 {
            assert!((h_profile(d, 0.0).unwrap() - h_int(d)).abs() < 1e-11);
            assert!(h_profile(d, 1.0).unwrap() == 0.0);
        }
        assert!(h_profile(2, 1.5).is_err());
    }

    #[test]
    fn ball_oracles_frozen_values() {
        // frozen from an independent high-precision evaluation of the same
        // integrals
        let cap = |d, x| ball_cap_area_oracle(d, x).unwrap();
        let cut = |d, x| ball_cut_volume_oracle(d, x).unwrap();
        assert!((cap(2, 2.0) - 2.0 * PI * PI).abs() < 1e-9);
        assert!((cut(2, 2.0) - KAPPA4).abs() < 1e-9);
        let rel = |a: f64, b: f64| (a / b - 1.0).abs();
        assert!(rel(cap(2, 0.05), 0.024412195249174456515) < 1e-9);
        assert!(rel(cap(2, 0.02), 0.0039310864320596038554) < 1e-9);
        assert!(rel(cap(2, 0.01), 0.00098486603977051283502) < 1e-9);
        assert!(rel(cut(2, 0.05), 0.00050827569714488939437) < 1e-9);
        assert!(rel(cut(2, 0.1), 0.0039451921551846106022) < 1e-9);
    }

    #[test]
    fn ball_cap_ratio_approaches_pi_squared() {
        let r = ball_cap_area_oracle(2, 0.01).unwrap() / 0.0001;
        assert!((r / (PI * PI) - 1.0).abs() < 0.01);
    }

    #[test]
    fn ball_cut_slope_near_three() {
        let v1 = ball_cut_volume_oracle(2, 0.05).unwrap();
        let v2 = ball_cut_volume_oracle(2, 0.1).unwrap();
        let slope = (v2 / v1).ln() / 2f64.ln();
        assert!((slope - 2.95641241402377).abs() < 1e-6);
    }

    #[test]
    fn model_closed_forms() {
        let p = ModelParams::new(&[1.0], &[0.0], 1.0).unwrap();
        let v = model_cut_volume(&p, 2, 0.1).unwrap();
        assert!((v - 2.0 * PI / 3.0 * 1e-3).abs() < 1e-15);
        let p2 = ModelParams::new(&[1.0], &[0.6], 1.0).unwrap();
        let v2 = model_cut_volume(&p2, 2, 0.1).unwrap();
        assert!((v2 - v / 0.8).abs() < 1e-15);
        // homogeneity is exact
        let r = model_cut_volume(&p, 2, 0.2).unwrap() / v;
        assert!((r - 8.0).abs() < 1e-12);

        let pb = ModelParams::new(&[0.5], &[0.0], 1.0).unwrap();
        let cap = model_cap_area_leading(&pb, 2, 0.05).unwrap();
        assert!((cap - PI * PI * 0.0025).abs() < 1e-14);
        assert!(model_cap_area_leading(&pb, 2, 0.0).unwrap() == 0.0);
        let r = model_cap_area_leading(&pb, 2, 0.1).unwrap() / cap;
        assert!((r - 4.0).abs() < 1e-12);
    }

    #[test]
    fn visibility_band_shape() {
        let p = ModelParams::new(&[0.5], &[0.0], 1.0).unwrap();
        let (lo, hi) = model_visibility_band(&p, 2, 0.02, 0.0).unwrap();
        assert!((lo - model_cap_area_leading(&p, 2, 0.02).unwrap()).abs() < 1e-14);
        assert!(lo <= hi);
        let (lo9, _) = model_visibility_band(&p, 2, 0.02, 0.999).unwrap();
        assert!(lo9 < 1e-3 * lo);
        for &t in &[0.0, 0.3, 0.6] {
            let (l, u) = model_visibility_band(&p, 2, 0.02, t).unwrap();
            assert!(l <= u);
        }
        assert!(model_visibility_band(&p, 2, 1.5, 0.0).is_err());
    }

    #[test]
    fn model_cut_volume_matches_region_mc() {
        // direct Monte Carlo of {(z1, x2 + i y2): f(z1) < y2 < sqrt(d^2-x2^2)}
        let p = ModelParams::new(&[1.0], &[0.3], 1.0).unwrap();
        let delta = 0.1;
        let exact = model_cut_volume(&p, 2, delta).unwrap();
        let mut stream = crate::pp::RngStream::new(42, 0);
        let r0 = (delta / (p.alpha[0] - p.beta[0])).sqrt();
        let box_vol = (2.0 * r0) * (2.0 * r0) * (2.0 * delta) * delta;
        let n = 400_000;
        let mut hits = 0u64;
        for _ in 0..n {
            let z1 = C64::new(
                r0 * (2.0 * stream.uniform() - 1.0),
                r0 * (2.0 * stream.uniform() - 1.0),
            );
            let x2 = delta * (2.0 * stream.uniform() - 1.0);
            let y2 = delta * stream.uniform();
            let f = p.f(&[z1]);
            if y2 > f && y2 * y2 < delta * delta - x2 * x2 {
                hits += 1;
            }
        }
        let est = box_vol * hits as f64 / n as f64;
        let phat = hits as f64 / n as f64;
        let se = box_vol * (phat * (1.0 - phat) / n as f64).sqrt();
        assert!(
            (est - exact).abs() < 3.0 * se,
            "mc {est} vs closed form {exact} (se {se})"
        );
    }

    #[test]
    fn model_volume_quadrature_matches_mc() {
        let p = ModelParams::new(&[1.0], &[0.4], 1.0).unwrap();
        let dom = Domain::Model { d: 2, p: p.clone() };
        let vq = dom.volume().unwrap();
        let mut stream = crate::pp::RngStream::new(7, 1);
        let n = 300_000;
        let mut hits = 0u64;
        for _ in 0..n {
            let mut pt = [0.0f64; 4];
            let mut nrm = 0.0;
            for x in pt.iter_mut() {
                *x = stream.gaussian();
                nrm += *x * *x;
            }
            let rad = stream.uniform().powf(0.25);
            for x in pt.iter_mut() {
                *x *= rad / nrm.sqrt();
            }
            let z = CVec::from_real(&pt);
            if dom.contains(&z) {
                hits += 1;
            }
        }
        let phat = hits as f64 / n as f64;
        let est = KAPPA4 * phat;
        let se = KAPPA4 * (phat * (1.0 - phat) / n as f64).sqrt();
        assert!((est - vq).abs() < 3.0 * se, "mc {est} vs quadrature {vq} (se {se})");
    }

    #[test]
    fn volumes_of_catalogue_domains() {
        assert!((Domain::ball(2).unwrap().volume().unwrap() - KAPPA4).abs() < 1e-12);
        let two = DMatrix::from_diagonal_element(2, 2, C64::new(2.0, 0.0));
        let dbl = Domain::affine(Domain::ball(2).unwrap(), two, CVec::zero(2)).unwrap();
        assert!((dbl.volume().unwrap() - 16.0 * KAPPA4).abs() < 1e-10);
        let s = Domain::ball(2).unwrap().surface_area().unwrap();
        assert!((s - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn real_hessian_matches_finite_differences() {
        let dom = Domain::model(2, &[1.0], &[0.6], 1.0).unwrap();
        let w = dom
            .project_boundary(&CVec::from_real(&[0.11, -0.07, 0.05, 0.0]))
            .unwrap();
        let (hzz, hzzb) = dom.hess_complex(&w);
        let (fzz, fzzb) = hess_complex_fd(&dom, &w, 1e-5);
        for j in 0..2 {
            for k in 0..2 {
                assert!((hzz[(j, k)] - fzz[(j, k)]).norm() < 1e-7);
                assert!((hzzb[(j, k)] - fzzb[(j, k)]).norm() < 1e-7);
            }
        }
        // ball real Hessian is 2 I
        let ball = Domain::ball(2).unwrap();
        let h = ball.hess_real(&CVec::from_real(&[1.0, 0.0, 0.0, 0.0]));
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 2.0 } else { 0.0 };
                assert!((h[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn curvature_polys_catalogue() {
        let ball = Domain::ball(2).unwrap();
        let w = CVec::from_real(&[0.6, 0.0, 0.0, 0.8]);
        let cd = curvature_polys(&ball, &w).unwrap();
        assert!((cd.sj(0) - 1.0).abs() < 1e-15);
        assert!((cd.sj(1) - 3.0).abs() < 1e-10);
        assert!((cd.sj(2) - 3.0).abs() < 1e-10);
        assert!((cd.sj(3) - 1.0).abs() < 1e-10);

        let two = DMatrix::from_diagonal_element(2, 2, C64::new(2.0, 0.0));
        let dbl = Domain::affine(Domain::ball(2).unwrap(), two, CVec::zero(2)).unwrap();
        let w2 = CVec::from_real(&[2.0, 0.0, 0.0, 0.0]);
        let cd2 = curvature_polys(&dbl, &w2).unwrap();
        assert!((cd2.sj(1) - 1.5).abs() < 1e-10);
        assert!((cd2.sj(2) - 0.75).abs() < 1e-10);
        assert!((cd2.sj(3) - 0.125).abs() < 1e-10);
    }

    #[test]
    fn parse_catalogue_identifiers() {
        assert_eq!(Domain::parse("ball(3)").unwrap().dim(), 3);
        assert_eq!(Domain::parse("ball2").unwrap().dim(), 2);
        let m = Domain::parse("model(2, alpha=[1], beta=[0.6], r=1)").unwrap();
        assert_eq!(m.tag(), "model");
        match &m {
            Domain::Model { p, .. } => assert!((p.v() - 0.64).abs() < 1e-15),
            _ => unreachable!(),
        }
        let a = Domain::parse("affine(ball(2), matrix=[[2,0],[0,1+0.5i]], shift=[0.1, -0.2i])")
            .unwrap();
        assert_eq!(a.tag(), "affine");
        match &a {
            Domain::Affine { a, t, .. } => {
                assert!((a[(1, 1)] - C64::new(1.0, 0.5)).norm() < 1e-15);
                assert!((t[1] - C64::new(0.0, -0.2)).norm() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert!(Domain::parse("cube(2)").is_err());
        assert!(Domain::parse("model(2, alpha=[1], beta=[1.5])").is_err());
    }

    #[test]
    fn quadrature_smoke() {
        let v = quad::integrate(|x| x * x, 0.0, 1.0, 1e-12);
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
        let v = quad::integrate(|x| x.sin(), 0.0, PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
