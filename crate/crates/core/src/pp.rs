//! Reproducible point processes on bD: counter-based RNG streams, density
//! profiles, boundary and interior samplers, Poisson counts, and process
//! realization. Identical (seed, stream) always reproduces identical draws,
//! so replications can run on any worker in any order.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::domains::{Domain, ModelParams};
use crate::error::{CcvxError, Result};
use crate::kernel::CVec;
use crate::poly::SizeFunction;

type C64 = Complex64;

const INV53: f64 = 1.0 / (1u64 << 53) as f64;

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream id for replication (n, rep) under a master seed.
pub fn stream_id(n: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(n ^ 0xA076_1D64_78BD_642F) ^ rep)
}

/// A seeded, stream-indexed generator. Streams with distinct indices are
/// independent; forks derive new stream indices, so no state is shared.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha12Rng,
    seed: u128,
    stream: u64,
    spare_gauss: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u128, stream: u64) -> RngStream {
        let lo = seed.to_le_bytes();
        let hi = (seed ^ 0x9E37_79B9_7F4A_7C15_F39C_C060_5CED_C834_u128).to_le_bytes();
        let mut key = [0u8; 32];
        key[..16].copy_from_slice(&lo);
        key[16..].copy_from_slice(&hi);
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(stream);
        RngStream { rng, seed, stream, spare_gauss: None }
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream derived from this one's index and a tag.
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream ^ tag))
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV53
    }

    /// Standard normal via Box-Muller; caches the second value.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(s) = self.spare_gauss.take() {
            return s;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV53; // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare_gauss = Some(r * s);
        r * c
    }

    /// Poisson count: inversion below mean 30, transformed rejection above.
    pub fn poisson(&mut self, mean: f64) -> Result<u64> {
        if !(mean >= 0.0) || mean > 1e9 {
            return Err(CcvxError::Range("poisson mean outside [0, 1e9]"));
        }
        if mean == 0.0 {
            return Ok(0);
        }
        if mean < 30.0 {
            let limit = (-mean).exp();
            let mut k = 0u64;
            let mut p = 1.0;
            loop {
                p *= self.uniform();
                if p <= limit {
                    return Ok(k);
                }
                k += 1;
            }
        }
        // PTRS transformed rejection (Hormann)
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let kf = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r && kf >= 0.0 {
                return Ok(kf as u64);
            }
            if kf < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let k = kf;
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            if lhs <= k * mean.ln() - mean - ln_factorial(k as u64) {
                return Ok(k as u64);
            }
        }
    }
}

/// ln(k!): direct summation for small k, Stirling series above.
fn ln_factorial(k: u64) -> f64 {
    if k < 12 {
        let mut s = 0.0;
        for j in 2..=k {
            s += (j as f64).ln();
        }
        return s;
    }
    let x = k as f64 + 1.0;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
        + 1.0 / (1260.0 * x.powi(5))
}

/// Catalogued smooth profiles for densities and size functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfilePhi {
    ReZ1,
}

impl ProfilePhi {
    pub fn parse(s: &str) -> Result<ProfilePhi> {
        match s {
            "re_z1" => Ok(ProfilePhi::ReZ1),
            _ => Err(CcvxError::Config(format!("unknown profile {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProfilePhi::ReZ1 => "re_z1",
        }
    }

    pub fn eval(&self, w: &CVec) -> f64 {
        match self {
            ProfilePhi::ReZ1 => w[0].re,
        }
    }

    /// sup |phi| over the closure of the domain.
    pub fn sup_abs(&self, dom: &Domain) -> f64 {
        match self {
            ProfilePhi::ReZ1 => dom.bounding_radius(),
        }
    }
}

/// Sampling density relative to surface measure, up to normalization.
#[derive(Clone, Debug)]
pub enum DensitySpec {
    Uniform,
    Profile { c0: f64, c1: f64, phi: ProfilePhi },
}

impl DensitySpec {
    /// Rejects profiles that are not bounded away from zero on the domain.
    pub fn validate(&self, dom: &Domain) -> Result<()> {
        match self {
            DensitySpec::Uniform => Ok(()),
            DensitySpec::Profile { c0, c1, phi } => {
                let floor = c0 - c1.abs() * phi.sup_abs(dom);
                if floor <= 0.0 {
                    return Err(CcvxError::Config(format!(
                        "density profile not bounded away from 0 (floor {floor:.3e})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Unnormalized density value.
    pub fn relative(&self, w: &CVec) -> f64 {
        match self {
            DensitySpec::Uniform => 1.0,
            DensitySpec::Profile { c0, c1, phi } => c0 + c1 * phi.eval(w),
        }
    }

    /// Upper bound for the unnormalized density over bD.
    pub fn envelope(&self, dom: &Domain) -> f64 {
        match self {
            DensitySpec::Uniform => 1.0,
            DensitySpec::Profile { c0, c1, phi } => c0 + c1.abs() * phi.sup_abs(dom),
        }
    }

    /// Monte Carlo normalization Z = int relative d sigma, so relative/Z is
    /// a probability density with respect to surface measure.
    pub fn normalization(&self, dom: &Domain, samples: usize, stream: &mut RngStream) -> Result<f64> {
        let sigma = dom.surface_area()?;
        if matches!(self, DensitySpec::Uniform) {
            return Ok(sigma);
        }
        let mut acc = 0.0;
        for _ in 0..samples {
            let w = sample_boundary_uniform(dom, stream)?;
            acc += self.relative(&w);
        }
        Ok(sigma * acc / samples as f64)
    }
}

/// Uniform (surface-measure) boundary sample.
pub fn sample_boundary_uniform(dom: &Domain, stream: &mut RngStream) -> Result<CVec> {
    match dom {
        Domain::Ball { d } => loop {
            let mut pt = [0.0f64; 2 * crate::kernel::MAX_D];
            let mut nsq = 0.0;
            for x in pt.iter_mut().take(2 * d) {
                *x = stream.gaussian();
                nsq += *x * *x;
            }
            if nsq > 1e-12 {
                let inv = 1.0 / nsq.sqrt();
                for x in pt.iter_mut().take(2 * d) {
                    *x *= inv;
                }
                return Ok(CVec::from_real(&pt[..2 * d]));
            }
        },
        Domain::Model { d, p } => sample_model_chart(*d, p, stream),
        Domain::Affine { base, a_inv, .. } => {
            let fro: f64 = a_inv.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for _ in 0..200_000 {
                let wb = sample_boundary_uniform(base, stream)?;
                let g = base.grad(&wb);
                let gn = g.norm();
                if gn < 1e-12 {
                    continue;
                }
                // surface-area distortion weight |A^{-H} n| for the real
                // unit normal n = conj(d rho)/|d rho|
                let d = base.dim();
                let mut wsq = 0.0;
                for j in 0..d {
                    let mut s = C64::new(0.0, 0.0);
                    for k in 0..d {
                        s += a_inv[(k, j)].conj() * g[k].conj() / gn;
                    }
                    wsq += s.norm_sqr();
                }
                if stream.uniform() * fro < wsq.sqrt() {
                    return Ok(dom.pushforward(&wb));
                }
            }
            Err(CcvxError::Config("affine boundary sampler starved".into()))
        }
    }
}

/// Uniform sample of the graph piece of a truncated model boundary: uniform
/// chart point, rejection against the area element.
fn sample_model_chart(d: usize, p: &ModelParams, stream: &mut RngStream) -> Result<CVec> {
    let m = 2 * d - 1;
    let rc = p.chart_radius(0.9);
    let sup_ae = (1.0 + 4.0 * p.a_plus().powi(2) * rc * rc).sqrt();
    for _ in 0..200_000 {
        // uniform in the m-ball of radius rc
        let mut pt = [0.0f64; 2 * crate::kernel::MAX_D];
        let mut nsq = 0.0;
        for x in pt.iter_mut().take(m) {
            *x = stream.gaussian();
            nsq += *x * *x;
        }
        if nsq < 1e-12 {
            continue;
        }
        let rad = rc * stream.uniform().powf(1.0 / m as f64) / nsq.sqrt();
        for x in pt.iter_mut().take(m) {
            *x *= rad;
        }
        let mut zp = [C64::new(0.0, 0.0); crate::kernel::MAX_D];
        for j in 0..d - 1 {
            zp[j] = C64::new(pt[2 * j], pt[2 * j + 1]);
        }
        let ae = p.area_element(&zp[..d - 1]);
        if stream.uniform() * sup_ae < ae {
            let mut w = CVec::zero(d);
            for j in 0..d - 1 {
                w[j] = zp[j];
            }
            w[d - 1] = C64::new(pt[m - 1], p.f(&zp[..d - 1]));
            return Ok(w);
        }
    }
    Err(CcvxError::Config("model chart sampler starved".into()))
}

/// Uniform sample of the open domain D.
pub fn sample_interior_uniform(dom: &Domain, stream: &mut RngStream) -> Result<CVec> {
    match dom {
        Domain::Ball { d } => {
            let w = sample_boundary_uniform(dom, stream)?;
            let r = stream.uniform().powf(1.0 / (2.0 * *d as f64));
            Ok(w.scale(r))
        }
        Domain::Model { d, p } => {
            for _ in 0..2_000_000 {
                let mut pt = [0.0f64; 2 * crate::kernel::MAX_D];
                let mut nsq = 0.0;
                for x in pt.iter_mut().take(2 * d) {
                    *x = stream.gaussian();
                    nsq += *x * *x;
                }
                if nsq < 1e-12 {
                    continue;
                }
                let rad = p.r_trunc * stream.uniform().powf(1.0 / (2.0 * *d as f64)) / nsq.sqrt();
                for x in pt.iter_mut().take(2 * d) {
                    *x *= rad;
                }
                let z = CVec::from_real(&pt[..2 * d]);
                if dom.contains(&z) {
                    return Ok(z);
                }
            }
            Err(CcvxError::Config("model interior sampler starved".into()))
        }
        Domain::Affine { base, .. } => {
            let zb = sample_interior_uniform(base, stream)?;
            Ok(dom.pushforward(&zb))
        }
    }
}

/// One boundary point with density f relative to surface measure.
pub fn sample_boundary_point(
    dom: &Domain,
    f: &DensitySpec,
    stream: &mut RngStream,
) -> Result<CVec> {
    let envelope = f.envelope(dom);
    for _ in 0..100_000 {
        let w = sample_boundary_uniform(dom, stream)?;
        if stream.uniform() * envelope < f.relative(&w) {
            return Ok(w);
        }
    }
    Err(CcvxError::Config(
        "density acceptance rate below 1e-4; check the profile".into(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcessLaw {
    Binomial,
    Poisson,
}

impl ProcessLaw {
    pub fn parse(s: &str) -> Result<ProcessLaw> {
        match s {
            "binomial" => Ok(ProcessLaw::Binomial),
            "poisson" => Ok(ProcessLaw::Poisson),
            _ => Err(CcvxError::Config(format!("unknown process law {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProcessLaw::Binomial => "binomial",
            ProcessLaw::Poisson => "poisson",
        }
    }
}

/// A realized source set with per-point sizes and provenance.
#[derive(Clone, Debug)]
pub struct SourceSample {
    pub points: Vec<CVec>,
    pub sizes: Vec<f64>,
    pub delta_min: f64,
    pub delta_max: f64,
    pub n_param: u64,
    pub law: ProcessLaw,
    pub stream: u64,
}

impl SourceSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Realizes the process: exactly n points (binomial) or Poisson(n) points,
/// i.i.d. with density f, each carrying its size value.
pub fn sample_process(
    dom: &Domain,
    f: &DensitySpec,
    law: ProcessLaw,
    n: u64,
    sizefn: &SizeFunction,
    stream: &mut RngStream,
) -> Result<SourceSample> {
    if n < 2 {
        return Err(CcvxError::Range("process parameter n must be at least 2"));
    }
    f.validate(dom)?;
    let count = match law {
        ProcessLaw::Binomial => n,
        ProcessLaw::Poisson => stream.poisson(n as f64)?,
    };
    let mut points = Vec::with_capacity(count as usize);
    let mut sizes = Vec::with_capacity(count as usize);
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for _ in 0..count {
        let w = sample_boundary_point(dom, f, stream)?;
        let s = sizefn.size_at(n, &w)?;
        dmin = dmin.min(s);
        dmax = dmax.max(s);
        points.push(w);
        sizes.push(s);
    }
    if points.is_empty() {
        dmin = 0.0;
    }
    // cap scales must stay well inside a truncated model's chart
    if let Domain::Model { p, .. } = dom {
        let limit = p.r_trunc * p.r_trunc / 10.0;
        if dmax > limit {
            return Err(CcvxError::Config(format!(
                "cap scale {dmax:.3e} exceeds {limit:.3e} allowed by the truncation radius"
            )));
        }
    }
    Ok(SourceSample {
        points,
        sizes,
        delta_min: dmin,
        delta_max: dmax,
        n_param: n,
        law,
        stream: stream.stream(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::quad;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = RngStream::new(0xfeed_beef, 7);
        let mut b = RngStream::new(0xfeed_beef, 7);
        let seq_a: Vec<f64> = (0..32).map(|_| a.uniform()).collect();
        let seq_b: Vec<f64> = (0..32).map(|_| b.uniform()).collect();
        assert_eq!(seq_a, seq_b);
        let mut c = RngStream::new(0xfeed_beef, 8);
        let seq_c: Vec<f64> = (0..32).map(|_| c.uniform()).collect();
        assert_ne!(seq_a, seq_c);
        let mut f1 = a.fork(3);
        let mut f2 = b.fork(3);
        assert_eq!(f1.uniform(), f2.uniform());
    }

    #[test]
    fn uniform_and_gaussian_moments() {
        let mut s = RngStream::new(1, 1);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let g = s.gaussian();
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
        for _ in 0..1000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn poisson_counts() {
        let mut s = RngStream::new(2, 0);
        assert_eq!(s.poisson(0.0).unwrap(), 0);
        assert!(s.poisson(-1.0).is_err());
        assert!(s.poisson(2e9).is_err());
        for &mean in &[5.0, 200.0] {
            let n = 100_000;
            let mut acc = 0.0;
            for _ in 0..n {
                acc += s.poisson(mean).unwrap() as f64;
            }
            let sample_mean = acc / n as f64;
            let band = 4.0 * (mean / n as f64).sqrt();
            assert!(
                (sample_mean - mean).abs() < band,
                "mean {mean}: got {sample_mean} (band {band})"
            );
        }
        let mut a = RngStream::new(3, 9);
        let mut b = RngStream::new(3, 9);
        assert_eq!(a.poisson(47.0).unwrap(), b.poisson(47.0).unwrap());
    }

    #[test]
    fn ball_boundary_sampler_is_uniform() {
        let dom = Domain::ball(2).unwrap();
        let mut s = RngStream::new(4, 0);
        let n = 100_000;
        let mut means = [0.0f64; 4];
        for _ in 0..n {
            let w = sample_boundary_uniform(&dom, &mut s).unwrap();
            assert!((w.norm() - 1.0).abs() < 1e-12);
            let mut pt = [0.0; 4];
            w.write_real(&mut pt);
            for (m, x) in means.iter_mut().zip(&pt) {
                *m += x;
            }
        }
        // each real coordinate has variance 1/4 on S^3
        let band = 4.0 * 0.5 / (n as f64).sqrt();
        for m in means {
            assert!((m / n as f64).abs() < band);
        }
    }

    #[test]
    fn profile_density_shifts_the_mean() {
        let dom = Domain::ball(2).unwrap();
        let f = DensitySpec::Profile { c0: 1.0, c1: 0.5, phi: ProfilePhi::ReZ1 };
        f.validate(&dom).unwrap();
        let mut s = RngStream::new(5, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let w = sample_boundary_point(&dom, &f, &mut s).unwrap();
            acc += w[0].re;
        }
        // E[Re z1] = c1 E_unif[x1^2] = 0.5/4 under the tilted density
        let mean = acc / n as f64;
        assert!((mean - 0.125).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        let bad = DensitySpec::Profile { c0: 1.0, c1: 2.0, phi: ProfilePhi::ReZ1 };
        assert!(bad.validate(&dom).is_err());
    }

    #[test]
    fn profile_density_longitudinal_chi_square() {
        // 16 bins in t = Re z1; marginal density prop to (1+t/2) sqrt(1-t^2)
        let dom = Domain::ball(2).unwrap();
        let f = DensitySpec::Profile { c0: 1.0, c1: 0.5, phi: ProfilePhi::ReZ1 };
        let mut s = RngStream::new(6, 0);
        let n = 100_000usize;
        let mut counts = [0u64; 16];
        for _ in 0..n {
            let w = sample_boundary_point(&dom, &f, &mut s).unwrap();
            let t = w[0].re.clamp(-1.0, 1.0 - 1e-12);
            counts[((t + 1.0) / 0.125) as usize] += 1;
        }
        let total = quad::integrate(
            |t| (1.0 + 0.5 * t) * (1.0 - t * t).max(0.0).sqrt(),
            -1.0,
            1.0,
            1e-12,
        );
        let mut chi2 = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            let a = -1.0 + 0.125 * i as f64;
            let p = quad::integrate(
                |t| (1.0 + 0.5 * t) * (1.0 - t * t).max(0.0).sqrt(),
                a,
                a + 0.125,
                1e-12,
            ) / total;
            let expect = n as f64 * p;
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
        // 0.999 quantile of chi-square with 15 degrees of freedom
        assert!(chi2 < 37.697, "chi2 = {chi2}");
    }

    #[test]
    fn model_and_affine_samplers_stay_on_boundary() {
        let model = Domain::model(2, &[1.0], &[0.6], 1.0).unwrap();
        let mut s = RngStream::new(7, 0);
        for _ in 0..2000 {
            let w = sample_boundary_uniform(&model, &mut s).unwrap();
            assert!(model.on_boundary(&w));
        }
        let u = crate::kernel::random_unitary(2, &mut s).unwrap();
        let img = Domain::affine(Domain::ball(2).unwrap(), u, CVec::zero(2)).unwrap();
        for _ in 0..2000 {
            let w = sample_boundary_uniform(&img, &mut s).unwrap();
            assert!((w.norm() - 1.0).abs() < 1e-10);
            assert!(img.on_boundary(&w));
        }
    }

    #[test]
    fn process_counts_and_sizes() {
        let dom = Domain::ball(2).unwrap();
        let f = DensitySpec::Uniform;
        let g = SizeFunction::constant(1.0);
        let mut s = RngStream::new(8, 0);
        let smp = sample_process(&dom, &f, ProcessLaw::Binomial, 500, &g, &mut s).unwrap();
        assert_eq!(smp.len(), 500);
        for (w, &sz) in smp.points.iter().zip(&smp.sizes) {
            assert!(dom.on_boundary(w));
            assert!((sz - g.size_at(500, w).unwrap()).abs() < 1e-15);
        }
        assert!(sample_process(&dom, &f, ProcessLaw::Binomial, 1, &g, &mut s).is_err());

        let mut acc = 0.0;
        let reps = 1000;
        for rep in 0..reps {
            let mut sr = RngStream::new(8, stream_id(500, rep));
            let smp = sample_process(&dom, &f, ProcessLaw::Poisson, 500, &g, &mut sr).unwrap();
            acc += smp.len() as f64;
        }
        let mean = acc / reps as f64;
        assert!((mean - 500.0).abs() < 4.0 * (500.0f64 / reps as f64).sqrt());
    }
}
