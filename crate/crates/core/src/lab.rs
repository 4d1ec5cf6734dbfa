//! Experiment harness: configuration, replication runs, summary statistics
//! and rate fits, coverage curves, the limiting-constant probe, and the
//! deterministic artifacts a run writes to disk.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{self, Domain};
use crate::error::{CcvxError, Result};
use crate::estimate;
use crate::kernel::{self, CVec};
use crate::poly::{self, CoverageEngine, CoverageOptions, CoverageStatus, SizeFunction};
use crate::pp::{self, DensitySpec, ProcessLaw, ProfilePhi, RngStream};

const REPLICATIONS_HEADER: &str = "n,rep,verdict,delta_v,scaled,points,ms";
const SUMMARY_HEADER: &str = "n,mean,var,scaled_mean,cover_freq,ks,w1";

/// TOML experiment description. `f` is the sampling density on bD and `g`
/// the size profile, both in the units of the critical scale delta_n.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub f: DensitySection,
    #[serde(default)]
    pub g: SizeSection,
    #[serde(default)]
    pub coverage: CoverageSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub domain: String,
    #[serde(default = "default_law")]
    pub law: String,
    pub ns: Vec<u64>,
    pub reps: u32,
    #[serde(default = "default_budget")]
    pub mc_budget: usize,
    pub seed: String,
}

fn default_law() -> String {
    "poisson".into()
}

fn default_budget() -> usize {
    1_000_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySection {
    Uniform,
    Profile { c0: f64, c1: f64, phi: String },
}

impl Default for DensitySection {
    fn default() -> DensitySection {
        DensitySection::Uniform
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeSection {
    Const { c: f64 },
    Profile { c0: f64, c1: f64, phi: String },
}

impl Default for SizeSection {
    fn default() -> SizeSection {
        SizeSection::Const { c: 3.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSection {
    pub net_factor: f64,
    pub probes: usize,
    pub refine_levels: usize,
}

impl Default for CoverageSection {
    fn default() -> CoverageSection {
        let o = CoverageOptions::default();
        CoverageSection {
            net_factor: o.net_factor,
            probes: o.probes,
            refine_levels: o.refine_levels,
        }
    }
}

/// 128-bit seed written as hex, with or without a 0x prefix.
pub fn parse_seed(s: &str) -> Result<u128> {
    let t = s.trim();
    let hex = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    if hex.is_empty() || hex.len() > 32 {
        return Err(CcvxError::Config(format!("seed must be 1..=32 hex digits, got {s:?}")));
    }
    u128::from_str_radix(hex, 16)
        .map_err(|e| CcvxError::Config(format!("bad seed {s:?}: {e}")))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CcvxError::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CcvxError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.is_empty() {
            return Err(CcvxError::Config("experiment.name must not be empty".into()));
        }
        if e.ns.is_empty() {
            return Err(CcvxError::Config("experiment.ns must not be empty".into()));
        }
        if e.ns.iter().any(|&n| n < 2) {
            return Err(CcvxError::Config("every n must be at least 2".into()));
        }
        if e.reps == 0 {
            return Err(CcvxError::Config("experiment.reps must be positive".into()));
        }
        if e.mc_budget < 100 {
            return Err(CcvxError::Config("experiment.mc_budget must be at least 100".into()));
        }
        self.seed()?;
        let dom = self.domain()?;
        self.law()?;
        self.density()?.validate(&dom)?;
        self.size()?.validate(&dom)?;
        if !(self.coverage.net_factor > 0.0 && self.coverage.net_factor < 1.0) {
            return Err(CcvxError::Config("coverage.net_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u128> {
        parse_seed(&self.experiment.seed)
    }

    pub fn domain(&self) -> Result<Domain> {
        Domain::parse(&self.experiment.domain)
    }

    pub fn law(&self) -> Result<ProcessLaw> {
        ProcessLaw::parse(&self.experiment.law)
    }

    pub fn density(&self) -> Result<DensitySpec> {
        Ok(match &self.f {
            DensitySection::Uniform => DensitySpec::Uniform,
            DensitySection::Profile { c0, c1, phi } => {
                DensitySpec::Profile { c0: *c0, c1: *c1, phi: ProfilePhi::parse(phi)? }
            }
        })
    }

    pub fn size(&self) -> Result<SizeFunction> {
        Ok(match &self.g {
            SizeSection::Const { c } => SizeFunction::constant(*c),
            SizeSection::Profile { c0, c1, phi } => {
                SizeFunction::Profile { c0: *c0, c1: *c1, phi: ProfilePhi::parse(phi)? }
            }
        })
    }

    pub fn coverage_options(&self) -> CoverageOptions {
        CoverageOptions {
            net_factor: self.coverage.net_factor,
            probes: self.coverage.probes,
            refine_levels: self.coverage.refine_levels,
            ..CoverageOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRecord {
    pub n: u64,
    pub rep: u32,
    /// covered | not_covered | uncertain | error_<tag>
    pub verdict: String,
    pub delta_v: f64,
    /// delta_v / delta_n, the scale the limit theorems act on.
    pub scaled: f64,
    pub points: u64,
    pub ms: u64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SummaryRecord {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    pub scaled_mean: f64,
    pub cover_freq: f64,
    pub ks: f64,
    pub w1: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub domain: String,
    pub d: usize,
    pub seed: String,
    pub law: String,
    pub ns: Vec<u64>,
    pub reps: u32,
    pub mc_budget: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub meta: RunMeta,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<SummaryRecord>,
    pub mean_fit: Option<RateFit>,
    pub var_fit: Option<RateFit>,
}

/// Runs the full grid of (n, rep) replications. Every replication draws its
/// randomness from a stream keyed by (n, rep) alone, so results do not
/// depend on scheduling; with `workers > 1` the grid is fanned out over a
/// rayon pool after a sequential warmup builds the per-scale nets.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
    with_volumes: bool,
) -> Result<ExperimentOutput> {
    let dom = cfg.domain()?;
    let density = cfg.density()?;
    let law = cfg.law()?;
    let size = cfg.size()?;
    let seed = cfg.seed()?;
    let budget = cfg.experiment.mc_budget;
    let engine = CoverageEngine::new(dom.clone(), cfg.coverage_options(), seed)?;
    let d = dom.dim();

    let mut jobs: Vec<(u64, u32)> = Vec::new();
    for &n in &cfg.experiment.ns {
        for rep in 0..cfg.experiment.reps {
            jobs.push((n, rep));
        }
    }
    let run_one = |n: u64, rep: u32| -> ReplicationRecord {
        let t0 = Instant::now();
        let outcome =
            run_replication(&dom, &engine, &density, law, &size, seed, n, rep, budget, with_volumes);
        let ms = t0.elapsed().as_millis() as u64;
        match outcome {
            Ok((verdict, dv, scaled, points)) => {
                ReplicationRecord { n, rep, verdict, delta_v: dv, scaled, points, ms }
            }
            Err(e) => ReplicationRecord {
                n,
                rep,
                verdict: format!("error_{}", e.tag()),
                delta_v: f64::NAN,
                scaled: f64::NAN,
                points: 0,
                ms,
            },
        }
    };
    let records: Vec<ReplicationRecord> = if workers > 1 {
        // warm the net cache so parallel replications do not race to build it
        for &n in &cfg.experiment.ns {
            let mut rng = RngStream::new(seed, pp::stream_id(n, 0));
            if let Ok(smp) = pp::sample_process(&dom, &density, law, n, &size, &mut rng) {
                let _ = engine.coverage_test(&smp);
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CcvxError::Config(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(|&(n, rep)| run_one(n, rep)).collect())
    } else {
        jobs.iter().map(|&(n, rep)| run_one(n, rep)).collect()
    };

    let summaries = summarize(&cfg.experiment.ns, &records);
    let (mean_fit, var_fit) = default_fits(d, &summaries);
    Ok(ExperimentOutput {
        meta: RunMeta {
            name: cfg.experiment.name.clone(),
            domain: cfg.experiment.domain.clone(),
            d,
            seed: format!("{seed:#034x}"),
            law: law.name().into(),
            ns: cfg.experiment.ns.clone(),
            reps: cfg.experiment.reps,
            mc_budget: budget,
        },
        records,
        summaries,
        mean_fit,
        var_fit,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    dom: &Domain,
    engine: &CoverageEngine,
    density: &DensitySpec,
    law: ProcessLaw,
    size: &SizeFunction,
    seed: u128,
    n: u64,
    rep: u32,
    budget: usize,
    with_volumes: bool,
) -> Result<(String, f64, f64, u64)> {
    let mut rng = RngStream::new(seed, pp::stream_id(n, rep as u64));
    let smp = pp::sample_process(dom, density, law, n, size, &mut rng)?;
    let verdict = engine.coverage_test(&smp)?;
    let label = verdict.status.name().to_string();
    if !with_volumes {
        return Ok((label, f64::NAN, f64::NAN, smp.len() as u64));
    }
    let mut vol_stream = rng.fork(0x760_1);
    let dv = estimate::delta_v(dom, &smp, &verdict, budget, &mut vol_stream)?;
    let scaled = dv.value / poly::delta_n(dom.dim(), n)?;
    Ok((label, dv.value, scaled, smp.len() as u64))
}

/// Per-n summaries. Mean and variance run over replications with a resolved
/// verdict (uncertain and error rows are excluded); cover_freq counts
/// covered over all replications, so unresolved rows weigh against it.
pub fn summarize(ns: &[u64], records: &[ReplicationRecord]) -> Vec<SummaryRecord> {
    ns.iter()
        .map(|&n| {
            let rows: Vec<&ReplicationRecord> = records.iter().filter(|r| r.n == n).collect();
            let total = rows.len() as f64;
            let covered = rows.iter().filter(|r| r.verdict == "covered").count() as f64;
            let valid: Vec<&&ReplicationRecord> = rows
                .iter()
                .filter(|r| (r.verdict == "covered" || r.verdict == "not_covered") && r.delta_v.is_finite())
                .collect();
            let m = valid.len();
            let (mut mean, mut var, mut scaled_mean) = (f64::NAN, f64::NAN, f64::NAN);
            let (mut ks, mut w1) = (f64::NAN, f64::NAN);
            if m >= 1 {
                mean = valid.iter().map(|r| r.delta_v).sum::<f64>() / m as f64;
                scaled_mean = valid.iter().map(|r| r.scaled).sum::<f64>() / m as f64;
            }
            if m >= 2 {
                var = valid.iter().map(|r| (r.delta_v - mean).powi(2)).sum::<f64>()
                    / (m as f64 - 1.0);
            }
            if m >= 8 {
                let scaled: Vec<f64> = valid.iter().map(|r| r.scaled).collect();
                ks = ks_to_standard_normal(&scaled).unwrap_or(f64::NAN);
                w1 = w1_to_standard_normal(&scaled).unwrap_or(f64::NAN);
            }
            SummaryRecord {
                n,
                mean,
                var,
                scaled_mean,
                cover_freq: if total > 0.0 { covered / total } else { f64::NAN },
                ks,
                w1,
            }
        })
        .collect()
}

/// Least squares for ln y = intercept + slope ln n after removing a fixed
/// ln ln n coefficient; the rate theorems fix that coefficient, so only the
/// power is estimated.
pub fn fit_rate(points: &[(f64, f64)], loglog_coeff: f64) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(CcvxError::Range("rate fit needs at least two points"));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(n, y) in points {
        if !(n > 1.0) || !(y > 0.0) || !y.is_finite() {
            return Err(CcvxError::Range("rate fit needs n > 1 and y > 0"));
        }
        xs.push(n.ln());
        ys.push(y.ln() - loglog_coeff * n.ln().ln());
    }
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(CcvxError::Range("rate fit needs distinct n"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    Ok(RateFit { slope, intercept: ybar - slope * xbar })
}

/// Expected exponents: mean delta_V scales like (log n / n)^(1/d), its
/// variance like (log n / n)^((d+2)/d).
fn default_fits(d: usize, summaries: &[SummaryRecord]) -> (Option<RateFit>, Option<RateFit>) {
    let df = d as f64;
    let mean_pts: Vec<(f64, f64)> =
        summaries.iter().map(|s| (s.n as f64, s.mean)).collect();
    let var_pts: Vec<(f64, f64)> = summaries.iter().map(|s| (s.n as f64, s.var)).collect();
    (fit_rate(&mean_pts, 1.0 / df).ok(), fit_rate(&var_pts, (df + 2.0) / df).ok())
}

pub fn erf(x: f64) -> f64 {
    // Abramowitz and Stegun 7.1.26, |error| < 1.5e-7
    let s = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let y = 1.0
        - (((((1.061_405_429 * t - 1.453_152_027) * t) + 1.421_413_741) * t - 0.284_496_736)
            * t
            + 0.254_829_592)
            * t
            * (-x * x).exp();
    s * y
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Acklam's rational approximation to the standard normal quantile,
/// |relative error| < 1.15e-9 on (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(CcvxError::Range("quantile needs p strictly inside (0, 1)"));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(x)
}

fn studentized_sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 8 {
        return Err(CcvxError::Range("distribution tests need at least 8 values"));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    if !(var > 0.0) {
        return Err(CcvxError::Range("distribution tests need nonzero spread"));
    }
    let sd = var.sqrt();
    let mut xs: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(xs)
}

/// Kolmogorov distance between the studentized sample and N(0, 1).
pub fn ks_to_standard_normal(values: &[f64]) -> Result<f64> {
    let xs = studentized_sorted(values)?;
    let m = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = std_normal_cdf(x);
        d = d.max((f - i as f64 / m).abs());
        d = d.max((f - (i as f64 + 1.0) / m).abs());
    }
    Ok(d)
}

/// Wasserstein-1 distance between the studentized sample and N(0, 1),
/// computed against midpoint quantiles.
pub fn w1_to_standard_normal(values: &[f64]) -> Result<f64> {
    let xs = studentized_sorted(values)?;
    let m = xs.len() as f64;
    let mut acc = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let q = std_normal_quantile((i as f64 + 0.5) / m)?;
        acc += (x - q).abs();
    }
    Ok(acc / m)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub c: f64,
    pub cover_freq: f64,
    pub uncertain: u32,
    pub reps: u32,
}

/// Coverage frequency as a function of the size constant c, with common
/// random numbers across c so the curve is monotone replication by
/// replication.
pub fn coverage_probability_curve(
    dom: &Domain,
    density: &DensitySpec,
    law: ProcessLaw,
    n: u64,
    cs: &[f64],
    reps: u32,
    seed: u128,
    opts: &CoverageOptions,
) -> Result<Vec<CurvePoint>> {
    if reps == 0 {
        return Err(CcvxError::Range("curve needs at least one replication"));
    }
    let engine = CoverageEngine::new(dom.clone(), opts.clone(), seed)?;
    let mut out = Vec::with_capacity(cs.len());
    for &c in cs {
        let size = SizeFunction::constant(c);
        size.validate(dom)?;
        let mut covered = 0u32;
        let mut uncertain = 0u32;
        for rep in 0..reps {
            let mut rng = RngStream::new(seed, pp::stream_id(n, rep as u64));
            let smp = pp::sample_process(dom, density, law, n, &size, &mut rng)?;
            match engine.coverage_test(&smp)?.status {
                CoverageStatus::Covered => covered += 1,
                CoverageStatus::Uncertain => uncertain += 1,
                CoverageStatus::NotCovered => {}
            }
        }
        out.push(CurvePoint { c, cover_freq: covered as f64 / reps as f64, uncertain, reps });
    }
    Ok(out)
}

/// Quadrature for the conjectured limiting constant,
///   v* = int_bD (2 v(zeta))^(-1/2) dsigma,  v = 16 nu.
pub fn v_star_quadrature(dom: &Domain, samples: usize, stream: &mut RngStream) -> Result<f64> {
    if samples == 0 {
        return Err(CcvxError::Range("quadrature needs at least one sample"));
    }
    let sigma = dom.surface_area()?;
    let mut sum = 0.0;
    for _ in 0..samples {
        let zeta = pp::sample_boundary_uniform(dom, stream)?;
        let v = 16.0 * kernel::curvature_nu(dom, &zeta)?;
        sum += 1.0 / (2.0 * v).sqrt();
    }
    Ok(sigma * sum / samples as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjectureReport {
    pub n: u64,
    pub reps: u32,
    pub v_star: f64,
    /// Size constant where the coverage frequency crosses 1/2 at this n.
    pub c_star: f64,
    /// c_star sigma / v_star; the conjecture predicts drift toward 1.
    pub ratio: f64,
    pub freq_lo: f64,
    pub freq_hi: f64,
}

/// Bisects the coverage phase transition in c at fixed n and reports it
/// against the quadrature constant. Finite-size drift is expected; the
/// report is a probe, not a test.
pub fn conjecture_probe(dom: &Domain, n: u64, reps: u32, seed: u128) -> Result<ConjectureReport> {
    if reps == 0 {
        return Err(CcvxError::Range("probe needs at least one replication"));
    }
    let engine = CoverageEngine::new(dom.clone(), CoverageOptions::default(), seed)?;
    let density = DensitySpec::Uniform;
    let freq = |c: f64| -> Result<f64> {
        let size = SizeFunction::constant(c);
        let mut covered = 0u32;
        for rep in 0..reps {
            let mut rng = RngStream::new(seed, pp::stream_id(n, rep as u64));
            let smp = pp::sample_process(dom, &density, ProcessLaw::Poisson, n, &size, &mut rng)?;
            if engine.coverage_test(&smp)?.status == CoverageStatus::Covered {
                covered += 1;
            }
        }
        Ok(covered as f64 / reps as f64)
    };
    let (mut lo, mut hi) = (0.5f64, 5.0f64);
    let freq_lo = freq(lo)?;
    let freq_hi = freq(hi)?;
    if freq_lo >= 0.5 || freq_hi < 0.5 {
        return Err(CcvxError::Bracket(format!(
            "coverage frequency does not cross 1/2 on [{lo}, {hi}]: {freq_lo:.2} to {freq_hi:.2}"
        )));
    }
    while hi - lo > 0.125 {
        let mid = 0.5 * (lo + hi);
        if freq(mid)? < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c_star = 0.5 * (lo + hi);
    let mut qstream = RngStream::new(seed, 0xc57a2);
    let v_star = v_star_quadrature(dom, 20_000, &mut qstream)?;
    let sigma = dom.surface_area()?;
    Ok(ConjectureReport {
        n,
        reps,
        v_star,
        c_star,
        ratio: c_star * sigma / v_star,
        freq_lo,
        freq_hi,
    })
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".into()
    }
}

pub fn write_replications_csv(path: &Path, records: &[ReplicationRecord]) -> Result<()> {
    let mut s = String::from(REPLICATIONS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            r.rep,
            r.verdict,
            fmt_f(r.delta_v),
            fmt_f(r.scaled),
            r.points,
            r.ms
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_replications(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPLICATIONS_HEADER => {}
        _ => {
            return Err(CcvxError::Config(format!(
                "{} is not a replications csv",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(CcvxError::Config(format!("csv row {} has {} fields", ln + 2, cols.len())));
        }
        let bad = |what: &str| CcvxError::Config(format!("csv row {}: bad {what}", ln + 2));
        out.push(ReplicationRecord {
            n: cols[0].parse().map_err(|_| bad("n"))?,
            rep: cols[1].parse().map_err(|_| bad("rep"))?,
            verdict: cols[2].to_string(),
            delta_v: cols[3].parse().map_err(|_| bad("delta_v"))?,
            scaled: cols[4].parse().map_err(|_| bad("scaled"))?,
            points: cols[5].parse().map_err(|_| bad("points"))?,
            ms: cols[6].parse().map_err(|_| bad("ms"))?,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    meta: &'a RunMeta,
    mean_fit: &'a Option<RateFit>,
    var_fit: &'a Option<RateFit>,
    summaries: &'a [SummaryRecord],
}

/// Writes every run artifact: meta.json, replications.csv, summary.csv,
/// summary.json, and the three plots.
pub fn emit_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::to_string_pretty(&out.meta)
        .map_err(|e| CcvxError::Config(format!("meta encode: {e}")))?;
    fs::write(dir.join("meta.json"), meta + "\n")?;
    write_replications_csv(&dir.join("replications.csv"), &out.records)?;
    write_summary_artifacts(dir, out)
}

/// Writes the derived artifacts only (summary table, json, plots); analyze
/// uses this to refresh a run directory without touching the raw rows.
pub fn write_summary_artifacts(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in &out.summaries {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            fmt_f(r.mean),
            fmt_f(r.var),
            fmt_f(r.scaled_mean),
            fmt_f(r.cover_freq),
            fmt_f(r.ks),
            fmt_f(r.w1)
        ));
    }
    fs::write(dir.join("summary.csv"), s)?;
    let doc = SummaryDoc {
        meta: &out.meta,
        mean_fit: &out.mean_fit,
        var_fit: &out.var_fit,
        summaries: &out.summaries,
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| CcvxError::Config(format!("summary encode: {e}")))?;
    fs::write(dir.join("summary.json"), json + "\n")?;

    let df = out.meta.d as f64;
    let mean_pts: Vec<(f64, f64)> = out
        .summaries
        .iter()
        .filter(|s| s.mean.is_finite() && s.mean > 0.0)
        .map(|s| ((s.n as f64).ln(), s.mean.ln() - (s.n as f64).ln().ln() / df))
        .collect();
    fs::write(
        dir.join("rate.svg"),
        svg_plot(
            &format!("{}: mean defect rate", out.meta.name),
            "log n",
            "log mean - (1/d) loglog n",
            &mean_pts,
            out.mean_fit.map(|f| (f.slope, f.intercept)),
        ),
    )?;
    let var_pts: Vec<(f64, f64)> = out
        .summaries
        .iter()
        .filter(|s| s.var.is_finite() && s.var > 0.0)
        .map(|s| ((s.n as f64).ln(), s.var.ln() - (df + 2.0) / df * (s.n as f64).ln().ln()))
        .collect();
    fs::write(
        dir.join("variance.svg"),
        svg_plot(
            &format!("{}: defect variance rate", out.meta.name),
            "log n",
            "log var - ((d+2)/d) loglog n",
            &var_pts,
            out.var_fit.map(|f| (f.slope, f.intercept)),
        ),
    )?;
    let qq_pts = qq_points(out);
    fs::write(
        dir.join("qq.svg"),
        svg_plot(
            &format!("{}: scaled defect qq at n = {}", out.meta.name, out.meta.ns.iter().max().copied().unwrap_or(0)),
            "normal quantile",
            "studentized scaled defect",
            &qq_pts,
            Some((1.0, 0.0)),
        ),
    )?;
    Ok(())
}

fn qq_points(out: &ExperimentOutput) -> Vec<(f64, f64)> {
    let Some(&n) = out.meta.ns.iter().max() else { return Vec::new() };
    let scaled: Vec<f64> = out
        .records
        .iter()
        .filter(|r| r.n == n && r.scaled.is_finite())
        .filter(|r| r.verdict == "covered" || r.verdict == "not_covered")
        .map(|r| r.scaled)
        .collect();
    let Ok(xs) = studentized_sorted(&scaled) else { return Vec::new() };
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .filter_map(|(i, &x)| std_normal_quantile((i as f64 + 0.5) / m).ok().map(|q| (q, x)))
        .collect()
}

/// Reads a run directory back and recomputes summaries and fits from the
/// raw replication rows.
pub fn analyze_dir(dir: &Path) -> Result<ExperimentOutput> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| CcvxError::Config(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: RunMeta = serde_json::from_str(&text)
        .map_err(|e| CcvxError::Config(format!("meta parse: {e}")))?;
    let records = read_replications(&dir.join("replications.csv"))?;
    let summaries = summarize(&meta.ns, &records);
    let (mean_fit, var_fit) = default_fits(meta.d, &summaries);
    Ok(ExperimentOutput { meta, records, summaries, mean_fit, var_fit })
}

fn svg_plot(
    title: &str,
    xlab: &str,
    ylab: &str,
    pts: &[(f64, f64)],
    line: Option<(f64, f64)>,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const ML: f64 = 74.0;
    const MR: f64 = 24.0;
    const MT: f64 = 42.0;
    const MB: f64 = 56.0;
    let finite: Vec<(f64, f64)> = pts.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if let Some((a, b)) = line {
        y0 = y0.min(a * x0 + b).min(a * x1 + b);
        y1 = y1.max(a * x0 + b).max(a * x1 + b);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let xpad = 0.06 * (x1 - x0);
    let ypad = 0.06 * (y1 - y0);
    let (x0, x1, y0, y1) = (x0 - xpad, x1 + xpad, y0 - ypad, y1 + ypad);
    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        title
    ));
    // frame
    s.push_str(&format!(
        "<rect x=\"{ML:.1}\" y=\"{MT:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    for i in 0..5 {
        let tx = x0 + (x1 - x0) * i as f64 / 4.0;
        let ty = y0 + (y1 - y0) * i as f64 / 4.0;
        s.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"black\"/>\n",
            sx(tx),
            H - MB,
            H - MB + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(tx),
            H - MB + 18.0,
            tx
        ));
        s.push_str(&format!(
            "<line x1=\"{1:.1}\" y1=\"{0:.1}\" x2=\"{2:.1}\" y2=\"{0:.1}\" stroke=\"black\"/>\n",
            sy(ty),
            ML - 5.0,
            ML
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            ML - 8.0,
            sy(ty) + 4.0,
            ty
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 14.0,
        xlab
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        ylab
    ));
    if let Some((a, b)) = line {
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            sx(x0 + xpad),
            sy(a * (x0 + xpad) + b),
            sx(x1 - xpad),
            sy(a * (x1 - xpad) + b)
        ));
    }
    for &(x, y) in &finite {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"crimson\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug)]
pub struct SelftestLine {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Fast cross-checks of the closed forms against independent estimates;
/// the CLI prints one line per check.
pub fn oracle_selftest() -> Vec<SelftestLine> {
    let mut out = Vec::new();
    let seed = 0x5e1f;

    let ball = Domain::ball(2).unwrap();
    match domains::ball_cap_area_oracle(2, 0.01) {
        Ok(area) => {
            let leading = std::f64::consts::PI.powi(2) * 0.01f64.powi(2);
            let ratio = area / leading;
            out.push(SelftestLine {
                name: "cap area leading constant",
                pass: (ratio - 1.0).abs() < 0.02,
                detail: format!("sigma(S)/pi^2 delta^2 = {ratio:.5} at delta = 0.01"),
            });
        }
        Err(e) => out.push(SelftestLine {
            name: "cap area leading constant",
            pass: false,
            detail: e.to_string(),
        }),
    }

    let cut_check = || -> Result<SelftestLine> {
        let w = CVec::from_real(&[1.0, 0.0, 0.0, 0.0]);
        let smp = pp::SourceSample {
            points: vec![w],
            sizes: vec![0.1],
            delta_min: 0.1,
            delta_max: 0.1,
            n_param: 2,
            law: ProcessLaw::Binomial,
            stream: 1,
        };
        let mut stream = RngStream::new(seed, 1);
        let est = estimate::union_cut_volume_mc(&ball, &smp, 40_000, &mut stream)?;
        let oracle = domains::ball_cut_volume_oracle(2, 0.1)?;
        Ok(SelftestLine {
            name: "cut volume oracle vs mc",
            pass: (est.value - oracle).abs() < 4.0 * est.se,
            detail: format!("mc {:.6e} vs oracle {:.6e} (se {:.1e})", est.value, oracle, est.se),
        })
    };
    out.push(cut_check().unwrap_or_else(|e| SelftestLine {
        name: "cut volume oracle vs mc",
        pass: false,
        detail: e.to_string(),
    }));

    let tube_check = || -> Result<SelftestLine> {
        let mut stream = RngStream::new(seed, 2);
        let est = estimate::tubular_volume_depth_integral(&ball, |_| Ok(0.1), 64, &mut stream)?;
        let exact = estimate::sphere_tube_closed_form(2, 0.1)?;
        Ok(SelftestLine {
            name: "tube depth integral vs closed form",
            pass: (est.value - exact).abs() <= 1e-9 * exact,
            detail: format!("integral {:.12} vs closed form {:.12}", est.value, exact),
        })
    };
    out.push(tube_check().unwrap_or_else(|e| SelftestLine {
        name: "tube depth integral vs closed form",
        pass: false,
        detail: e.to_string(),
    }));

    let depth_check = || -> Result<SelftestLine> {
        let mut stream = RngStream::new(seed, 3);
        let delta = 0.15;
        let mut worst = f64::INFINITY;
        for _ in 0..200 {
            let w = pp::sample_boundary_uniform(&ball, &mut stream)?;
            let zeta = pp::sample_boundary_uniform(&ball, &mut stream)?;
            let l = kernel::boundary_functional(&ball, &zeta, &w)?.norm();
            if l >= delta {
                continue;
            }
            if let Some(t) = poly::depth_along_normal(&ball, &zeta, &w, delta)? {
                worst = worst.min(t - (delta - l));
            }
        }
        Ok(SelftestLine {
            name: "depth lower bound",
            pass: worst >= -1e-12,
            detail: format!("min(t - (delta - |L|)) = {worst:.3e}"),
        })
    };
    out.push(depth_check().unwrap_or_else(|e| SelftestLine {
        name: "depth lower bound",
        pass: false,
        detail: e.to_string(),
    }));

    let model_check = || -> Result<SelftestLine> {
        let dom = Domain::model(2, &[1.0], &[0.0], 1.0)?;
        let p = domains::ModelParams::new(&[1.0], &[0.0], 1.0)?;
        let smp = pp::SourceSample {
            points: vec![CVec::zero(2)],
            sizes: vec![0.08],
            delta_min: 0.08,
            delta_max: 0.08,
            n_param: 2,
            law: ProcessLaw::Binomial,
            stream: 1,
        };
        let mut stream = RngStream::new(seed, 4);
        let est = estimate::union_cut_volume_mc(&dom, &smp, 150_000, &mut stream)?;
        let exact = domains::model_cut_volume(&p, 2, 0.08)?;
        Ok(SelftestLine {
            name: "model cut volume vs mc",
            pass: (est.value - exact).abs() < 4.0 * est.se,
            detail: format!("mc {:.6e} vs exact {:.6e} (se {:.1e})", est.value, exact, est.se),
        })
    };
    out.push(model_check().unwrap_or_else(|e| SelftestLine {
        name: "model cut volume vs mc",
        pass: false,
        detail: e.to_string(),
    }));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
[experiment]
name = "tiny"
domain = "ball(2)"
law = "binomial"
ns = [120, 240]
reps = 3
mc_budget = 2000
seed = "0xc0ffee"

[g]
kind = "const"
c = 3.0
"#;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(TOML).unwrap();
        assert_eq!(cfg.experiment.ns, vec![120, 240]);
        assert_eq!(cfg.seed().unwrap(), 0xc0ffee);
        assert!(matches!(cfg.density().unwrap(), DensitySpec::Uniform));
        assert_eq!(cfg.law().unwrap(), ProcessLaw::Binomial);
        let opts = cfg.coverage_options();
        assert_eq!(opts.net_factor, CoverageOptions::default().net_factor);
    }

    #[test]
    fn config_rejects_bad_fields() {
        assert!(ExperimentConfig::from_toml(&TOML.replace("binomial", "magic")).is_err());
        assert!(ExperimentConfig::from_toml(&TOML.replace("0xc0ffee", "not-hex")).is_err());
        assert!(ExperimentConfig::from_toml(&TOML.replace("ball(2)", "torus")).is_err());
        assert!(ExperimentConfig::from_toml(&TOML.replace("reps = 3", "reps = 0")).is_err());
        let err = ExperimentConfig::from_toml(&TOML.replace("c = 3.0", "c = -1.0"))
            .err()
            .unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn seed_parsing_accepts_hex_forms() {
        assert_eq!(parse_seed("0xff").unwrap(), 255);
        assert_eq!(parse_seed("FF").unwrap(), 255);
        assert_eq!(parse_seed("0x00000000000000000000000000000001").unwrap(), 1);
        assert!(parse_seed("0x").is_err());
        assert!(parse_seed("0x123456789012345678901234567890123").is_err());
    }

    #[test]
    fn fit_rate_recovers_a_synthetic_power_law() {
        let pts: Vec<(f64, f64)> = [100.0, 400.0, 1600.0, 6400.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.ln().powf(0.7) * n.powf(-1.5)))
            .collect();
        let fit = fit_rate(&pts, 0.7).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-9, "slope {}", fit.slope);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-9);
        assert!(fit_rate(&pts[..1], 0.7).is_err());
        assert!(fit_rate(&[(100.0, 1.0), (200.0, -1.0)], 0.0).is_err());
    }

    #[test]
    fn normal_quantile_inverts_the_cdf() {
        for &p in &[0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999] {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() < 1e-6, "p = {p}");
        }
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn ks_statistic_separates_null_from_shifted() {
        let mut stream = RngStream::new(11, 0);
        let null: Vec<f64> = (0..400).map(|_| stream.gaussian()).collect();
        let ks0 = ks_to_standard_normal(&null).unwrap();
        assert!(ks0 < 0.08, "null ks {ks0}");
        // studentizing removes location and scale, so distort the shape
        let skewed: Vec<f64> = null.iter().map(|x| x.exp()).collect();
        let ks1 = ks_to_standard_normal(&skewed).unwrap();
        assert!(ks1 > 2.0 * ks0, "skewed ks {ks1} vs null {ks0}");
        let w = w1_to_standard_normal(&null).unwrap();
        assert!(w < 0.12, "null w1 {w}");
    }

    #[test]
    fn tiny_experiment_runs_and_roundtrips() {
        let cfg = ExperimentConfig::from_toml(TOML).unwrap();
        let out = run_experiment(&cfg, 1, true).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.records.iter().all(|r| r.verdict == "covered"));
        assert_eq!(out.summaries.len(), 2);
        for s in &out.summaries {
            assert_eq!(s.cover_freq, 1.0);
            assert!(s.mean.is_finite() && s.mean > 0.0);
        }
        // reruns are bit-identical apart from timings
        let again = run_experiment(&cfg, 1, true).unwrap();
        for (a, b) in out.records.iter().zip(&again.records) {
            assert_eq!((a.n, a.rep, &a.verdict, a.delta_v, a.scaled, a.points),
                       (b.n, b.rep, &b.verdict, b.delta_v, b.scaled, b.points));
        }

        let dir = tempfile::tempdir().unwrap();
        emit_outputs(dir.path(), &out).unwrap();
        let back = analyze_dir(dir.path()).unwrap();
        assert_eq!(back.records, out.records);
        assert_eq!(back.meta.ns, out.meta.ns);
        for (a, b) in back.summaries.iter().zip(&out.summaries) {
            assert_eq!(a.n, b.n);
            assert!((a.mean - b.mean).abs() < 1e-15 || (a.mean.is_nan() && b.mean.is_nan()));
        }
        for f in ["meta.json", "replications.csv", "summary.csv", "summary.json", "rate.svg", "variance.svg", "qq.svg"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
    }
}
