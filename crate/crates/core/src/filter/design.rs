//! Chebyshev type II bandpass design.
//!
//! The analog prototype is scaled so that its half-power point sits at the
//! requested band edges, transformed lowpass → bandpass, mapped to the z-plane
//! with a prewarped bilinear transform, and factored into second-order sections.
//! Sections are what the filter runs on; the expanded transfer function is
//! available for inspection.

use std::f64::consts::PI;

use nalgebra::Complex;

use super::FilterError;

type C64 = Complex<f64>;

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, zinv: C64) -> C64 {
        let num = self.b[0] + zinv * (self.b[1] + zinv * self.b[2]);
        let den = self.a[0] + zinv * (self.a[1] + zinv * self.a[2]);
        num / den
    }
}

/// A designed causal IIR bandpass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    sections: Vec<Biquad>,
    poles: Vec<C64>,
    zeros: Vec<C64>,
    sample_rate: f64,
}

impl FilterCoefficients {
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn poles(&self) -> &[C64] {
        &self.poles
    }

    pub fn zeros(&self) -> &[C64] {
        &self.zeros
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    /// Numerator coefficients in ascending powers of `z⁻¹`.
    pub fn numerator(&self) -> Vec<f64> {
        self.sections.iter().fold(vec![1.0], |acc, s| poly_mul(&acc, &s.b))
    }

    /// Denominator coefficients in ascending powers of `z⁻¹`; `a[0] = 1`.
    pub fn denominator(&self) -> Vec<f64> {
        self.sections.iter().fold(vec![1.0], |acc, s| poly_mul(&acc, &s.a))
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> C64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        let zinv = C64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(C64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    /// Forward-only filtering from a zero initial state (transposed direct
    /// form II per section).
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b[0] * x + z1;
                z1 = s.b[1] * x - s.a[1] * y + z2;
                z2 = s.b[2] * x - s.a[2] * y;
                *v = y;
            }
        }
        out
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Analog Chebyshev II lowpass prototype with the stopband edge at 1 rad/s.
fn prototype(order: usize, atten_db: f64) -> (Vec<C64>, Vec<C64>, f64) {
    let n = order as f64;
    let delta = (10f64.powf(atten_db / 10.0) - 1.0).sqrt();
    let mu = delta.asinh() / n;
    let ms: Vec<f64> = (0..order).map(|k| -n + 1.0 + 2.0 * k as f64).collect();
    let zeros: Vec<C64> = ms
        .iter()
        .filter(|&&m| m != 0.0)
        .map(|&m| C64::new(0.0, 1.0 / (m * PI / (2.0 * n)).sin()))
        .collect();
    let poles: Vec<C64> = ms
        .iter()
        .map(|&m| {
            let p = -C64::from_polar(1.0, PI * m / (2.0 * n));
            let p = C64::new(mu.sinh() * p.re, mu.cosh() * p.im);
            1.0 / p
        })
        .collect();
    let num: C64 = poles.iter().map(|p| -p).product();
    let den: C64 = zeros.iter().map(|z| -z).product();
    (zeros, poles, (num / den).re)
}

/// Prototype frequency (relative to the stopband edge) where the response is
/// 3 dB down.
fn half_power_frequency(order: usize, atten_db: f64) -> f64 {
    let delta = (10f64.powf(atten_db / 10.0) - 1.0).sqrt();
    1.0 / (delta.acosh() / order as f64).cosh()
}

fn is_real(c: &C64) -> bool {
    c.im.abs() <= 1e-12 * c.norm().max(1.0)
}

/// Groups conjugate-symmetric roots into quadratic factors `[1, c1, c2]`
/// (coefficients of `1 + c1 z⁻¹ + c2 z⁻²`), keeping a representative root.
fn quadratic_units(roots: &[C64]) -> Vec<([f64; 3], Vec<C64>)> {
    let mut units = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for r in roots {
        if is_real(r) {
            reals.push(r.re);
        } else if r.im > 0.0 {
            units.push(([1.0, -2.0 * r.re, r.norm_sqr()], vec![*r, r.conj()]));
        }
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        match pair {
            [x, y] => units.push(([1.0, -(x + y), x * y], vec![C64::new(*x, 0.0), C64::new(*y, 0.0)])),
            [x] => units.push(([1.0, -x, 0.0], vec![C64::new(*x, 0.0)])),
            _ => unreachable!(),
        }
    }
    units
}

/// Chebyshev II bandpass whose half-power edges are `low_hz` and `high_hz`.
/// `order` is the prototype order; the digital filter has order `2·order`.
pub fn design_bandpass(
    band: (f64, f64),
    sample_rate: f64,
    order: usize,
    atten_db: f64,
) -> Result<FilterCoefficients, FilterError> {
    let (low, high) = band;
    let nyquist = sample_rate / 2.0;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(FilterError::InvalidSampleRate(sample_rate));
    }
    if !(low.is_finite() && high.is_finite() && 0.0 < low && low < high && high < nyquist) {
        return Err(FilterError::InvalidBand { low, high, nyquist });
    }
    if order == 0 || order > 16 {
        return Err(FilterError::InvalidOrder(order));
    }
    if !(atten_db.is_finite() && atten_db > 0.0) {
        return Err(FilterError::InvalidAttenuation(atten_db));
    }

    let (z, p, k) = prototype(order, atten_db);
    let w3 = half_power_frequency(order, atten_db);
    let (z, p) = (
        z.into_iter().map(|v| v / w3).collect::<Vec<_>>(),
        p.into_iter().map(|v| v / w3).collect::<Vec<_>>(),
    );
    let k = k * w3.powi(z.len() as i32 - p.len() as i32);

    // Prewarped analog edges.
    let fs2 = 2.0 * sample_rate;
    let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
    let (w_lo, w_hi) = (warp(low), warp(high));
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();

    // Lowpass → bandpass.
    let lp2bp = |r: &C64| {
        let half = r * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        [half + disc, half - disc]
    };
    let degree = p.len() - z.len();
    let mut z_bp: Vec<C64> = z.iter().flat_map(lp2bp).collect();
    z_bp.extend(std::iter::repeat_n(C64::new(0.0, 0.0), degree));
    let p_bp: Vec<C64> = p.iter().flat_map(lp2bp).collect();
    let k_bp = k * bw.powi(degree as i32);

    // Bilinear transform.
    let bilinear = |r: &C64| (fs2 + r) / (fs2 - r);
    let mut z_d: Vec<C64> = z_bp.iter().map(bilinear).collect();
    let p_d: Vec<C64> = p_bp.iter().map(bilinear).collect();
    let num: C64 = z_bp.iter().map(|r| fs2 - r).product();
    let den: C64 = p_bp.iter().map(|r| fs2 - r).product();
    let k_d = k_bp * (num / den).re;
    z_d.extend(std::iter::repeat_n(C64::new(-1.0, 0.0), p_d.len() - z_d.len()));

    if let Some(bad) = p_d.iter().find(|r| r.norm().is_nan() || r.norm() >= 1.0) {
        return Err(FilterError::UnstableDesign {
            pole_magnitude: bad.norm(),
        });
    }

    // Second-order sections: poles nearest the unit circle first, each taking
    // the closest remaining zero pair.
    let mut pole_units = quadratic_units(&p_d);
    pole_units.sort_by(|a, b| {
        let ma = a.1.iter().map(|r| r.norm()).fold(0.0, f64::max);
        let mb = b.1.iter().map(|r| r.norm()).fold(0.0, f64::max);
        mb.total_cmp(&ma)
    });
    let mut zero_units = quadratic_units(&z_d);
    let centre = 2.0 * PI * (low * high).sqrt() / sample_rate;
    let zinv = C64::from_polar(1.0, -centre);
    let mut sections = Vec::with_capacity(pole_units.len());
    for (a, proots) in &pole_units {
        let rep = proots[0];
        let (best, _) = zero_units
            .iter()
            .enumerate()
            .map(|(i, (_, zr))| (i, zr.iter().map(|r| (r - rep).norm()).fold(f64::INFINITY, f64::min)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .ok_or(FilterError::UnstableDesign {
                pole_magnitude: f64::NAN,
            })?;
        let (b, _) = zero_units.swap_remove(best);
        sections.push(Biquad { b, a: *a });
    }
    // Unit gain per section at the band centre, with the residual gain folded
    // into the first section so the product equals k_d exactly.
    let mut rest = 1.0;
    for s in sections.iter_mut().skip(1) {
        let g = 1.0 / s.response(zinv).norm();
        s.b.iter_mut().for_each(|c| *c *= g);
        rest *= g;
    }
    if let Some(first) = sections.first_mut() {
        let g = k_d / rest;
        first.b.iter_mut().for_each(|c| *c *= g);
    }

    Ok(FilterCoefficients {
        sections,
        poles: p_d,
        zeros: z_d,
        sample_rate,
    })
}
