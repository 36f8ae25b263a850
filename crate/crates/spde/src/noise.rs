//! Wiener increments for the driving channels.
//!
//! Increments are produced by a counter-based stream keyed by
//! `(seed, sample_id, step, channel)`, so generation order is
//! irrelevant and Monte Carlo workers reproduce identical paths under
//! any execution schedule. Normal deviates come from a fixed-precision
//! rational approximation of the inverse normal CDF (AS 241), so runs
//! agree to the last bit across platforms.
//!
//! A path stores both its increments and the cumulative values
//! `w_0 = 0, w_1, ..., w_n` built by one ascending fold. Coarsening
//! subsamples the cumulative values and re-derives increments from
//! them, which makes ladders telescope bit-exactly:
//! `coarsen(coarsen(p, 2), 2)` and `coarsen(p, 4)` are identical arrays.

use crate::error::{Error, Result};
use std::io::{Read, Write};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_SALT: u64 = 0x6a09_e667_f3bc_c909;
const AUX_SALT: u64 = 0x517c_c1b7_2722_0a95;

/// SplitMix64 finalizer; a bijective 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter value for one `(seed, stream, step, channel)` cell.
///
/// The components are folded sequentially through the mixer, so the
/// mapping is order-sensitive in each component.
#[inline]
fn counter_bits(seed: u64, stream: u64, step: u64, channel: u64) -> u64 {
    let mut h = seed ^ SEED_SALT;
    for v in [stream, step, channel] {
        h = mix64(h.wrapping_add(GOLDEN).wrapping_add(v));
    }
    h
}

/// Uniform deviate in the open interval (0, 1) from 64 random bits.
#[inline]
fn uniform_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0) // 2^-53
}

/// Inverse of the standard normal CDF, algorithm AS 241 (PPND16).
///
/// Rational approximations on three ranges; absolute error below
/// 1e-15 over (0, 1). Coefficients are the published double-precision
/// constants, kept at their full printed length.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_3e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Stream id for the `inner`-th auxiliary-noise path of a sample.
///
/// The top bit is set, keeping auxiliary streams disjoint from ordinary
/// sample ids (which should stay below 2^63, as plain sample indices do).
pub fn aux_stream(sample_id: u64, inner: u64) -> u64 {
    0x8000_0000_0000_0000 | (mix64(sample_id ^ mix64(inner ^ AUX_SALT)) >> 1)
}

/// Wiener increments `xi_i^k = w^k_{i tau} - w^k_{(i-1) tau}` for `n`
/// steps of size `tau` over `channels` independent channels, plus the
/// cumulative path values. Immutable after creation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    n: usize,
    tau: f64,
    channels: usize,
    seed: u64,
    sample_id: u64,
    /// `n x channels`, row-major by step.
    increments: Vec<f64>,
    /// `(n + 1) x channels` cumulative values, `values[0..channels] = 0`.
    values: Vec<f64>,
    /// Fingerprint of the finest ancestor in a coarsening ladder.
    origin: u64,
}

impl NoisePath {
    /// Draws `n * channels` increments distributed N(0, tau) from the
    /// counter stream. Steps are keyed 1-based to match `xi_i`.
    pub fn generate(
        seed: u64,
        sample_id: u64,
        n: usize,
        tau: f64,
        channels: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("noise path needs at least one step".into()));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!(
                "step size must be positive, got {tau}"
            )));
        }
        if channels == 0 {
            return Err(Error::Domain(
                "noise path needs at least one channel".into(),
            ));
        }
        let sqrt_tau = tau.sqrt();
        let mut increments = Vec::with_capacity(n * channels);
        for step in 1..=n {
            for channel in 0..channels {
                let bits = counter_bits(seed, sample_id, step as u64, channel as u64);
                increments.push(sqrt_tau * inverse_normal_cdf(uniform_open(bits)));
            }
        }
        let values = cumulative(&increments, n, channels);
        let mut path = Self {
            n,
            tau,
            channels,
            seed,
            sample_id,
            increments,
            values,
            origin: 0,
        };
        path.origin = path.fingerprint();
        Ok(path)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample_id(&self) -> u64 {
        self.sample_id
    }

    /// Increment `xi_{i+1}^k` for 0-based step `i`.
    #[inline]
    pub fn increment(&self, step: usize, channel: usize) -> f64 {
        self.increments[step * self.channels + channel]
    }

    /// All channel increments of 0-based step `i`.
    #[inline]
    pub fn step_row(&self, step: usize) -> &[f64] {
        &self.increments[step * self.channels..(step + 1) * self.channels]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Cumulative path values `w_{i tau}` (prefix sums in index order,
    /// `w_0 = 0`), laid out `(n + 1) x channels` row-major.
    pub fn path_values(&self) -> &[f64] {
        &self.values
    }

    /// `w^k` at time index `i` (0-based, `i <= n`).
    #[inline]
    pub fn value(&self, i: usize, channel: usize) -> f64 {
        self.values[i * self.channels + channel]
    }

    pub fn value_row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Sums groups of `factor` increments into one path with `n /
    /// factor` steps of size `factor * tau`, by subsampling the
    /// cumulative values. `factor` must be a power of two dividing `n`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::Domain(format!(
                "coarsening factor must be a power of two, got {factor}"
            )));
        }
        if self.n % factor != 0 {
            return Err(Error::Domain(format!(
                "coarsening factor {factor} does not divide path length {}",
                self.n
            )));
        }
        let n = self.n / factor;
        let c = self.channels;
        let mut values = Vec::with_capacity((n + 1) * c);
        for j in 0..=n {
            values.extend_from_slice(self.value_row(j * factor));
        }
        let mut increments = Vec::with_capacity(n * c);
        for j in 1..=n {
            for k in 0..c {
                increments.push(values[j * c + k] - values[(j - 1) * c + k]);
            }
        }
        Ok(Self {
            n,
            tau: self.tau * factor as f64,
            channels: c,
            seed: self.seed,
            sample_id: self.sample_id,
            increments,
            values,
            origin: self.origin,
        })
    }

    /// FNV-1a hash over the path header and increment bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.n as u64).to_le_bytes());
        eat(&(self.channels as u64).to_le_bytes());
        eat(&self.tau.to_bits().to_le_bytes());
        for v in &self.increments {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }

    /// Fingerprint of the finest path this one was coarsened from (its
    /// own fingerprint if it was generated directly). Ladder drivers
    /// assert this agrees across levels.
    pub fn origin_fingerprint(&self) -> u64 {
        self.origin
    }

    /// Binary dump: header `n, tau, channels, seed, sample_id` (u64/f64
    /// little-endian) followed by the increments as little-endian f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&self.tau.to_bits().to_le_bytes())?;
        w.write_all(&(self.channels as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.sample_id.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a path written by [`NoisePath::write_to`]. The cumulative
    /// values are rebuilt by an ascending fold of the stored increments,
    /// so a dumped freshly-generated path round-trips bit-exactly.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut buf8)?;
            Ok(u64::from_le_bytes(buf8))
        };
        let n = read_u64(r)? as usize;
        let tau = f64::from_bits(read_u64(r)?);
        let channels = read_u64(r)? as usize;
        let seed = read_u64(r)?;
        let sample_id = read_u64(r)?;
        if n == 0 || channels == 0 || !(tau > 0.0) {
            return Err(Error::Domain("corrupt noise path header".into()));
        }
        let mut increments = vec![0.0; n * channels];
        for v in increments.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_bits(u64::from_le_bytes(b));
        }
        let values = cumulative(&increments, n, channels);
        let mut path = Self {
            n,
            tau,
            channels,
            seed,
            sample_id,
            increments,
            values,
            origin: 0,
        };
        path.origin = path.fingerprint();
        Ok(path)
    }
}

fn cumulative(increments: &[f64], n: usize, channels: usize) -> Vec<f64> {
    let mut values = vec![0.0; (n + 1) * channels];
    for i in 0..n {
        for k in 0..channels {
            values[(i + 1) * channels + k] =
                values[i * channels + k] + increments[i * channels + k];
        }
    }
    values
}
