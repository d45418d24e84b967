//! Waveform catalog: generalized-FM chirps and polyphase codes as
//! unit-energy complex envelopes, plus matched filtering.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Default number of samples per envelope.
pub const DEFAULT_SAMPLES: usize = 1024;

/// Generating parameters of one catalog waveform.
#[derive(Debug, Clone, PartialEq)]
pub enum WaveformSpec {
    /// Linear FM, phase `2π b x²`.
    Lfm { fm_rate: f64 },
    /// Exponential FM, phase `2π b (e^{αx} − 1)/(e^α − 1)`.
    ExpFm { fm_rate: f64, alpha: f64 },
    /// Zadoff-Chu sequence of the given length and root.
    ZadoffChu { code_length: usize, root: usize },
    /// Frank code; `code_length` must be a perfect square.
    Frank { code_length: usize },
}

impl WaveformSpec {
    /// Short identifier used in CSV output and on the command line.
    pub fn label(&self) -> String {
        match self {
            WaveformSpec::Lfm { .. } => "lfm".into(),
            WaveformSpec::ExpFm { alpha, .. } => format!("expfm-{alpha}"),
            WaveformSpec::ZadoffChu { code_length, .. } => format!("zc-{code_length}"),
            WaveformSpec::Frank { code_length } => format!("frank-{code_length}"),
        }
    }

    /// Chip phases of a phase-coded waveform; `None` for chirps.
    pub fn phase_code(&self) -> Option<Result<Vec<f64>>> {
        match *self {
            WaveformSpec::ZadoffChu { code_length, root } => {
                Some(zadoff_chu_phases(code_length, root))
            }
            WaveformSpec::Frank { code_length } => Some(frank_phases(code_length)),
            _ => None,
        }
    }
}

impl fmt::Display for WaveformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The five-waveform library: LFM, ExpFM α=2.8, ExpFM α=5, ZC-1024, Frank-144.
///
/// Chirps use `b = n_samples / 2`, a total phase sweep of `π·n_samples`.
pub fn default_catalog(n_samples: usize) -> Vec<WaveformSpec> {
    let fm_rate = n_samples as f64 / 2.0;
    vec![
        WaveformSpec::Lfm { fm_rate },
        WaveformSpec::ExpFm {
            fm_rate,
            alpha: 2.8,
        },
        WaveformSpec::ExpFm { fm_rate, alpha: 5.0 },
        WaveformSpec::ZadoffChu {
            code_length: 1024,
            root: 1,
        },
        WaveformSpec::Frank { code_length: 144 },
    ]
}

/// Parse a catalog label (`lfm`, `expfm-2.8`, `expfm-5`, `zc`, `frank`, ...).
pub fn spec_from_label(label: &str, n_samples: usize) -> Result<WaveformSpec> {
    let fm_rate = n_samples as f64 / 2.0;
    let lower = label.to_ascii_lowercase();
    let parse_num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidInput(format!("bad waveform parameter in `{label}`")))
    };
    let spec = if lower == "lfm" {
        WaveformSpec::Lfm { fm_rate }
    } else if let Some(a) = lower.strip_prefix("expfm-") {
        WaveformSpec::ExpFm {
            fm_rate,
            alpha: parse_num(a)?,
        }
    } else if lower == "zc" {
        WaveformSpec::ZadoffChu {
            code_length: 1024,
            root: 1,
        }
    } else if let Some(n) = lower.strip_prefix("zc-") {
        WaveformSpec::ZadoffChu {
            code_length: parse_num(n)? as usize,
            root: 1,
        }
    } else if lower == "frank" {
        WaveformSpec::Frank { code_length: 144 }
    } else if let Some(n) = lower.strip_prefix("frank-") {
        WaveformSpec::Frank {
            code_length: parse_num(n)? as usize,
        }
    } else {
        return Err(Error::InvalidInput(format!("unknown waveform `{label}`")));
    };
    Ok(spec)
}

/// Unit-energy complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    samples: Vec<Complex64>,
    /// Pulse duration in seconds; informational only.
    pub duration: f64,
}

impl ComplexEnvelope {
    /// Normalize `samples` to unit energy.
    pub fn from_samples(samples: Vec<Complex64>, duration: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let energy: f64 = samples.iter().map(|s| s.norm_sqr()).sum();
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(Error::InvalidInput("envelope has no energy".into()));
        }
        let scale = energy.sqrt().recip();
        let samples = samples.into_iter().map(|s| s * scale).collect();
        Ok(Self { samples, duration })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn zadoff_chu_phases(length: usize, root: usize) -> Result<Vec<f64>> {
    if length == 0 || root == 0 || root >= length.max(2) || gcd(root, length) != 1 {
        return Err(Error::UnsupportedLength(format!(
            "Zadoff-Chu root {root} is not coprime with length {length}"
        )));
    }
    let n = length as f64;
    let cf = (length % 2) as f64;
    let r = root as f64;
    Ok((0..length)
        .map(|k| {
            let k = k as f64;
            -PI * r * k * (k + cf) / n
        })
        .collect())
}

fn frank_phases(length: usize) -> Result<Vec<f64>> {
    let m = (length as f64).sqrt().round() as usize;
    if length == 0 || m * m != length {
        return Err(Error::UnsupportedLength(format!(
            "Frank code length {length} is not a perfect square"
        )));
    }
    let step = 2.0 * PI / m as f64;
    Ok((0..m)
        .flat_map(|i| (0..m).map(move |j| step * (i * j) as f64))
        .collect())
}

/// Sample the waveform described by `spec` on `n_samples` points.
///
/// Phase codes hold each chip for `⌊n_samples / code_length⌋` samples, so
/// the envelope may be shorter than `n_samples`.
pub fn make_envelope(spec: &WaveformSpec, n_samples: usize) -> Result<ComplexEnvelope> {
    if n_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let duration = 1.0;
    let chirp = |phase: &dyn Fn(f64) -> f64| {
        let n = n_samples as f64;
        (0..n_samples)
            .map(|k| Complex64::from_polar(1.0, phase(k as f64 / n)))
            .collect::<Vec<_>>()
    };
    let samples = match *spec {
        WaveformSpec::Lfm { fm_rate } => chirp(&|x| 2.0 * PI * fm_rate * x * x),
        WaveformSpec::ExpFm { fm_rate, alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::InvalidInput(format!("ExpFM alpha must be > 0, got {alpha}")));
            }
            let span = alpha.exp_m1();
            chirp(&|x| 2.0 * PI * fm_rate * (alpha * x).exp_m1() / span)
        }
        WaveformSpec::ZadoffChu { code_length, .. } | WaveformSpec::Frank { code_length } => {
            let phases = spec.phase_code().expect("phase-coded spec")?;
            if n_samples < code_length {
                return Err(Error::UnsupportedLength(format!(
                    "{n_samples} samples cannot hold {code_length} chips"
                )));
            }
            let per_chip = n_samples / code_length;
            phases
                .iter()
                .flat_map(|&p| std::iter::repeat_n(Complex64::from_polar(1.0, p), per_chip))
                .collect()
        }
    };
    ComplexEnvelope::from_samples(samples, duration)
}

/// `R(τ) = Σ s[k]·conj(s[(k+τ) mod N])`
pub fn cyclic_autocorrelation(e: &ComplexEnvelope, lag: isize) -> Complex64 {
    let s = e.samples();
    let n = s.len() as isize;
    let shift = lag.rem_euclid(n) as usize;
    s.iter()
        .enumerate()
        .map(|(k, a)| a * s[(k + shift) % s.len()].conj())
        .sum()
}

/// Aperiodic autocorrelation `Σ_m conj(s[m]) s[m + τ]` for `τ ∈ [0, max_lag]`.
pub fn aperiodic_autocorrelation(e: &ComplexEnvelope, max_lag: usize) -> Vec<Complex64> {
    let s = e.samples();
    (0..=max_lag)
        .map(|tau| {
            if tau >= s.len() {
                return Complex64::new(0.0, 0.0);
            }
            s[..s.len() - tau]
                .iter()
                .zip(&s[tau..])
                .map(|(a, b)| a.conj() * b)
                .sum()
        })
        .collect()
}

/// Full linear correlation of `rx` against `tx`, i.e. convolution with
/// `conj(tx[−t])`. Output length is `len(rx) + len(tx) − 1`; a copy of
/// `tx` aligned at the start of `rx` peaks at index `len(tx) − 1`.
pub fn matched_filter(tx: &ComplexEnvelope, rx: &[Complex64]) -> Result<Vec<Complex64>> {
    correlate(tx.samples(), rx)
}

pub(crate) fn correlate(tx: &[Complex64], rx: &[Complex64]) -> Result<Vec<Complex64>> {
    if tx.is_empty() || rx.is_empty() {
        return Err(Error::EmptyInput);
    }
    let out_len = rx.len() + tx.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let zero = Complex64::new(0.0, 0.0);
    let mut a = vec![zero; size];
    a[..rx.len()].copy_from_slice(rx);
    let mut b = vec![zero; size];
    for (dst, src) in b.iter_mut().zip(tx.iter().rev()) {
        *dst = src.conj();
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a.truncate(out_len);
    for x in &mut a {
        *x *= scale;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_correlate(tx: &[Complex64], rx: &[Complex64]) -> Vec<Complex64> {
        let lt = tx.len();
        let mut out = vec![Complex64::new(0.0, 0.0); rx.len() + lt - 1];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, r) in rx.iter().enumerate() {
                // tx index m with i = j + (lt - 1 - m)
                let m = j as isize + lt as isize - 1 - i as isize;
                if (0..lt as isize).contains(&m) {
                    *o += r * tx[m as usize].conj();
                }
            }
        }
        out
    }

    fn random_complex(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn catalog_is_five_distinct_unit_energy_envelopes() {
        let cat = default_catalog(DEFAULT_SAMPLES);
        assert_eq!(cat.len(), 5);
        for (i, a) in cat.iter().enumerate() {
            for b in &cat[i + 1..] {
                assert_ne!(a, b);
            }
            let e = make_envelope(a, DEFAULT_SAMPLES).unwrap();
            assert!((e.energy() - 1.0).abs() < 1e-9, "{a}");
        }
    }

    #[test]
    fn frank_first_row_is_zero_phase() {
        let spec = WaveformSpec::Frank { code_length: 144 };
        let phases = spec.phase_code().unwrap().unwrap();
        assert_eq!(phases.len(), 144);
        assert!(phases[..12].iter().all(|&p| p == 0.0));
        // φ_{i,j} = (2π/12)(i−1)(j−1)
        assert!((phases[12 + 5] - 2.0 * PI / 12.0 * 5.0).abs() < 1e-15);
        let e = make_envelope(&spec, 1024).unwrap();
        assert_eq!(e.len(), 144 * 7);
    }

    #[test]
    fn unsupported_lengths() {
        assert!(matches!(
            make_envelope(&WaveformSpec::Frank { code_length: 150 }, 1024),
            Err(Error::UnsupportedLength(_))
        ));
        assert!(matches!(
            make_envelope(
                &WaveformSpec::ZadoffChu {
                    code_length: 1024,
                    root: 2
                },
                1024
            ),
            Err(Error::UnsupportedLength(_))
        ));
    }

    #[test]
    fn phase_codes_are_constant_modulus() {
        for spec in [
            WaveformSpec::ZadoffChu {
                code_length: 1024,
                root: 1,
            },
            WaveformSpec::ZadoffChu {
                code_length: 139,
                root: 5,
            },
            WaveformSpec::Frank { code_length: 144 },
        ] {
            let e = make_envelope(&spec, 1024).unwrap();
            let m0 = e.samples()[0].norm();
            assert!(e.samples().iter().all(|s| (s.norm() - m0).abs() < 1e-12));
        }
    }

    #[test]
    fn zadoff_chu_has_ideal_cyclic_autocorrelation() {
        let e = make_envelope(
            &WaveformSpec::ZadoffChu {
                code_length: 1024,
                root: 1,
            },
            1024,
        )
        .unwrap();
        assert!((cyclic_autocorrelation(&e, 0) - 1.0).norm() < 1e-9);
        assert!(cyclic_autocorrelation(&e, 17).norm() < 1e-9);
    }

    #[test]
    fn frank_cyclic_autocorrelation_matches_double_loop() {
        let e = make_envelope(&WaveformSpec::Frank { code_length: 144 }, 144).unwrap();
        let s = e.samples();
        let n = s.len();
        let mut direct = Complex64::new(0.0, 0.0);
        for k in 0..n {
            for j in 0..n {
                if j == (k + 1) % n {
                    direct += s[k] * s[j].conj();
                }
            }
        }
        assert!((cyclic_autocorrelation(&e, 1) - direct).norm() < 1e-12);
    }

    #[test]
    fn lfm_instantaneous_frequency_is_affine() {
        let n = 1024;
        let spec = WaveformSpec::Lfm {
            fm_rate: n as f64 / 2.0,
        };
        let e = make_envelope(&spec, n).unwrap();
        // unwrap discrete phase increments
        let inc: Vec<f64> = e
            .samples()
            .windows(2)
            .map(|w| (w[1] * w[0].conj()).arg().rem_euclid(2.0 * PI))
            .collect();
        let second: Vec<f64> = inc.windows(2).map(|w| w[1] - w[0]).collect();
        // stay clear of the wrap at 2π near the end of the sweep
        let usable = &second[..n - 20];
        let c = usable[0];
        assert!(usable.iter().all(|d| (d - c).abs() < 1e-6));
    }

    #[test]
    fn matched_filter_peak_and_shift() {
        for spec in default_catalog(1024) {
            let e = make_envelope(&spec, 1024).unwrap();
            let y = matched_filter(&e, e.samples()).unwrap();
            assert_eq!(y.len(), 2 * e.len() - 1);
            assert!((y[e.len() - 1] - 1.0).norm() < 1e-9);

            let mut delayed = vec![Complex64::new(0.0, 0.0); 13];
            delayed.extend_from_slice(e.samples());
            let y = matched_filter(&e, &delayed).unwrap();
            let peak = (0..y.len())
                .max_by(|&a, &b| y[a].norm_sqr().total_cmp(&y[b].norm_sqr()))
                .unwrap();
            assert_eq!(peak, e.len() - 1 + 13);
        }
    }

    #[test]
    fn matched_filter_matches_naive_correlation_of_convolved_echo() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = make_envelope(&WaveformSpec::Frank { code_length: 144 }, 1024).unwrap();
        let h = random_complex(8, &mut rng);
        let mut rx = vec![Complex64::new(0.0, 0.0); e.len() + h.len() - 1];
        for (i, s) in e.samples().iter().enumerate() {
            for (j, t) in h.iter().enumerate() {
                rx[i + j] += s * t;
            }
        }
        let fast = matched_filter(&e, &rx).unwrap();
        let slow = naive_correlate(e.samples(), &rx);
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "max error {err}");
    }

    #[test]
    fn matched_filter_swap_is_reversed_conjugate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_complex(64, &mut rng);
        let b = random_complex(64, &mut rng);
        let ab = correlate(&a, &b).unwrap();
        let ba = correlate(&b, &a).unwrap();
        for (x, y) in ab.iter().zip(ba.iter().rev()) {
            assert!((x - y.conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn matched_filter_empty_input() {
        let e = make_envelope(&WaveformSpec::Lfm { fm_rate: 4.0 }, 8).unwrap();
        assert!(matches!(matched_filter(&e, &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn labels_round_trip() {
        for spec in default_catalog(DEFAULT_SAMPLES) {
            assert_eq!(spec_from_label(&spec.label(), DEFAULT_SAMPLES).unwrap(), spec);
        }
    }
}
