//! Signal preprocessing: windowed-sinc anti-aliasing FIR design, integer
//! decimation and per-channel z-scoring, plus the `SIG1` matrix format
//! (magic `SIG1`, little-endian `u32` channels, `u32` samples, then `f32`
//! samples row-major, one row per channel).

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIG_MAGIC: &[u8; 4] = b"SIG1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirSpec {
    pub taps: usize,
    /// Cutoff as a fraction of the target rate.
    pub cutoff_ratio: f64,
}

impl Default for FirSpec {
    fn default() -> Self {
        Self {
            taps: 101,
            cutoff_ratio: 0.45,
        }
    }
}

/// Hamming-windowed sinc low-pass with cutoff `cutoff_ratio · f_target`,
/// scaled to unit DC gain.
pub fn design_fir(spec: &FirSpec, f_source: f64, f_target: f64) -> Result<Vec<f64>> {
    if spec.taps == 0 || spec.taps.is_multiple_of(2) {
        return Err(Error::FilterSpec(format!(
            "taps must be odd, got {}",
            spec.taps
        )));
    }
    let cutoff = spec.cutoff_ratio * f_target;
    if !(cutoff > 0.0 && cutoff < f_source / 2.0) {
        return Err(Error::FilterSpec(format!(
            "cutoff {cutoff} Hz must lie in (0, {}) Hz",
            f_source / 2.0
        )));
    }
    let fc = cutoff / f_source;
    let m = (spec.taps - 1) as f64;
    let mut h: Vec<f64> = (0..spec.taps)
        .map(|n| {
            let t = n as f64 - m / 2.0;
            let ideal = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let window = if spec.taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos()
            };
            ideal * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= sum);
    // Enforce exact symmetry against rounding in the trigonometric terms.
    for n in 0..spec.taps / 2 {
        let avg = 0.5 * (h[n] + h[spec.taps - 1 - n]);
        h[n] = avg;
        h[spec.taps - 1 - n] = avg;
    }
    Ok(h)
}

/// |H(f)| of a coefficient vector at frequency `f` for sampling rate `fs`.
pub fn magnitude_response(h: &[f64], f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &c)| {
        (re + c * (w * n as f64).cos(), im - c * (w * n as f64).sin())
    });
    (re * re + im * im).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLeadSignal {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl MultiLeadSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Resample("sample rate must be positive".into()));
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Resample("channels differ in length".into()));
            }
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

/// Zero-padded, center-aligned convolution evaluated at every `step`-th
/// output sample.
fn filter_strided(x: &[f64], h: &[f64], step: usize) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    let n = x.len() as isize;
    (0..x.len())
        .step_by(step)
        .map(|i| {
            let i = i as isize;
            let mut acc = 0.0;
            for (k, &c) in h.iter().enumerate() {
                let j = i + half - k as isize;
                if (0..n).contains(&j) {
                    acc += c * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Filters every channel with the anti-aliasing FIR for the target rate and
/// keeps every `factor`-th sample.
pub fn decimate(
    signal: &MultiLeadSignal,
    factor: usize,
    spec: &FirSpec,
) -> Result<MultiLeadSignal> {
    if factor == 0 {
        return Err(Error::Resample(
            "decimation factor must be at least 1".into(),
        ));
    }
    let target = signal.sample_rate / factor as f64;
    let h = design_fir(spec, signal.sample_rate, target)?;
    let channels = signal
        .channels
        .par_iter()
        .map(|c| filter_strided(c, &h, factor))
        .collect();
    MultiLeadSignal::new(channels, target)
}

/// Resamples to `target_hz`, which must divide the source rate.
pub fn resample(
    signal: &MultiLeadSignal,
    target_hz: f64,
    spec: &FirSpec,
) -> Result<MultiLeadSignal> {
    let ratio = signal.sample_rate / target_hz;
    let factor = ratio.round();
    if !(target_hz > 0.0) || factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Resample(format!(
            "{} Hz -> {target_hz} Hz is not an integer decimation",
            signal.sample_rate
        )));
    }
    decimate(signal, factor as usize, spec)
}

/// Per-channel (μ, σ) over a training set of signals (population sd).
pub fn channel_stats(signals: &[MultiLeadSignal]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_ch = signals
        .first()
        .map(|s| s.channels.len())
        .ok_or(Error::EmptyInput)?;
    if signals.iter().any(|s| s.channels.len() != n_ch) {
        return Err(Error::Resample("signals differ in channel count".into()));
    }
    let mut mu = vec![0.0; n_ch];
    let mut sigma = vec![0.0; n_ch];
    for c in 0..n_ch {
        let values = || signals.iter().flat_map(|s| s.channels[c].iter().copied());
        let n = values().count() as f64;
        mu[c] = values().sum::<f64>() / n;
        sigma[c] = (values().map(|x| (x - mu[c]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok((mu, sigma))
}

/// (x − μ)/σ per channel with externally supplied statistics.
pub fn zscore(signal: &MultiLeadSignal, mu: &[f64], sigma: &[f64]) -> Result<MultiLeadSignal> {
    let n = signal.channels.len();
    if mu.len() != n || sigma.len() != n {
        return Err(Error::Resample(format!("expected {n} channel statistics")));
    }
    if let Some(c) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateChannel(c));
    }
    let channels = signal
        .channels
        .iter()
        .enumerate()
        .map(|(c, x)| x.iter().map(|v| (v - mu[c]) / sigma[c]).collect())
        .collect();
    MultiLeadSignal::new(channels, signal.sample_rate)
}

/// Inverse of [`zscore`].
pub fn unzscore(signal: &MultiLeadSignal, mu: &[f64], sigma: &[f64]) -> Result<MultiLeadSignal> {
    let channels = signal
        .channels
        .iter()
        .enumerate()
        .map(|(c, x)| x.iter().map(|v| v * sigma[c] + mu[c]).collect())
        .collect();
    MultiLeadSignal::new(channels, signal.sample_rate)
}

/// Reads a `SIG1` file; the format carries no rate, so it is supplied.
pub fn read_sig1(path: &Path, sample_rate: f64) -> Result<MultiLeadSignal> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != SIG_MAGIC {
        return Err(Error::parse(path, 0, "missing SIG1 header"));
    }
    let n_ch = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + 4 * n_ch * t;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            0,
            format!(
                "expected {expected} bytes for {n_ch}x{t} samples, found {}",
                bytes.len()
            ),
        ));
    }
    let channels = (0..n_ch)
        .map(|c| {
            (0..t)
                .map(|i| {
                    let o = 12 + 4 * (c * t + i);
                    f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64
                })
                .collect()
        })
        .collect();
    MultiLeadSignal::new(channels, sample_rate)
}

pub fn write_sig1(path: &Path, signal: &MultiLeadSignal) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(12 + 4 * signal.channels.len() * signal.n_samples());
    buf.extend_from_slice(SIG_MAGIC);
    buf.extend_from_slice(&(signal.channels.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(signal.n_samples() as u32).to_le_bytes());
    for c in &signal.channels {
        for &x in c {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Least-squares amplitude and phase-free fit of a sinusoid of known
/// frequency: returns the amplitude sqrt(a² + b²) of a·sin + b·cos (+ offset).
pub fn fit_sine_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let basis = |i: usize| {
        let w = 2.0 * PI * freq * i as f64 / fs;
        [w.sin(), w.cos(), 1.0]
    };
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (i, &v) in x.iter().enumerate() {
        let b = basis(i);
        for r in 0..3 {
            atb[r] += b[r] * v;
            for c in 0..3 {
                ata[r][c] += b[r] * b[c];
            }
        }
    }
    // 3x3 solve by Cramer's rule.
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(ata);
    let mut coef = [0.0; 2];
    for (k, c) in coef.iter_mut().enumerate() {
        let mut m = ata;
        for r in 0..3 {
            m[r][k] = atb[r];
        }
        *c = det(m) / d;
    }
    (coef[0] * coef[0] + coef[1] * coef[1]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn taps_symmetric_unit_gain() {
        let h = design_fir(&FirSpec::default(), 1000.0, 500.0).unwrap();
        assert_eq!(h.len(), 101);
        for n in 0..101 {
            assert!((h[n] - h[100 - n]).abs() <= 1e-12);
        }
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(h, design_fir(&FirSpec::default(), 1000.0, 500.0).unwrap());
    }

    #[test]
    fn stopband_attenuation() {
        let h = design_fir(&FirSpec::default(), 1000.0, 500.0).unwrap();
        let db = 20.0 * magnitude_response(&h, 0.9 * 500.0, 1000.0).log10();
        assert!(db <= -40.0, "{db} dB");
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            design_fir(
                &FirSpec {
                    taps: 100,
                    cutoff_ratio: 0.45
                },
                1000.0,
                500.0
            ),
            Err(Error::FilterSpec(_))
        ));
        assert!(matches!(
            design_fir(
                &FirSpec {
                    taps: 101,
                    cutoff_ratio: 1.2
                },
                1000.0,
                1000.0
            ),
            Err(Error::FilterSpec(_))
        ));
        let s = MultiLeadSignal::new(vec![vec![0.0; 10]], 1000.0).unwrap();
        assert!(matches!(
            resample(&s, 300.0, &FirSpec::default()),
            Err(Error::Resample(_))
        ));
    }

    #[test]
    fn constant_passes_after_settling() {
        let s = MultiLeadSignal::new(vec![vec![3.0; 600]], 1000.0).unwrap();
        let out = decimate(
            &s,
            1,
            &FirSpec {
                taps: 101,
                cutoff_ratio: 0.45,
            },
        )
        .unwrap();
        assert_eq!(out.n_samples(), 600);
        for &v in &out.channels[0][60..540] {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn passband_and_alias_suppression() {
        let s = MultiLeadSignal::new(
            vec![sine(10.0, 1000.0, 10_000), sine(480.0, 1000.0, 10_000)],
            1000.0,
        )
        .unwrap();
        let out = resample(&s, 500.0, &FirSpec::default()).unwrap();
        assert_eq!(out.sample_rate, 500.0);
        assert_eq!(out.n_samples(), 5000);
        let trim = |x: &[f64]| x[50..x.len() - 50].to_vec();
        let a10 = fit_sine_amplitude(&trim(&out.channels[0]), 10.0, 500.0);
        assert!((a10 - 1.0).abs() <= 0.01, "{a10}");
        // 480 Hz aliases to 20 Hz at 500 Hz.
        let a480 = fit_sine_amplitude(&trim(&out.channels[1]), 20.0, 500.0);
        assert!(a480 <= 0.01, "{a480}");
    }

    #[test]
    fn zscore_examples() {
        let s = MultiLeadSignal::new(vec![vec![2.0, 4.0], vec![5.0, 5.0]], 500.0).unwrap();
        let z = zscore(&s, &[3.0, 5.0], &[1.0, 2.0]).unwrap();
        assert_eq!(z.channels, vec![vec![-1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(zscore(&s, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), s);
        assert_eq!(unzscore(&z, &[3.0, 5.0], &[1.0, 2.0]).unwrap(), s);
        assert!(matches!(
            zscore(&s, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateChannel(1))
        ));
        let (mu, sd) = channel_stats(&[s]).unwrap();
        assert_eq!(mu, vec![3.0, 5.0]);
        assert_eq!(sd, vec![1.0, 0.0]);
    }

    #[test]
    fn sig1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sig");
        let s =
            MultiLeadSignal::new(vec![vec![1.5, -2.0, 0.25], vec![0.0, 3.0, 1.0]], 1000.0).unwrap();
        write_sig1(&p, &s).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SIG1");
        assert_eq!(bytes.len(), 12 + 4 * 6);
        assert_eq!(read_sig1(&p, 1000.0).unwrap(), s);
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_sig1(&p, 1000.0).is_err());
    }

    #[test]
    fn below_cutoff_frequency_preserved() {
        let s = MultiLeadSignal::new(vec![sine(37.0, 1000.0, 10_000)], 1000.0).unwrap();
        let out = resample(&s, 500.0, &FirSpec::default()).unwrap();
        let x = &out.channels[0][50..4950];
        // Scan candidate frequencies; the best fit must be within 0.1 Hz.
        let best = (0..=200)
            .map(|k| 36.0 + k as f64 * 0.01)
            .max_by(|&a, &b| {
                fit_sine_amplitude(x, a, 500.0).total_cmp(&fit_sine_amplitude(x, b, 500.0))
            })
            .unwrap();
        assert!((best - 37.0).abs() <= 0.1, "{best}");
    }
}
