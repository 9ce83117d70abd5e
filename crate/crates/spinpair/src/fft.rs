//! Radix-2 FFT and peak picking for echo-modulation analysis.

use num_complex::Complex64 as C64;

/// In-place radix-2 decimation-in-time FFT. Length must be a power of two.
pub fn fft_in_place(buf: &mut [C64]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    let log2n = n.trailing_zeros();

    for i in 0..n {
        let j = bit_reverse(i, log2n);
        if i < j {
            buf.swap(i, j);
        }
    }

    let mut size = 2usize;
    while size <= n {
        let half = size / 2;
        let step = -2.0 * std::f64::consts::PI / size as f64;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let w = C64::from_polar(1.0, step * k as f64);
                let even = buf[start + k];
                let odd = buf[start + k + half] * w;
                buf[start + k] = even + odd;
                buf[start + k + half] = even - odd;
            }
        }
        size <<= 1;
    }
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut out = 0usize;
    for _ in 0..bits {
        out = (out << 1) | (x & 1);
        x >>= 1;
    }
    out
}

/// Magnitude spectrum of a real series after mean subtraction and zero
/// padding to `pad_factor` times the next power of two.
///
/// Returns (frequencies, magnitudes) for the one-sided spectrum; `dt` is the
/// sample spacing and frequencies come out in its reciprocal unit.
pub fn magnitude_spectrum(samples: &[f64], dt: f64, pad_factor: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let padded = (n.next_power_of_two() * pad_factor.max(1)).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); padded];
    for (b, &s) in buf.iter_mut().zip(samples.iter()) {
        *b = C64::new(s - mean, 0.0);
    }
    fft_in_place(&mut buf);
    let half = padded / 2;
    let df = 1.0 / (padded as f64 * dt);
    let freq: Vec<f64> = (0..half).map(|k| k as f64 * df).collect();
    let magnitude: Vec<f64> = buf[..half].iter().map(|v| v.norm()).collect();
    (freq, magnitude)
}

/// Local maxima above `threshold * max_magnitude`, refined by parabolic
/// interpolation between bins and sorted by magnitude, strongest first.
pub fn find_peaks(freq: &[f64], magnitude: &[f64], threshold: f64) -> Vec<(f64, f64)> {
    let max_mag = magnitude.iter().copied().fold(0.0f64, f64::max);
    if max_mag <= 0.0 {
        return Vec::new();
    }
    let floor = threshold * max_mag;
    let df = if freq.len() > 1 { freq[1] - freq[0] } else { 1.0 };
    let mut peaks = Vec::new();
    for k in 1..magnitude.len().saturating_sub(1) {
        let (a, b, c) = (magnitude[k - 1], magnitude[k], magnitude[k + 1]);
        if b >= a && b > c && b >= floor {
            let denom = a - 2.0 * b + c;
            let (f, m) = if denom < 0.0 {
                let shift = 0.5 * (a - c) / denom;
                (freq[k] + shift * df, b - 0.25 * (a - c) * shift)
            } else {
                (freq[k], b)
            };
            peaks.push((f, m));
        }
    }
    peaks.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    peaks
}
