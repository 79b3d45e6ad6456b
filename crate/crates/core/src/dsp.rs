//! Small filtering helpers: FFT convolution and windowed-sinc FIR design.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Full linear convolution, `len(a) + len(b) - 1` samples.
pub fn fft_convolve(a: &[f32], b: &[f32]) -> Vec<f32> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |x: &[f32]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (d, &s) in buf.iter_mut().zip(x) {
            d.re = s as f64;
        }
        buf
    };
    let mut fa = load(a);
    let mut fb = load(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| (c.re / n as f64) as f32).collect()
}

/// Linear-phase low-pass FIR (Blackman-windowed sinc), unity DC gain.
/// `cutoff` is in Hz; `taps` should be odd.
pub fn lowpass_fir(cutoff: f64, sample_rate: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff / sample_rate;
    let m = (taps - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let x = i as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / m).cos() + 0.08 * (4.0 * PI * i as f64 / m).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase filtering with an odd-length symmetric FIR: output is aligned
/// with the input and has the same length.
pub fn filter_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &c) in h.iter().enumerate() {
                let j = i + half - k as isize;
                if j >= 0 && j < n {
                    acc += c * x[j as usize];
                }
            }
            acc
        })
        .collect()
}
