//! Shared signal-processing helpers: cached FFT plans, windows, FFT convolution.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut cell = cell.borrow_mut();
        let (planner, cache) = &mut *cell;
        cache
            .entry((len, inverse))
            .or_insert_with(|| if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) })
            .clone()
    })
}

/// In-place unnormalized forward DFT.
pub fn fft(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// In-place unnormalized inverse DFT (no 1/N factor).
pub fn ifft(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Linear convolution of `a` and `b`, truncated to the first `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::default());
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::default());
    fft(&mut fa);
    fft(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    ifft(&mut fa);
    let scale = 1.0 / n as f64;
    let mut out: Vec<f64> = fa.iter().take(full.min(out_len)).map(|c| c.re * scale).collect();
    out.resize(out_len, 0.0);
    out
}

/// Direct-form truncated linear convolution; reference path for tests and tiny kernels.
pub fn direct_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, &bm) in b.iter().enumerate().take(n + 1) {
            if let Some(&av) = a.get(n - m) {
                acc += bm * av;
            }
        }
        *o = acc;
    }
    out
}

/// `out[m] = Σ_n x[n] · g[n + m]` for `m < out_len`, with `g` of length `L`.
pub fn fft_correlate(x: &[f64], g: &[f64], out_len: usize) -> Vec<f64> {
    let l = g.len();
    let g_rev: Vec<f64> = g.iter().rev().copied().collect();
    let conv = fft_convolve(&g_rev, x, l);
    (0..out_len).map(|m| if m < l { conv[l - 1 - m] } else { 0.0 }).collect()
}

/// Dense matrix product `c = a · b` with explicit row/column strides.
///
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n` row-major and is overwritten
/// (`beta = 0`) or accumulated into (`beta = 1`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let max_idx = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs
        }
    };
    assert!(a_strides.0 >= 0 && a_strides.1 >= 0 && b_strides.0 >= 0 && b_strides.1 >= 0);
    assert!(k == 0 || (max_idx(m, k, a_strides) as usize) < a.len());
    assert!(k == 0 || (max_idx(k, n, b_strides) as usize) < b.len());
    // SAFETY: the asserts above bound every index the kernel can touch inside
    // `a`, `b` and `c`; the three slices do not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
