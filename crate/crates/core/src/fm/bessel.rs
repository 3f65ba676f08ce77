//! Bessel functions of the first kind, giving FM sideband amplitudes.

/// J_n(x) by Miller's downward recurrence, normalized with
/// `J_0 + 2 Σ J_2k = 1`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if x < 0.0 {
        let v = bessel_j(n, -x);
        return if n % 2 == 1 { -v } else { v };
    }
    let order = f64::from(n).max(x);
    let mut start = (order + 20.0 + (40.0 * order).sqrt()) as u32;
    start += start % 2;

    let (mut next, mut cur) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    let mut wanted = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * f64::from(k) / x * cur - next;
        next = cur;
        cur = prev;
        // rescale to stay inside f64 range
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            wanted *= 1e-250;
        }
        let idx = k - 1;
        if idx == n {
            wanted = cur;
        }
        if idx > 0 && idx % 2 == 0 {
            norm += 2.0 * cur;
        }
    }
    norm += cur;
    if n == 0 {
        wanted = cur;
    }
    wanted / norm
}

/// Signed sideband amplitudes `J_n(I)` for `n ∈ [−n_max, n_max]`, in order.
pub fn sideband_spectrum(index: f64, n_max: u32) -> Vec<(i32, f64)> {
    let positive: Vec<f64> = (0..=n_max).map(|n| bessel_j(n, index)).collect();
    let n_max = n_max as i32;
    (-n_max..=n_max)
        .map(|n| {
            let v = positive[n.unsigned_abs() as usize];
            (n, if n < 0 && n % 2 != 0 { -v } else { v })
        })
        .collect()
}

/// Upper end of the range of modulation indices over which `J_0` falls and
/// `J_1` rises monotonically.
pub const MONOTONIC_INDEX_LIMIT: f64 = 1.83;
