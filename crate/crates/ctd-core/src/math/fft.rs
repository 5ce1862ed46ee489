//! FFT-backed linear convolution of real sequences.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    // rustfft caches plans per size inside the planner; reusing one planner
    // and the scratch buffers per thread avoids re-planning and re-zeroing
    // on every time-grid point.
    static CTX: RefCell<FftCtx> = RefCell::new(FftCtx {
        planner: FftPlanner::new(),
        buf: Vec::new(),
        prod: Vec::new(),
    });
}

struct FftCtx {
    planner: FftPlanner<f64>,
    buf: Vec<Complex<f64>>,
    prod: Vec<Complex<f64>>,
}

/// Smallest 5-smooth integer >= `n`; mixed-radix transforms of such sizes
/// stay fast without padding all the way to a power of two.
fn next_fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            // Round p35 up by powers of two to reach n.
            let mut candidate = p35;
            while candidate < n {
                match candidate.checked_mul(2) {
                    Some(c) => candidate = c,
                    None => break,
                }
            }
            if candidate >= n {
                best = best.min(candidate);
            }
            match p35.checked_mul(3) {
                Some(c) => p35 = c,
                None => break,
            }
        }
        match p5.checked_mul(5) {
            Some(c) => p5 = c,
            None => break,
        }
    }
    best
}

/// Full linear convolution of `a` and `b` (output length `a.len()+b.len()-1`).
pub fn convolve_linear(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert!(!a.is_empty() && !b.is_empty());
    let out_len = a.len() + b.len() - 1;
    // Small problems are cheaper directly and avoid FFT round-off.
    if a.len().min(b.len()) <= 32 {
        return convolve_direct(a, b);
    }
    let size = next_fast_len(out_len);
    CTX.with(|ctx| {
        let ctx = &mut *ctx.borrow_mut();
        let fft = ctx.planner.plan_fft_forward(size);
        let ifft = ctx.planner.plan_fft_inverse(size);

        // Pack both real inputs into one complex transform.
        ctx.buf.clear();
        ctx.buf.resize(size, Complex::new(0.0, 0.0));
        for (slot, &v) in ctx.buf.iter_mut().zip(a) {
            slot.re = v;
        }
        for (slot, &v) in ctx.buf.iter_mut().zip(b) {
            slot.im = v;
        }
        fft.process(&mut ctx.buf);

        // With z = a + i b, A(k) = (z(k) + conj(z(-k)))/2 and
        // B(k) = (z(k) - conj(z(-k)))/(2i); store A*B for the inverse pass.
        ctx.prod.clear();
        ctx.prod.resize(size, Complex::new(0.0, 0.0));
        let combine = |zk: Complex<f64>, zmk: Complex<f64>| {
            let ak = 0.5 * (zk + zmk.conj());
            let bk = Complex::new(0.0, -0.5) * (zk - zmk.conj());
            ak * bk
        };
        ctx.prod[0] = combine(ctx.buf[0], ctx.buf[0]);
        for k in 1..=size / 2 {
            let zk = ctx.buf[k];
            let zmk = ctx.buf[size - k];
            ctx.prod[k] = combine(zk, zmk);
            if k != size - k {
                ctx.prod[size - k] = combine(zmk, zk);
            }
        }
        ifft.process(&mut ctx.prod);
        let scale = 1.0 / size as f64;
        ctx.prod[..out_len].iter().map(|c| c.re * scale).collect()
    })
}

fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fast_lengths_are_smooth_and_minimal() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(4244), 4320);
        assert_eq!(next_fast_len(4096), 4096);
        assert_eq!(next_fast_len(1001), 1024);
        for n in [17usize, 100, 997, 5000, 70001] {
            let m = next_fast_len(n);
            assert!(m >= n);
            let mut r = m;
            for p in [2usize, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            assert_eq!(r, 1, "{m} is not 5-smooth");
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let a: Vec<f64> = (0..173)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let b: Vec<f64> = (0..241)
            .map(|i| ((i * 104729) % 89) as f64 / 44.0 - 1.0)
            .collect();
        let direct = convolve_direct(&a, &b);
        let fast = convolve_linear(&a, &b);
        assert_eq!(direct.len(), fast.len());
        for (d, f) in direct.iter().zip(&fast) {
            assert_abs_diff_eq!(d, f, epsilon = 1e-9);
        }
    }

    #[test]
    fn impulse_is_identity() {
        let a = vec![0.0, 1.0, 0.0];
        let b = vec![3.0, -2.0, 5.0, 7.0];
        let out = convolve_linear(&a, &b);
        assert_eq!(out.len(), 6);
        for (k, &v) in b.iter().enumerate() {
            assert_abs_diff_eq!(out[k + 1], v, epsilon = 1e-12);
        }
    }
}
