//! Elementwise transcendental kernels in `f64`. The LSTM cell kernel has
//! an AVX2 build selected at run time with identical results.

/// Branch-free `e^x`, accurate to a few ulp in f64 and inlinable into
/// element loops.
#[inline(always)]
pub(super) fn exp64(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 709.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let bits = (t.to_bits().wrapping_sub(SHIFT.to_bits()) as i64 + 1023) << 52;
    p * f64::from_bits(bits as u64)
}

#[inline(always)]
pub(super) fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + exp64(-x))
}

#[inline(always)]
pub(super) fn tanh64(x: f64) -> f64 {
    let a = x.abs();
    let big = 1.0 - 2.0 / (exp64(2.0 * a) + 1.0);
    let x2 = x * x;
    let small = a * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
    let m = if a < 0.03 { small } else { big };
    m.copysign(x)
}

/// LSTM cell forward over a batch. `gates [B, 4H]`, `c [B, H]`; fills
/// `saved [B, 5H]` with i, f, g, o, tanh(c') and `out [B, 2H]` with h | c'.
pub(super) fn lstm_forward(gates: &[f32], c: &[f32], h: usize, saved: &mut [f32], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected above.
        unsafe { lstm_forward_avx2(gates, c, h, saved, out) };
        return;
    }
    lstm_forward_impl(gates, c, h, saved, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn lstm_forward_avx2(gates: &[f32], c: &[f32], h: usize, saved: &mut [f32], out: &mut [f32]) {
    lstm_forward_impl(gates, c, h, saved, out);
}

#[inline(always)]
fn lstm_forward_impl(gates: &[f32], c: &[f32], h: usize, saved: &mut [f32], out: &mut [f32]) {
    let rows = gates.chunks_exact(4 * h).zip(c.chunks_exact(h));
    for ((gr, cr), (sr, or)) in rows.zip(saved.chunks_exact_mut(5 * h).zip(out.chunks_exact_mut(2 * h))) {
        for (s, &g) in sr[..2 * h].iter_mut().zip(&gr[..2 * h]) {
            *s = sigmoid64(f64::from(g)) as f32;
        }
        for (s, &g) in sr[2 * h..3 * h].iter_mut().zip(&gr[2 * h..3 * h]) {
            *s = tanh64(f64::from(g)) as f32;
        }
        for (s, &g) in sr[3 * h..4 * h].iter_mut().zip(&gr[3 * h..]) {
            *s = sigmoid64(f64::from(g)) as f32;
        }
        let (gates_s, tc) = sr.split_at_mut(4 * h);
        let (i, rest) = gates_s.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);
        let (hr, cn) = or.split_at_mut(h);
        for j in 0..h {
            let v = f64::from(f[j]) * f64::from(cr[j]) + f64::from(i[j]) * f64::from(g[j]);
            cn[j] = v as f32;
            let t = tanh64(v);
            tc[j] = t as f32;
            hr[j] = (f64::from(o[j]) * t) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_kernels_match_libm() {
        let mut x = -30.0f64;
        while x < 30.0 {
            let e = exp64(x);
            assert!((e - x.exp()).abs() <= 1e-14 * x.exp(), "exp {x}");
            assert!((tanh64(x) - x.tanh()).abs() <= 1e-14 * x.tanh().abs().max(1e-300), "tanh {x}");
            let s = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid64(x) - s).abs() <= 1e-14 * s, "sigmoid {x}");
            x += 0.000_731;
        }
        assert_eq!(exp64(-1000.0).min(1e-300), exp64(-1000.0));
        assert!(exp64(1000.0).is_finite());
        assert_eq!(tanh64(0.0), 0.0);
    }

    #[test]
    fn lstm_kernel_matches_reference() {
        let h = 5;
        let gates: Vec<f32> = (0..2 * 4 * h).map(|k| (k as f32 * 0.37).sin() * 3.0).collect();
        let c: Vec<f32> = (0..2 * h).map(|k| (k as f32 * 0.71).cos()).collect();
        let (mut saved, mut out) = (vec![0.0; 2 * 5 * h], vec![0.0; 2 * 2 * h]);
        lstm_forward(&gates, &c, h, &mut saved, &mut out);
        let sig = |v: f32| 1.0 / (1.0 + (-f64::from(v)).exp());
        for r in 0..2 {
            for j in 0..h {
                let g = &gates[r * 4 * h..];
                let cn = sig(g[h + j]) * f64::from(c[r * h + j]) + sig(g[j]) * f64::from(g[2 * h + j]).tanh();
                assert!((f64::from(out[r * 2 * h + h + j]) - cn).abs() < 1e-6);
                assert!((f64::from(out[r * 2 * h + j]) - sig(g[3 * h + j]) * cn.tanh()).abs() < 1e-6);
            }
        }
    }
}
