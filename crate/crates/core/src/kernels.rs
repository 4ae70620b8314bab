//! Elementwise kernels for the batched network path.
//!
//! `f64::tanh` goes through libm one value at a time and dominates training time.
//! The version here is branch-free so it vectorizes; it is compiled for AVX-512 and
//! AVX2 and picked at runtime. No fused multiply-adds are used, so every variant
//! returns bit-identical results.

// ln 2 split so that `k * LN2_HI` is exact for the k that occur.
const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);
const INV_LN2: f64 = std::f64::consts::LOG2_E;
/// `1.5 * 2^52`: adding and subtracting it rounds to the nearest integer.
const ROUNDER: f64 = 6_755_399_441_055_744.0;
/// Beyond this `tanh` is 1 in double precision.
const SATURATION: f64 = 20.0;

/// `1/k!` for k = 2..=13, innermost first.
const INV_FACT: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
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
];

#[inline(always)]
fn tanh_one(x: f64) -> f64 {
    let a = x.abs();
    // NaN fails the comparison and flows through unchanged.
    let a = if a > SATURATION { SATURATION } else { a };
    let y = -2.0 * a;
    let shifted = y * INV_LN2 + ROUNDER;
    let k = shifted - ROUNDER;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut p = INV_FACT[0];
    for c in &INV_FACT[1..] {
        p = p * r + c;
    }
    let p = r + r * r * p;
    // 2^k from the integer sitting in the low mantissa bits of `shifted`.
    let bits = shifted.to_bits().wrapping_sub(ROUNDER.to_bits()).wrapping_add(1023) << 52;
    let scale = f64::from_bits(bits);
    let em1 = scale * p + (scale - 1.0);
    (-em1 / (2.0 + em1)).copysign(x)
}

fn tanh_generic(xs: &mut [f64]) {
    for x in xs {
        *x = tanh_one(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tanh_avx512(xs: &mut [f64]) {
    for x in xs {
        *x = tanh_one(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_avx2(xs: &mut [f64]) {
    for x in xs {
        *x = tanh_one(*x);
    }
}

/// In-place hyperbolic tangent, accurate to a few ulp.
pub fn tanh_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { tanh_avx512(xs) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { tanh_avx2(xs) };
            return;
        }
    }
    tanh_generic(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ulps(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        let (ia, ib) = (a.to_bits() as i64, b.to_bits() as i64);
        if (ia < 0) != (ib < 0) {
            return u64::MAX;
        }
        ia.abs_diff(ib)
    }

    #[test]
    fn close_to_libm_on_a_dense_sweep() {
        let mut xs: Vec<f64> = (-400_000..=400_000).map(|i| i as f64 * 6e-5).collect();
        xs.extend([1e-300, -1e-300, 1e-12, 0.0, -0.0, 19.06, 25.0, -700.0, 1e300]);
        let mut ys = xs.clone();
        tanh_in_place(&mut ys);
        let worst = xs.iter().zip(&ys).map(|(x, y)| ulps(x.tanh(), *y)).max().unwrap();
        assert!(worst <= 4, "worst error {worst} ulp");
        assert_eq!(ys[ys.len() - 9].to_bits(), 1e-300f64.to_bits());
        assert!(ys[ys.len() - 6].is_sign_positive() && ys[ys.len() - 5].is_sign_negative());
    }

    #[test]
    fn special_values() {
        let mut v = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
        tanh_in_place(&mut v);
        assert!(v[0].is_nan());
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], -1.0);
    }

    #[test]
    fn dispatch_matches_portable_path() {
        let xs: Vec<f64> = (0..10_001).map(|i| (i as f64 - 5000.0) * 1.7e-3).collect();
        let mut a = xs.clone();
        let mut b = xs;
        tanh_in_place(&mut a);
        tanh_generic(&mut b);
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    proptest! {
        #[test]
        fn odd_and_bounded(x in -50.0f64..50.0) {
            let mut v = [x, -x];
            tanh_in_place(&mut v);
            prop_assert_eq!(v[0], -v[1]);
            prop_assert!(v[0].abs() <= 1.0);
            prop_assert!(ulps(v[0], x.tanh()) <= 4);
        }
    }
}
