//! Small fixed-size vector helpers shared by the geometric modules.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Logistic sigmoid that stays finite for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperbolic tangent through a single `exp`; absolute error stays near
/// one ulp of 1 and small inputs use the odd Taylor series.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-3 {
        let x2 = x * x;
        return x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0)));
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

macro_rules! dot_body {
    ($a:expr, $b:expr, $madd:expr) => {{
        let n = $a.len().min($b.len());
        let (a, b) = (&$a[..n], &$b[..n]);
        let mut acc = [0.0f64; 8];
        let mut ca = a.chunks_exact(8);
        let mut cb = b.chunks_exact(8);
        for (x, y) in (&mut ca).zip(&mut cb) {
            for k in 0..8 {
                acc[k] = $madd(x[k], y[k], acc[k]);
            }
        }
        let mut tail = 0.0;
        for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
            tail = $madd(*x, *y, tail);
        }
        ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
    }};
}

#[inline(always)]
fn madd(x: f64, y: f64, acc: f64) -> f64 {
    acc + x * y
}

#[inline(always)]
fn fused(x: f64, y: f64, acc: f64) -> f64 {
    x.mul_add(y, acc)
}

macro_rules! kernels {
    ($madd:expr) => {
        /// `out = W x + bias` for row-major `W` with `x.len()` columns.
        #[allow(dead_code)]
        #[inline(always)]
        fn matvec(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
            for ((o, row), b) in out.iter_mut().zip(weight.chunks_exact(x.len())).zip(bias) {
                *o = b + dot_body!(row, x, $madd);
            }
        }

        /// Reverse of [`matvec`]: `gw += g x^T`, `gb += g`, and optionally
        /// `gx = W^T g`.
        #[inline(always)]
        fn matvec_back(weight: &[f64], x: &[f64], g: &[f64], gw: &mut [f64], gb: &mut [f64], gx: Option<&mut [f64]>) {
            let n = x.len();
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                for (w, &xv) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                    *w = $madd(go, xv, *w);
                }
            }
            if let Some(gx) = gx {
                gx.iter_mut().for_each(|v| *v = 0.0);
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    for (v, &w) in gx.iter_mut().zip(&weight[o * n..(o + 1) * n]) {
                        *v = $madd(go, w, *v);
                    }
                }
            }
        }
    };
}

mod portable {
    use super::madd;
    kernels!(madd);

    pub(super) fn mv(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
        matvec(weight, bias, x, out)
    }

    pub(super) fn mvb(weight: &[f64], x: &[f64], g: &[f64], gw: &mut [f64], gb: &mut [f64], gx: Option<&mut [f64]>) {
        matvec_back(weight, x, g, gw, gb, gx)
    }
}

#[cfg(target_arch = "x86_64")]
mod fma {
    use super::{fused, EXP_TAYLOR, LN2_HI, LN2_LO};
    use std::arch::x86_64::*;
    kernels!(fused);

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len());
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        let mut s0 = _mm256_setzero_pd();
        let mut s1 = _mm256_setzero_pd();
        let mut i = 0;
        while i + 8 <= n {
            s0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), s0);
            s1 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i + 4)), _mm256_loadu_pd(pb.add(i + 4)), s1);
            i += 8;
        }
        if i + 4 <= n {
            s0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), s0);
            i += 4;
        }
        let s = _mm256_add_pd(s0, s1);
        let hi = _mm256_extractf128_pd(s, 1);
        let lo = _mm256_castpd256_pd128(s);
        let pair = _mm_add_pd(lo, hi);
        let mut acc = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
        while i < n {
            acc = a[i].mul_add(b[i], acc);
            i += 1;
        }
        acc
    }

    /// Horizontal sums of four vectors, lane `k` holding the sum of `v[k]`.
    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn hsum4(v0: __m256d, v1: __m256d, v2: __m256d, v3: __m256d) -> __m256d {
        let t0 = _mm256_hadd_pd(v0, v1);
        let t1 = _mm256_hadd_pd(v2, v3);
        let cross = _mm256_permute2f128_pd(t0, t1, 0x21);
        let straight = _mm256_blend_pd(t0, t1, 0b1100);
        _mm256_add_pd(cross, straight)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn mv(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let rows = out.len().min(bias.len()).min(weight.len() / n.max(1));
        let vec_n = n / 4 * 4;
        let px = x.as_ptr();
        let pw = weight.as_ptr();
        let mut o = 0;
        // Four rows at a time: independent FMA chains sharing the x loads.
        while o + 4 <= rows && vec_n > 0 {
            let r = [
                pw.add(o * n),
                pw.add((o + 1) * n),
                pw.add((o + 2) * n),
                pw.add((o + 3) * n),
            ];
            let mut a0 = _mm256_setzero_pd();
            let mut a1 = _mm256_setzero_pd();
            let mut a2 = _mm256_setzero_pd();
            let mut a3 = _mm256_setzero_pd();
            let mut i = 0;
            while i < vec_n {
                let xv = _mm256_loadu_pd(px.add(i));
                a0 = _mm256_fmadd_pd(_mm256_loadu_pd(r[0].add(i)), xv, a0);
                a1 = _mm256_fmadd_pd(_mm256_loadu_pd(r[1].add(i)), xv, a1);
                a2 = _mm256_fmadd_pd(_mm256_loadu_pd(r[2].add(i)), xv, a2);
                a3 = _mm256_fmadd_pd(_mm256_loadu_pd(r[3].add(i)), xv, a3);
                i += 4;
            }
            let sums = _mm256_add_pd(hsum4(a0, a1, a2, a3), _mm256_loadu_pd(bias.as_ptr().add(o)));
            _mm256_storeu_pd(out.as_mut_ptr().add(o), sums);
            for k in 0..4 {
                for j in vec_n..n {
                    out[o + k] = weight[(o + k) * n + j].mul_add(x[j], out[o + k]);
                }
            }
            o += 4;
        }
        while o < rows {
            out[o] = bias[o] + dot(&weight[o * n..(o + 1) * n], x);
            o += 1;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn mvb(
        weight: &[f64],
        x: &[f64],
        g: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        gx: Option<&mut [f64]>,
    ) {
        matvec_back(weight, x, g, gw, gb, gx)
    }
    /// `tanh` of four lanes, matching [`super::tanh`] to about one ulp.
    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn tanh4(x: __m256d) -> __m256d {
        let sign_mask = _mm256_set1_pd(-0.0);
        let a = _mm256_andnot_pd(sign_mask, x);
        // e = exp(-2a), with the argument clamped where the result is already 1.
        let y = _mm256_max_pd(_mm256_mul_pd(a, _mm256_set1_pd(-2.0)), _mm256_set1_pd(-700.0));
        let k = _mm256_round_pd(
            _mm256_mul_pd(y, _mm256_set1_pd(std::f64::consts::LOG2_E)),
            _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC,
        );
        let r = _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_HI), y);
        let r = _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_LO), r);
        let mut p = _mm256_set1_pd(EXP_TAYLOR[13]);
        for c in EXP_TAYLOR[..13].iter().rev() {
            p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(*c));
        }
        let magic = _mm256_set1_pd(6755399441055744.0);
        let ki = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(k, magic)), _mm256_castpd_si256(magic));
        let scale = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(ki, _mm256_set1_epi64x(1023)), 52));
        let e = _mm256_mul_pd(p, scale);
        let one = _mm256_set1_pd(1.0);
        let big = _mm256_div_pd(_mm256_sub_pd(one, e), _mm256_add_pd(one, e));
        let x2 = _mm256_mul_pd(a, a);
        let poly = _mm256_fnmadd_pd(x2, _mm256_set1_pd(2.0 / 15.0), _mm256_set1_pd(1.0 / 3.0));
        let small = _mm256_mul_pd(a, _mm256_fnmadd_pd(x2, poly, one));
        let is_small = _mm256_cmp_pd(a, _mm256_set1_pd(1e-3), _CMP_LT_OQ);
        let t = _mm256_blendv_pd(big, small, is_small);
        _mm256_or_pd(t, _mm256_and_pd(x, sign_mask))
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn tanh_in_place(v: &mut [f64]) {
        let mut chunks = v.chunks_exact_mut(4);
        for c in &mut chunks {
            _mm256_storeu_pd(c.as_mut_ptr(), tanh4(_mm256_loadu_pd(c.as_ptr())));
        }
        for x in chunks.into_remainder() {
            *x = super::tanh(*x);
        }
    }
}

const LN2_HI: f64 = 6.93147180369123816490e-01;
const LN2_LO: f64 = 1.90821492927058770002e-10;
/// `1 / k!` for `k = 0..=13`.
#[cfg(target_arch = "x86_64")]
const EXP_TAYLOR: [f64; 14] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
    1.0 / 6227020800.0,
];

/// Apply [`tanh`] to every element.
pub fn tanh_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected.
        return unsafe { fma::tanh_in_place(v) };
    }
    v.iter_mut().for_each(|x| *x = tanh(*x));
}

#[cfg(target_arch = "x86_64")]
fn has_fma() -> bool {
    use std::sync::OnceLock;
    static HAS: OnceLock<bool> = OnceLock::new();
    *HAS.get_or_init(|| std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma"))
}

/// Dot product with independent accumulators so it vectorizes.
#[inline]
pub fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    dot_body!(a, b, madd)
}

/// Dense layer `out = W x + bias`, `W` row-major with `x.len()` columns.
/// Uses FMA when the CPU has it, so the last bits can differ between
/// machines.
pub fn matvec(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected.
        return unsafe { fma::mv(weight, bias, x, out) };
    }
    portable::mv(weight, bias, x, out)
}

/// Reverse pass of [`matvec`]: accumulates `gw += g x^T` and `gb += g`, and
/// overwrites `gx` with `W^T g` when given.
pub fn matvec_back(weight: &[f64], x: &[f64], g: &[f64], gw: &mut [f64], gb: &mut [f64], gx: Option<&mut [f64]>) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected.
        return unsafe { fma::mvb(weight, x, g, gw, gb, gx) };
    }
    portable::mvb(weight, x, g, gw, gb, gx)
}

/// Round to the nearest `f32`, the storage precision of scene parameters.
#[inline]
pub fn to_storage(x: f64) -> f64 {
    x as f32 as f64
}

pub fn quantize_slice(values: &mut [f64]) {
    for v in values {
        *v = to_storage(*v);
    }
}


#[cfg(test)]
mod kernel_tests {
    use super::*;

    #[test]
    fn matvec_matches_naive() {
        for (rows, cols) in [(1, 1), (3, 5), (4, 4), (5, 16), (13, 64), (64, 11), (8, 35)] {
            let w: Vec<f64> = (0..rows * cols)
                .map(|i| ((i * 37 % 101) as f64 - 50.0) / 17.0)
                .collect();
            let b: Vec<f64> = (0..rows).map(|i| i as f64 * 0.25 - 1.0).collect();
            let x: Vec<f64> = (0..cols).map(|i| ((i * 13 % 29) as f64 - 14.0) / 7.0).collect();
            let mut out = vec![0.0; rows];
            matvec(&w, &b, &x, &mut out);
            for o in 0..rows {
                let naive: f64 = b[o] + (0..cols).map(|i| w[o * cols + i] * x[i]).sum::<f64>();
                assert!((out[o] - naive).abs() < 1e-11, "{rows}x{cols} row {o}");
            }
        }
    }
}
