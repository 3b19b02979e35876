//! Adaptive 7/15-point Gauss-Kronrod quadrature.

use crate::error::{Error, Result};
use crate::num::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
/// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Default cap on the number of subintervals.
pub const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub error: T,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Piece<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn kronrod<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Piece<T> {
    let half = T::lit(0.5);
    let c = half * (a + b);
    let h = half * (b - a);
    let fc = f(c);
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = h * T::lit(XGK[j]);
        let pair = f(c - dx) + f(c + dx);
        k += T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            g += T::lit(WG[j / 2]) * pair;
        }
    }
    Piece {
        a,
        b,
        value: k * h,
        error: ((k - g) * h).abs(),
    }
}

/// Integrates `f` over `[a, b]`, bisecting the worst subinterval until the
/// summed error estimate is at most `abs_tol`.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(f: F, a: T, b: T, abs_tol: T) -> Result<Quadrature<T>> {
    integrate_with_breaks(f, &[a, b], abs_tol)
}

/// Like [`integrate`] with the interval pre-split at `points` (ascending).
pub fn integrate_with_breaks<T: Scalar, F: Fn(T) -> T>(f: F, points: &[T], abs_tol: T) -> Result<Quadrature<T>> {
    if points.len() < 2 || points.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("quadrature needs ascending, distinct break points"));
    }
    if !(abs_tol > T::zero()) {
        return Err(Error::invalid("quadrature tolerance must be positive"));
    }
    let mut pieces: Vec<Piece<T>> = points.windows(2).map(|w| kronrod(&f, w[0], w[1])).collect();
    loop {
        let total_err: T = pieces.iter().map(|p| p.error).sum();
        let value: T = pieces.iter().map(|p| p.value).sum();
        if !value.is_finite() {
            return Err(Error::Convergence("integrand produced a non-finite value".into()));
        }
        if total_err <= abs_tol {
            return Ok(Quadrature {
                value,
                error: total_err,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Convergence(format!(
                "error estimate {total_err} above {abs_tol} after {} intervals",
                pieces.len()
            )));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, p)| if p.error > acc.1 { (i, p.error) } else { acc });
        let p = pieces.swap_remove(worst);
        let mid = T::lit(0.5) * (p.a + p.b);
        if !(p.a < mid && mid < p.b) {
            return Err(Error::Convergence("interval too small to bisect".into()));
        }
        pieces.push(kronrod(&f, p.a, mid));
        pieces.push(kronrod(&f, mid, p.b));
    }
}
