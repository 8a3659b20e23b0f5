//! Modified Bessel function of the second kind, K_ν, and the gamma function.
//!
//! K_ν is evaluated by a hybrid scheme: Temme's series for small arguments
//! (x ≤ 2), the Steed/Thompson–Barnett continued fraction for larger
//! arguments, and stable forward recurrence to step the order up from the
//! fractional part μ ∈ [−1/2, 1/2]. Accuracy is ~1e-12 relative over
//! ν ∈ (0, 20], x ∈ (1e-6, 50], checked against high-precision references.

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;

/// Lanczos approximation (g = 7, 9 terms), with reflection for x < 0.5.
///
/// Relative error ~1e-13 on the positive axis away from the poles.
pub fn gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π/sin(πx)
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Natural log of Γ(x) for x > 0, sharing the Lanczos coefficients with
/// `gamma` but staying in log space so large arguments do not overflow.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Temme's gamma combinations for |μ| ≤ 1/2:
/// γ₁ = [1/Γ(1−μ) − 1/Γ(1+μ)]/(2μ) and γ₂ = [1/Γ(1−μ) + 1/Γ(1+μ)]/2.
///
/// A Maclaurin series (coefficients of 1/Γ) avoids cancellation near μ = 0.
fn temme_gammas(mu: f64) -> (f64, f64) {
    // c_k from the expansion 1/Γ(z) = Σ c_k z^k
    const C: [f64; 13] = [
        1.0,
        0.577_215_664_901_532_9,
        -0.655_878_071_520_253_8,
        -0.042_002_635_034_095_24,
        0.166_538_611_382_291_5,
        -0.042_197_734_555_544_34,
        -0.009_621_971_527_877_0,
        0.007_218_943_246_663_1,
        -0.001_165_167_591_859_1,
        -0.000_215_241_674_114_95,
        0.000_128_050_282_388_12,
        -0.000_020_134_854_780_8,
        -0.000_001_250_493_482_1,
    ];
    if mu.abs() < 0.1 {
        let m2 = mu * mu;
        // odd coefficients (in the 1/Γ(1+μ) expansion) flip sign under μ → −μ
        let gam1 = -(C[1] + m2 * (C[3] + m2 * (C[5] + m2 * (C[7] + m2 * (C[9] + m2 * C[11])))));
        let gam2 = C[0] + m2 * (C[2] + m2 * (C[4] + m2 * (C[6] + m2 * (C[8] + m2 * (C[10] + m2 * C[12])))));
        (gam1, gam2)
    } else {
        let gp = 1.0 / gamma(1.0 + mu);
        let gm = 1.0 / gamma(1.0 - mu);
        ((gm - gp) / (2.0 * mu), (gm + gp) / 2.0)
    }
}

/// (K_μ(x), K_{μ+1}(x)) for |μ| ≤ 1/2 and 0 < x ≤ 2, by Temme's series.
fn temme_k(mu: f64, x: f64) -> Result<(f64, f64)> {
    let x2 = 0.5 * x;
    let pimu = std::f64::consts::PI * mu;
    let fact = if pimu.abs() < 1e-30 { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < 1e-30 { 1.0 } else { e.sinh() / e };
    let (gam1, gam2) = temme_gammas(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    // p = ½(x/2)^{−μ}Γ(1+μ), q = ½(x/2)^{μ}Γ(1−μ); note 1/Γ(1±μ) = γ₂ ∓ μγ₁
    let mut p = 0.5 * ee / (gam2 - mu * gam1);
    let mut q = 0.5 / (ee * (gam2 + mu * gam1));
    let mut c = 1.0;
    let d2 = x2 * x2;
    let mut sum1 = p;
    for i in 1..=MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu * mu);
        c *= d2 / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            return Ok((sum, sum1 * 2.0 / x));
        }
    }
    Err(Error::numerical(format!(
        "Bessel K series did not converge for order {mu}, argument {x}"
    )))
}

/// (K_μ(x), K_{μ+1}(x)) for |μ| ≤ 1/2 and x > 2, by Steed's continued
/// fraction for the confluent hypergeometric ratio (Thompson–Barnett form).
fn steed_k(mu: f64, x: f64) -> Result<(f64, f64)> {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = delh;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    let mut converged = false;
    for i in 2..=MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "Bessel K continued fraction did not converge for order {mu}, argument {x}"
        )));
    }
    h = a1 * h;
    let kmu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let kmu1 = kmu * (mu + x + 0.5 - h) / x;
    Ok((kmu, kmu1))
}

/// Modified Bessel function of the second kind, K_ν(x), for ν > 0, x > 0.
///
/// Satisfies the three-term recurrence K_{ν+1}(x) = K_{ν−1}(x) + (2ν/x)K_ν(x).
/// Values beyond the f64 range (tiny x together with large ν) are reported
/// as an overflow error rather than returned as infinity or NaN.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || nu <= 0.0 {
        return Err(Error::invalid(format!("Bessel K order must be positive, got {nu}")));
    }
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::invalid(format!("Bessel K argument must be positive, got {x}")));
    }
    let steps = nu.round() as usize;
    let mu = nu - steps as f64; // |μ| ≤ 1/2; K is even in its order
    let (mut ka, mut kb) = if x <= 2.0 { temme_k(mu, x)? } else { steed_k(mu, x)? };
    for j in 1..=steps {
        let knext = ka + 2.0 * (mu + j as f64) / x * kb;
        ka = kb;
        kb = knext;
    }
    // after `steps` recurrence steps ka holds K_{μ+steps} = K_ν
    if !ka.is_finite() {
        return Err(Error::numerical(format!(
            "Bessel K overflow: K_{nu}({x}) exceeds the f64 range (saturated at {:e})",
            f64::MAX
        )));
    }
    Ok(ka)
}
