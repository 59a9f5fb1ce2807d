//! Exact computer algebra behind the null-condition symbols: Gaussian
//! rational scalars, sparse polynomials in `(ω0, ω1, ω2)`, finite
//! Fourier series in `θ` with polynomial coefficients, and reduction
//! modulo the hyperboloid relation `ω0² − ω1² − ω2² = 1`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::model::{fmt_rat, QuadraticSystem};
use crate::Rat;

/// A Gaussian rational `re + im·i` with exact arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussRat {
    pub re: Rat,
    pub im: Rat,
}

impl GaussRat {
    pub fn zero() -> Self {
        GaussRat {
            re: Rat::zero(),
            im: Rat::zero(),
        }
    }

    pub fn one() -> Self {
        GaussRat {
            re: Rat::one(),
            im: Rat::zero(),
        }
    }

    pub fn i() -> Self {
        GaussRat {
            re: Rat::zero(),
            im: Rat::one(),
        }
    }

    pub fn real(r: Rat) -> Self {
        GaussRat {
            re: r,
            im: Rat::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn add(&self, other: &GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re + &other.re,
            im: &self.im + &other.im,
        }
    }

    pub fn mul(&self, other: &GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re * &other.re - &self.im * &other.im,
            im: &self.re * &other.im + &self.im * &other.re,
        }
    }

    pub fn neg(&self) -> GaussRat {
        GaussRat {
            re: -self.re.clone(),
            im: -self.im.clone(),
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(
            self.re.to_f64().unwrap_or(f64::NAN),
            self.im.to_f64().unwrap_or(f64::NAN),
        )
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.re.is_zero(), self.im.is_zero()) {
            (_, true) => write!(f, "{}", fmt_rat(&self.re)),
            (true, false) => write!(f, "{} i", fmt_rat(&self.im)),
            (false, false) => {
                if self.im.is_negative() {
                    write!(f, "({} - {} i)", fmt_rat(&self.re), fmt_rat(&(-self.im.clone())))
                } else {
                    write!(f, "({} + {} i)", fmt_rat(&self.re), fmt_rat(&self.im))
                }
            }
        }
    }
}

/// Exponent triple of `(ω0, ω1, ω2)`.
pub type Expo = [u32; 3];

/// Sparse polynomial in `(ω0, ω1, ω2)` over Gaussian rationals.
/// Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OmegaPoly {
    terms: BTreeMap<Expo, GaussRat>,
}

impl OmegaPoly {
    pub fn zero() -> Self {
        OmegaPoly::default()
    }

    pub fn constant(c: GaussRat) -> Self {
        let mut p = OmegaPoly::zero();
        p.add_term([0, 0, 0], c);
        p
    }

    pub fn one() -> Self {
        OmegaPoly::constant(GaussRat::one())
    }

    /// The variable `ω_a`.
    pub fn var(a: usize) -> Self {
        let mut e = [0u32; 3];
        e[a] = 1;
        let mut p = OmegaPoly::zero();
        p.add_term(e, GaussRat::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Expo, &GaussRat)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, e: Expo, c: GaussRat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(e) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().add(&c);
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &OmegaPoly) -> OmegaPoly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, c.clone());
        }
        out
    }

    pub fn mul(&self, other: &OmegaPoly) -> OmegaPoly {
        let mut out = OmegaPoly::zero();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = [e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2]];
                out.add_term(e, c1.mul(c2));
            }
        }
        out
    }

    pub fn scale(&self, c: &GaussRat) -> OmegaPoly {
        let mut out = OmegaPoly::zero();
        for (e, v) in &self.terms {
            out.add_term(*e, v.mul(c));
        }
        out
    }

    pub fn neg(&self) -> OmegaPoly {
        self.scale(&GaussRat::one().neg())
    }

    /// Exact evaluation at a rational point.
    pub fn eval_exact(&self, omega: &[Rat; 3]) -> GaussRat {
        let mut acc = GaussRat::zero();
        for (e, c) in &self.terms {
            let mut m = Rat::one();
            for a in 0..3 {
                for _ in 0..e[a] {
                    m *= &omega[a];
                }
            }
            acc = acc.add(&c.mul(&GaussRat::real(m)));
        }
        acc
    }

    /// Floating-point evaluation (used only for witnesses and numeric
    /// cross-checks; the decision procedure itself is exact).
    pub fn eval_f64(&self, omega: [f64; 3]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (e, c) in &self.terms {
            let m = omega[0].powi(e[0] as i32)
                * omega[1].powi(e[1] as i32)
                * omega[2].powi(e[2] as i32);
            acc += c.to_complex() * m;
        }
        acc
    }

    /// Serialization record for certificates, sorted by exponent triple.
    pub fn to_records(&self) -> Vec<PolyTermRecord> {
        self.terms
            .iter()
            .map(|(e, c)| PolyTermRecord {
                exponents: *e,
                re: fmt_rat(&c.re),
                im: fmt_rat(&c.im),
            })
            .collect()
    }
}

impl fmt::Display for OmegaPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            write!(f, "{}", c)?;
            for (a, name) in ["w0", "w1", "w2"].iter().enumerate() {
                match e[a] {
                    0 => {}
                    1 => write!(f, " {}", name)?,
                    n => write!(f, " {}^{}", name, n)?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTermRecord {
    pub exponents: Expo,
    pub re: String,
    pub im: String,
}

/// Parity of a trigonometric term in `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

/// Finite Fourier series in `θ`: a sparse map from `(frequency, parity)`
/// to an `OmegaPoly` coefficient. The constant term is `(0, Cos)`; a sin
/// term at frequency 0 is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ThetaSeries {
    terms: BTreeMap<(u32, Parity), OmegaPoly>,
}

/// Largest frequency a quadratic product of modes `k ∈ {1, 2}` can
/// produce. [`substitute`] asserts this bound rather than assuming it.
pub const MAX_FREQUENCY: u32 = 4;

impl ThetaSeries {
    pub fn zero() -> Self {
        ThetaSeries::default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, freq: u32, parity: Parity) -> OmegaPoly {
        self.terms
            .get(&(freq, parity))
            .cloned()
            .unwrap_or_else(OmegaPoly::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, Parity), &OmegaPoly)> {
        self.terms.iter()
    }

    /// Adds `poly · trig(freq·2πθ)` handling sign normalization:
    /// `cos(−x) = cos x`, `sin(−x) = −sin x`, `sin 0 = 0`.
    pub fn add_trig(&mut self, freq: i64, parity: Parity, poly: OmegaPoly) {
        if poly.is_zero() {
            return;
        }
        let (freq, poly) = match (freq.signum(), parity) {
            (0, Parity::Sin) => return,
            (-1, Parity::Cos) => ((-freq) as u32, poly),
            (-1, Parity::Sin) => ((-freq) as u32, poly.neg()),
            _ => (freq as u32, poly),
        };
        assert!(freq <= MAX_FREQUENCY, "frequency bound exceeded: {freq}");
        use std::collections::btree_map::Entry;
        match self.terms.entry((freq, parity)) {
            Entry::Vacant(v) => {
                v.insert(poly);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().add(&poly);
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }
}

/// One trig factor `poly(ω) · trig(2π·freq·θ)` before product-to-sum
/// reduction.
struct TrigFactor {
    freq: u32,
    parity: Parity,
    poly: OmegaPoly,
}

/// The substitution of Eqs. (U)/(V)/(W): `u_k → cos 2πkθ`,
/// `∂_a u_k → −ω_a m_k sin 2πkθ`, `∂_a∂_b u_k → −ω_a ω_b m_k² cos 2πkθ`.
fn factor_to_trig(k: u8, alpha: &crate::model::DerivIndex, masses: &crate::MassPair) -> TrigFactor {
    let m = masses.mass(k);
    match alpha.axes() {
        [] => TrigFactor {
            freq: k as u32,
            parity: Parity::Cos,
            poly: OmegaPoly::one(),
        },
        [a] => TrigFactor {
            freq: k as u32,
            parity: Parity::Sin,
            poly: OmegaPoly::var(a.index()).scale(&GaussRat::real(-m.clone())),
        },
        [a, b] => TrigFactor {
            freq: k as u32,
            parity: Parity::Cos,
            poly: OmegaPoly::var(a.index())
                .mul(&OmegaPoly::var(b.index()))
                .scale(&GaussRat::real(-(m * m))),
        },
        _ => panic!("substitution only defined for derivative order <= 2"),
    }
}

/// Expands `F^quad_eq(U(θ), V(ω,θ), W(ω,θ))` as a [`ThetaSeries`],
/// reducing products of trig factors via product-to-sum identities.
pub fn substitute(system: &QuadraticSystem, eq: u8) -> ThetaSeries {
    let mut series = ThetaSeries::zero();
    for (mono, coeff) in system.terms() {
        if mono.eq() != eq {
            continue;
        }
        let f = factor_to_trig(mono.k(), mono.alpha(), system.masses());
        let g = factor_to_trig(mono.l(), mono.beta(), system.masses());
        let poly = f.poly.mul(&g.poly).scale(&GaussRat::real(coeff.clone() / Rat::from_integer(2.into())));
        let (kf, kg) = (f.freq as i64, g.freq as i64);
        // cos·cos = ½cos(k−l) + ½cos(k+l); sin·sin = ½cos(k−l) − ½cos(k+l);
        // sin·cos = ½sin(k+l) + ½sin(k−l); cos·sin = ½sin(k+l) − ½sin(k−l).
        match (f.parity, g.parity) {
            (Parity::Cos, Parity::Cos) => {
                series.add_trig(kf - kg, Parity::Cos, poly.clone());
                series.add_trig(kf + kg, Parity::Cos, poly);
            }
            (Parity::Sin, Parity::Sin) => {
                series.add_trig(kf - kg, Parity::Cos, poly.clone());
                series.add_trig(kf + kg, Parity::Cos, poly.neg());
            }
            (Parity::Sin, Parity::Cos) => {
                series.add_trig(kf + kg, Parity::Sin, poly.clone());
                series.add_trig(kf - kg, Parity::Sin, poly);
            }
            (Parity::Cos, Parity::Sin) => {
                series.add_trig(kf + kg, Parity::Sin, poly.clone());
                series.add_trig(kf - kg, Parity::Sin, poly.neg());
            }
        }
    }
    series
}

/// The exact projection `∫₀¹ series(θ) e^{−2πi jθ} dθ` for `j >= 1`:
/// the `(j, cos)` coefficient times `1/2` plus the `(j, sin)` coefficient
/// times `−i/2`.
pub fn fourier_pick(series: &ThetaSeries, j: u32) -> OmegaPoly {
    assert!(j >= 1, "fourier_pick is defined for j >= 1");
    let half = GaussRat::real(crate::rat(1, 2));
    let minus_half_i = GaussRat {
        re: Rat::zero(),
        im: crate::rat(-1, 2),
    };
    series
        .coefficient(j, Parity::Cos)
        .scale(&half)
        .add(&series.coefficient(j, Parity::Sin).scale(&minus_half_i))
}

/// Remainder of division by `q(ω) = ω0² − ω1² − ω2² − 1`, treated as a
/// monic quadratic in `ω0`: every `ω0²` is replaced by `1 + ω1² + ω2²`
/// until the `ω0`-degree drops below 2.
///
/// Soundness of the vanishing test: the remainder `R = r1(ω1,ω2)·ω0 + r0`
/// vanishes on both sheets `ω0 = ±s`, `s = √(1+ω1²+ω2²) > 0`, iff
/// `r1·s + r0 = −r1·s + r0 = 0`, i.e. iff `r0 = r1 = 0`. So `R ≡ 0` iff
/// the input vanishes on the whole hyperboloid.
pub fn reduce_hyperboloid(p: &OmegaPoly) -> OmegaPoly {
    let mut subst = OmegaPoly::one();
    let mut w1sq = OmegaPoly::var(1);
    w1sq = w1sq.mul(&OmegaPoly::var(1));
    let mut w2sq = OmegaPoly::var(2);
    w2sq = w2sq.mul(&OmegaPoly::var(2));
    subst = subst.add(&w1sq).add(&w2sq); // 1 + ω1² + ω2²

    let mut current = p.clone();
    loop {
        let mut reduced = OmegaPoly::zero();
        let mut changed = false;
        for (e, c) in current.terms() {
            if e[0] >= 2 {
                changed = true;
                let mut rest = OmegaPoly::zero();
                rest.add_term([e[0] - 2, e[1], e[2]], c.clone());
                reduced = reduced.add(&rest.mul(&subst));
            } else {
                reduced.add_term(*e, c.clone());
            }
        }
        if !changed {
            return reduced;
        }
        current = reduced;
    }
}
