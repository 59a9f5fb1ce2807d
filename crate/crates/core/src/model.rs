//! Exact representation of a quadratic Klein-Gordon system: masses, a
//! monomial coefficient tensor over derivative products, structural
//! validation and the JSON schema shared by the other modules.
//!
//! Only the quadratic homogeneous part of the nonlinearity is
//! represented. Coefficients are exact rationals; floats never enter
//! the symbolic engine.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::Rat;

/// Space-time axis label. `T` is the time axis `∂_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    T,
    X1,
    X2,
}

pub const AXES: [Axis; 3] = [Axis::T, Axis::X1, Axis::X2];

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::T => "t",
            Axis::X1 => "x1",
            Axis::X2 => "x2",
        }
    }

    pub fn parse(s: &str) -> Result<Axis, ModelError> {
        match s {
            "t" => Ok(Axis::T),
            "x1" => Ok(Axis::X1),
            "x2" => Ok(Axis::X2),
            other => Err(ModelError::BadAxis(other.to_string())),
        }
    }

    /// Index 0/1/2 matching the `∂_a` numbering (0 = time).
    pub fn index(self) -> usize {
        match self {
            Axis::T => 0,
            Axis::X1 => 1,
            Axis::X2 => 2,
        }
    }

    pub fn from_index(a: usize) -> Axis {
        AXES[a]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A multi-derivative `∂^α`: a sorted list of axes (derivatives commute,
/// so the sorted form is the unique key).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DerivIndex(Vec<Axis>);

impl DerivIndex {
    pub fn none() -> Self {
        DerivIndex(Vec::new())
    }

    pub fn new(axes: &[Axis]) -> Self {
        let mut v = axes.to_vec();
        v.sort();
        DerivIndex(v)
    }

    pub fn single(a: Axis) -> Self {
        DerivIndex(vec![a])
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.0
    }

    /// Number of time derivatives in the index.
    pub fn time_order(&self) -> usize {
        self.0.iter().filter(|a| **a == Axis::T).count()
    }

    /// The spatial axes of the index, in sorted order.
    pub fn spatial(&self) -> Vec<Axis> {
        self.0.iter().copied().filter(|a| *a != Axis::T).collect()
    }

    /// `∂_a ∂^α`.
    pub fn with(&self, a: Axis) -> Self {
        let mut v = self.0.clone();
        v.push(a);
        v.sort();
        DerivIndex(v)
    }
}

impl fmt::Display for DerivIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "d{}", a.label())?;
        }
        Ok(())
    }
}

/// Positive masses normalized so that `m1 <= m2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MassPair {
    m1: Rat,
    m2: Rat,
}

impl MassPair {
    pub fn new(m1: Rat, m2: Rat) -> Result<Self, ModelError> {
        if !m1.is_positive() || !m2.is_positive() {
            return Err(ModelError::NonPositiveMass);
        }
        if m1 > m2 {
            return Err(ModelError::MassOrder);
        }
        Ok(MassPair { m1, m2 })
    }

    pub fn m1(&self) -> &Rat {
        &self.m1
    }

    pub fn m2(&self) -> &Rat {
        &self.m2
    }

    /// Mass of component `k` (1-based).
    pub fn mass(&self, k: u8) -> &Rat {
        match k {
            1 => &self.m1,
            2 => &self.m2,
            _ => panic!("component index out of range"),
        }
    }

    /// Whether the resonance relation `m2 = 2 m1` holds exactly.
    pub fn is_resonant(&self) -> bool {
        self.m2 == Rat::from_integer(2.into()) * &self.m1
    }
}

/// One quadratic term `(∂^α u_k)(∂^β u_l)` in equation `eq`, stored with
/// the canonical factor order `(k, α) <= (l, β)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    eq: u8,
    k: u8,
    alpha: DerivIndex,
    l: u8,
    beta: DerivIndex,
}

/// Derivative orders above this never appear, even in normal-form
/// tensors (`Λ` needs `|α|,|β| <= 3`; the strong-null remainder of a
/// second-order self-interaction term reaches 4).
pub const MAX_DERIV_ORDER: usize = 4;

impl Monomial {
    /// Canonicalizing constructor. Accepts derivative orders up to 3 so
    /// that normal-form tensors can share the key type; the stricter
    /// quadratic-system rules are checked by [`QuadraticSystem::validate`].
    pub fn new(
        eq: u8,
        k: u8,
        alpha: DerivIndex,
        l: u8,
        beta: DerivIndex,
    ) -> Result<Self, ModelError> {
        if !(1..=2).contains(&eq) || !(1..=2).contains(&k) || !(1..=2).contains(&l) {
            return Err(ModelError::BadComponent);
        }
        if alpha.order() > MAX_DERIV_ORDER || beta.order() > MAX_DERIV_ORDER {
            return Err(ModelError::TooManyDerivatives);
        }
        let (k, alpha, l, beta) = if (k, &alpha) <= (l, &beta) {
            (k, alpha, l, beta)
        } else {
            (l, beta, k, alpha)
        };
        Ok(Monomial { eq, k, alpha, l, beta })
    }

    pub fn eq(&self) -> u8 {
        self.eq
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn l(&self) -> u8 {
        self.l
    }

    pub fn alpha(&self) -> &DerivIndex {
        &self.alpha
    }

    pub fn beta(&self) -> &DerivIndex {
        &self.beta
    }

    /// Unordered component pair, e.g. `(1, 2)` for a cross term.
    pub fn pair(&self) -> (u8, u8) {
        (self.k, self.l)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "F{} <- ({}u{})({}u{})",
            self.eq, self.alpha, self.k, self.beta, self.l
        )
    }
}

/// Exact quadratic coefficient tensor of a two-component system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadraticSystem {
    masses: MassPair,
    terms: BTreeMap<Monomial, Rat>,
}

impl QuadraticSystem {
    pub fn new(masses: MassPair) -> Self {
        QuadraticSystem {
            masses,
            terms: BTreeMap::new(),
        }
    }

    pub fn masses(&self) -> &MassPair {
        &self.masses
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> Rat {
        self.terms.get(m).cloned().unwrap_or_else(Rat::zero)
    }

    /// Adds `c * m` to the tensor, merging with an existing entry and
    /// pruning zeros.
    pub fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add_terms(&mut self, terms: impl IntoIterator<Item = (Monomial, Rat)>) {
        for (m, c) in terms {
            self.add_term(m, c);
        }
    }

    /// `self + c * other` (same masses required).
    pub fn add_scaled(&mut self, other: &QuadraticSystem, c: &Rat) {
        assert_eq!(self.masses, other.masses, "mass mismatch");
        for (m, v) in &other.terms {
            self.add_term(m.clone(), v * c);
        }
    }

    pub fn scaled(&self, c: &Rat) -> QuadraticSystem {
        let mut out = QuadraticSystem::new(self.masses.clone());
        out.add_scaled(self, c);
        out
    }

    /// Structural validation: derivative orders, quasi-linearity,
    /// `γ_00 = 0` and the hyperbolic symmetry of the second-derivative
    /// coefficients. Returns a report listing every violated rule.
    ///
    /// The symmetry rule at the quadratic level reduces to a family of
    /// linear identities among monomial coefficients: the quadratic part
    /// of `γ^{jk}_{ab}` is a linear form in `(∂^δ u_m)`, so for every
    /// first-order factor `∂^δ u_m` and axis pair `(a, b)` the coefficient
    /// of `(∂^δ u_m)(∂_a ∂_b u_k)` in `F_j` must equal the coefficient of
    /// `(∂^δ u_m)(∂_a ∂_b u_j)` in `F_k`.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut symmetry = Vec::new();
        for (m, _) in &self.terms {
            if m.alpha.order() > 2 || m.beta.order() > 2 {
                violations.push(format!("{m}: derivative order exceeds 2"));
            }
            if m.alpha.order() == 2 && m.beta.order() == 2 {
                violations.push(format!("{m}: quasi-linearity violated (two second-order factors)"));
            }
            for (idx, order) in [(&m.alpha, m.alpha.order()), (&m.beta, m.beta.order())] {
                if order == 2 && idx.time_order() == 2 {
                    violations.push(format!("{m}: γ₀₀ ≠ 0"));
                }
            }
        }
        // Symmetry: pair each γ-monomial in F_j against its partner in F_k.
        for (m, c) in &self.terms {
            let gamma = if m.alpha.order() == 2 {
                Some((m.k, &m.alpha, m.l, &m.beta))
            } else if m.beta.order() == 2 {
                Some((m.l, &m.beta, m.k, &m.alpha))
            } else {
                None
            };
            if let Some((comp2, second, comp1, first)) = gamma {
                let j = m.eq;
                let k = comp2;
                if j == k {
                    continue;
                }
                let partner =
                    Monomial::new(k, comp1, first.clone(), j, second.clone()).expect("valid key");
                if self.coeff(&partner) != *c {
                    symmetry.push(format!(
                        "{m}: symmetry violated (needs matching coefficient on {partner})"
                    ));
                }
            }
        }
        ValidationReport { violations, symmetry }
    }
}

/// Report-style validation result; empty iff the system is admissible.
///
/// Structural violations (`violations`) make the system ill-defined for
/// the symbolic engine; symmetry violations only concern hyperbolic
/// well-posedness, so the null check and decomposition still apply (the
/// generators H_{1,a}, H_{2,a} are symmetric only when paired).
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub symmetry: Vec<String>,
}

impl ValidationReport {
    /// Fully admissible: no violations of any rule.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.symmetry.is_empty()
    }

    /// Well-defined input for nullcheck/normalform: structural rules hold
    /// (symmetry may still be violated).
    pub fn is_checkable(&self) -> bool {
        self.violations.is_empty()
    }

    /// All violated rules, structural first.
    pub fn all_violations(&self) -> Vec<String> {
        self.violations.iter().chain(&self.symmetry).cloned().collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown axis label {0:?}")]
    BadAxis(String),
    #[error("component/equation index out of range (must be 1 or 2)")]
    BadComponent,
    #[error("derivative order exceeds {MAX_DERIV_ORDER}")]
    TooManyDerivatives,
    #[error("bad rational {text:?}: {reason}")]
    BadRational { text: String, reason: String },
    #[error("term {index}: {source}")]
    Term {
        index: usize,
        source: Box<ModelError>,
    },
    #[error("term {index}: duplicate monomial key after canonicalization")]
    DuplicateTerm { index: usize },
    #[error("masses must be positive")]
    NonPositiveMass,
    #[error("masses must satisfy m1 <= m2")]
    MassOrder,
}

// ----- rational string codec ("p" or "p/q", lowest terms) -----

pub fn parse_rat(s: &str) -> Result<Rat, ModelError> {
    let bad = |reason: &str| ModelError::BadRational {
        text: s.to_string(),
        reason: reason.to_string(),
    };
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let num: num_bigint::BigInt = num.trim().parse().map_err(|_| bad("bad numerator"))?;
    let den: num_bigint::BigInt = den.trim().parse().map_err(|_| bad("bad denominator"))?;
    if den.is_zero() {
        return Err(bad("zero denominator"));
    }
    Ok(Rat::new(num, den))
}

pub fn fmt_rat(r: &Rat) -> String {
    if r.denom() == &num_bigint::BigInt::from(1) {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

// ----- JSON schema -----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    masses: [String; 2],
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    eq: u8,
    k: u8,
    l: u8,
    alpha: Vec<String>,
    beta: Vec<String>,
    coeff: String,
}

fn parse_deriv(labels: &[String]) -> Result<DerivIndex, ModelError> {
    if labels.len() > 2 {
        return Err(ModelError::TooManyDerivatives);
    }
    let axes: Result<Vec<Axis>, _> = labels.iter().map(|s| Axis::parse(s)).collect();
    Ok(DerivIndex::new(&axes?))
}

/// Parses the UTF-8 JSON system schema. Rational coefficients are read
/// exactly from `"p/q"` strings; unknown fields are rejected.
pub fn parse_system(text: &str) -> Result<QuadraticSystem, ModelError> {
    let doc: SystemDoc = serde_json::from_str(text)?;
    let m1 = parse_rat(&doc.masses[0])?;
    let m2 = parse_rat(&doc.masses[1])?;
    let mut sys = QuadraticSystem::new(MassPair::new(m1, m2)?);
    for (index, t) in doc.terms.iter().enumerate() {
        let wrap = |e: ModelError| ModelError::Term {
            index,
            source: Box::new(e),
        };
        let alpha = parse_deriv(&t.alpha).map_err(wrap)?;
        let beta = parse_deriv(&t.beta).map_err(wrap)?;
        let mono = Monomial::new(t.eq, t.k, alpha, t.l, beta).map_err(wrap)?;
        let coeff = parse_rat(&t.coeff).map_err(wrap)?;
        if sys.terms.contains_key(&mono) {
            return Err(ModelError::DuplicateTerm { index });
        }
        sys.add_term(mono, coeff);
    }
    Ok(sys)
}

/// Canonical serialization: terms sorted by monomial key, rationals in
/// lowest terms with positive denominator. `parse ∘ serialize = id`.
pub fn serialize_system(sys: &QuadraticSystem) -> String {
    let doc = SystemDoc {
        masses: [fmt_rat(sys.masses.m1()), fmt_rat(sys.masses.m2())],
        terms: sys
            .terms
            .iter()
            .map(|(m, c)| TermDoc {
                eq: m.eq,
                k: m.k,
                l: m.l,
                alpha: m.alpha.axes().iter().map(|a| a.label().to_string()).collect(),
                beta: m.beta.axes().iter().map(|a| a.label().to_string()).collect(),
                coeff: fmt_rat(c),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("schema serialization cannot fail")
}

// ----- bilinear form expansions shared with the normal-form module -----

/// Monomial expansions of the standard bilinear forms. Each function
/// returns the term list of the named form applied to decorated factors
/// `(∂^α u_k, ∂^β u_l)`, attributed to equation `eq`.
pub mod forms {
    use super::*;

    pub type Terms = Vec<(Monomial, Rat)>;

    fn one() -> Rat {
        Rat::from_integer(1.into())
    }

    fn term(eq: u8, k: u8, alpha: DerivIndex, l: u8, beta: DerivIndex, c: Rat) -> (Monomial, Rat) {
        (Monomial::new(eq, k, alpha, l, beta).expect("form expansion in range"), c)
    }

    /// Strong null form `Q_ab(∂^α u_k, ∂^β u_l)`.
    pub fn qab(
        eq: u8,
        a: Axis,
        b: Axis,
        (k, alpha): (u8, &DerivIndex),
        (l, beta): (u8, &DerivIndex),
    ) -> Terms {
        vec![
            term(eq, k, alpha.with(a), l, beta.with(b), one()),
            term(eq, k, alpha.with(b), l, beta.with(a), -one()),
        ]
    }

    /// `Q_0(∂^α u_k, ∂^β u_l) = (∂_t·)(∂_t·) − ∇·∇`.
    pub fn q0(eq: u8, (k, alpha): (u8, &DerivIndex), (l, beta): (u8, &DerivIndex)) -> Terms {
        vec![
            term(eq, k, alpha.with(Axis::T), l, beta.with(Axis::T), one()),
            term(eq, k, alpha.with(Axis::X1), l, beta.with(Axis::X1), -one()),
            term(eq, k, alpha.with(Axis::X2), l, beta.with(Axis::X2), -one()),
        ]
    }

    /// `G_1(∂^α u_1, ∂^β u_2) = Q_0 − 2 m_1² (∂^α u_1)(∂^β u_2)` (equation 1).
    pub fn g1(masses: &MassPair, alpha: &DerivIndex, beta: &DerivIndex) -> Terms {
        let m1sq = masses.m1() * masses.m1();
        let mut v = q0(1, (1, alpha), (2, beta));
        v.push(term(1, 1, alpha.clone(), 2, beta.clone(), -Rat::from_integer(2.into()) * m1sq));
        v
    }

    /// `G_2(u_1, ∂^α u_1) = Q_0 + m_1² u_1 ∂^α u_1` (equation 2).
    pub fn g2(masses: &MassPair, alpha: &DerivIndex) -> Terms {
        let m1sq = masses.m1() * masses.m1();
        let mut v = q0(2, (1, &DerivIndex::none()), (1, alpha));
        v.push(term(2, 1, DerivIndex::none(), 1, alpha.clone(), m1sq));
        v
    }

    /// `H_{1,a}(∂^α u_1, ∂^β u_2) = φ ∂_a ψ + 2 ψ ∂_a φ` (equation 1).
    pub fn h1(a: Axis, alpha: &DerivIndex, beta: &DerivIndex) -> Terms {
        vec![
            term(1, 1, alpha.clone(), 2, beta.with(a), one()),
            term(1, 1, alpha.with(a), 2, beta.clone(), Rat::from_integer(2.into())),
        ]
    }

    /// `H_{2,a}(u_1, ∂_b u_1) = φ ∂_a ψ − ψ ∂_a φ` (equation 2).
    pub fn h2(a: Axis, b: Axis) -> Terms {
        vec![
            term(2, 1, DerivIndex::none(), 1, DerivIndex::new(&[a, b]), one()),
            term(2, 1, DerivIndex::single(b), 1, DerivIndex::single(a), -one()),
        ]
    }
}

/// A quasi-linear family of null systems with free constants `p_a`
/// (a = 1, 2) and `q_ab` (a, b = 0..2, a + b ≠ 0).
///
/// `F_1 = Σ p_a G_1(u_1, ∂_a u_2) + Σ q_ab H_{1,a}(u_1, ∂_b u_2)`,
/// `F_2 = Σ p_a G_2(u_1, ∂_a u_1) + Σ q_ab H_{2,a}(u_1, ∂_b u_1)`.
pub fn null_example(masses: MassPair, p: &[Rat; 2], q: &[[Rat; 3]; 3]) -> QuadraticSystem {
    let mut sys = QuadraticSystem::new(masses.clone());
    for (i, a) in [Axis::X1, Axis::X2].into_iter().enumerate() {
        if p[i].is_zero() {
            continue;
        }
        for (m, c) in forms::g1(&masses, &DerivIndex::none(), &DerivIndex::single(a)) {
            sys.add_term(m, c * &p[i]);
        }
        for (m, c) in forms::g2(&masses, &DerivIndex::single(a)) {
            sys.add_term(m, c * &p[i]);
        }
    }
    for a in AXES {
        for b in AXES {
            if a == Axis::T && b == Axis::T {
                continue;
            }
            let qc = &q[a.index()][b.index()];
            if qc.is_zero() {
                continue;
            }
            for (m, c) in forms::h1(a, &DerivIndex::none(), &DerivIndex::single(b)) {
                sys.add_term(m, c * qc);
            }
            for (m, c) in forms::h2(a, b) {
                sys.add_term(m, c * qc);
            }
        }
    }
    sys
}

/// The built-in example systems (all with masses `(1, 2)`):
/// `nonnull_resonant`, `null_example` ([`null_example`] with `p_1 = 1`) and
/// `strongnull_only`.
pub fn builtin_systems() -> BTreeMap<String, QuadraticSystem> {
    let masses = || MassPair::new(crate::rat(1, 1), crate::rat(2, 1)).unwrap();
    let mut out = BTreeMap::new();

    // F1 = u1 u2, F2 = u1^2: violates the null condition under resonance.
    let mut nonnull = QuadraticSystem::new(masses());
    nonnull.add_term(
        Monomial::new(1, 1, DerivIndex::none(), 2, DerivIndex::none()).unwrap(),
        crate::rat(1, 1),
    );
    nonnull.add_term(
        Monomial::new(2, 1, DerivIndex::none(), 1, DerivIndex::none()).unwrap(),
        crate::rat(1, 1),
    );
    out.insert("nonnull_resonant".to_string(), nonnull);

    let p = [crate::rat(1, 1), crate::rat(0, 1)];
    let q: [[Rat; 3]; 3] = Default::default();
    out.insert("null_example".to_string(), null_example(masses(), &p, &q));

    // F1 = Q_01(u1, u2), F2 = 0.
    let mut strongnull = QuadraticSystem::new(masses());
    strongnull.add_terms(forms::qab(
        1,
        Axis::T,
        Axis::X1,
        (1, &DerivIndex::none()),
        (2, &DerivIndex::none()),
    ));
    out.insert("strongnull_only".to_string(), strongnull);

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat;

    fn masses12() -> MassPair {
        MassPair::new(rat(1, 1), rat(2, 1)).unwrap()
    }

    fn mono(eq: u8, k: u8, alpha: &[Axis], l: u8, beta: &[Axis]) -> Monomial {
        Monomial::new(eq, k, DerivIndex::new(alpha), l, DerivIndex::new(beta)).unwrap()
    }

    #[test]
    fn monomial_canonicalization_is_order_independent() {
        let a = mono(1, 2, &[], 1, &[Axis::T]);
        let b = mono(1, 1, &[Axis::T], 2, &[]);
        assert_eq!(a, b);
    }

    #[test]
    fn simple_product_term_is_valid() {
        let mut sys = QuadraticSystem::new(masses12());
        sys.add_term(mono(1, 1, &[], 2, &[]), rat(1, 1));
        assert!(sys.validate().is_valid());
    }

    #[test]
    fn gamma00_is_rejected() {
        let mut sys = QuadraticSystem::new(masses12());
        sys.add_term(mono(1, 2, &[], 1, &[Axis::T, Axis::T]), rat(1, 1));
        let report = sys.validate();
        assert!(report.violations.iter().any(|v| v.contains("γ₀₀")));
    }

    #[test]
    fn missing_symmetry_partner_is_rejected() {
        let mut sys = QuadraticSystem::new(masses12());
        // F1 <- u1 ∂1∂2 u2 with no matching F2 <- u1 ∂1∂2 u1.
        sys.add_term(mono(1, 1, &[], 2, &[Axis::X1, Axis::X2]), rat(1, 1));
        let report = sys.validate();
        assert!(report.symmetry.iter().any(|v| v.contains("symmetry")));
        assert!(report.is_checkable() && !report.is_valid());

        // Adding the partner with the same coefficient fixes it.
        sys.add_term(mono(2, 1, &[], 1, &[Axis::X1, Axis::X2]), rat(1, 1));
        assert!(sys.validate().is_valid());
    }

    #[test]
    fn double_second_derivative_is_rejected() {
        let mut sys = QuadraticSystem::new(masses12());
        sys.add_term(
            mono(1, 1, &[Axis::X1, Axis::X1], 2, &[Axis::X2, Axis::X2]),
            rat(1, 1),
        );
        assert!(!sys.validate().is_valid());
    }

    #[test]
    fn parse_examples_from_schema() {
        let text = r#"{"masses":["1","2"],"terms":[{"eq":1,"k":1,"l":2,"alpha":[],"beta":[],"coeff":"1"}]}"#;
        let sys = parse_system(text).unwrap();
        assert_eq!(sys.coeff(&mono(1, 1, &[], 2, &[])), rat(1, 1));

        let frac = r#"{"masses":["1","2"],"terms":[{"eq":1,"k":1,"l":2,"alpha":[],"beta":[],"coeff":"1/3"}]}"#;
        let sys = parse_system(frac).unwrap();
        assert_eq!(sys.coeff(&mono(1, 1, &[], 2, &[])), rat(1, 3));

        let zero_den = r#"{"masses":["1","2"],"terms":[{"eq":1,"k":1,"l":2,"alpha":[],"beta":[],"coeff":"1/0"}]}"#;
        assert!(parse_system(zero_den).is_err());

        let unknown = r#"{"masses":["1","2"],"terms":[],"extra":1}"#;
        assert!(parse_system(unknown).is_err());
    }

    #[test]
    fn serialize_canonicalizes_factor_order() {
        let mut sys = QuadraticSystem::new(masses12());
        // Entered as (k=2, l=1); must serialize with canonical key (1, 2).
        sys.add_term(
            Monomial::new(1, 2, DerivIndex::none(), 1, DerivIndex::none()).unwrap(),
            rat(1, 1),
        );
        let text = serialize_system(&sys);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["terms"][0]["k"], 1);
        assert_eq!(doc["terms"][0]["l"], 2);
    }

    #[test]
    fn empty_system_round_trips() {
        let sys = QuadraticSystem::new(masses12());
        let text = serialize_system(&sys);
        assert_eq!(parse_system(&text).unwrap(), sys);
    }

    #[test]
    fn builtins_are_valid_and_round_trip() {
        for (name, sys) in builtin_systems() {
            assert!(sys.validate().is_valid(), "builtin {name} invalid");
            let back = parse_system(&serialize_system(&sys)).unwrap();
            assert_eq!(back, sys, "builtin {name} round trip");
        }
    }

    #[test]
    fn strongnull_builtin_expands_to_antisymmetric_pair() {
        let sys = &builtin_systems()["strongnull_only"];
        assert_eq!(sys.coeff(&mono(1, 1, &[Axis::T], 2, &[Axis::X1])), rat(1, 1));
        assert_eq!(sys.coeff(&mono(1, 1, &[Axis::X1], 2, &[Axis::T])), rat(-1, 1));
        assert_eq!(sys.terms().count(), 2);
    }

    #[test]
    fn null_example_matches_hand_expansion() {
        // p1 = 1, everything else 0: F1 = G1(u1, ∂1 u2), F2 = G2(u1, ∂1 u1).
        let sys = &builtin_systems()["null_example"];
        let d1 = [Axis::X1];
        // Q0(u1, ∂1 u2) part.
        assert_eq!(sys.coeff(&mono(1, 1, &[Axis::T], 2, &[Axis::T, Axis::X1])), rat(1, 1));
        assert_eq!(sys.coeff(&mono(1, 1, &d1, 2, &[Axis::X1, Axis::X1])), rat(-1, 1));
        assert_eq!(sys.coeff(&mono(1, 1, &[Axis::X2], 2, &[Axis::X1, Axis::X2])), rat(-1, 1));
        // -2 m1^2 u1 ∂1 u2.
        assert_eq!(sys.coeff(&mono(1, 1, &[], 2, &d1)), rat(-2, 1));
        // G2 part: +m1^2 u1 ∂1 u1.
        assert_eq!(sys.coeff(&mono(2, 1, &[], 1, &d1)), rat(1, 1));
        assert_eq!(sys.coeff(&mono(2, 1, &[Axis::T], 1, &[Axis::T, Axis::X1])), rat(1, 1));
    }

    #[test]
    fn mass_pair_rejects_bad_input() {
        assert!(MassPair::new(rat(0, 1), rat(1, 1)).is_err());
        assert!(MassPair::new(rat(-1, 1), rat(1, 1)).is_err());
        assert!(MassPair::new(rat(2, 1), rat(1, 1)).is_err());
        assert!(MassPair::new(rat(1, 1), rat(2, 1)).unwrap().is_resonant());
        assert!(!MassPair::new(rat(1, 1), rat(3, 1)).unwrap().is_resonant());
    }
}
