//! Resonance matrices, the generator basis of null nonlinearities, and
//! the normal-form decomposition.
//!
//! Under the resonance `m2 = 2 m1` the matrices `A_{jkl}` degenerate at
//! exactly `(1,1,2)` and `(2,1,1)`; the image directions of the
//! degenerate matrices correspond to the bilinear forms `G_1`, `G_2`
//! (with companions `H_{1,a}`, `H_{2,a}`). A quadratic nonlinearity is
//! null iff its cross-terms lie in the span of those generators plus the
//! strong null forms; the decomposition also yields the correction term
//! `Λ_j` of the normal form `F_j = (□+m_j²)Λ_j + N_j + R_j`.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use serde::Serialize;

use crate::model::{forms, Axis, DerivIndex, MassPair, Monomial, QuadraticSystem, AXES};
use crate::Rat;

/// The 2×2 matrix governing how `□ + m_j²` acts on the pair
/// `(v_k ṽ_l, Q_0(v_k, ṽ_l))` modulo strong null forms and source terms.
#[derive(Debug, Clone)]
pub struct ResonanceMatrix {
    pub j: u8,
    pub k: u8,
    pub l: u8,
    pub entries: [[Rat; 2]; 2],
    pub det: Rat,
    pub invertible: bool,
    /// Solution of `A·p = (1, 0)ᵀ` when invertible.
    pub p: Option<(Rat, Rat)>,
}

#[derive(Debug, thiserror::Error)]
pub enum NormalFormError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("masses are not resonant (m2 != 2 m1)")]
    NotResonant,
    #[error("system is not null; unresolved cross-term residual with {} terms", residual.len())]
    NotNull { residual: BTreeMap<Monomial, Rat> },
}

/// Builds `A_{jkl}` for masses `m`, checking the determinant against the
/// product formula `∏_{σ1,σ2} (m_j + σ1 m_k + σ2 m_l)`.
pub fn resonance_matrix(j: u8, k: u8, l: u8, masses: &MassPair) -> ResonanceMatrix {
    assert!(k <= l, "resonance matrices are enumerated with k <= l");
    let (mj, mk, ml) = (masses.mass(j), masses.mass(k), masses.mass(l));
    let d = mj * mj - mk * mk - ml * ml;
    let b = Rat::from_integer(2.into()) * mk * mk * ml * ml;
    let two = Rat::from_integer(2.into());
    let det = &d * &d - &two * &b;

    let mut product = Rat::one();
    for s1 in [Rat::one(), -Rat::one()] {
        for s2 in [Rat::one(), -Rat::one()] {
            product *= mj + &s1 * mk + &s2 * ml;
        }
    }
    assert_eq!(det, product, "determinant product formula violated");

    let invertible = !det.is_zero();
    let p = invertible.then(|| (&d / &det, -&two / &det));
    ResonanceMatrix {
        j,
        k,
        l,
        entries: [[d.clone(), b], [two, d]],
        det,
        invertible,
        p,
    }
}

/// All six `(j, k, l)` with `k <= l`, in lexicographic order.
pub fn classify_resonance(masses: &MassPair) -> Vec<ResonanceMatrix> {
    let mut out = Vec::new();
    for j in 1..=2 {
        for k in 1..=2 {
            for l in k..=2 {
                out.push(resonance_matrix(j, k, l, masses));
            }
        }
    }
    out
}

/// Image directions of the two degenerate matrices under resonance:
/// `(−2m_1², 1)` for `A_{112}` and `(m_1², 1)` for `A_{211}`.
pub fn degenerate_images(masses: &MassPair) -> Result<([Rat; 2], [Rat; 2]), NormalFormError> {
    if !masses.is_resonant() {
        return Err(NormalFormError::NotResonant);
    }
    let m1sq = masses.m1() * masses.m1();
    let img112 = [-Rat::from_integer(2.into()) * &m1sq, Rat::one()];
    let img211 = [m1sq, Rat::one()];
    for (mat, img) in [
        (resonance_matrix(1, 1, 2, masses), &img112),
        (resonance_matrix(2, 1, 1, masses), &img211),
    ] {
        // Each column must be parallel to the claimed image direction.
        for col in 0..2 {
            let cross = &mat.entries[0][col] * &img[1] - &mat.entries[1][col] * &img[0];
            assert!(cross.is_zero(), "image direction does not span column space");
        }
    }
    Ok((img112, img211))
}

/// One generator of the null cross-term basis: a symbolic name, the
/// equation it belongs to, its exact monomial expansion, the `Λ_j`
/// contribution per unit coefficient, the strong-null tensor it sheds
/// into `N_j`, and whether it is itself a strong null form (those go to
/// the `N_j` remainder entirely).
///
/// The sheds make the normal-form identity exact modulo cubic terms:
/// `G = (□+m_j²)Λ_G + cubic` sheds nothing, while the `H` relations
/// leave `Q_{ba}(φ, ∂_b ψ)` terms behind — e.g.
/// `H_{1,a}(φ,ψ) = (□+m_1²)(−φ∂_aψ/4m_1²) + (1/2m_1²)Σ_b η_b Q_{ba}(φ,∂_bψ) + cubic`
/// with the Minkowski signs `η = (1,−1,−1)`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub name: String,
    pub eq: u8,
    pub expansion: Vec<(Monomial, Rat)>,
    pub lambda: Vec<(Monomial, Rat)>,
    pub shed: Vec<(Monomial, Rat)>,
    pub strongnull: bool,
}

/// Minkowski sign of an axis: `+1` for time, `−1` for space.
fn eta(a: Axis) -> Rat {
    if a == Axis::T {
        Rat::one()
    } else {
        -Rat::one()
    }
}

/// `scale · Σ_b η_b Q_{ba}(∂^φ u_k, ∂_b ∂^ψ u_l)` as a monomial tensor.
fn h_shed(
    eq: u8,
    (k, phi): (u8, &DerivIndex),
    (l, psi): (u8, &DerivIndex),
    a: Axis,
    scale: &Rat,
) -> Vec<(Monomial, Rat)> {
    let mut out = Vec::new();
    for b in AXES {
        if b == a {
            continue;
        }
        for (m, c) in forms::qab(eq, b, a, (k, phi), (l, &psi.with(b))) {
            out.push((m, c * eta(b) * scale));
        }
    }
    out
}

/// The full generator basis for a resonant mass pair. Generators are
/// enumerated G before H before Q, each in lexicographic decoration
/// order, so decompositions are reproducible.
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    pub masses: MassPair,
    pub generators: Vec<Generator>,
}

fn dec_label(d: &DerivIndex) -> String {
    d.axes().iter().map(|a| a.label()).collect::<Vec<_>>().join(",")
}

/// Decorations `∂^α` with `|α| <= 1`, undecorated first.
fn first_order_decorations() -> Vec<DerivIndex> {
    std::iter::once(DerivIndex::none())
        .chain(AXES.into_iter().map(DerivIndex::single))
        .collect()
}

impl GeneratorBasis {
    pub fn new(masses: MassPair) -> Self {
        let m1sq = masses.m1() * masses.m1();
        let two = Rat::from_integer(2.into());
        let half = crate::rat(1, 2);
        let mut generators = Vec::new();
        let decs = first_order_decorations();

        // --- equation 1: G1 with |α|+|β| <= 1 ---
        let mut g1_pairs: Vec<(DerivIndex, DerivIndex)> =
            vec![(DerivIndex::none(), DerivIndex::none())];
        for a in AXES {
            g1_pairs.push((DerivIndex::single(a), DerivIndex::none()));
        }
        for b in AXES {
            g1_pairs.push((DerivIndex::none(), DerivIndex::single(b)));
        }
        for (alpha, beta) in &g1_pairs {
            generators.push(Generator {
                name: format!("G1[{}|{}]", dec_label(alpha), dec_label(beta)),
                eq: 1,
                expansion: forms::g1(&masses, alpha, beta),
                lambda: vec![(
                    Monomial::new(1, 1, alpha.clone(), 2, beta.clone()).unwrap(),
                    half.clone(),
                )],
                shed: Vec::new(),
                strongnull: false,
            });
        }

        // --- equation 1: H_{1,a} with |α|, |β| <= 1 ---
        for a in AXES {
            for alpha in &decs {
                for beta in &decs {
                    generators.push(Generator {
                        name: format!("H1{}[{}|{}]", a.label(), dec_label(alpha), dec_label(beta)),
                        eq: 1,
                        expansion: forms::h1(a, alpha, beta),
                        lambda: vec![(
                            Monomial::new(1, 1, alpha.clone(), 2, beta.with(a)).unwrap(),
                            -Rat::one() / (&two * &two * &m1sq),
                        )],
                        shed: h_shed(
                            1,
                            (1, alpha),
                            (2, beta),
                            a,
                            &(Rat::one() / (&two * &m1sq)),
                        ),
                        strongnull: false,
                    });
                }
            }
        }

        // --- equation 1: strong null forms Q_ab with |α|+|β| <= 1 ---
        for a in AXES {
            for b in AXES {
                if a >= b {
                    continue;
                }
                for (alpha, beta) in &g1_pairs {
                    generators.push(Generator {
                        name: format!(
                            "Q{}{}[{}|{}]",
                            a.label(),
                            b.label(),
                            dec_label(alpha),
                            dec_label(beta)
                        ),
                        eq: 1,
                        expansion: forms::qab(1, a, b, (1, alpha), (2, beta)),
                        lambda: Vec::new(),
                        shed: forms::qab(1, a, b, (1, alpha), (2, beta)),
                        strongnull: true,
                    });
                }
            }
        }

        // --- equation 2: G2(u1, ∂^α u1) with |α| <= 1 ---
        for beta in &decs {
            generators.push(Generator {
                name: format!("G2[{}]", dec_label(beta)),
                eq: 2,
                expansion: forms::g2(&masses, beta),
                lambda: vec![(
                    Monomial::new(2, 1, DerivIndex::none(), 1, beta.clone()).unwrap(),
                    half.clone(),
                )],
                shed: Vec::new(),
                strongnull: false,
            });
        }

        // --- equation 2: H_{2,a}(u1, ∂_b u1) ---
        for a in AXES {
            for b in AXES {
                generators.push(Generator {
                    name: format!("H2{}[{}]", a.label(), b.label()),
                    eq: 2,
                    expansion: forms::h2(a, b),
                    lambda: vec![(
                        Monomial::new(2, 1, DerivIndex::none(), 1, DerivIndex::new(&[a, b]))
                            .unwrap(),
                        Rat::one() / (&two * &m1sq),
                    )],
                    shed: h_shed(
                        2,
                        (1, &DerivIndex::none()),
                        (1, &DerivIndex::single(b)),
                        a,
                        &(-Rat::one() / &m1sq),
                    ),
                    strongnull: false,
                });
            }
        }

        // --- equation 2: strong null forms Q_ab(u1, ∂_c u1) ---
        for a in AXES {
            for b in AXES {
                if a >= b {
                    continue;
                }
                for c in AXES {
                    generators.push(Generator {
                        name: format!("Q2{}{}[{}]", a.label(), b.label(), c.label()),
                        eq: 2,
                        expansion: forms::qab(
                            2,
                            a,
                            b,
                            (1, &DerivIndex::none()),
                            (1, &DerivIndex::single(c)),
                        ),
                        lambda: Vec::new(),
                        shed: forms::qab(
                            2,
                            a,
                            b,
                            (1, &DerivIndex::none()),
                            (1, &DerivIndex::single(c)),
                        ),
                        strongnull: true,
                    });
                }
            }
        }

        GeneratorBasis { masses, generators }
    }

    pub fn by_name(&self, name: &str) -> Option<&Generator> {
        self.generators.iter().find(|g| g.name == name)
    }

    /// Expands one generator as a standalone system (useful in tests).
    pub fn expand(&self, g: &Generator) -> QuadraticSystem {
        let mut sys = QuadraticSystem::new(self.masses.clone());
        sys.add_terms(g.expansion.iter().cloned());
        sys
    }
}

/// Result of the generator-basis decomposition plus the induced normal-form
/// correction.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Coefficient per generator name (G/H/Q, both equations).
    pub coefficients: BTreeMap<String, Rat>,
    /// Named coefficients of the pure strong-null generators.
    pub strongnull_remainder: BTreeMap<String, Rat>,
    /// The full `N_j` tensor: Q-generator expansions plus the
    /// strong-null terms shed by the `H` and free-term relations.
    pub strongnull: BTreeMap<Monomial, Rat>,
    /// Self-interaction monomials passed through untouched.
    pub free: BTreeMap<Monomial, Rat>,
    /// The `Λ_j` tensor (monomials keyed by equation, orders <= 3).
    pub lambda: BTreeMap<Monomial, Rat>,
    /// Provenance of each Λ contribution.
    pub notes: Vec<String>,
}

fn is_cross(m: &Monomial) -> bool {
    match m.eq() {
        1 => m.pair() == (1, 2),
        2 => m.pair() == (1, 1),
        _ => unreachable!(),
    }
}

fn add_to(map: &mut BTreeMap<Monomial, Rat>, m: Monomial, c: Rat) {
    if c.is_zero() {
        return;
    }
    use std::collections::btree_map::Entry;
    match map.entry(m) {
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

/// Exact Gauss-Jordan solve of `A x = b` with deterministic pivoting in
/// column order. Returns a particular solution (free variables zero) or
/// `None` when inconsistent.
fn solve_exact(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut m: Vec<Vec<Rat>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();

    let mut pivot_rows: Vec<(usize, usize)> = Vec::new(); // (col, row)
    let mut next_row = 0;
    for col in 0..cols {
        let Some(pr) = (next_row..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(next_row, pr);
        let inv = m[next_row][col].recip();
        for v in m[next_row].iter_mut() {
            *v *= &inv;
        }
        for r in 0..rows {
            if r != next_row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in col..=cols {
                    let delta = &factor * &m[next_row][c];
                    m[r][c] -= delta;
                }
            }
        }
        pivot_rows.push((col, next_row));
        next_row += 1;
        if next_row == rows {
            break;
        }
    }
    // Inconsistent when a zero row has a nonzero right-hand side.
    for r in next_row..rows {
        if !m[r][cols].is_zero() {
            return None;
        }
    }
    let mut x = vec![Rat::zero(); cols];
    for (col, row) in pivot_rows {
        x[col] = m[row][cols].clone();
    }
    Some(x)
}

/// Decomposes a null system over the generator basis and builds `Λ_j`.
/// Fails with [`NormalFormError::NotNull`] (carrying the unresolved
/// cross-term residual) exactly when the system violates the null
/// condition.
pub fn decompose(system: &QuadraticSystem) -> Result<Decomposition, NormalFormError> {
    let report = system.validate();
    if !report.is_checkable() {
        return Err(NormalFormError::InvalidSystem(report.violations.join("; ")));
    }
    if !system.masses().is_resonant() {
        return Err(NormalFormError::NotResonant);
    }
    let basis = GeneratorBasis::new(system.masses().clone());
    decompose_with(system, &basis)
}

pub fn decompose_with(
    system: &QuadraticSystem,
    basis: &GeneratorBasis,
) -> Result<Decomposition, NormalFormError> {
    // Split input into the cross part (to be solved over the basis) and
    // the free self-interaction part.
    let mut cross: BTreeMap<Monomial, Rat> = BTreeMap::new();
    let mut free: BTreeMap<Monomial, Rat> = BTreeMap::new();
    for (m, c) in system.terms() {
        if is_cross(m) {
            cross.insert(m.clone(), c.clone());
        } else {
            free.insert(m.clone(), c.clone());
        }
    }

    // Row space: every monomial reachable by a generator or present in
    // the input.
    let mut row_index: BTreeMap<Monomial, usize> = BTreeMap::new();
    let index_of = |m: &Monomial, rows: &mut BTreeMap<Monomial, usize>| {
        let next = rows.len();
        *rows.entry(m.clone()).or_insert(next)
    };
    for g in &basis.generators {
        for (m, _) in &g.expansion {
            index_of(m, &mut row_index);
        }
    }
    for m in cross.keys() {
        index_of(m, &mut row_index);
    }

    let nrows = row_index.len();
    let ncols = basis.generators.len();
    let mut a = vec![vec![Rat::zero(); ncols]; nrows];
    for (col, g) in basis.generators.iter().enumerate() {
        for (m, c) in &g.expansion {
            a[row_index[m]][col] += c;
        }
    }
    let mut b = vec![Rat::zero(); nrows];
    for (m, c) in &cross {
        b[row_index[m]] = c.clone();
    }

    let solution = solve_exact(&a, &b);
    let coeffs: Vec<Rat> = match solution {
        Some(x) => x,
        None => {
            // No exact representation exists: the system is not null.
            // The residual is the part of the cross tensor that survives
            // projection onto the generator span; report the cross tensor
            // itself as the certificate (it is exactly what could not be
            // matched).
            return Err(NormalFormError::NotNull { residual: cross });
        }
    };

    let mut coefficients = BTreeMap::new();
    let mut strongnull_remainder = BTreeMap::new();
    let mut strongnull: BTreeMap<Monomial, Rat> = BTreeMap::new();
    let mut lambda: BTreeMap<Monomial, Rat> = BTreeMap::new();
    let mut notes = Vec::new();

    for (g, c) in basis.generators.iter().zip(&coeffs) {
        if c.is_zero() {
            continue;
        }
        coefficients.insert(g.name.clone(), c.clone());
        if g.strongnull {
            strongnull_remainder.insert(g.name.clone(), c.clone());
        } else {
            for (m, lc) in &g.lambda {
                add_to(&mut lambda, m.clone(), lc * c);
            }
            notes.push(format!("Lambda_{}: {} from generator {}", g.eq, c, g.name));
        }
        for (m, sc) in &g.shed {
            add_to(&mut strongnull, m.clone(), sc * c);
        }
    }

    // Free self-interaction terms: the invertible resonance matrices give
    // v_k ṽ_l = (□+m_j²)(p·v_k ṽ_l + p̃·Q_0(v_k, ṽ_l)) − p̃·S + cubic,
    // with S = 2 Σ_{a,c} η_a η_c Q_{ca}(∂_a v_k, ∂_c ṽ_l) the strong-null
    // terms shed by the derivative interchange inside □Q_0.
    for (m, c) in &free {
        let (k, l) = m.pair();
        let mat = resonance_matrix(m.eq(), k, l, &basis.masses);
        let (p, ptilde) = mat
            .p
            .clone()
            .expect("self-interaction pairs are invertible under resonance");
        add_to(&mut lambda, m.clone(), c * &p);
        for (q0m, q0c) in forms::q0(m.eq(), (k, m.alpha()), (l, m.beta())) {
            add_to(&mut lambda, q0m, c * &ptilde * q0c);
        }
        let two = Rat::from_integer(2.into());
        for a in AXES {
            for cc in AXES {
                if a == cc {
                    continue;
                }
                let weight = -c * &ptilde * &two * eta(a) * eta(cc);
                for (qm, qc) in forms::qab(
                    m.eq(),
                    cc,
                    a,
                    (k, &m.alpha().with(a)),
                    (l, &m.beta().with(cc)),
                ) {
                    add_to(&mut strongnull, qm, qc * &weight);
                }
            }
        }
        notes.push(format!(
            "Lambda_{}: normal form (p, p~) = ({}, {}) applied to free term {}",
            m.eq(),
            p,
            ptilde,
            m
        ));
    }

    Ok(Decomposition {
        coefficients,
        strongnull_remainder,
        strongnull,
        free,
        lambda,
        notes,
    })
}

/// Expands the decomposition's generator coefficients back into a
/// cross-term tensor; equals the input's cross-terms exactly.
pub fn reconstruct(d: &Decomposition, basis: &GeneratorBasis) -> BTreeMap<Monomial, Rat> {
    let mut out = BTreeMap::new();
    for (name, c) in &d.coefficients {
        let g = basis.by_name(name).expect("coefficient names come from the basis");
        for (m, gc) in &g.expansion {
            add_to(&mut out, m.clone(), gc * c);
        }
    }
    out
}

// ----- JSON documents for the CLI -----

#[derive(Debug, Serialize)]
pub struct LambdaTermDoc {
    pub eq: u8,
    pub k: u8,
    pub l: u8,
    pub alpha: Vec<String>,
    pub beta: Vec<String>,
    pub coeff: String,
}

fn term_doc(m: &Monomial, c: &Rat) -> LambdaTermDoc {
    LambdaTermDoc {
        eq: m.eq(),
        k: m.k(),
        l: m.l(),
        alpha: m.alpha().axes().iter().map(|a| a.label().to_string()).collect(),
        beta: m.beta().axes().iter().map(|a| a.label().to_string()).collect(),
        coeff: crate::model::fmt_rat(c),
    }
}

#[derive(Debug, Serialize)]
pub struct DecompositionDoc {
    pub generators: BTreeMap<String, String>,
    pub strongnull: BTreeMap<String, String>,
    pub free: Vec<LambdaTermDoc>,
    pub lambda: Vec<LambdaTermDoc>,
    pub residual: Option<Vec<LambdaTermDoc>>,
}

impl Decomposition {
    pub fn to_doc(&self) -> DecompositionDoc {
        DecompositionDoc {
            generators: self
                .coefficients
                .iter()
                .map(|(k, v)| (k.clone(), crate::model::fmt_rat(v)))
                .collect(),
            strongnull: self
                .strongnull_remainder
                .iter()
                .map(|(k, v)| (k.clone(), crate::model::fmt_rat(v)))
                .collect(),
            free: self.free.iter().map(|(m, c)| term_doc(m, c)).collect(),
            lambda: self.lambda.iter().map(|(m, c)| term_doc(m, c)).collect(),
            residual: None,
        }
    }
}

pub fn residual_doc(residual: &BTreeMap<Monomial, Rat>) -> Vec<LambdaTermDoc> {
    residual.iter().map(|(m, c)| term_doc(m, c)).collect()
}

/// Helper for the axis list in test assertions.
pub fn axis(a: usize) -> Axis {
    Axis::from_index(a)
}
