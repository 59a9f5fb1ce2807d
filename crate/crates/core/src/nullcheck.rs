//! Exact decision of the null condition and human-readable certificates.
//!
//! The symbols `Φ_1`, `Φ_2` are computed by substituting the oscillatory
//! ansatz into the quadratic part, projecting onto the `e^{−2πijθ}`
//! mode and reducing modulo the hyperboloid relation. The system is
//! null iff both reduced polynomials vanish identically.

use num_complex::Complex64;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::model::QuadraticSystem;
use crate::trigpoly::{fourier_pick, reduce_hyperboloid, substitute, OmegaPoly};
use crate::Rat;

#[derive(Debug, Clone)]
pub struct NullVerdict {
    pub is_null: bool,
    /// Hyperboloid-reduced `(Φ_1, Φ_2)`.
    pub phi: (OmegaPoly, OmegaPoly),
    /// Whether `m2 = 2 m1` holds exactly. The symbols are computed for
    /// any masses; without resonance the null condition is not required
    /// for global existence and the verdict merely annotates this.
    pub resonant: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum NullcheckError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

/// Decides the null condition exactly.
pub fn check_null(system: &QuadraticSystem) -> Result<NullVerdict, NullcheckError> {
    let report = system.validate();
    if !report.is_checkable() {
        return Err(NullcheckError::InvalidSystem(report.violations.join("; ")));
    }
    let phi1 = reduce_hyperboloid(&fourier_pick(&substitute(system, 1), 1));
    let phi2 = reduce_hyperboloid(&fourier_pick(&substitute(system, 2), 2));
    Ok(NullVerdict {
        is_null: phi1.is_zero() && phi2.is_zero(),
        phi: (phi1, phi2),
        resonant: system.masses().is_resonant(),
    })
}

/// A point of the hyperboloid where some `Φ_j` is provably nonzero.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    /// Which symbol the witness refutes (1 or 2).
    pub component: u8,
    pub omega: [f64; 3],
    /// Exact witness value when `ω` is rational (e.g. the apex (1,0,0)).
    pub exact_value: Option<String>,
    pub value_re: f64,
    pub value_im: f64,
}

fn is_perfect_square(r: &Rat) -> Option<Rat> {
    let ns = r.numer().sqrt();
    let ds = r.denom().sqrt();
    if &(&ns * &ns) == r.numer() && &(&ds * &ds) == r.denom() {
        Some(Rat::new(ns, ds))
    } else {
        None
    }
}

/// Deterministic witness search on the `ω0 > 0` sheet: small rational
/// `(ω1, ω2)` are scanned in a fixed order so certificates reproduce.
/// Prefers points where `ω0` is itself rational so the value can be
/// stated exactly.
pub fn find_witness(phi1: &OmegaPoly, phi2: &OmegaPoly) -> Option<Witness> {
    let mut candidates: Vec<(Rat, Rat)> = Vec::new();
    for den in [1i64, 2, 3] {
        for n1 in -6i64..=6 {
            for n2 in -6i64..=6 {
                candidates.push((Rat::new(n1.into(), den.into()), Rat::new(n2.into(), den.into())));
            }
        }
    }
    candidates.sort_by(|a, b| {
        let na = &a.0 * &a.0 + &a.1 * &a.1;
        let nb = &b.0 * &b.0 + &b.1 * &b.1;
        na.cmp(&nb).then_with(|| a.cmp(b))
    });
    candidates.dedup();

    let mut numeric_fallback: Option<Witness> = None;
    for (w1, w2) in candidates {
        let w0sq = Rat::from_integer(1.into()) + &w1 * &w1 + &w2 * &w2;
        for (component, phi) in [(1u8, phi1), (2u8, phi2)] {
            if phi.is_zero() {
                continue;
            }
            if let Some(w0) = is_perfect_square(&w0sq) {
                let value = phi.eval_exact(&[w0.clone(), w1.clone(), w2.clone()]);
                if !value.is_zero() {
                    return Some(Witness {
                        component,
                        omega: [
                            w0.to_f64().unwrap(),
                            w1.to_f64().unwrap(),
                            w2.to_f64().unwrap(),
                        ],
                        exact_value: Some(value.to_string()),
                        value_re: value.to_complex().re,
                        value_im: value.to_complex().im,
                    });
                }
            } else if numeric_fallback.is_none() {
                let omega = [
                    w0sq.to_f64().unwrap().sqrt(),
                    w1.to_f64().unwrap(),
                    w2.to_f64().unwrap(),
                ];
                let v: Complex64 = phi.eval_f64(omega);
                if v.norm() > 1e-9 {
                    numeric_fallback = Some(Witness {
                        component,
                        omega,
                        exact_value: None,
                        value_re: v.re,
                        value_im: v.im,
                    });
                }
            }
        }
    }
    numeric_fallback
}

/// Pretty-prints the verdict: the exact symbols, and a witness point
/// when the condition fails. Meant to be checkable by hand.
pub fn certificate_report(v: &NullVerdict) -> String {
    let mut out = String::new();
    out.push_str(&format!("Phi_1 = {}\n", v.phi.0));
    out.push_str(&format!("Phi_2 = {}\n", v.phi.1));
    out.push_str(&format!(
        "masses: {}\n",
        if v.resonant { "resonant (m2 = 2 m1)" } else { "non-resonant (null condition not required for global existence)" }
    ));
    if v.is_null {
        out.push_str("null condition: SATISFIED\n");
    } else {
        out.push_str("null condition: VIOLATED\n");
        match find_witness(&v.phi.0, &v.phi.1) {
            Some(w) => {
                out.push_str(&format!(
                    "witness: Phi_{} at omega = ({}, {}, {})",
                    w.component, w.omega[0], w.omega[1], w.omega[2]
                ));
                match &w.exact_value {
                    Some(exact) => out.push_str(&format!(" has exact value {exact}\n")),
                    None => out.push_str(&format!(
                        " has value {} + {} i\n",
                        w.value_re, w.value_im
                    )),
                }
            }
            None => {
                // No small witness; the nonzero reduced polynomial is
                // itself the certificate.
                let phi = if v.phi.0.is_zero() { &v.phi.1 } else { &v.phi.0 };
                let lead = phi.terms().last();
                if let Some((e, c)) = lead {
                    out.push_str(&format!(
                        "witness: none on the sampled grid; reduced symbol is nonzero with leading term {} w0^{} w1^{} w2^{}\n",
                        c, e[0], e[1], e[2]
                    ));
                }
            }
        }
    }
    out
}

/// JSON document for the CLI `check` subcommand.
#[derive(Debug, Serialize)]
pub struct VerdictDoc {
    pub is_null: bool,
    pub resonant: bool,
    pub phi1: Vec<crate::trigpoly::PolyTermRecord>,
    pub phi2: Vec<crate::trigpoly::PolyTermRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl NullVerdict {
    pub fn to_doc(&self) -> VerdictDoc {
        VerdictDoc {
            is_null: self.is_null,
            resonant: self.resonant,
            phi1: self.phi.0.to_records(),
            phi2: self.phi.1.to_records(),
            witness: if self.is_null {
                None
            } else {
                find_witness(&self.phi.0, &self.phi.1)
            },
        }
    }
}
