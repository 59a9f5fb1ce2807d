//! Run diagnostics: energy norm, discrete Sobolev norms, weighted sup
//! norms, decay-exponent fits, and free-profile extraction with
//! Cauchy-convergence tracking.

use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::model::Axis;
use crate::spectral::{Grid, GridState};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("need at least {need} usable rows for the fit, got {got}")]
    InsufficientData { need: usize, got: usize },
}

/// One sampled row of the time series. `cauchy_gap` is filled in by the
/// caller from profile tracking (NaN when no profile was extracted).
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRow {
    pub time: f64,
    pub energy: f64,
    /// s' -> discrete H^{s'} norm of (u, ∂_t u), both components.
    pub sobolev: BTreeMap<u32, f64>,
    /// max over the grid of ⟨t + |x − x₀|⟩·|u_j(t,x)|, per component.
    pub sup_weighted: [f64; 2],
    pub linfty: f64,
    pub cauchy_gap: f64,
}

/// Backward-free-evolved data at time t: the nonlinear solution scatters
/// iff (f⁺(t), g⁺(t)) is Cauchy in t (energy-norm distance between
/// consecutive extractions = `cauchy_gap`).
#[derive(Debug, Clone)]
pub struct ProfileRecord {
    pub time: f64,
    pub fplus: [Vec<Complex64>; 2],
    pub gplus: [Vec<Complex64>; 2],
    pub cauchy_gap: f64,
}

fn ksq(grid: &Grid, idx: usize) -> f64 {
    let n = grid.n();
    let k1 = grid.wavenumber(idx / n);
    let k2 = grid.wavenumber(idx % n);
    k1 * k1 + k2 * k2
}

/// Parseval weight turning Fourier-side sums of |û|² into ∫|u|² dx for
/// the unnormalized forward transform.
fn parseval_weight(grid: &Grid) -> f64 {
    let n = grid.n() as f64;
    let l = grid.length();
    l * l / (n * n * n * n)
}

/// √(Σ_j ½∫ (∂_t u_j)² + |∇u_j|² + m_j² u_j² dx), grid quadrature
/// (spectrally exact for band-limited fields).
pub fn energy_norm(grid: &Grid, state: &GridState, masses: [f64; 2]) -> f64 {
    let mut total = 0.0;
    for j in 0..2 {
        let dx1 = grid.spectral_derivative(&state.u[j], Axis::X1, 1);
        let dx2 = grid.spectral_derivative(&state.u[j], Axis::X2, 1);
        let msq = masses[j] * masses[j];
        let mut acc = 0.0;
        for i in 0..grid.points() {
            let u = state.u[j][i];
            acc += state.ut[j][i] * state.ut[j][i] + dx1[i] * dx1[i] + dx2[i] * dx2[i] + msq * u * u;
        }
        total += 0.5 * acc * grid.cell_area();
    }
    total.sqrt()
}

/// Energy norm computed Fourier-side: Σ_j ½Σ_k (|v̂|² + (|κ|²+m²)|û|²)
/// with Parseval normalization. Agrees with `energy_norm` to roundoff.
pub fn energy_norm_spectral(grid: &Grid, state: &GridState, masses: [f64; 2]) -> f64 {
    let w = parseval_weight(grid);
    let mut total = 0.0;
    for j in 0..2 {
        let uhat = grid.to_spectral(&state.u[j]);
        let vhat = grid.to_spectral(&state.ut[j]);
        let msq = masses[j] * masses[j];
        let mut acc = 0.0;
        for i in 0..grid.points() {
            acc += vhat[i].norm_sqr() + (ksq(grid, i) + msq) * uhat[i].norm_sqr();
        }
        total += 0.5 * acc * w;
    }
    total.sqrt()
}

/// Discrete H^{s'} norm of (u, ∂_t u) over both components:
/// ‖(1+|κ|²)^{s'/2}(û, v̂)‖_{L²}.
pub fn sobolev_norm(grid: &Grid, state: &GridState, sprime: u32) -> f64 {
    let w = parseval_weight(grid);
    let mut acc = 0.0;
    for j in 0..2 {
        let uhat = grid.to_spectral(&state.u[j]);
        let vhat = grid.to_spectral(&state.ut[j]);
        for i in 0..grid.points() {
            let mult = (1.0 + ksq(grid, i)).powi(sprime as i32);
            acc += mult * (uhat[i].norm_sqr() + vhat[i].norm_sqr());
        }
    }
    (acc * w).sqrt()
}

/// Physical-space moment ∫⟨x−x₀⟩^{2k}|u_j|² dx, the periodic-grid
/// surrogate for the weighted data norm (the genuine ⟨x⟩^k weight has no
/// torus analogue). Distances use the minimum image convention.
pub fn weighted_moment(grid: &Grid, state: &GridState, center: [f64; 2], k: u32) -> [f64; 2] {
    let mut out = [0.0; 2];
    for j in 0..2 {
        let mut acc = 0.0;
        for i in 0..grid.points() {
            let r2 = torus_dist_sq(grid, i, center);
            acc += (1.0 + r2).powi(k as i32) * state.u[j][i] * state.u[j][i];
        }
        out[j] = acc * grid.cell_area();
    }
    out
}

fn torus_dist_sq(grid: &Grid, idx: usize, center: [f64; 2]) -> f64 {
    let (x, y) = grid.coords(idx);
    let l = grid.length();
    let mut d1 = (x - center[0]).abs() % l;
    let mut d2 = (y - center[1]).abs() % l;
    if d1 > l / 2.0 {
        d1 = l - d1;
    }
    if d2 > l / 2.0 {
        d2 = l - d2;
    }
    d1 * d1 + d2 * d2
}

/// Samples every diagnostic at once. `center` is the initial-data
/// center (for the ⟨t+|x−x₀|⟩ weight); `orders` selects which Sobolev
/// norms to record.
pub fn diagnostics_row(
    grid: &Grid,
    state: &GridState,
    masses: [f64; 2],
    center: [f64; 2],
    orders: &[u32],
) -> DiagnosticsRow {
    let mut sobolev = BTreeMap::new();
    for &s in orders {
        sobolev.insert(s, sobolev_norm(grid, state, s));
    }
    let mut sup_weighted = [0.0; 2];
    for j in 0..2 {
        let mut best = 0.0f64;
        for i in 0..grid.points() {
            let r = torus_dist_sq(grid, i, center).sqrt();
            let w = (1.0 + (state.time + r) * (state.time + r)).sqrt();
            best = best.max(w * state.u[j][i].abs());
        }
        sup_weighted[j] = best;
    }
    DiagnosticsRow {
        time: state.time,
        energy: energy_norm(grid, state, masses),
        sobolev,
        sup_weighted,
        linfty: state.linfty(),
        cauchy_gap: f64::NAN,
    }
}

/// Least-squares slope of log max|u| vs log t over the supplied rows.
/// Rows at t ≤ 0 or with non-positive sup norm are skipped.
pub fn decay_profile(history: &[DiagnosticsRow]) -> Result<f64, DiagnosticsError> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|r| r.time > 0.0 && r.linfty > 0.0 && r.linfty.is_finite())
        .map(|r| (r.time.ln(), r.linfty.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(DiagnosticsError::InsufficientData {
            need: 5,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(DiagnosticsError::InsufficientData {
            need: 2,
            got: 1,
        });
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Inverse free flow applied to (u(t), ∂_t u(t)):
/// f̂⁺ = cos(tω)û − sin(tω)/ω·v̂, ĝ⁺ = ω sin(tω)û + cos(tω)v̂ with
/// ω = √(m_j² + |κ|²). Exact mode-wise inverse of the linear
/// propagator; for F = 0 it returns the initial data at every t.
pub fn extract_profile(grid: &Grid, state: &GridState, masses: [f64; 2]) -> ProfileRecord {
    let t = state.time;
    let mut fplus: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    let mut gplus: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    for j in 0..2 {
        let uhat = grid.to_spectral(&state.u[j]);
        let vhat = grid.to_spectral(&state.ut[j]);
        let msq = masses[j] * masses[j];
        let mut f = Vec::with_capacity(grid.points());
        let mut g = Vec::with_capacity(grid.points());
        for i in 0..grid.points() {
            let omega = (msq + ksq(grid, i)).sqrt();
            let (c, s) = ((t * omega).cos(), (t * omega).sin());
            f.push(c * uhat[i] - (s / omega) * vhat[i]);
            g.push(omega * s * uhat[i] + c * vhat[i]);
        }
        fplus[j] = f;
        gplus[j] = g;
    }
    ProfileRecord {
        time: t,
        fplus,
        gplus,
        cauchy_gap: f64::NAN,
    }
}

/// Energy-norm distance between two profile extractions.
pub fn profile_gap(grid: &Grid, a: &ProfileRecord, b: &ProfileRecord, masses: [f64; 2]) -> f64 {
    let w = parseval_weight(grid);
    let mut total = 0.0;
    for j in 0..2 {
        let msq = masses[j] * masses[j];
        let mut acc = 0.0;
        for i in 0..grid.points() {
            let df = a.fplus[j][i] - b.fplus[j][i];
            let dg = a.gplus[j][i] - b.gplus[j][i];
            acc += dg.norm_sqr() + (ksq(grid, i) + msq) * df.norm_sqr();
        }
        total += 0.5 * acc * w;
    }
    total.sqrt()
}

/// Energy norm of a profile record itself (distance from zero data).
pub fn profile_norm(grid: &Grid, rec: &ProfileRecord, masses: [f64; 2]) -> f64 {
    let w = parseval_weight(grid);
    let mut total = 0.0;
    for j in 0..2 {
        let msq = masses[j] * masses[j];
        let mut acc = 0.0;
        for i in 0..grid.points() {
            acc += rec.gplus[j][i].norm_sqr() + (ksq(grid, i) + msq) * rec.fplus[j][i].norm_sqr();
        }
        total += 0.5 * acc * w;
    }
    total.sqrt()
}

/// Keeps the previous extraction so each new one comes back with its
/// `cauchy_gap` filled in (NaN for the first).
pub struct ProfileTracker {
    masses: [f64; 2],
    last: Option<ProfileRecord>,
}

impl ProfileTracker {
    pub fn new(masses: [f64; 2]) -> ProfileTracker {
        ProfileTracker { masses, last: None }
    }

    pub fn update(&mut self, grid: &Grid, state: &GridState) -> ProfileRecord {
        let mut rec = extract_profile(grid, state, self.masses);
        if let Some(prev) = &self.last {
            rec.cauchy_gap = profile_gap(grid, &rec, prev, self.masses);
        }
        self.last = Some(rec.clone());
        rec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthVerdict {
    Bounded,
    Growing,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub verdict: GrowthVerdict,
    /// max_t ‖u(t)‖_E / ‖u(0)‖_E
    pub ratio: f64,
    pub monotone_last_half: bool,
}

/// "growing" when the energy is monotone-increasing over the last half
/// of the window and the peak ratio exceeds `threshold` (default 2).
pub fn growth_report(history: &[DiagnosticsRow], threshold: f64) -> GrowthReport {
    let e0 = history.first().map(|r| r.energy).unwrap_or(0.0);
    let emax = history.iter().map(|r| r.energy).fold(0.0f64, f64::max);
    let ratio = if e0 > 0.0 { emax / e0 } else { f64::INFINITY };
    let half = &history[history.len() / 2..];
    let tol = 1e-9 * emax;
    let monotone = half.len() >= 2 && half.windows(2).all(|w| w[1].energy >= w[0].energy - tol);
    let verdict = if monotone && ratio > threshold {
        GrowthVerdict::Growing
    } else {
        GrowthVerdict::Bounded
    };
    GrowthReport {
        verdict,
        ratio,
        monotone_last_half: monotone,
    }
}

pub fn csv_header(orders: &[u32]) -> String {
    let mut cols = vec!["time".to_string(), "energy".to_string()];
    for s in orders {
        cols.push(format!("h{s}"));
    }
    cols.push("sup_weighted_1".into());
    cols.push("sup_weighted_2".into());
    cols.push("linfty".into());
    cols.push("cauchy_gap".into());
    cols.join(",")
}

pub fn csv_row(row: &DiagnosticsRow) -> String {
    let mut cols = vec![format!("{}", row.time), format!("{:.12e}", row.energy)];
    for v in row.sobolev.values() {
        cols.push(format!("{v:.12e}"));
    }
    cols.push(format!("{:.12e}", row.sup_weighted[0]));
    cols.push(format!("{:.12e}", row.sup_weighted[1]));
    cols.push(format!("{:.12e}", row.linfty));
    if row.cauchy_gap.is_nan() {
        cols.push(String::new());
    } else {
        cols.push(format!("{:.12e}", row.cauchy_gap));
    }
    cols.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticSystem;
    use crate::spectral::{run, InitialData, SimConfig};
    use crate::MassPair;

    fn grid32() -> Grid {
        Grid::new(32, 2.0 * std::f64::consts::PI).unwrap()
    }

    fn empty_system() -> QuadraticSystem {
        QuadraticSystem::new(MassPair::new(crate::rat(1, 1), crate::rat(2, 1)).unwrap())
    }

    #[test]
    fn energy_of_zero_and_constant_states() {
        let g = grid32();
        let mut s = GridState::zero(&g, 0.0);
        assert_eq!(energy_norm(&g, &s, [1.0, 2.0]), 0.0);
        let c = 0.7;
        for v in s.u[0].iter_mut() {
            *v = c;
        }
        let area = g.length() * g.length();
        let want = (0.5 * 1.0 * c * c * area).sqrt();
        assert!((energy_norm(&g, &s, [1.0, 2.0]) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn energy_parseval_cross_check() {
        let g = grid32();
        let mut s = GridState::zero(&g, 0.0);
        for i in 0..g.points() {
            let (x, y) = g.coords(i);
            s.u[0][i] = (x).sin() + 0.3 * (2.0 * y).cos();
            s.u[1][i] = 0.5 * (x + y).cos();
            s.ut[0][i] = 0.2 * (3.0 * x).sin();
            s.ut[1][i] = 0.1 * (y).cos();
        }
        let a = energy_norm(&g, &s, [1.0, 2.0]);
        let b = energy_norm_spectral(&g, &s, [1.0, 2.0]);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn sobolev_basics() {
        let g = grid32();
        let mut s = GridState::zero(&g, 0.0);
        for i in 0..g.points() {
            let (x, y) = g.coords(i);
            s.u[0][i] = (2.0 * x + y).sin();
        }
        // s'=0 is the plain L2 norm.
        let l2 = {
            let acc: f64 = s.u[0].iter().map(|v| v * v).sum();
            (acc * g.cell_area()).sqrt()
        };
        let h0 = sobolev_norm(&g, &s, 0);
        assert!((h0 - l2).abs() < 1e-12 * l2);
        // single mode |k|^2 = 5: closed form multiplier.
        let h3 = sobolev_norm(&g, &s, 3);
        let want = (1.0f64 + 5.0).powf(1.5) * l2;
        assert!((h3 - want).abs() < 1e-10 * want);
        // monotone in s'.
        let mut prev = h0;
        for sp in 1..=4 {
            let cur = sobolev_norm(&g, &s, sp);
            assert!(cur >= prev);
            prev = cur;
        }
    }

    #[test]
    fn decay_fit_recovers_power_laws() {
        let mk = |t: f64, m: f64| DiagnosticsRow {
            time: t,
            energy: 1.0,
            sobolev: BTreeMap::new(),
            sup_weighted: [0.0, 0.0],
            linfty: m,
            cauchy_gap: f64::NAN,
        };
        let hist: Vec<_> = (1..=20).map(|i| mk(i as f64, 3.0 / i as f64)).collect();
        let slope = decay_profile(&hist).unwrap();
        assert!((slope + 1.0).abs() < 1e-6);
        let flat: Vec<_> = (1..=10).map(|i| mk(i as f64, 2.5)).collect();
        assert!(decay_profile(&flat).unwrap().abs() < 1e-12);
        let short: Vec<_> = (1..=3).map(|i| mk(i as f64, 1.0)).collect();
        assert!(decay_profile(&short).is_err());
    }

    #[test]
    fn profile_at_time_zero_is_the_data() {
        let g = grid32();
        let mut s = GridState::zero(&g, 0.0);
        for i in 0..g.points() {
            let (x, y) = g.coords(i);
            s.u[0][i] = (x).sin();
            s.ut[1][i] = (y).cos();
        }
        let rec = extract_profile(&g, &s, [1.0, 2.0]);
        let f0 = g.to_physical(&rec.fplus[0]);
        let g1 = g.to_physical(&rec.gplus[1]);
        for i in 0..g.points() {
            assert!((f0[i] - s.u[0][i]).abs() < 1e-12);
            assert!((g1[i] - s.ut[1][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_run_has_constant_profile_and_energy() {
        let g = grid32();
        let config = SimConfig {
            system: empty_system(),
            grid: g.clone(),
            dt: 0.05,
            t_end: 5.0,
            data: InitialData::Gaussian {
                epsilon: 0.1,
                sigma: 0.8,
                center: None,
            },
            dealias: true,
            cadence: 20,
            blowup_factor: 1e3,
            sweeps: 1,
        };
        let masses = config.masses_f64();
        let mut tracker = ProfileTracker::new(masses);
        let mut rows = Vec::new();
        let mut max_gap = 0.0f64;
        run(&config, |state| {
            let rec = tracker.update(&g, state);
            if !rec.cauchy_gap.is_nan() {
                max_gap = max_gap.max(rec.cauchy_gap);
            }
            rows.push(diagnostics_row(&g, state, masses, [0.0, 0.0], &[]));
        })
        .unwrap();
        assert!(rows.len() > 3);
        let e0 = rows[0].energy;
        for r in &rows {
            assert!((r.energy - e0).abs() < 1e-10 * e0);
        }
        assert!(max_gap < 1e-10 * e0);
        let rep = growth_report(&rows, 2.0);
        assert_eq!(rep.verdict, GrowthVerdict::Bounded);
        assert!((rep.ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn synthetic_growth_is_flagged() {
        let hist: Vec<_> = (0..20)
            .map(|i| DiagnosticsRow {
                time: i as f64,
                energy: (0.3 * i as f64).exp(),
                sobolev: BTreeMap::new(),
                sup_weighted: [0.0, 0.0],
                linfty: 1.0,
                cauchy_gap: f64::NAN,
            })
            .collect();
        let rep = growth_report(&hist, 2.0);
        assert_eq!(rep.verdict, GrowthVerdict::Growing);
        assert!(rep.ratio > 100.0);
    }

    #[test]
    fn weighted_sup_and_moment_on_zero_state() {
        let g = grid32();
        let s = GridState::zero(&g, 3.0);
        let row = diagnostics_row(&g, &s, [1.0, 2.0], [1.0, 1.0], &[2]);
        assert_eq!(row.sup_weighted, [0.0, 0.0]);
        assert_eq!(weighted_moment(&g, &s, [1.0, 1.0], 2), [0.0, 0.0]);
    }

    #[test]
    fn csv_shapes_line_up() {
        let header = csv_header(&[2, 4]);
        assert_eq!(
            header,
            "time,energy,h2,h4,sup_weighted_1,sup_weighted_2,linfty,cauchy_gap"
        );
        let g = grid32();
        let s = GridState::zero(&g, 0.0);
        let row = diagnostics_row(&g, &s, [1.0, 2.0], [0.0, 0.0], &[2, 4]);
        let line = csv_row(&row);
        assert_eq!(line.split(',').count(), header.split(',').count());
    }
}
