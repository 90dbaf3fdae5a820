//! Invariant zeros of (possibly non-square) Rosenbrock pencils and the
//! unbiasedness classification of the fault subsystem.
//!
//! A tall pencil `A0 - lambda B0` is compressed to square form with two
//! independent seeded orthonormal projections. Finite generalized eigenvalues
//! of each square pencil are computed by shift-and-invert; true zeros appear
//! in both candidate sets while projection artifacts do not. Every surviving
//! candidate is then confirmed with a complex SVD on the original pencil.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};

use super::{fault_matrices, FaultConfig, PredictorModel};

/// `sigma_min / scale` at or below this confirms a candidate zero.
const CONFIRM_RTOL: f64 = 1e-7;
/// `sigma_min / scale` at or above this rejects a candidate.
const REJECT_RTOL: f64 = 1e-4;
/// Null vectors whose fault part has norm below this are unobservable modes.
const FAULT_PART_TOL: f64 = 1e-8;
const PROJECTION_SEEDS: [u64; 2] = [0x5eed_0001, 0x5eed_0002];
const SHIFTS: [f64; 4] = [0.754_877_666_2, -1.324_717_957_2, 2.718_281_828_5, -0.381_966_011_3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroKind {
    TransmissionZero,
    UnobservableMode,
}

#[derive(Clone, Copy, Debug)]
pub struct InvariantZero {
    pub value: Complex<f64>,
    pub kind: ZeroKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Unbiased,
    AsymptoticallyUnbiased,
    Biased,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Unbiased => "unbiased",
            Verdict::AsymptoticallyUnbiased => "asymptotically-unbiased",
            Verdict::Biased => "biased",
        })
    }
}

#[derive(Clone, Debug)]
pub struct UnbiasednessReport {
    pub transmission_zeros: Vec<Complex<f64>>,
    pub unobservable_modes: Vec<Complex<f64>>,
    pub observability_index: usize,
    pub tau: usize,
    pub verdict: Verdict,
}

impl UnbiasednessReport {
    fn from_zeros(zeros: &[InvariantZero], nu: usize, tau: usize) -> Self {
        let pick = |k: ZeroKind| zeros.iter().filter(|z| z.kind == k).map(|z| z.value).collect::<Vec<_>>();
        let transmission_zeros = pick(ZeroKind::TransmissionZero);
        let unobservable_modes = pick(ZeroKind::UnobservableMode);
        let verdict = if transmission_zeros.is_empty() {
            Verdict::Unbiased
        } else if transmission_zeros.iter().all(|z| z.norm() < 1.0) {
            Verdict::AsymptoticallyUnbiased
        } else {
            Verdict::Biased
        };
        UnbiasednessReport { transmission_zeros, unobservable_modes, observability_index: nu, tau, verdict }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pairs = |v: &[Complex<f64>]| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
        serde_json::json!({
            "verdict": self.verdict.to_string(),
            "tau": self.tau,
            "observability_index": self.observability_index,
            "transmission_zeros": pairs(&self.transmission_zeros),
            "unobservable_modes": pairs(&self.unobservable_modes),
        })
    }
}

/// Smallest `nu` with `rank O_nu = rank O_n` for the pair `(C, Phi)`.
pub fn observability_index(c: &Mat, phi: &Mat) -> usize {
    let n = phi.nrows();
    let full = linalg::numerical_rank(&linalg::observability(c, phi, n.max(1)));
    (1..=n.max(1))
        .find(|&k| linalg::numerical_rank(&linalg::observability(c, phi, k)) == full)
        .unwrap_or(n)
}

/// Invariant zeros of the Rosenbrock pencil `[A - lambda I, B; C, D]`.
/// The pencil may have more rows than columns.
pub fn invariant_zeros(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<Vec<InvariantZero>> {
    let n = a.nrows();
    let top = linalg::hcat(&[a, b])?;
    let bottom = linalg::hcat(&[c, d])?;
    let a0 = linalg::vcat(&[&top, &bottom])?;
    let mut b0 = Mat::zeros(a0.nrows(), a0.ncols());
    for i in 0..n {
        b0[(i, i)] = 1.0;
    }
    pencil_zeros(&a0, &b0, n)
}

fn shifted(a0: &Mat, b0: &Mat, lambda: Complex<f64>) -> CMat {
    linalg::complex(a0) - linalg::complex(b0) * lambda
}

fn random_orthonormal_rows(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat::from_fn(cols, rows, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q().transpose()
}

/// Finite generalized eigenvalues of a square pencil `(m_a, m_b)` by shift-and-invert.
fn square_pencil_eigenvalues(m_a: &Mat, m_b: &Mat, limit: f64) -> Vec<Complex<f64>> {
    for &s in &SHIFTS {
        let ms = m_a - m_b * s;
        let sv = linalg::singular_values(&ms);
        let (Some(&smax), Some(&smin)) = (sv.first(), sv.last()) else { return Vec::new() };
        if smin <= 1e-8 * smax {
            continue;
        }
        let Ok(inv) = linalg::inverse(&ms) else { continue };
        let t = inv * m_b;
        let mus = linalg::eigenvalues(&t);
        let mu_scale = mus.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
        return mus
            .into_iter()
            .filter(|mu| mu.norm() > 1e-9 * mu_scale.max(f64::MIN_POSITIVE))
            .map(|mu| Complex::new(s, 0.0) + mu.inv())
            .filter(|lam| lam.norm() <= limit)
            .collect();
    }
    Vec::new()
}

fn pencil_zeros(a0: &Mat, b0: &Mat, n_state: usize) -> Result<Vec<InvariantZero>> {
    let (rows, cols) = a0.shape();
    if rows < cols {
        return Err(Error::DegeneratePencil);
    }
    let a_norm = linalg::singular_values(a0).first().copied().unwrap_or(0.0);
    let b_norm = linalg::singular_values(b0).first().copied().unwrap_or(0.0);
    let scale_at = |lam: Complex<f64>| (a_norm + lam.norm() * b_norm).max(f64::MIN_POSITIVE);

    // normal rank at a generic point
    let probe = Complex::new(0.318_309_886_2, 0.618_033_988_7);
    let sv = linalg::complex_singular_values(&shifted(a0, b0, probe));
    let tol = linalg::rank_tolerance_from(rows, scale_at(probe));
    if sv.iter().filter(|&&s| s > tol).count() < cols {
        return Err(Error::DegeneratePencil);
    }
    if n_state == 0 {
        return Ok(Vec::new());
    }

    let limit = 1e6 * (1.0 + a_norm);
    let candidates: Vec<Complex<f64>> = if rows == cols {
        square_pencil_eigenvalues(a0, b0, limit)
    } else {
        let sets: Vec<Vec<Complex<f64>>> = PROJECTION_SEEDS
            .iter()
            .map(|&seed| {
                let w = random_orthonormal_rows(cols, rows, seed);
                square_pencil_eigenvalues(&(&w * a0), &(&w * b0), limit)
            })
            .collect();
        let mut other = sets[1].clone();
        let mut agreed = Vec::new();
        for z in &sets[0] {
            let best = other
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (w - z).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, dist)) = best {
                if dist <= 1e-6 * (1.0 + z.norm()) {
                    agreed.push((z + other[i]) * 0.5);
                    other.swap_remove(i);
                }
            }
        }
        agreed
    };

    let mut zeros = Vec::new();
    for lam in candidates {
        let lam = if lam.im.abs() <= 1e-10 * (1.0 + lam.norm()) { Complex::new(lam.re, 0.0) } else { lam };
        let pencil = shifted(a0, b0, lam);
        let svd = pencil.clone().svd(false, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let smin = svd.singular_values[order[0]];
        let ratio = smin / scale_at(lam);
        if ratio >= REJECT_RTOL {
            continue;
        }
        if ratio > CONFIRM_RTOL {
            return Err(Error::NumericalRankAmbiguity { re: lam.re, im: lam.im, ratio: ratio / CONFIRM_RTOL });
        }
        // null space: every right singular vector under the confirmation threshold
        let v_t = svd.v_t.expect("V^H requested");
        let max_f = order
            .iter()
            .filter(|&&i| svd.singular_values[i] / scale_at(lam) <= CONFIRM_RTOL)
            .map(|&i| {
                (n_state..cols).map(|c| v_t[(i, c)].norm_sqr()).sum::<f64>().sqrt()
            })
            .fold(0.0_f64, f64::max);
        let kind = if max_f <= FAULT_PART_TOL { ZeroKind::UnobservableMode } else { ZeroKind::TransmissionZero };
        zeros.push(InvariantZero { value: lam, kind });
    }
    zeros.sort_by(|x, y| x.value.re.total_cmp(&y.value.re).then(x.value.im.total_cmp(&y.value.im)));
    Ok(zeros)
}

/// Classification of the fault subsystem `(Phi, Etilde, C, G)` from its matrices.
pub fn fault_subsystem_report(phi: &Mat, e_tilde: &Mat, c: &Mat, g: &Mat) -> Result<UnbiasednessReport> {
    let n = phi.nrows();
    let (ny, nf) = g.shape();
    let mut hf = vec![g.clone()];
    let mut c_phi = c.clone();
    for _ in 1..=n + 1 {
        hf.push(&c_phi * e_tilde);
        c_phi = &c_phi * phi;
    }
    let tau = super::relative_degree_of(&hf, ny, nf)?;
    let obs = linalg::observability(c, phi, tau + 1);
    let h_stack = linalg::vcat(&hf[..=tau].iter().collect::<Vec<_>>())?;
    let zeros = invariant_zeros(phi, e_tilde, &obs, &h_stack)?;
    let nu = observability_index(c, phi);
    Ok(UnbiasednessReport::from_zeros(&zeros, nu, tau))
}

/// Theorem-style unbiasedness verdict for the predictor fault subsystem.
pub fn unbiasedness_check(pred: &PredictorModel, cfg: &FaultConfig) -> Result<UnbiasednessReport> {
    let ch = fault_matrices(pred, cfg)?;
    fault_subsystem_report(&pred.phi, &ch.e_tilde, &pred.c, &ch.g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn companion(a0: f64, a1: f64, b0: f64, b1: f64) -> (Mat, Mat, Mat, Mat) {
        let phi = Mat::from_row_slice(2, 2, &[0.0, 1.0, -a0, -a1]);
        let e = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = Mat::from_row_slice(1, 2, &[b0, b1]);
        (phi, e, c, Mat::zeros(1, 1))
    }

    #[test]
    fn scalar_fixture_has_no_zeros() {
        let m = |v: f64| Mat::from_element(1, 1, v);
        let r = fault_subsystem_report(&m(0.5), &m(1.0), &m(1.0), &m(0.0)).unwrap();
        assert_eq!(r.tau, 1);
        assert!(r.transmission_zeros.is_empty());
        assert_eq!(r.verdict, Verdict::Unbiased);
    }

    #[test]
    fn companion_zero_matches_numerator_root() {
        let (phi, e, c, g) = companion(0.06, -0.5, -1.2, 1.0);
        let r = fault_subsystem_report(&phi, &e, &c, &g).unwrap();
        assert_eq!(r.transmission_zeros.len(), 1);
        assert!((r.transmission_zeros[0] - Complex::new(1.2, 0.0)).norm() < 1e-9);
        assert_eq!(r.verdict, Verdict::Biased);
    }

    #[test]
    fn unobservable_mode_is_separated() {
        // second state is decoupled from output and fault
        let phi = Mat::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.7]);
        let e = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = fault_subsystem_report(&phi, &e, &c, &Mat::zeros(1, 1)).unwrap();
        assert!(r.transmission_zeros.is_empty());
        assert_eq!(r.unobservable_modes.len(), 1);
        assert!((r.unobservable_modes[0].re - 0.7).abs() < 1e-9);
        assert_eq!(r.verdict, Verdict::Unbiased);
    }

    #[test]
    fn wide_pencil_is_degenerate() {
        let phi = Mat::from_row_slice(1, 1, &[0.5]);
        let e = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        let c = Mat::from_row_slice(1, 1, &[1.0]);
        let err = invariant_zeros(&phi, &e, &c, &Mat::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::DegeneratePencil));
    }

    #[test]
    fn observability_index_of_chain() {
        let phi = Mat::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.2, 0.3]);
        let c = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(observability_index(&c, &phi), 3);
        assert_eq!(observability_index(&Mat::identity(3, 3), &phi), 1);
    }
}
