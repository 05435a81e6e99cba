//! Pointwise material laws: isotropic elasticity, the modified von Mises
//! equivalent strain with analytic first and second derivatives, the
//! exponential damage law, the history variable update, the damage-dependent
//! interaction function, and the coupled stress expressions.

use crate::error::{LgdmError, Result};
use crate::fem::voigt_size;
use serde::{Deserialize, Serialize};

/// Strict-increase threshold for the history variable update: a trial value
/// must exceed the committed history by more than this to count as loading.
pub const HISTORY_THRESHOLD: f64 = 1e-10;

/// Square-root regularization cutoff for the equivalent-strain derivatives.
const RADICAND_FLOOR: f64 = 1e-30;

/// All material constants of the coupled damage model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Young's modulus (MPa).
    pub young: f64,
    /// Poisson's ratio.
    pub poisson: f64,
    /// Ratio of compressive to tensile strength.
    pub strength_ratio: f64,
    /// Damage threshold strain.
    pub kappa0: f64,
    /// Residual-damage parameter of the softening law.
    pub alpha: f64,
    /// Softening rate.
    pub beta: f64,
    /// Coupling modulus between the local and micro equivalent strains (MPa).
    pub coupling_modulus: f64,
    /// Gradient parameter (mm^2); sets the regularization length scale.
    pub gradient_parameter: f64,
    /// Residual of the interaction function at full damage.
    pub interaction_residual: f64,
    /// Decay exponent of the interaction function.
    pub interaction_exponent: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 10] = [
            (self.young > 0.0, "young must be > 0"),
            (
                (0.0..0.5).contains(&self.poisson),
                "poisson must be in [0, 0.5)",
            ),
            (self.strength_ratio >= 1.0, "strength_ratio must be >= 1"),
            (self.kappa0 > 0.0, "kappa0 must be > 0"),
            (
                self.alpha > 0.0 && self.alpha <= 1.0,
                "alpha must be in (0, 1]",
            ),
            (self.beta > 0.0, "beta must be > 0"),
            (self.coupling_modulus > 0.0, "coupling_modulus must be > 0"),
            (
                self.gradient_parameter > 0.0,
                "gradient_parameter must be > 0",
            ),
            (
                self.interaction_residual > 0.0 && self.interaction_residual < 1.0,
                "interaction_residual must be in (0, 1)",
            ),
            (
                self.interaction_exponent > 0.0,
                "interaction_exponent must be > 0",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(LgdmError::InvalidArgument(format!("material: {msg}")));
            }
        }
        Ok(())
    }
}

/// Builds the Voigt elasticity matrix (row major, `voigt_size(dim)` square).
///
/// 1D is the uniaxial scalar `E`; 2D is plane strain; 3D is full isotropic
/// elasticity with engineering shear strains (shear diagonal `G`).
pub fn elasticity_matrix(young: f64, poisson: f64, dim: usize) -> Vec<f64> {
    let v = voigt_size(dim);
    let mut c = vec![0.0; v * v];
    match dim {
        1 => c[0] = young,
        2 | 3 => {
            let f = young / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
            let diag = f * (1.0 - poisson);
            let off = f * poisson;
            let shear = young / (2.0 * (1.0 + poisson));
            let nrm = if dim == 2 { 2 } else { 3 };
            for i in 0..nrm {
                for j in 0..nrm {
                    c[i * v + j] = if i == j { diag } else { off };
                }
            }
            for s in nrm..v {
                c[s * v + s] = shear;
            }
        }
        _ => panic!("unsupported dimension {dim}"),
    }
    c
}

/// Equivalent strain with analytic first and second derivatives with respect
/// to the Voigt strain components.
#[derive(Debug, Clone)]
pub struct EquivalentStrain {
    pub value: f64,
    /// d(eeq)/d(strain), length `voigt_size(dim)`.
    pub grad: Vec<f64>,
    /// d2(eeq)/d(strain)2, row major `voigt_size(dim)` square.
    pub hess: Vec<f64>,
}

/// Modified von Mises equivalent strain
/// `eeq = A I1 + (1/2k) sqrt(B I1^2 + C J2)` with
/// `A = (k-1)/(2k(1-2nu))`, `B = (k-1)^2/(1-2nu)^2`, `C = 2k/(1-nu)^2`,
/// where `I1` and `J2` are invariants of the full strain tensor reconstructed
/// from the Voigt vector (missing normal components are zero, e.g. plane
/// strain `e33 = 0`).
///
/// Near the origin the square root is non-differentiable; below a tiny
/// radicand cutoff the gradient falls back to the smooth `A I1` part and the
/// Hessian to zero.
pub fn equivalent_strain_full(strain: &[f64], params: &MaterialParams, dim: usize) -> EquivalentStrain {
    let v = voigt_size(dim);
    debug_assert_eq!(strain.len(), v);
    let k = params.strength_ratio;
    let nu = params.poisson;
    let a_coef = (k - 1.0) / (2.0 * k * (1.0 - 2.0 * nu));
    let b_coef = (k - 1.0) * (k - 1.0) / ((1.0 - 2.0 * nu) * (1.0 - 2.0 * nu));
    let c_coef = 2.0 * k / ((1.0 - nu) * (1.0 - nu));

    // Normal and tensor-shear components of the reconstructed tensor.
    let (e11, e22, e33) = match dim {
        1 => (strain[0], 0.0, 0.0),
        2 => (strain[0], strain[1], 0.0),
        3 => (strain[0], strain[1], strain[2]),
        _ => panic!("unsupported dimension {dim}"),
    };
    let (e12, e23, e13) = match dim {
        1 => (0.0, 0.0, 0.0),
        2 => (0.5 * strain[2], 0.0, 0.0),
        3 => (0.5 * strain[3], 0.5 * strain[4], 0.5 * strain[5]),
        _ => unreachable!(),
    };
    let i1 = e11 + e22 + e33;
    let m = i1 / 3.0;
    let (d11, d22, d33) = (e11 - m, e22 - m, e33 - m);
    let j2 = 0.5 * (d11 * d11 + d22 * d22 + d33 * d33)
        + e12 * e12 + e23 * e23 + e13 * e13;

    // dI1/dstrain and dJ2/dstrain in Voigt components (engineering shear).
    let mut a = vec![0.0; v];
    let mut j = vec![0.0; v];
    let nrm = if dim == 3 { 3 } else { dim.min(2) };
    let devs = [d11, d22, d33];
    for i in 0..nrm {
        a[i] = 1.0;
        j[i] = devs[i];
    }
    let shears = [e12, e23, e13];
    j[nrm..v].copy_from_slice(&shears[..v - nrm]);

    let rad = b_coef * i1 * i1 + c_coef * j2;
    let mut grad = vec![0.0; v];
    let mut hess = vec![0.0; v * v];
    let value;
    if rad < RADICAND_FLOOR {
        value = a_coef * i1;
        for i in 0..v {
            grad[i] = a_coef * a[i];
        }
    } else {
        let s = rad.sqrt();
        value = a_coef * i1 + s / (2.0 * k);
        // rp = d(rad)/dstrain = 2B I1 a + C j.
        let rp: Vec<f64> = (0..v)
            .map(|i| 2.0 * b_coef * i1 * a[i] + c_coef * j[i])
            .collect();
        for i in 0..v {
            grad[i] = a_coef * a[i] + rp[i] / (4.0 * k * s);
        }
        // d2(J2)/dstrain2: constant. Normal block 2/3 on the diagonal and
        // -1/3 off it; shear diagonal 1/2.
        let mut h_j2 = vec![0.0; v * v];
        for i in 0..nrm {
            for l in 0..nrm {
                h_j2[i * v + l] = if i == l { 2.0 / 3.0 } else { -1.0 / 3.0 };
            }
        }
        for s_i in nrm..v {
            h_j2[s_i * v + s_i] = 0.5;
        }
        // In 1D/2D the out-of-plane normal strain is fixed at zero, so the
        // reduced dJ2/de_ii keeps the full 2/3, -1/3 structure restricted to
        // the retained components.
        for i in 0..v {
            for l in 0..v {
                let h_rad = 2.0 * b_coef * a[i] * a[l] + c_coef * h_j2[i * v + l];
                hess[i * v + l] =
                    (h_rad / (2.0 * s) - rp[i] * rp[l] / (4.0 * rad * s)) / (2.0 * k);
            }
        }
    }
    EquivalentStrain { value, grad, hess }
}

/// Equivalent strain and its first derivative only.
pub fn equivalent_strain(strain: &[f64], params: &MaterialParams, dim: usize) -> (f64, Vec<f64>) {
    let full = equivalent_strain_full(strain, params, dim);
    (full.value, full.grad)
}

/// History update: the running maximum of the micro equivalent strain, with a
/// strict-increase threshold so round-off never registers as fresh loading.
pub fn update_history(micro_eqv: f64, kappa_prev: f64) -> f64 {
    if micro_eqv - kappa_prev > HISTORY_THRESHOLD {
        micro_eqv
    } else {
        kappa_prev
    }
}

/// Exponential-residual damage law: `D = 0` at or below the threshold,
/// otherwise `D = 1 - (kappa0/kappa)(1 - alpha + alpha exp(-beta (kappa - kappa0)))`.
/// Returns `(D, dD/dkappa)`.  The per-point threshold is passed explicitly so
/// locally weakened regions can lower it.
pub fn damage(kappa: f64, kappa0: f64, params: &MaterialParams) -> (f64, f64) {
    if kappa - kappa0 <= HISTORY_THRESHOLD {
        return (0.0, 0.0);
    }
    let alpha = params.alpha;
    let beta = params.beta;
    let ex = (-beta * (kappa - kappa0)).exp();
    let bracket = 1.0 - alpha + alpha * ex;
    let d = 1.0 - kappa0 / kappa * bracket;
    let dd = kappa0 / (kappa * kappa) * bracket + kappa0 / kappa * alpha * beta * ex;
    (d, dd)
}

/// Interaction function controlling how damage shrinks the gradient term:
/// `g = ((1-R) e^{-nD} + R - e^{-n}) / (1 - e^{-n})`.  Returns `(g, dg/dD)`.
pub fn interaction(d: f64, params: &MaterialParams) -> (f64, f64) {
    let r = params.interaction_residual;
    let n = params.interaction_exponent;
    let en = (-n).exp();
    let end = (-n * d).exp();
    let denom = 1.0 - en;
    let g = ((1.0 - r) * end + r - en) / denom;
    let dg = -n * (1.0 - r) * end / denom;
    (g, dg)
}

/// Cauchy stress `sigma = (1-D) C e + h (eeq - micro_eqv) d(eeq)/de` in Voigt
/// components.
pub fn stress(
    strain: &[f64],
    d: f64,
    eeq: f64,
    deeq: &[f64],
    micro_eqv: f64,
    params: &MaterialParams,
    c_matrix: &[f64],
    out: &mut [f64],
) {
    let v = strain.len();
    let h = params.coupling_modulus;
    let mismatch = h * (eeq - micro_eqv);
    for i in 0..v {
        let mut ce = 0.0;
        for l in 0..v {
            ce += c_matrix[i * v + l] * strain[l];
        }
        out[i] = (1.0 - d) * ce + mismatch * deeq[i];
    }
}

/// Micro stress `h (eeq - micro_eqv)` and micro stress flux `g h c grad`,
/// conjugate to the micro strain and its gradient.
pub fn micro_stresses(
    eeq: f64,
    micro_eqv: f64,
    grad_micro: &[f64],
    g: f64,
    params: &MaterialParams,
) -> (f64, Vec<f64>) {
    let sigma_bar = params.coupling_modulus * (eeq - micro_eqv);
    let factor = g * params.coupling_modulus * params.gradient_parameter;
    let xi = grad_micro.iter().map(|&gr| factor * gr).collect();
    (sigma_bar, xi)
}

/// Free energy density of the coupled model (diagnostic):
/// elastic term + coupling term + gradient term.
pub fn free_energy_density(
    strain: &[f64],
    d: f64,
    eeq: f64,
    micro_eqv: f64,
    grad_micro: &[f64],
    g: f64,
    params: &MaterialParams,
    c_matrix: &[f64],
) -> f64 {
    let v = strain.len();
    let mut elastic = 0.0;
    for i in 0..v {
        for l in 0..v {
            elastic += strain[i] * c_matrix[i * v + l] * strain[l];
        }
    }
    let h = params.coupling_modulus;
    let mismatch = eeq - micro_eqv;
    let grad_sq: f64 = grad_micro.iter().map(|&gr| gr * gr).sum();
    0.5 * (1.0 - d) * elastic
        + 0.5 * h * mismatch * mismatch
        + 0.5 * g * h * params.gradient_parameter * grad_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_params() -> MaterialParams {
        MaterialParams {
            young: 20_000.0,
            poisson: 0.2,
            strength_ratio: 10.0,
            kappa0: 1e-4,
            alpha: 0.99,
            beta: 100.0,
            coupling_modulus: 20_000.0,
            gradient_parameter: 4.0,
            interaction_residual: 0.005,
            interaction_exponent: 5.0,
        }
    }

    /// Independent oracle: builds the full 3x3 tensor, computes the
    /// invariants from first principles, and evaluates the closed form.
    fn eqv_oracle(strain: &[f64], params: &MaterialParams, dim: usize) -> f64 {
        let mut t = [[0.0_f64; 3]; 3];
        match dim {
            1 => t[0][0] = strain[0],
            2 => {
                t[0][0] = strain[0];
                t[1][1] = strain[1];
                t[0][1] = 0.5 * strain[2];
                t[1][0] = t[0][1];
            }
            3 => {
                t[0][0] = strain[0];
                t[1][1] = strain[1];
                t[2][2] = strain[2];
                t[0][1] = 0.5 * strain[3];
                t[1][0] = t[0][1];
                t[1][2] = 0.5 * strain[4];
                t[2][1] = t[1][2];
                t[0][2] = 0.5 * strain[5];
                t[2][0] = t[0][2];
            }
            _ => unreachable!(),
        }
        let i1 = t[0][0] + t[1][1] + t[2][2];
        let mut dev = t;
        for i in 0..3 {
            dev[i][i] -= i1 / 3.0;
        }
        let mut j2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                j2 += 0.5 * dev[i][j] * dev[i][j];
            }
        }
        let k = params.strength_ratio;
        let nu = params.poisson;
        let a = (k - 1.0) / (2.0 * k * (1.0 - 2.0 * nu));
        let b = (k - 1.0) * (k - 1.0) / ((1.0 - 2.0 * nu) * (1.0 - 2.0 * nu));
        let c = 2.0 * k / ((1.0 - nu) * (1.0 - nu));
        a * i1 + (b * i1 * i1 + c * j2).sqrt() / (2.0 * k)
    }

    #[test]
    fn elasticity_1d_is_young() {
        let c = elasticity_matrix(20_000.0, 0.2, 1);
        assert_eq!(c, vec![20_000.0]);
    }

    #[test]
    fn elasticity_3d_zero_poisson() {
        let e = 1000.0;
        let c = elasticity_matrix(e, 0.0, 3);
        assert!((c[0] - e).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert!((c[3 * 6 + 3] - e / 2.0).abs() < 1e-12);
    }

    #[test]
    fn elasticity_2d_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let nu: f64 = rng.gen_range(0.0..0.49);
            let c = elasticity_matrix(1.0, nu, 2);
            // Symmetric 3x3: check leading principal minors.
            let m1 = c[0];
            let m2 = c[0] * c[4] - c[1] * c[3];
            let det = c[0] * (c[4] * c[8] - c[5] * c[7])
                - c[1] * (c[3] * c[8] - c[5] * c[6])
                + c[2] * (c[3] * c[7] - c[4] * c[6]);
            assert!(m1 > 0.0 && m2 > 0.0 && det > 0.0, "nu = {nu}");
        }
    }

    #[test]
    fn equivalent_strain_zero_at_origin() {
        let p = test_params();
        for dim in [1_usize, 2, 3] {
            let strain = vec![0.0; voigt_size(dim)];
            let e = equivalent_strain_full(&strain, &p, dim);
            assert_eq!(e.value, 0.0);
        }
    }

    #[test]
    fn equivalent_strain_matches_tensor_oracle() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for dim in [1_usize, 2, 3] {
            for _ in 0..100 {
                let strain: Vec<f64> = (0..voigt_size(dim))
                    .map(|_| rng.gen_range(-1e-3..1e-3))
                    .collect();
                let got = equivalent_strain_full(&strain, &p, dim).value;
                let want = eqv_oracle(&strain, &p, dim);
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1e-6),
                    "dim {dim}: {got} vs {want}"
                );
                assert!(got >= -1e-15, "dim {dim}: negative eeq {got}");
            }
        }
    }

    #[test]
    fn equivalent_strain_homogeneous_degree_one() {
        let p = test_params();
        let strain = [3e-4, -1e-4, 2e-4];
        let base = equivalent_strain_full(&strain, &p, 2).value;
        for lambda in [2.0, 10.0, 0.5] {
            let scaled: Vec<f64> = strain.iter().map(|s| s * lambda).collect();
            let v = equivalent_strain_full(&scaled, &p, 2).value;
            assert!((v - lambda * base).abs() < 1e-12 * lambda * base.abs().max(1.0));
        }
    }

    #[test]
    fn equivalent_strain_gradient_matches_fd() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-7;
        for dim in [1_usize, 2, 3] {
            for _ in 0..100 {
                let strain: Vec<f64> = (0..voigt_size(dim))
                    .map(|_| rng.gen_range(-1e-3..1e-3))
                    .collect();
                let e = equivalent_strain_full(&strain, &p, dim);
                for i in 0..strain.len() {
                    let mut sp = strain.clone();
                    let mut sm = strain.clone();
                    sp[i] += step;
                    sm[i] -= step;
                    let fd = (equivalent_strain_full(&sp, &p, dim).value
                        - equivalent_strain_full(&sm, &p, dim).value)
                        / (2.0 * step);
                    let scale = e.grad[i].abs().max(1e-3);
                    assert!(
                        (e.grad[i] - fd).abs() <= 1e-6 * scale,
                        "dim {dim} comp {i}: {} vs FD {fd}",
                        e.grad[i]
                    );
                }
            }
        }
    }

    #[test]
    fn equivalent_strain_hessian_matches_fd() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for dim in [1_usize, 2, 3] {
            for _ in 0..25 {
                let strain: Vec<f64> = (0..voigt_size(dim))
                    .map(|_| rng.gen_range(1e-4..1e-3))
                    .collect();
                // Third derivatives scale like 1/|strain|^2, so the FD step
                // must track the strain magnitude to keep truncation small.
                let step = 1e-4 * strain.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
                let v = voigt_size(dim);
                let e = equivalent_strain_full(&strain, &p, dim);
                for i in 0..v {
                    let mut sp = strain.clone();
                    let mut sm = strain.clone();
                    sp[i] += step;
                    sm[i] -= step;
                    let gp = equivalent_strain_full(&sp, &p, dim).grad;
                    let gm = equivalent_strain_full(&sm, &p, dim).grad;
                    for l in 0..v {
                        let fd = (gp[l] - gm[l]) / (2.0 * step);
                        let scale = e.hess[i * v + l].abs().max(1.0);
                        assert!(
                            (e.hess[i * v + l] - fd).abs() <= 1e-4 * scale,
                            "dim {dim} ({i},{l}): {} vs FD {fd}",
                            e.hess[i * v + l]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn history_threshold_semantics() {
        assert_eq!(update_history(0.5e-3, 1e-3), 1e-3);
        assert_eq!(update_history(2e-3, 1e-3), 2e-3);
        assert_eq!(update_history(1e-3 + 1e-12, 1e-3), 1e-3);
    }

    #[test]
    fn damage_below_threshold_is_zero() {
        let p = test_params();
        let (d, dd) = damage(0.5 * p.kappa0, p.kappa0, &p);
        assert_eq!((d, dd), (0.0, 0.0));
        let (d0, _) = damage(p.kappa0, p.kappa0, &p);
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn damage_matches_direct_formula() {
        let p = test_params();
        let kappa = 10.0 * p.kappa0;
        let (d, _) = damage(kappa, p.kappa0, &p);
        let want = 1.0
            - p.kappa0 / kappa
                * (1.0 - p.alpha + p.alpha * (-p.beta * (kappa - p.kappa0)).exp());
        assert!((d - want).abs() < 1e-15);
    }

    #[test]
    fn damage_derivative_matches_fd() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let kappa = p.kappa0 * rng.gen_range(1.5..50.0);
            let (_, dd) = damage(kappa, p.kappa0, &p);
            let step = 1e-9;
            let fd =
                (damage(kappa + step, p.kappa0, &p).0 - damage(kappa - step, p.kappa0, &p).0)
                    / (2.0 * step);
            assert!((dd - fd).abs() <= 1e-5 * dd.abs().max(1.0), "{dd} vs {fd}");
        }
    }

    #[test]
    fn damage_monotone_and_bounded() {
        let p = test_params();
        let mut prev = -1.0;
        for i in 0..1000 {
            let kappa = p.kappa0 * (0.5 + 49.5 * (i as f64) / 999.0);
            let (d, dd) = damage(kappa, p.kappa0, &p);
            assert!((0.0..1.0).contains(&d), "kappa {kappa}: D = {d}");
            assert!(d >= prev, "D decreased at kappa {kappa}");
            assert!(dd >= 0.0);
            prev = d;
        }
    }

    #[test]
    fn interaction_endpoints_and_fd() {
        let p = test_params();
        let (g0, _) = interaction(0.0, &p);
        let (g1, _) = interaction(1.0, &p);
        assert!((g0 - 1.0).abs() < 1e-14);
        assert!((g1 - p.interaction_residual).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let d = rng.gen_range(0.0..1.0);
            let (_, dg) = interaction(d, &p);
            assert!(dg < 0.0);
            let step = 1e-7;
            let fd = (interaction(d + step, &p).0 - interaction(d - step, &p).0) / (2.0 * step);
            assert!((dg - fd).abs() <= 1e-8 * dg.abs().max(1.0));
        }
    }

    #[test]
    fn stress_elastic_limit_and_full_damage() {
        let p = test_params();
        let c = elasticity_matrix(p.young, p.poisson, 2);
        let strain = [2e-4, -1e-4, 1.5e-4];
        let e = equivalent_strain_full(&strain, &p, 2);
        // D = 0 and matched fields: pure elastic.
        let mut s = [0.0; 3];
        stress(&strain, 0.0, e.value, &e.grad, e.value, &p, &c, &mut s);
        for i in 0..3 {
            let ce: f64 = (0..3).map(|l| c[i * 3 + l] * strain[l]).sum();
            assert!((s[i] - ce).abs() < 1e-10);
        }
        // D = 1 and matched fields: zero stress.
        stress(&strain, 1.0, e.value, &e.grad, e.value, &p, &c, &mut s);
        for v in s {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn stress_matches_two_term_oracle() {
        let p = test_params();
        let c = elasticity_matrix(p.young, p.poisson, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let strain: Vec<f64> = (0..6).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
            let e = equivalent_strain_full(&strain, &p, 3);
            let d = rng.gen_range(0.0..0.99);
            let micro = e.value * rng.gen_range(0.5..1.5);
            let mut s = [0.0; 6];
            stress(&strain, d, e.value, &e.grad, micro, &p, &c, &mut s);
            for i in 0..6 {
                let ce: f64 = (0..6).map(|l| c[i * 6 + l] * strain[l]).sum();
                let want = (1.0 - d) * ce + p.coupling_modulus * (e.value - micro) * e.grad[i];
                assert!((s[i] - want).abs() < 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn micro_stresses_closed_forms() {
        let p = test_params();
        let (sb, xi) = micro_stresses(2e-4, 2e-4, &[0.0, 0.0], 0.7, &p);
        assert_eq!(sb, 0.0);
        assert_eq!(xi, vec![0.0, 0.0]);
        let grad = [1e-3, -2e-3];
        let (_, xi1) = micro_stresses(3e-4, 1e-4, &grad, 0.7, &p);
        let grad2 = [2e-3, -4e-3];
        let (_, xi2) = micro_stresses(3e-4, 1e-4, &grad2, 0.7, &p);
        for i in 0..2 {
            assert!((xi2[i] - 2.0 * xi1[i]).abs() < 1e-15);
            let want = 0.7 * p.coupling_modulus * p.gradient_parameter * grad[i];
            assert!((xi1[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn free_energy_terms() {
        let p = test_params();
        let c = elasticity_matrix(p.young, p.poisson, 2);
        let zero = [0.0; 3];
        assert_eq!(
            free_energy_density(&zero, 0.0, 0.0, 0.0, &[0.0, 0.0], 1.0, &p, &c),
            0.0
        );
        let strain = [2e-4, 1e-4, -1e-4];
        let grad = [1e-3, 2e-3];
        let (eeq, _) = equivalent_strain(&strain, &p, 2);
        let micro = 0.8 * eeq;
        let g = 0.6;
        let got = free_energy_density(&strain, 0.3, eeq, micro, &grad, g, &p, &c);
        let mut elastic = 0.0;
        for i in 0..3 {
            for l in 0..3 {
                elastic += strain[i] * c[i * 3 + l] * strain[l];
            }
        }
        let want = 0.5 * 0.7 * elastic
            + 0.5 * p.coupling_modulus * (eeq - micro) * (eeq - micro)
            + 0.5
                * g
                * p.coupling_modulus
                * p.gradient_parameter
                * (grad[0] * grad[0] + grad[1] * grad[1]);
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        // More damage never increases the elastic part.
        let more = free_energy_density(&strain, 0.9, eeq, micro, &grad, g, &p, &c);
        assert!(more <= got);
    }

    #[test]
    fn validate_rejects_bad_poisson() {
        let mut p = test_params();
        p.poisson = 0.5;
        assert!(p.validate().is_err());
        p.poisson = 0.2;
        assert!(p.validate().is_ok());
    }
}
