//! Per-Gauss-point solution-dependent variables, stored as flat arrays over
//! all `nel * ngp` points so whole-model kernels can sweep them linearly.

use crate::constitutive::{
    damage, equivalent_strain_full, interaction, stress, update_history, MaterialParams,
    HISTORY_THRESHOLD,
};

/// Solution-dependent state at every Gauss point of the model.
///
/// All arrays have length `npts` times the per-point component count.
/// `kappa` holds the trial history of the current iteration; the committed
/// (start-of-step) history lives with the solver and is passed into updates.
#[derive(Debug, Clone)]
pub struct GpState {
    pub npts: usize,
    pub dim: usize,
    /// Voigt components per point.
    pub voigt: usize,
    pub strain: Vec<f64>,
    pub eeq: Vec<f64>,
    /// d(eeq)/d(strain), `voigt` per point.
    pub deeq: Vec<f64>,
    /// d2(eeq)/d(strain)2, `voigt^2` per point.
    pub heeq: Vec<f64>,
    /// Micro equivalent strain interpolated at the point.
    pub micro: Vec<f64>,
    /// Spatial gradient of the micro field, `dim` per point.
    pub grad_micro: Vec<f64>,
    /// Trial history variable.
    pub kappa: Vec<f64>,
    /// Per-point damage threshold (lowered inside defect regions).
    pub kappa0: Vec<f64>,
    pub damage: Vec<f64>,
    /// dD/dkappa at the trial state.
    pub ddamage: Vec<f64>,
    /// Loading indicator: true when the trial micro strain exceeds the
    /// committed history, so kappa follows the micro field in the tangent.
    pub loading: Vec<bool>,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GpState {
    /// Virgin state: zero fields, history at the local threshold.
    pub fn new(npts: usize, dim: usize, kappa0: Vec<f64>, params: &MaterialParams) -> Self {
        assert_eq!(kappa0.len(), npts);
        let v = crate::fem::voigt_size(dim);
        let (g0, dg0) = interaction(0.0, params);
        GpState {
            npts,
            dim,
            voigt: v,
            strain: vec![0.0; npts * v],
            eeq: vec![0.0; npts],
            deeq: vec![0.0; npts * v],
            heeq: vec![0.0; npts * v * v],
            micro: vec![0.0; npts],
            grad_micro: vec![0.0; npts * dim],
            kappa: kappa0.clone(),
            kappa0,
            damage: vec![0.0; npts],
            ddamage: vec![0.0; npts],
            loading: vec![false; npts],
            g: vec![g0; npts],
            dg: vec![dg0; npts],
            sigma: vec![0.0; npts * v],
        }
    }

    /// Recomputes all derived quantities at point `i` from the kinematic
    /// fields already written there (`strain`, `micro`, `grad_micro`),
    /// measuring loading against the committed history `kappa_committed`.
    pub(crate) fn update_point(
        &mut self,
        i: usize,
        kappa_committed: f64,
        params: &MaterialParams,
        c_matrix: &[f64],
    ) {
        let v = self.voigt;
        let strain = &self.strain[i * v..(i + 1) * v];
        let eq = equivalent_strain_full(strain, params, self.dim);
        self.eeq[i] = eq.value;
        self.deeq[i * v..(i + 1) * v].copy_from_slice(&eq.grad);
        self.heeq[i * v * v..(i + 1) * v * v].copy_from_slice(&eq.hess);

        let micro = self.micro[i];
        let kappa = update_history(micro, kappa_committed);
        self.kappa[i] = kappa;
        self.loading[i] = micro - kappa_committed > HISTORY_THRESHOLD;
        let (d, dd) = damage(kappa, self.kappa0[i], params);
        self.damage[i] = d;
        self.ddamage[i] = dd;
        let (g, dg) = interaction(d, params);
        self.g[i] = g;
        self.dg[i] = dg;
        stress(
            &self.strain[i * v..(i + 1) * v],
            d,
            eq.value,
            &eq.grad,
            micro,
            params,
            c_matrix,
            &mut self.sigma[i * v..(i + 1) * v],
        );
    }
}
