use nalgebra::DVector;

use super::NestStructure;

/// Per-draw choice probabilities for one market.
///
/// Reuses its buffers across draws; `evaluate` overwrites every field.
pub(crate) struct DrawKernel<'a> {
    nests: &'a NestStructure,
    rho: f64,
    /// Scaled utility `(delta_j + mu_ij) / (1 - rho)`.
    scaled: Vec<f64>,
    /// `log sum_{k in g} exp(scaled_k)` per group, index 0 unused.
    group_lse: Vec<f64>,
    group_max: Vec<f64>,
    /// Inclusive values `(1 - rho) * group_lse`, `-inf` for empty groups.
    pub inclusive: Vec<f64>,
    /// Group choice probabilities, index 0 is the outside good.
    pub group_prob: Vec<f64>,
    /// Within-group probabilities `s_{j|g}`.
    pub within: Vec<f64>,
    /// Unconditional probabilities `s_j = s_{j|g} * s_g`.
    pub shares: Vec<f64>,
    /// `log(1 + sum_g exp IV_g)`.
    pub log_denominator: f64,
}

impl<'a> DrawKernel<'a> {
    pub fn new(nests: &'a NestStructure, rho: f64) -> Self {
        let j = nests.len();
        let g = nests.n_groups() + 1;
        Self {
            nests,
            rho,
            scaled: vec![0.0; j],
            group_lse: vec![0.0; g],
            group_max: vec![0.0; g],
            inclusive: vec![f64::NEG_INFINITY; g],
            group_prob: vec![0.0; g],
            within: vec![0.0; j],
            shares: vec![0.0; j],
            log_denominator: 0.0,
        }
    }

    /// Evaluates probabilities for a consumer whose random price taste is
    /// `taste` (that is, `mu_ij = taste * p_j`).
    pub fn evaluate(&mut self, delta: &DVector<f64>, prices: &DVector<f64>, taste: f64) {
        let scale = 1.0 / (1.0 - self.rho);
        let groups = self.nests.groups();

        self.group_max.iter_mut().for_each(|m| *m = f64::NEG_INFINITY);
        for (j, &g) in groups.iter().enumerate() {
            let u = (delta[j] + taste * prices[j]) * scale;
            self.scaled[j] = u;
            if u > self.group_max[g] {
                self.group_max[g] = u;
            }
        }

        self.group_lse.iter_mut().for_each(|s| *s = 0.0);
        for (j, &g) in groups.iter().enumerate() {
            self.group_lse[g] += (self.scaled[j] - self.group_max[g]).exp();
        }

        let mut top = 0.0_f64;
        for g in 1..self.group_lse.len() {
            if self.group_max[g] == f64::NEG_INFINITY {
                self.inclusive[g] = f64::NEG_INFINITY;
                continue;
            }
            self.group_lse[g] = self.group_max[g] + self.group_lse[g].ln();
            self.inclusive[g] = (1.0 - self.rho) * self.group_lse[g];
            top = top.max(self.inclusive[g]);
        }

        let mut total = (-top).exp();
        for g in 1..self.inclusive.len() {
            total += (self.inclusive[g] - top).exp();
        }
        self.log_denominator = top + total.ln();

        self.group_prob[0] = (-self.log_denominator).exp();
        for g in 1..self.inclusive.len() {
            self.group_prob[g] = (self.inclusive[g] - self.log_denominator).exp();
        }

        for (j, &g) in groups.iter().enumerate() {
            let within = (self.scaled[j] - self.group_lse[g]).exp();
            self.within[j] = within;
            self.shares[j] = within * self.group_prob[g];
        }
    }
}
