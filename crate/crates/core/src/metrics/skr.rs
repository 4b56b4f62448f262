//! Finite-key secret key length for the three-state time-bin protocol with one
//! decoy intensity (Rusca et al., Appl. Phys. Lett. 112, 171104, 2018).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts and parameters for one key block. Index 0 is the signal intensity `mu1`, index 1 the decoy `mu2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkrInputs {
    /// Z-basis detections per intensity.
    pub n_z: [u64; 2],
    /// Z-basis bit errors per intensity.
    pub m_z: [u64; 2],
    /// X-basis detections per intensity.
    pub n_x: [u64; 2],
    /// X-basis errors per intensity.
    pub m_x: [u64; 2],
    pub mu: [f64; 2],
    /// Probability of sending each intensity.
    pub p_mu: [f64; 2],
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
    /// Acquisition time of the block (s).
    pub acquisition_s: f64,
}

impl Default for SkrInputs {
    fn default() -> Self {
        Self {
            n_z: [0; 2],
            m_z: [0; 2],
            n_x: [0; 2],
            m_x: [0; 2],
            mu: [0.7, 0.3],
            p_mu: [0.5, 0.5],
            eps_sec: 1e-12,
            eps_cor: 1e-15,
            f_ec: 1.16,
            acquisition_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkrReport {
    /// Secret key rate (bit/s); zero when infeasible.
    pub skr: f64,
    /// Secret key length of the block (bits), before clamping at zero.
    pub key_length: f64,
    pub feasible: bool,
    /// Lower bound on vacuum events in Z.
    pub s_z0: f64,
    /// Lower bound on single-photon events in Z.
    pub s_z1: f64,
    /// Upper bound on the single-photon phase error rate.
    pub phase_error: f64,
    /// Observed Z-basis error rate.
    pub e_z: f64,
    /// Error-correction leakage (bits).
    pub lambda_ec: f64,
    pub params: SkrInputs,
}

/// Binary Shannon entropy; 1 at and beyond one half.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 0.5 {
        1.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

fn validate(i: &SkrInputs) -> Result<()> {
    for k in 0..2 {
        if i.m_z[k] > i.n_z[k] || i.m_x[k] > i.n_x[k] {
            return Err(Error::invalid(format!("error count exceeds detections for intensity {}", k + 1)));
        }
        if !(i.p_mu[k] > 0.0 && i.p_mu[k] <= 1.0) {
            return Err(Error::invalid("intensity probabilities must lie in (0, 1]"));
        }
    }
    if !(i.mu[0] > i.mu[1] && i.mu[1] > 0.0) {
        return Err(Error::invalid("need mu1 > mu2 > 0"));
    }
    if !(i.eps_sec > 0.0 && i.eps_sec < 1.0) || !(i.eps_cor > 0.0 && i.eps_cor < 1.0) {
        return Err(Error::invalid("security parameters must lie in (0, 1)"));
    }
    if !(i.acquisition_s > 0.0) || !(i.f_ec >= 1.0) {
        return Err(Error::invalid("acquisition time must be positive and f_ec at least 1"));
    }
    Ok(())
}

struct Bounds {
    mu1: f64,
    mu2: f64,
    tau0: f64,
    tau1: f64,
    ln_term: f64,
}

impl Bounds {
    fn new(i: &SkrInputs) -> Self {
        let [mu1, mu2] = i.mu;
        // Probability of sending n photons; only n = 0, 1 are needed, where n! = 1.
        let tau = |n: i32| -> f64 { (0..2).map(|k| i.p_mu[k] * (-i.mu[k]).exp() * i.mu[k].powi(n)).sum() };
        Self { mu1, mu2, tau0: tau(0), tau1: tau(1), ln_term: (21.0 / i.eps_sec).ln() }
    }

    /// Hoeffding-corrected, intensity-rescaled counts: `e^k/p_k (n_k +- sqrt(n/2 ln(21/eps)))`.
    fn pm(&self, i: &SkrInputs, counts: [u64; 2], k: usize, sign: f64) -> f64 {
        let total = (counts[0] + counts[1]) as f64;
        let delta = (total / 2.0 * self.ln_term).sqrt();
        i.mu[k].exp() / i.p_mu[k] * (counts[k] as f64 + sign * delta)
    }

    fn vacuum(&self, i: &SkrInputs, n: [u64; 2]) -> f64 {
        self.tau0 / (self.mu1 - self.mu2) * (self.mu1 * self.pm(i, n, 1, -1.0) - self.mu2 * self.pm(i, n, 0, 1.0))
    }

    fn single(&self, i: &SkrInputs, n: [u64; 2], m: [u64; 2]) -> f64 {
        let total = (n[0] + n[1]) as f64;
        let s0_upper = 2.0
            * (self.tau0 * self.mu2.exp() / i.p_mu[1] * m[1] as f64 + (total / 2.0 * self.ln_term).sqrt());
        let (mu1, mu2) = (self.mu1, self.mu2);
        mu1 * self.tau1 / (mu2 * (mu1 - mu2))
            * (self.pm(i, n, 1, -1.0)
                - mu2 * mu2 / (mu1 * mu1) * self.pm(i, n, 0, 1.0)
                - (mu1 * mu1 - mu2 * mu2) / (mu1 * mu1) * s0_upper / self.tau0)
    }
}

/// `gamma(a, b, c, d)` statistical correction of the phase error rate.
fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let v = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2)
        * ((c + d) / (c * d * (1.0 - b) * b) * 21.0 * 21.0 / (a * a)).log2();
    v.max(0.0).sqrt()
}

/// Secret key rate of one block.
///
/// `l = s_z0 + s_z1 (1 - h(phi)) - lambda_ec - 6 log2(21/eps_sec) - log2(2/eps_cor)`.
/// Returns an infeasible report with zero rate whenever a bound becomes
/// non-positive, the phase error reaches one half, or the length is negative.
pub fn skr(inputs: &SkrInputs) -> Result<SkrReport> {
    validate(inputs)?;
    let b = Bounds::new(inputs);
    let n_z = (inputs.n_z[0] + inputs.n_z[1]) as f64;
    let m_z = (inputs.m_z[0] + inputs.m_z[1]) as f64;
    let e_z = if n_z > 0.0 { m_z / n_z } else { 0.0 };
    let lambda_ec = inputs.f_ec * n_z * binary_entropy(e_z);

    let s_z0 = b.vacuum(inputs, inputs.n_z).max(0.0);
    let s_z1 = b.single(inputs, inputs.n_z, inputs.m_z);
    let s_x1 = b.single(inputs, inputs.n_x, inputs.m_x);
    let v_x1 = b.tau1 / (b.mu1 - b.mu2) * (b.pm(inputs, inputs.m_x, 0, 1.0) - b.pm(inputs, inputs.m_x, 1, -1.0));

    let mut report = SkrReport {
        skr: 0.0,
        key_length: f64::NEG_INFINITY,
        feasible: false,
        s_z0,
        s_z1,
        phase_error: 0.5,
        e_z,
        lambda_ec,
        params: inputs.clone(),
    };
    if n_z == 0.0 || !(s_z1 > 0.0) || !(s_x1 > 0.0) {
        return Ok(report);
    }
    let ratio = (v_x1 / s_x1).max(0.0);
    let phi = ratio + gamma(inputs.eps_sec, ratio, s_z1, s_x1);
    report.phase_error = phi;
    if !(phi < 0.5) {
        return Ok(report);
    }
    let l = s_z0 + s_z1 * (1.0 - binary_entropy(phi))
        - lambda_ec
        - 6.0 * (21.0 / inputs.eps_sec).log2()
        - (2.0 / inputs.eps_cor).log2();
    report.key_length = l;
    if l > 0.0 {
        report.feasible = true;
        report.skr = l / inputs.acquisition_s;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(0.5), 1.0);
        assert!((binary_entropy(0.11) - 0.4999).abs() < 1e-3);
    }

    #[test]
    fn zero_detections_are_infeasible() {
        let r = skr(&SkrInputs::default()).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.skr, 0.0);
    }

    #[test]
    fn inconsistent_counts_are_rejected() {
        let i = SkrInputs { n_z: [10, 10], m_z: [11, 0], ..Default::default() };
        assert!(skr(&i).is_err());
        let i = SkrInputs { mu: [0.3, 0.7], ..Default::default() };
        assert!(skr(&i).is_err());
    }

    #[test]
    fn vacuum_weights() {
        let i = SkrInputs::default();
        let b = Bounds::new(&i);
        let t0 = 0.5 * (-0.7f64).exp() + 0.5 * (-0.3f64).exp();
        let t1 = 0.5 * (-0.7f64).exp() * 0.7 + 0.5 * (-0.3f64).exp() * 0.3;
        assert!((b.tau0 - t0).abs() < 1e-15);
        assert!((b.tau1 - t1).abs() < 1e-15);
    }
}
