//! Parameter norms of a network and the envelopes they are compared with.
//!
//! Post-matrices are not parameters and are left out of both norms.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Network;
use crate::memorize::LabeledDataset;

/// Per-layer contributions: `(‖W‖_F², ‖b‖₂², max|W|, max|b|)`.
pub type LayerNorms = (f64, f64, f64, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    pub l2: f64,
    pub linf: f64,
    pub per_layer: Vec<LayerNorms>,
}

impl NormReport {
    pub fn l2_sq(&self) -> f64 {
        self.per_layer.iter().map(|p| p.0 + p.1).sum()
    }
}

/// `l2 = sqrt(Σ ‖W_j‖_F² + ‖b_j‖²)`, `linf = max_j max(|W_j|, |b_j|)`.
pub fn triple_norm(net: &Network) -> NormReport {
    let per_layer: Vec<LayerNorms> = net
        .layers
        .iter()
        .map(|l| {
            let b2 = l.bias.iter().map(|v| v * v).sum();
            let binf = l.bias.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            (l.weights.frobenius_sq(), b2, l.weights.max_abs(), binf)
        })
        .collect();
    let l2 = per_layer.iter().map(|p| p.0 + p.1).sum::<f64>().sqrt();
    let linf = per_layer.iter().fold(0.0, |m: f64, p| m.max(p.2).max(p.3));
    NormReport { l2, linf, per_layer }
}

fn check_nm(n: usize, m: usize) -> Result<()> {
    if n <= 1 || m <= 1 {
        return Err(Error::DomainError(format!("envelopes need N > 1 and M > 1, got N={n}, M={m}")));
    }
    Ok(())
}

/// `C (1 + R_x √N + R_x N √M + R_y M)`.
pub fn bound_l2(n: usize, m: usize, rx: f64, ry: f64, c: f64) -> Result<f64> {
    check_nm(n, m)?;
    let (nf, mf) = (n as f64, m as f64);
    Ok(c * (1.0 + rx * nf.sqrt() + rx * nf * mf.sqrt() + ry * mf))
}

/// `C (R_x N + M + R_y)`.
pub fn bound_linf(n: usize, m: usize, rx: f64, ry: f64, c: f64) -> Result<f64> {
    check_nm(n, m)?;
    Ok(c * (rx * n as f64 + m as f64 + ry))
}

/// `R_x = max ‖xᵢ‖₂` and `R_y = max ‖yᵢ‖₂` of a dataset.
pub fn data_radii(ds: &LabeledDataset) -> (f64, f64) {
    let rx = ds.points.iter().map(|p| crate::geometry::norm2(p)).fold(0.0, f64::max);
    let ry = ds.labels.as_vectors().iter().map(|y| crate::geometry::norm2(y)).fold(0.0, f64::max);
    (rx, ry)
}

/// Hex SHA-256 of a dataset's points and labels (shortest float text).
pub fn dataset_hash(ds: &LabeledDataset) -> String {
    let mut h = Sha256::new();
    for (p, y) in ds.points.iter().zip(ds.labels.as_vectors()) {
        for v in p {
            h.update(format!("{v:?},"));
        }
        h.update("|");
        for v in y {
            h.update(format!("{v:?},"));
        }
        h.update("\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Factor applied to the largest calibration ratio before held-out use.
///
/// With calibration and held-out ratios drawn from the same distribution,
/// the bare maximum is exceeded by a held-out maximum about half the time.
pub const CALIBRATION_MARGIN: f64 = 1.5;

/// Smallest envelope constants fitting every network of a regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub regime_id: String,
    #[serde(rename = "C_l2")]
    pub c_l2: f64,
    #[serde(rename = "C_linf")]
    pub c_linf: f64,
    pub min_gap: f64,
    pub datasets: Vec<String>,
}

impl Calibration {
    /// Both constants multiplied by `factor`.
    pub fn with_margin(mut self, factor: f64) -> Self {
        self.c_l2 *= factor;
        self.c_linf *= factor;
        self
    }
}

/// Ratios `measured / envelope(C = 1)` for one constructed network.
pub fn envelope_ratios(net: &Network, ds: &LabeledDataset) -> Result<(f64, f64)> {
    let rep = triple_norm(net);
    let (rx, ry) = data_radii(ds);
    let (n, m) = (ds.n(), ds.m());
    Ok((rep.l2 / bound_l2(n, m, rx, ry, 1.0)?, rep.linf / bound_linf(n, m, rx, ry, 1.0)?))
}

/// Fits `C_l2`, `C_linf` as the largest ratios over `(network, dataset)` pairs.
pub fn calibrate(regime_id: &str, min_gap: f64, runs: &[(Network, LabeledDataset)]) -> Result<Calibration> {
    let mut c_l2: f64 = 0.0;
    let mut c_linf: f64 = 0.0;
    let mut datasets = Vec::with_capacity(runs.len());
    for (net, ds) in runs {
        let (a, b) = envelope_ratios(net, ds)?;
        c_l2 = c_l2.max(a);
        c_linf = c_linf.max(b);
        datasets.push(dataset_hash(ds));
    }
    Ok(Calibration { regime_id: regime_id.to_string(), c_l2, c_linf, min_gap, datasets })
}

/// Whether `net` sits inside both envelopes with the calibrated constants.
pub fn within_envelopes(cal: &Calibration, net: &Network, ds: &LabeledDataset) -> Result<(bool, bool)> {
    let (a, b) = envelope_ratios(net, ds)?;
    Ok((a <= cal.c_l2, b <= cal.c_linf))
}
