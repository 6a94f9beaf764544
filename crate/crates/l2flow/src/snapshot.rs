//! Metric snapshot files.
//!
//! ```text
//! # topology=sphere_so3
//! # k_sigma=1
//! # fiber_area=1.2566370614359172e1
//! # fiber_mu1=2
//! # fiber_inj=3.1415926535897931e0
//! # curvature_norm=paper
//! # t=0
//! x phi psi
//! -1.0000000000000000e0 1.5707963267948966e0 0.0000000000000000e0
//! ...
//! ```

use std::fmt::Write as _;

use l2flow_core::geometry::{CurvatureNorm, FiberSpec, Topology, WarpedMetric};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("snapshot header is missing `{0}`")]
    MissingKey(&'static str),
    #[error("snapshot rejected: {0}")]
    Invalid(#[from] l2flow_core::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub metric: WarpedMetric,
    pub t: f64,
    pub curvature_norm: CurvatureNorm,
}

/// Seventeen significant digits, `nan`/`inf` spelled in lower case.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_snapshot(m: &WarpedMetric, t: f64, norm: CurvatureNorm) -> String {
    let f = m.fiber();
    let mut out = String::new();
    let _ = writeln!(out, "# topology={}", m.topology().name());
    let _ = writeln!(out, "# k_sigma={}", f.k_sigma);
    let _ = writeln!(out, "# fiber_area={}", fmt_f64(f.fiber_area));
    let _ = writeln!(out, "# fiber_mu1={}", fmt_f64(f.fiber_mu1));
    let _ = writeln!(out, "# fiber_inj={}", fmt_f64(f.fiber_inj));
    let _ = writeln!(out, "# curvature_norm={}", norm.name());
    let _ = writeln!(out, "# t={}", fmt_f64(t));
    out.push_str("x phi psi\n");
    for i in 0..m.len() {
        let _ = writeln!(
            out,
            "{} {} {}",
            fmt_f64(m.x()[i]),
            fmt_f64(m.phi()[i]),
            fmt_f64(m.psi()[i])
        );
    }
    out
}

pub fn read_snapshot(text: &str) -> Result<Snapshot, SnapshotError> {
    let mut topology = None;
    let mut k_sigma = None;
    let mut area = None;
    let mut mu1 = None;
    let mut inj = None;
    let mut norm = CurvatureNorm::Paper;
    let mut t = 0.0;
    let (mut x, mut phi, mut psi) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| SnapshotError::Format { line, message };
        let l = raw.trim();
        if l.is_empty() || l == "x phi psi" {
            continue;
        }
        if let Some(h) = l.strip_prefix('#') {
            let Some((k, v)) = h.split_once('=') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| err(format!("bad value for {k}: `{v}`")));
            match k {
                "topology" => {
                    topology = Some(Topology::from_name(v).ok_or_else(|| err(format!("unknown topology `{v}`")))?)
                }
                "k_sigma" => k_sigma = Some(num()?),
                "fiber_area" => area = Some(num()?),
                "fiber_mu1" => mu1 = Some(num()?),
                "fiber_inj" => inj = Some(num()?),
                "t" => t = num()?,
                "curvature_norm" => {
                    norm = CurvatureNorm::from_name(v).ok_or_else(|| err(format!("unknown curvature_norm `{v}`")))?
                }
                _ => {}
            }
            continue;
        }
        let cols: Vec<f64> = l
            .split_whitespace()
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(format!("expected three numbers, got `{l}`")))?;
        if cols.len() != 3 {
            return Err(err(format!("expected three numbers, got {}", cols.len())));
        }
        x.push(cols[0]);
        phi.push(cols[1]);
        psi.push(cols[2]);
    }
    let topology = topology.ok_or(SnapshotError::MissingKey("topology"))?;
    let k_sigma = k_sigma.ok_or(SnapshotError::MissingKey("k_sigma"))?;
    let area = area.ok_or(SnapshotError::MissingKey("fiber_area"))?;
    // Older files may omit the spectral data of the fiber; use the round values.
    let round = FiberSpec::round_sphere();
    let fiber = FiberSpec::new(
        k_sigma,
        area,
        mu1.unwrap_or(round.fiber_mu1),
        inj.unwrap_or(round.fiber_inj),
    )?;
    let metric = WarpedMetric::from_profile(topology, fiber, x, phi, psi)?;
    Ok(Snapshot {
        metric,
        t,
        curvature_norm: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use l2flow_core::geometry::presets;

    #[test]
    fn round_trip_is_exact() {
        let m = presets::dumbbell(40, 0.3).unwrap();
        let text = write_snapshot(&m, 0.25, CurvatureNorm::Full);
        let s = read_snapshot(&text).unwrap();
        assert_eq!(s.metric, m);
        assert_eq!(s.t, 0.25);
        assert_eq!(s.curvature_norm, CurvatureNorm::Full);
    }

    #[test]
    fn nan_spelling() {
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn missing_topology() {
        assert_eq!(
            read_snapshot("# k_sigma=1\n").unwrap_err(),
            SnapshotError::MissingKey("topology")
        );
    }
}
