use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Unoriented angle `arccos(clamp(|⟨a, b⟩|))`, in radians.
pub fn angle_between(n_hat: &Vector3<f64>, n_gt: &Vector3<f64>) -> f64 {
    n_hat.dot(n_gt).abs().clamp(0.0, 1.0).acos()
}

/// Angles between paired normals, in radians.
pub fn pair_angles(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Size(format!(
            "need equal non-empty normal lists, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| angle_between(a, b)).collect())
}

/// Root-mean-square angle in degrees.
pub fn rmse_angles(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    Ok(rmse_of(&pair_angles(pred, gt)?))
}

/// Fraction of pairs whose angle is strictly below `alpha_deg`.
pub fn pgp(pred: &[Vector3<f64>], gt: &[Vector3<f64>], alpha_deg: f64) -> Result<f64> {
    if !(alpha_deg > 0.0 && alpha_deg <= 180.0) {
        return Err(Error::InvalidValue(format!("alpha must be in (0, 180], got {alpha_deg}")));
    }
    Ok(pgp_of(&pair_angles(pred, gt)?, alpha_deg))
}

/// RMSE in degrees of angles given in radians.
pub fn rmse_of(angles: &[f64]) -> f64 {
    (angles.iter().map(|a| a * a).sum::<f64>() / angles.len() as f64).sqrt().to_degrees()
}

/// PGP of angles given in radians.
pub fn pgp_of(angles: &[f64], alpha_deg: f64) -> f64 {
    if alpha_deg >= 180.0 {
        return 1.0;
    }
    let alpha = alpha_deg.to_radians();
    angles.iter().filter(|&&a| a < alpha).count() as f64 / angles.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at_angle(deg: f64) -> Vector3<f64> {
        let r = deg.to_radians();
        Vector3::new(r.sin(), 0.0, r.cos())
    }

    #[test]
    fn angle_examples() {
        let z = Vector3::z();
        assert_eq!(angle_between(&z, &z), 0.0);
        assert_eq!(angle_between(&-z, &z), 0.0);
        assert!((angle_between(&Vector3::x(), &z) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn rmse_examples() {
        let gt = vec![Vector3::z(); 2];
        let pred = vec![Vector3::x(), Vector3::z()];
        assert!((rmse_angles(&pred, &gt).unwrap() - 63.6396).abs() < 0.01);
        assert_eq!(rmse_angles(&gt, &gt).unwrap(), 0.0);
        assert!(rmse_angles(&[], &[]).is_err());
    }

    #[test]
    fn pgp_examples() {
        let gt = vec![Vector3::z(); 3];
        let pred: Vec<_> = [3.0, 7.0, 12.0].into_iter().map(at_angle).collect();
        assert_eq!(pgp(&pred, &gt, 10.0).unwrap(), 2.0 / 3.0);
        assert_eq!(pgp(&pred, &gt, 180.0).unwrap(), 1.0);
        assert!(pgp(&pred, &gt, 0.0).is_err());
        let mut last = 0.0;
        for alpha in 1..=30 {
            let v = pgp(&pred, &gt, alpha as f64).unwrap();
            assert!(v >= last);
            last = v;
        }
    }
}
