use crate::error::{Error, Result};

pub const SNR_CAP_DB: f64 = 100.0;
pub const SNR_ENERGY_FLOOR: f64 = 1e-12;

/// `10 log10(sum ref^2 / max(sum (ref - est)^2, floor))`, capped at +100 dB.
pub fn snr_db<A, B>(reference: &[A], estimate: &[B]) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "snr over {} reference vs {} estimate samples",
            reference.len(),
            estimate.len()
        )));
    }
    let (sig, err) = reference
        .iter()
        .zip(estimate)
        .fold((0.0, 0.0), |(s, e), (&r, &x)| {
            let r: f64 = r.into();
            let d = r - x.into();
            (s + r * r, e + d * d)
        });
    if sig == 0.0 {
        return Err(Error::UndefinedReference);
    }
    Ok((10.0 * (sig / err.max(SNR_ENERGY_FLOOR)).log10()).min(SNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_estimate_hits_cap() {
        let x = [0.5, -0.25, 1.0];
        assert_eq!(snr_db(&x, &x).unwrap(), SNR_CAP_DB);
    }

    #[test]
    fn silent_estimate_is_zero_db() {
        let x = [0.5, -0.25, 1.0];
        assert!(snr_db(&x, &[0.0; 3]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn half_amplitude_error_is_six_db() {
        let x: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.1).sin() + 2.0).collect();
        let est: Vec<f64> = x.iter().map(|v| v * 1.5).collect();
        assert!((snr_db(&x, &est).unwrap() - 6.0206).abs() < 0.01);
    }

    #[test]
    fn zero_reference_is_undefined() {
        assert!(matches!(
            snr_db(&[0.0f64; 4], &[1.0f64; 4]),
            Err(Error::UndefinedReference)
        ));
    }

    #[test]
    fn joint_scaling_is_invariant() {
        let x = [0.3, -0.7, 0.2, 0.9];
        let y = [0.25, -0.6, 0.1, 1.0];
        let xs: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * 7.5).collect();
        assert!((snr_db(&x, &y).unwrap() - snr_db(&xs, &ys).unwrap()).abs() < 1e-9);
    }
}
