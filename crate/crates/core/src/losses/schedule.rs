use crate::error::{Error, Result};

/// Cosine ramp of the global-loss weight from `beta_start` at step 0 to
/// `beta_end` at `total`.
pub fn beta_schedule(step: usize, total: usize, beta_start: f64, beta_end: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("schedule length must be positive".into()));
    }
    if step > total {
        return Err(Error::InvalidArgument(format!(
            "step {step} beyond schedule length {total}"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(beta_end - (beta_end - beta_start) * (1.0 + phase.cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert!((beta_schedule(0, 1000, 0.2, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert!((beta_schedule(1000, 1000, 0.2, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((beta_schedule(500, 1000, 0.2, 0.5).unwrap() - 0.35).abs() < 1e-12);
        assert!(beta_schedule(1001, 1000, 0.2, 0.5).is_err());
    }

    #[test]
    fn monotone_ramp() {
        let v: Vec<f64> = (0..=50).map(|s| beta_schedule(s, 50, 0.2, 0.5).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }
}
