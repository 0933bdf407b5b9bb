use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, BenchError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(BenchError::Validation(format!(
            "t-test needs at least 2 values per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va > 0.0 && vb > 0.0) || !va.is_finite() || !vb.is_finite() {
        return Err(BenchError::Validation("t-test samples need nonzero, finite variance".into()));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    // P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
    let p = beta_reg(dof / 2.0, 0.5, dof / (dof + t * t));
    Ok(WelchResult { t, dof, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identical_samples() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    type Case = (&'static [f64], &'static [f64], f64, f64, f64);

    #[test]
    fn reference_values() {
        // Reference values from an independent statistics package.
        let cases: [Case; 3] = [
            (&[1.0, 2.0, 3.0], &[101.0, 102.0, 103.0], -122.47448713915891, 2.6654818961636016e-08, 4.0),
            (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 11.0], -1.866277899263374, 0.11499016052991887, 5.573280030949771),
            (
                &[10.1, 9.8, 10.3, 10.0, 9.9, 10.2],
                &[10.6, 10.4, 10.9, 10.5],
                -4.157609203101505,
                0.006252622441862672,
                5.869565217391299,
            ),
        ];
        for (a, b, t, p, dof) in cases {
            let r = welch_t_test(a, b).unwrap();
            assert!(close(r.t, t, 1e-9), "{r:?}");
            assert!(close(r.dof, dof, 1e-9), "{r:?}");
            assert!(close(r.p, p, 1e-7), "{r:?}");
        }
        assert!(welch_t_test(&[1.0, 2.0, 3.0], &[101.0, 102.0, 103.0]).unwrap().p < 0.01);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(welch_t_test(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn exchange_flips_t_only(a in prop::collection::vec(-1e3f64..1e3, 2..20), b in prop::collection::vec(-1e3f64..1e3, 2..20)) {
            let (Ok(ab), Ok(ba)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) else { return Ok(()) };
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }
}
