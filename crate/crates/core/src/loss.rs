//! Regression objectives over a whole batch.
//!
//! Every loss is a sum over samples, not a mean. Learning rates absorb the
//! scale; RMSE reporting in [`crate::metrics`] uses the mean.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_len, Error, Result};
use crate::numeric::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `Σ (ŷ − y)²`
    Mse,
    /// `Σ |y − ŷ|`
    Mae,
    /// `(τ − 1) Σ_{y<ŷ} (y − ŷ) + τ Σ_{y≥ŷ} (y − ŷ)`
    Pinball { tau: f64 },
}

impl LossKind {
    pub fn pinball(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(LossKind::Pinball { tau })
        } else {
            Err(Error::config("loss", format!("pinball tau must lie in (0, 1), got {tau}")))
        }
    }

    pub fn value(&self, preds: &[f64], targets: &[f64]) -> Result<f64> {
        check_len("loss_value", targets.len(), preds.len())?;
        let total = match *self {
            LossKind::Mse => preds.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum(),
            LossKind::Mae => preds.iter().zip(targets).map(|(p, y)| (y - p).abs()).sum(),
            LossKind::Pinball { tau } => {
                let (mut below, mut above) = (0.0, 0.0);
                for (p, y) in preds.iter().zip(targets) {
                    let r = y - p;
                    if y < p {
                        below += r;
                    } else {
                        above += r;
                    }
                }
                (tau - 1.0) * below + tau * above
            }
        };
        Ok(total)
    }

    /// `∂loss/∂ŷ_i`. At `ŷ_i = y_i` the MAE and pinball kinks take the
    /// `y ≥ ŷ` branch.
    pub fn grad_preds(&self, preds: &[f64], targets: &[f64]) -> Result<Vector> {
        check_len("loss_grad_preds", targets.len(), preds.len())?;
        Ok(preds
            .iter()
            .zip(targets)
            .map(|(&p, &y)| match *self {
                LossKind::Mse => 2.0 * (p - y),
                LossKind::Mae => {
                    if y < p {
                        1.0
                    } else {
                        -1.0
                    }
                }
                LossKind::Pinball { tau } => {
                    if y < p {
                        1.0 - tau
                    } else {
                        -tau
                    }
                }
            })
            .collect())
    }
}

pub fn loss_value(kind: LossKind, preds: &[f64], targets: &[f64]) -> Result<f64> {
    kind.value(preds, targets)
}

pub fn loss_grad_preds(kind: LossKind, preds: &[f64], targets: &[f64]) -> Result<Vector> {
    kind.grad_preds(preds, targets)
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mse => f.write_str("mse"),
            LossKind::Mae => f.write_str("mae"),
            LossKind::Pinball { tau } => write!(f, "pinball:{tau}"),
        }
    }
}

/// Parses `mse`, `mae` or `pinball:<tau>`.
impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            _ => match s.strip_prefix("pinball:") {
                Some(tau) => {
                    let tau: f64 = tau
                        .parse()
                        .map_err(|_| Error::config("loss", format!("bad pinball tau in `{s}`")))?;
                    LossKind::pinball(tau)
                }
                None => Err(Error::config("loss", format!("unknown loss `{s}`"))),
            },
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    const KINDS: [LossKind; 4] = [
        LossKind::Mse,
        LossKind::Mae,
        LossKind::Pinball { tau: 0.5 },
        LossKind::Pinball { tau: 0.1 },
    ];

    #[test]
    fn zero_at_targets() {
        let y = [1.0, -2.0, 3.5];
        for k in KINDS {
            assert_eq!(k.value(&y, &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn pinball_examples() {
        let half = LossKind::pinball(0.5).unwrap();
        assert_eq!(half.value(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(LossKind::Mae.value(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 2.0);
        let p90 = LossKind::pinball(0.9).unwrap();
        assert!((p90.value(&[4.0], &[5.0]).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn grad_examples() {
        assert_eq!(&*LossKind::Mse.grad_preds(&[3.0], &[1.0]).unwrap(), &[4.0]);
        assert_eq!(&*LossKind::Mae.grad_preds(&[2.0], &[5.0]).unwrap(), &[-1.0]);
        // tie follows the y >= ŷ branch
        assert_eq!(&*LossKind::Mae.grad_preds(&[1.0], &[1.0]).unwrap(), &[-1.0]);
        let p = LossKind::pinball(0.3).unwrap();
        assert_eq!(&*p.grad_preds(&[1.0, 2.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), &[-0.3, 0.7, -0.3]);
    }

    #[test]
    fn length_mismatch() {
        for k in KINDS {
            assert!(k.value(&[1.0], &[1.0, 2.0]).is_err());
            assert!(k.grad_preds(&[1.0], &[1.0, 2.0]).is_err());
        }
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert_eq!("MAE".parse::<LossKind>().unwrap(), LossKind::Mae);
        assert_eq!("pinball:0.25".parse::<LossKind>().unwrap(), LossKind::Pinball { tau: 0.25 });
        assert!("pinball:1.0".parse::<LossKind>().is_err());
        assert!("pinball:0".parse::<LossKind>().is_err());
        assert!("huber".parse::<LossKind>().is_err());
        assert_eq!(LossKind::Pinball { tau: 0.25 }.to_string(), "pinball:0.25");
    }

    #[test]
    fn grad_matches_finite_differences_off_kinks() {
        let mut rng = Rng::new(9);
        let y = rng.normal(0.0, 2.0, 40).unwrap();
        let p = rng.normal(0.0, 2.0, 40).unwrap();
        let h = 1e-5;
        for k in KINDS {
            let g = k.grad_preds(&p, &y).unwrap();
            for i in 0..p.len() {
                // stay clear of the kink for the piecewise-linear losses
                assert!((p[i] - y[i]).abs() > 10.0 * h);
                let mut pp = p.clone();
                pp[i] += h;
                let fp = k.value(&pp, &y).unwrap();
                pp[i] -= 2.0 * h;
                let fm = k.value(&pp, &y).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
                // the sums are O(10²) so rounding bounds the achievable accuracy
                assert!(rel <= 1e-8, "{k} coord {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn pinball_half_is_half_mae(
            pairs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..50)
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let pin = LossKind::Pinball { tau: 0.5 }.value(&p, &y).unwrap();
            let mae = LossKind::Mae.value(&p, &y).unwrap();
            prop_assert!((pin - 0.5 * mae).abs() <= 1e-12 * mae.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn losses_nonnegative_and_zero_iff_equal(
            pairs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..30),
            tau in 0.01..0.99f64,
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let differ = p.iter().zip(&y).any(|(a, b)| a != b);
            for k in [LossKind::Mse, LossKind::Mae, LossKind::Pinball { tau }] {
                let v = k.value(&p, &y).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v > 0.0, differ);
            }
        }

        #[test]
        fn pinball_slopes(y in -10.0..10.0f64, tau in 0.01..0.99f64, off in 0.1..5.0f64) {
            // slope is 1 − τ above the label, −τ below
            let k = LossKind::Pinball { tau };
            let v = |p: f64| k.value(&[p], &[y]).unwrap();
            let above = (v(y + off + 0.5) - v(y + off)) / 0.5;
            let below = (v(y - off) - v(y - off - 0.5)) / 0.5;
            prop_assert!((above - (1.0 - tau)).abs() < 1e-9);
            prop_assert!((below + tau).abs() < 1e-9);
        }
    }
}
