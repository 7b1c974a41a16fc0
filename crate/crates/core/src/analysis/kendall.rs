use std::cmp::Ordering;

use crate::{Error, Result};

/// Kendall's tau-b between two score lists, corrected for ties on either side.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("need at least two scores"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite score"));
    }
    let n = a.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_a, mut tied_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i].total_cmp(&a[j]);
            let sb = b[i].total_cmp(&b[j]);
            match (sa, sb) {
                (Ordering::Equal, Ordering::Equal) => {
                    tied_a += 1;
                    tied_b += 1;
                }
                (Ordering::Equal, _) => tied_a += 1,
                (_, Ordering::Equal) => tied_b += 1,
                _ if sa == sb => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tied_a) as f64) * ((n0 - tied_b) as f64);
    if denom == 0.0 {
        return Err(Error::Degenerate("all scores tied"));
    }
    Ok((concordant - discordant) as f64 / denom.sqrt())
}
