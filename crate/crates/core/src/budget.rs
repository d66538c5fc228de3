//! Memory accounting for the exponentially sized buffers (energy tables and
//! statevectors). The cap is read from `LABS_MEM_BUDGET_GB`.

use crate::error::{LabsError, Result};

pub const MEM_BUDGET_ENV: &str = "LABS_MEM_BUDGET_GB";
const DEFAULT_BUDGET_GB: f64 = 4.0;

/// Upper bound on the problem size accepted anywhere in the crate; indices are
/// `u64` and the energy table header stores `N` as `u16`.
pub const MAX_N: usize = 40;

pub fn budget_bytes() -> u64 {
    let gb = std::env::var(MEM_BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v > 0.0)
        .unwrap_or(DEFAULT_BUDGET_GB);
    (gb * (1u64 << 30) as f64) as u64
}

/// Checks that `2^n` elements of `bytes_per_entry` fit in the budget.
pub fn check_exponential_alloc(n: usize, bytes_per_entry: u64, what: &str) -> Result<()> {
    if n > MAX_N {
        return Err(LabsError::Resource(format!(
            "{what}: N={n} exceeds the hard limit N<={MAX_N}"
        )));
    }
    let need = (1u64 << n).saturating_mul(bytes_per_entry);
    let have = budget_bytes();
    if need > have {
        return Err(LabsError::Resource(format!(
            "{what}: N={n} needs {:.2} GiB but the budget is {:.2} GiB (set {MEM_BUDGET_ENV} to raise it)",
            need as f64 / (1u64 << 30) as f64,
            have as f64 / (1u64 << 30) as f64
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sizes_fit() {
        assert!(check_exponential_alloc(10, 16, "test").is_ok());
    }

    #[test]
    fn huge_sizes_are_rejected() {
        let err = check_exponential_alloc(39, 16, "statevector").unwrap_err();
        assert!(matches!(err, LabsError::Resource(_)));
        assert!(check_exponential_alloc(41, 1, "x").is_err());
    }
}
