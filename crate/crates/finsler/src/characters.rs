//! Exact integer arithmetic for the involutivity characters of the
//! torsion-free `S¹·GL(n,ℝ)` curvature tableau and the generality count it
//! certifies. No floating point enters this module.

use serde::Serialize;

use crate::error::{Error, Result};

/// Character vector `s_0..s_{2n}` with the derived dimension counts.
#[derive(Clone, Debug, Serialize)]
pub struct CharacterTable {
    pub n: u32,
    /// `s_k` for `k = 0..=2n`; zero outside `2..=n+1`.
    pub s: Vec<i128>,
    /// Dimension of the curvature space `S²(V*) ⊕ V⊗S³(V*)`.
    pub dim_k: i128,
    /// Dimension of its prolongation (complexified `S³ ⊕ V⊗S⁴`).
    pub dim_k1: i128,
    /// Solution generality: (number of functions, number of variables).
    pub generality: (i128, u32),
}

fn binomial(n: i128, k: i128) -> i128 {
    if k < 0 || k > n {
        return 0;
    }
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .expect("binomial overflow")
            .checked_div(i + 1)
            .unwrap();
    }
    acc
}

fn character(n: i128, k: i128) -> i128 {
    if k < 2 || k > n + 1 {
        0
    } else {
        k - 1 + n * (n + (k - 2) * (n + 1 - k))
    }
}

/// Character table for tableau size `n ≥ 2`.
pub fn cartan_characters(n: u32) -> Result<CharacterTable> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "character table requires n >= 2, got {n}"
        )));
    }
    let ni = n as i128;
    let s: Vec<i128> = (0..=2 * ni).map(|k| character(ni, k)).collect();
    let dim_k = binomial(ni + 1, 2) + ni * binomial(ni + 2, 3);
    let dim_k1 = 2 * binomial(ni + 2, 3) + 2 * ni * binomial(ni + 3, 4);
    Ok(CharacterTable {
        n,
        s,
        dim_k,
        dim_k1,
        generality: (ni * (ni + 1), n + 1),
    })
}

/// Both combinatorial identities for a given character vector.
///
/// Split out so tests can feed deliberately corrupted vectors.
pub fn identities_hold(s: &[i128], n: u32, dim_k: i128, dim_k1: i128) -> bool {
    let sum: i128 = s.iter().sum();
    let weighted: i128 = s.iter().enumerate().map(|(k, &sk)| k as i128 * sk).sum();
    sum == dim_k && weighted == dim_k1 && s[(n + 1) as usize] == (n as i128) * (n as i128 + 1)
}

/// Checks the character-sum identity, the involutivity test, and the
/// generality character exactly for every `2 ≤ n ≤ n_max`.
///
/// Returns the first failing `n`, if any.
pub fn verify_involutivity_identities(n_max: u32) -> std::result::Result<(), u32> {
    for n in 2..=n_max.max(2) {
        let t = cartan_characters(n).expect("n >= 2");
        if !identities_hold(&t.s, n, t.dim_k, t.dim_k1) {
            return Err(n);
        }
    }
    Ok(())
}

/// Number of functions and variables on which the structures depend.
///
/// Also asserts the consistency condition that the last nonzero character
/// equals the function count.
pub fn generality_count(n: u32) -> Result<(i128, u32)> {
    let t = cartan_characters(n)?;
    assert_eq!(
        t.s[(n + 1) as usize],
        t.generality.0,
        "last nonzero character must equal the function count"
    );
    Ok(t.generality)
}

/// Aligned text rendering of the table, for terminal output.
pub fn render_table(t: &CharacterTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("characters for n = {}\n", t.n));
    out.push_str("  k   s_k\n");
    for (k, sk) in t.s.iter().enumerate() {
        if *sk != 0 {
            out.push_str(&format!("{k:>3}   {sk}\n"));
        }
    }
    let sum: i128 = t.s.iter().sum();
    let weighted: i128 = t.s.iter().enumerate().map(|(k, &v)| k as i128 * v).sum();
    out.push_str(&format!(
        "sum s_k        = {:>8}  (dim K  = {})\n",
        sum, t.dim_k
    ));
    out.push_str(&format!(
        "sum k s_k      = {:>8}  (dim K1 = {})\n",
        weighted, t.dim_k1
    ));
    out.push_str(&format!(
        "generality     = {} functions of {} variables\n",
        t.generality.0, t.generality.1
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n2_table() {
        let t = cartan_characters(2).unwrap();
        assert_eq!(t.s, vec![0, 0, 5, 6, 0]);
        assert_eq!(t.s[2] + t.s[3], 11);
        assert_eq!(binomial(3, 2) + 2 * binomial(4, 3), 11);
        assert_eq!(2 * t.s[2] + 3 * t.s[3], 28);
        assert_eq!(2 * binomial(4, 3) + 4 * binomial(5, 4), 28);
        assert_eq!(t.dim_k, 11);
        assert_eq!(t.dim_k1, 28);
    }

    #[test]
    fn identities_up_to_twelve() {
        assert_eq!(verify_involutivity_identities(12), Ok(()));
        assert_eq!(verify_involutivity_identities(2), Ok(()));
    }

    #[test]
    fn generality_counts() {
        assert_eq!(generality_count(2).unwrap(), (6, 3));
        let t3 = cartan_characters(3).unwrap();
        assert_eq!(t3.s[4], 12);
        assert_eq!(generality_count(3).unwrap(), (12, 4));
        assert_eq!(generality_count(10).unwrap(), (110, 11));
        let t10 = cartan_characters(10).unwrap();
        assert_eq!(t10.s[11], 110);
    }

    #[test]
    fn corrupted_vector_is_caught() {
        // Off-by-one in one character breaks both identities.
        let t = cartan_characters(5).unwrap();
        let mut bad = t.s.clone();
        bad[3] += 1;
        assert!(!identities_hold(&bad, 5, t.dim_k, t.dim_k1));
        assert!(identities_hold(&t.s, 5, t.dim_k, t.dim_k1));
    }

    #[test]
    fn no_overflow_in_range() {
        // All ingredients stay far below i64 range for n <= 12; the i128
        // arithmetic with checked multiplication would panic otherwise.
        for n in 2..=12u32 {
            let t = cartan_characters(n).unwrap();
            assert!(t.dim_k1 < (1i128 << 63));
            assert!(t.s.iter().all(|&v| v >= 0));
            assert!(t.s[0] == 0 && t.s[1] == 0);
            for k in (n as usize + 2)..t.s.len() {
                assert_eq!(t.s[k], 0);
            }
        }
    }
}
