//! Failure probability of the multi-party validation, and forensic tallies of
//! which RA members endorsed flagged certificates.
//!
//! With `n` RA members of which `m` are malicious, and `v` unanimous
//! validations required, the chance that all `v` validators of a CSR are
//! malicious is `C(m, v) / C(n, v)`, assuming validators are drawn uniformly
//! without replacement.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::UserRecord;
use crate::ledger::{cert_key, user_key, WorldState};
use crate::workflow::RecordIndex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
    #[error("unknown-certificate: {0}")]
    UnknownCertificate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureModel {
    pub n: u32,
    pub m: u32,
    pub v: u32,
}

impl FailureModel {
    pub fn new(n: u32, m: u32, v: u32) -> Result<Self, AnalyticsError> {
        let model = FailureModel { n, m, v };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let FailureModel { n, m, v } = *self;
        if n == 0 {
            return Err(AnalyticsError::InvalidArgument("n must be positive".into()));
        }
        if m > n {
            return Err(AnalyticsError::InvalidArgument(format!("m = {m} exceeds n = {n}")));
        }
        if v == 0 || v > n {
            return Err(AnalyticsError::InvalidArgument(format!("v = {v} must lie in 1..={n}")));
        }
        Ok(())
    }
}

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u32, k: u32) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // acc * (n - i) is always divisible by (i + 1) at this point.
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Exact failure probability as a reduced fraction.
pub fn p_fail(model: &FailureModel) -> Result<BigRational, AnalyticsError> {
    model.validate()?;
    let num = binomial(model.m, model.v);
    let den = binomial(model.n, model.v);
    Ok(BigRational::new(num.into(), den.into()))
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub failures: u64,
    pub estimate: f64,
    /// `sqrt(p̂ (1 − p̂) / trials)`.
    pub std_error: f64,
}

/// Trials per independently seeded chunk. Chunks are the unit of parallel
/// work, so the result does not depend on how many workers run.
const CHUNK: u64 = 4096;

pub fn monte_carlo_p_fail(model: &FailureModel, trials: u64, seed: u64) -> Result<MonteCarloEstimate, AnalyticsError> {
    model.validate()?;
    if trials == 0 {
        return Err(AnalyticsError::InvalidArgument("trials must be positive".into()));
    }
    let (n, m, v) = (model.n as usize, model.m as usize, model.v as usize);
    let chunks = trials.div_ceil(CHUNK);
    let failures: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let count = CHUNK.min(trials - chunk * CHUNK);
            // Members 0..m are the malicious ones.
            (0..count)
                .filter(|_| rand::seq::index::sample(&mut rng, n, v).iter().all(|member| member < m))
                .count() as u64
        })
        .sum();
    let estimate = failures as f64 / trials as f64;
    Ok(MonteCarloEstimate {
        trials,
        failures,
        estimate,
        std_error: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvolvementReport {
    /// `(ra_member_id, count)`, most involved first.
    pub rows: Vec<(String, u64)>,
}

impl InvolvementReport {
    pub fn count(&self, ra_member_id: &str) -> u64 {
        self.rows.iter().find(|(id, _)| id == ra_member_id).map_or(0, |(_, c)| *c)
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, c)| c).sum()
    }
}

/// Counts, per RA member, the flagged certificates whose endorsement trail
/// contains that member.
pub fn involvement_report(state: &WorldState, flagged: &BTreeSet<String>) -> Result<InvolvementReport, AnalyticsError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for serial in flagged {
        let unknown = || AnalyticsError::UnknownCertificate(serial.clone());
        let index: RecordIndex = state.get(&cert_key(serial)).ok().flatten().ok_or_else(unknown)?;
        let user: UserRecord = state.get(&user_key(&index.user_id)).ok().flatten().ok_or_else(unknown)?;
        let cert = user.certificate(serial).ok_or_else(unknown)?;
        let csr = user.csr(&cert.csr_id).ok_or_else(unknown)?;
        for e in &csr.endorsements {
            *counts.entry(e.ra_member_id.clone()).or_default() += 1;
        }
    }
    let mut rows: Vec<(String, u64)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(InvolvementReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frac(num: u64, den: u64) -> BigRational {
        BigRational::new(num.into(), den.into())
    }

    /// Counts v-subsets of n members that are all malicious by enumerating
    /// every bitmask.
    fn enumerate(model: FailureModel) -> BigRational {
        let (mut all, mut bad) = (0u64, 0u64);
        let malicious_mask = (1u32 << model.m) - 1;
        for mask in 0u32..(1 << model.n) {
            if mask.count_ones() == model.v {
                all += 1;
                if mask & !malicious_mask == 0 {
                    bad += 1;
                }
            }
        }
        frac(bad, all)
    }

    #[test]
    fn reported_examples() {
        assert_eq!(p_fail(&FailureModel::new(10, 3, 3).unwrap()).unwrap(), frac(1, 120));
        assert!(p_fail(&FailureModel::new(10, 3, 4).unwrap()).unwrap().is_zero());
        assert!(p_fail(&FailureModel::new(5, 5, 2).unwrap()).unwrap().is_one());
    }

    #[test]
    fn matches_enumeration_up_to_12() {
        for n in 1..=12 {
            for m in 0..=n {
                for v in 1..=n {
                    let model = FailureModel { n, m, v };
                    assert_eq!(p_fail(&model).unwrap(), enumerate(model), "{model:?}");
                }
            }
        }
    }

    #[test]
    fn invalid_models() {
        assert!(FailureModel::new(0, 0, 1).is_err());
        assert!(FailureModel::new(3, 4, 1).is_err());
        assert!(FailureModel::new(3, 1, 0).is_err());
        assert!(FailureModel::new(3, 1, 4).is_err());
        assert!(monte_carlo_p_fail(&FailureModel { n: 3, m: 1, v: 1 }, 0, 1).is_err());
    }

    #[test]
    fn monte_carlo_degenerate_cases() {
        let zero = monte_carlo_p_fail(&FailureModel::new(10, 3, 4).unwrap(), 5000, 7).unwrap();
        assert_eq!(zero.failures, 0);
        let one = monte_carlo_p_fail(&FailureModel::new(4, 4, 1).unwrap(), 5000, 7).unwrap();
        assert_eq!(one.estimate, 1.0);
        assert_eq!(one.std_error, 0.0);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let model = FailureModel::new(10, 3, 3).unwrap();
        let a = monte_carlo_p_fail(&model, 20_000, 42).unwrap();
        let b = monte_carlo_p_fail(&model, 20_000, 42).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| monte_carlo_p_fail(&model, 20_000, 42).unwrap());
        assert_eq!(a, c);
    }

    proptest! {
        #[test]
        fn monotone_in_v_and_m(n in 1u32..=12, m in 0u32..=12, v in 1u32..=12) {
            prop_assume!(m <= n && v <= n);
            let pf = |n, m, v| p_fail(&FailureModel { n, m, v }).unwrap();
            let p = pf(n, m, v);
            if v < n {
                prop_assert!(pf(n, m, v + 1) <= p);
            }
            if m < n {
                prop_assert!(pf(n, m + 1, v) >= p);
            }
            if v > m {
                prop_assert!(p.is_zero());
            }
            prop_assert!(pf(n, n, v).is_one());
        }
    }
}
