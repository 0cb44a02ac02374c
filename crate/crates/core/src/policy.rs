//! Certification policy: which RA members may endorse CSRs of a domain, how
//! many distinct endorsements authorize a request, and whether endorsements
//! must agree on the verified requester data.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{CsrRecord, PlausibilityConflict, RaEndorsementRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("no-rule-for-domain: {0}")]
    NoRuleForDomain(String),
    #[error("invalid-policy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRule {
    pub domain: String,
    pub required_endorsements: u32,
    pub permitted_ra_members: BTreeSet<String>,
    pub plausibility_checks_enabled: bool,
}

impl DomainRule {
    pub fn new<I, S>(domain: &str, required: u32, members: I, plausibility: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DomainRule {
            domain: domain.to_owned(),
            required_endorsements: required,
            permitted_ra_members: members.into_iter().map(Into::into).collect(),
            plausibility_checks_enabled: plausibility,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.required_endorsements < 1 {
            return Err(PolicyError::Invalid(format!("rule {}: required_endorsements must be >= 1", self.domain)));
        }
        if self.required_endorsements as usize > self.permitted_ra_members.len() {
            return Err(PolicyError::Invalid(format!(
                "rule {}: requires {} endorsements but only {} members are permitted",
                self.domain,
                self.required_endorsements,
                self.permitted_ra_members.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationPolicy {
    pub rules: BTreeMap<String, DomainRule>,
    pub default_rule: Option<DomainRule>,
}

impl CertificationPolicy {
    pub fn with_rules(rules: impl IntoIterator<Item = DomainRule>) -> Self {
        CertificationPolicy {
            rules: rules.into_iter().map(|r| (r.domain.clone(), r)).collect(),
            default_rule: None,
        }
    }

    pub fn with_default(mut self, rule: DomainRule) -> Self {
        self.default_rule = Some(rule);
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (key, rule) in &self.rules {
            if key != &rule.domain {
                return Err(PolicyError::Invalid(format!("rule keyed {key:?} names domain {:?}", rule.domain)));
            }
            rule.validate()?;
        }
        if let Some(rule) = &self.default_rule {
            rule.validate()?;
        }
        Ok(())
    }
}

/// The specific rule for `domain`, falling back to the default rule.
pub fn resolve_rule<'p>(policy: &'p CertificationPolicy, domain: &str) -> Result<&'p DomainRule, PolicyError> {
    policy
        .rules
        .get(domain)
        .or(policy.default_rule.as_ref())
        .ok_or_else(|| PolicyError::NoRuleForDomain(domain.to_owned()))
}

pub fn is_permitted(policy: &CertificationPolicy, ra_member_id: &str, csr: &CsrRecord) -> Result<bool, PolicyError> {
    Ok(resolve_rule(policy, &csr.domain)?.permitted_ra_members.contains(ra_member_id))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plausibility {
    Pass,
    Conflicts(Vec<PlausibilityConflict>),
}

impl Plausibility {
    pub fn passed(&self) -> bool {
        matches!(self, Plausibility::Pass)
    }
}

fn verified_fields(e: &RaEndorsementRecord) -> [(&'static str, &str); 3] {
    [
        ("verified_name", e.verified_name.as_str()),
        ("verified_email", e.verified_email.as_str()),
        ("id_document_serial_suffix", e.id_document_serial_suffix.as_str()),
    ]
}

/// Pairwise agreement of all endorsements on the verified data, plus
/// agreement of every verified email with the CSR's subject email.
pub fn plausibility_check(endorsements: &[RaEndorsementRecord], csr: &CsrRecord) -> Plausibility {
    let mut conflicts = Vec::new();
    for e in endorsements {
        if e.verified_email != csr.subject_email {
            conflicts.push(PlausibilityConflict {
                field: "verified_email".into(),
                first_member: e.ra_member_id.clone(),
                second_member: String::new(),
                first_value: e.verified_email.clone(),
                second_value: csr.subject_email.clone(),
            });
        }
    }
    for (i, a) in endorsements.iter().enumerate() {
        for b in &endorsements[i + 1..] {
            for ((field, va), (_, vb)) in verified_fields(a).into_iter().zip(verified_fields(b)) {
                if va != vb {
                    conflicts.push(PlausibilityConflict {
                        field: field.into(),
                        first_member: a.ra_member_id.clone(),
                        second_member: b.ra_member_id.clone(),
                        first_value: va.to_owned(),
                        second_value: vb.to_owned(),
                    });
                }
            }
        }
    }
    if conflicts.is_empty() {
        Plausibility::Pass
    } else {
        Plausibility::Conflicts(conflicts)
    }
}

/// The endorsements that count toward the threshold: first endorsement of
/// each distinct member that the resolved rule permits.
fn counted<'c>(rule: &DomainRule, csr: &'c CsrRecord) -> Vec<&'c RaEndorsementRecord> {
    let mut seen = BTreeSet::new();
    csr.endorsements
        .iter()
        .filter(|e| rule.permitted_ra_members.contains(&e.ra_member_id))
        .filter(|e| seen.insert(e.ra_member_id.as_str()))
        .collect()
}

/// Members of a set of endorsements large enough to authorize `csr`, if one
/// exists. With plausibility checks on, the set is pairwise consistent and
/// matches the subject email.
pub fn authorizing_endorsers(policy: &CertificationPolicy, csr: &CsrRecord) -> Result<Option<Vec<String>>, PolicyError> {
    let rule = resolve_rule(policy, &csr.domain)?;
    let needed = rule.required_endorsements as usize;
    let counted = counted(rule, csr);
    if !rule.plausibility_checks_enabled {
        return Ok((counted.len() >= needed).then(|| counted.iter().map(|e| e.ra_member_id.clone()).collect()));
    }
    // Pairwise agreement is equality of the verified tuple, so consistent
    // subsets are exactly the groups of equal tuples.
    let mut groups: BTreeMap<(&str, &str, &str), Vec<String>> = BTreeMap::new();
    for e in counted.iter().filter(|e| e.verified_email == csr.subject_email) {
        groups
            .entry((&e.verified_name, &e.verified_email, &e.id_document_serial_suffix))
            .or_default()
            .push(e.ra_member_id.clone());
    }
    Ok(groups.into_values().find(|members| members.len() >= needed))
}

pub fn evaluate_authorization(policy: &CertificationPolicy, csr: &CsrRecord) -> Result<bool, PolicyError> {
    Ok(authorizing_endorsers(policy, csr)?.is_some())
}
