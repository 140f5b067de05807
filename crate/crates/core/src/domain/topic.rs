use super::DomainError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Three-tier `tenant/category/topic` identifier.
///
/// The first tier is the unit of authentication. Tokens match
/// `[a-z0-9][a-z0-9-]*`, so the formatted name is safe as a path and a URL segment.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName {
    full: Arc<str>,
    tenant_end: usize,
    category_end: usize,
}

fn valid_token(t: &str) -> bool {
    let mut bytes = t.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() || b.is_ascii_digit() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

impl TopicName {
    pub fn new(tenant: &str, category: &str, topic: &str) -> Result<Self, DomainError> {
        Self::parse(&format!("{tenant}/{category}/{topic}"))
    }

    pub fn parse(s: &str) -> Result<Self, DomainError> {
        let malformed = |reason| DomainError::MalformedTopic {
            input: s.to_string(),
            reason,
        };
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(malformed("expected exactly three tiers tenant/category/topic"));
        }
        for p in &parts {
            if p.is_empty() {
                return Err(malformed("empty tier"));
            }
            if !valid_token(p) {
                return Err(malformed("tiers must match [a-z0-9][a-z0-9-]*"));
            }
        }
        let tenant_end = parts[0].len();
        Ok(Self {
            full: Arc::from(s),
            tenant_end,
            category_end: tenant_end + 1 + parts[1].len(),
        })
    }

    pub fn tenant(&self) -> &str {
        &self.full[..self.tenant_end]
    }

    pub fn category(&self) -> &str {
        &self.full[self.tenant_end + 1..self.category_end]
    }

    pub fn topic(&self) -> &str {
        &self.full[self.category_end + 1..]
    }

    pub fn as_str(&self) -> &str {
        &self.full
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.full)
    }
}

impl fmt::Debug for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TopicName({})", self.full)
    }
}

impl FromStr for TopicName {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for TopicName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.full)
    }
}

impl<'de> Deserialize<'de> for TopicName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TopicName::parse(&s).map_err(serde::de::Error::custom)
    }
}
