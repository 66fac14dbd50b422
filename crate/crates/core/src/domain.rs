//! Shared vocabulary: identifiers, dimension keys, outcomes and the
//! per-dimension parameter records consumed by the scorers.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Result<Self> {
                let id = id.as_ref();
                if id.is_empty() {
                    return Err(Error::EmptyIdentifier);
                }
                Ok(Self(Arc::from(id)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(value: String) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0.to_string()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }
    };
}

string_id!(
    /// A payment gateway (one bandit arm). Ordering is lexicographic and is
    /// the tie-break used by every ranking.
    GatewayId
);
string_id!(
    /// One experimentation arm; each owns an isolated score space.
    ConfigurationId
);
string_id!(TxnId);

/// Milliseconds since the epoch of whichever [`Clock`] produced it.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs(secs: u64) -> Self {
        Timestamp(secs * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_add(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_add(d.as_millis() as u64))
    }

    pub fn saturating_sub(self, d: Duration) -> Self {
        Timestamp(self.0.saturating_sub(d.as_millis() as u64))
    }

    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub trait Clock {
    fn now(&self) -> Timestamp;
}

/// Wall clock, milliseconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let since = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(since.as_millis() as u64)
    }
}

/// Ordered list of dimension field names. Keys built through a schema
/// always list their fields in schema order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DimensionSchema {
    fields: Vec<String>,
}

impl Default for DimensionSchema {
    fn default() -> Self {
        Self {
            fields: ["MERCHANT_ID", "PLATFORM", "PAYMENT_INSTRUMENT", "NETWORK"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl DimensionSchema {
    pub fn new<I, S>(fields: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let fields: Vec<String> = fields.into_iter().map(Into::into).collect();
        for (i, f) in fields.iter().enumerate() {
            check_token(f, true)?;
            if fields[..i].contains(f) {
                return Err(Error::DuplicateDimensionField(f.clone()));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    /// Builds the canonical key for a set of `(field, value)` pairs. The
    /// result does not depend on the order the pairs are given in.
    pub fn canonical_key<I, F, V>(&self, entries: I) -> Result<DimensionKey>
    where
        I: IntoIterator<Item = (F, V)>,
        F: Into<String>,
        V: Into<String>,
    {
        let mut ranked = Vec::new();
        for (field, value) in entries {
            let (field, value) = (field.into(), value.into());
            let pos = self
                .fields
                .iter()
                .position(|f| *f == field)
                .ok_or_else(|| Error::UnknownDimensionField(field.clone()))?;
            if ranked.iter().any(|(p, _, _)| *p == pos) {
                return Err(Error::DuplicateDimensionField(field));
            }
            check_token(&value, false)?;
            ranked.push((pos, field, value));
        }
        ranked.sort_by_key(|(pos, _, _)| *pos);
        Ok(DimensionKey::from_ordered(
            ranked.into_iter().map(|(_, f, v)| (f, v)).collect(),
        ))
    }
}

fn check_token(s: &str, is_field: bool) -> Result<()> {
    let bad = s.contains('|') || (is_field && (s.contains('=') || s.is_empty()));
    if bad {
        return Err(Error::MalformedDimensionKey(s.to_string()));
    }
    Ok(())
}

/// Canonical key under the default four-field schema.
pub fn canonical_key<I, F, V>(entries: I) -> Result<DimensionKey>
where
    I: IntoIterator<Item = (F, V)>,
    F: Into<String>,
    V: Into<String>,
{
    DimensionSchema::default().canonical_key(entries)
}

/// Identifies one score space, e.g. `MERCHANT_ID=m1|PAYMENT_INSTRUMENT=UPI`.
/// Equality and hashing go through the canonical serialization.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DimensionKey {
    entries: Arc<[(String, String)]>,
    canonical: Arc<str>,
}

impl DimensionKey {
    /// The empty (global) dimension.
    pub fn global() -> Self {
        Self::from_ordered(Vec::new())
    }

    fn from_ordered(entries: Vec<(String, String)>) -> Self {
        let canonical = entries
            .iter()
            .map(|(f, v)| format!("{f}={v}"))
            .collect::<Vec<_>>()
            .join("|");
        Self {
            entries: entries.into(),
            canonical: canonical.into(),
        }
    }

    /// Parses a canonical serialization. Field order is taken as given.
    pub fn parse(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Self::global());
        }
        let mut entries: Vec<(String, String)> = Vec::new();
        for part in s.split('|') {
            let (f, v) = part
                .split_once('=')
                .ok_or_else(|| Error::MalformedDimensionKey(s.to_string()))?;
            if f.is_empty() {
                return Err(Error::MalformedDimensionKey(s.to_string()));
            }
            if entries.iter().any(|(e, _)| e == f) {
                return Err(Error::DuplicateDimensionField(f.to_string()));
            }
            entries.push((f.to_string(), v.to_string()));
        }
        Ok(Self::from_ordered(entries))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn as_str(&self) -> &str {
        &self.canonical
    }

    pub fn is_global(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PartialEq for DimensionKey {
    fn eq(&self, other: &Self) -> bool {
        self.canonical == other.canonical
    }
}

impl Eq for DimensionKey {}

impl Hash for DimensionKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.canonical.hash(state);
    }
}

impl PartialOrd for DimensionKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DimensionKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl TryFrom<String> for DimensionKey {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::parse(&value)
    }
}

impl From<DimensionKey> for String {
    fn from(value: DimensionKey) -> String {
        value.canonical.to_string()
    }
}

impl fmt::Display for DimensionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl fmt::Debug for DimensionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DimensionKey({:?})", &*self.canonical)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeStatus {
    Success,
    Failure,
}

impl OutcomeStatus {
    pub fn is_success(self) -> bool {
        matches!(self, OutcomeStatus::Success)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Success => "SUCCESS",
            OutcomeStatus::Failure => "FAILURE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionOutcome {
    pub txn_id: TxnId,
    pub gateway: GatewayId,
    pub status: OutcomeStatus,
    pub initiated_at: Timestamp,
    pub resolved_at: Timestamp,
    pub explored: bool,
}

impl TransactionOutcome {
    pub fn new(
        txn_id: TxnId,
        gateway: GatewayId,
        status: OutcomeStatus,
        initiated_at: Timestamp,
        resolved_at: Timestamp,
        explored: bool,
    ) -> Result<Self> {
        if resolved_at < initiated_at {
            return Err(invalid("resolved_at", "must not precede initiated_at"));
        }
        Ok(Self {
            txn_id,
            gateway,
            status,
            initiated_at,
            resolved_at,
            explored,
        })
    }
}

pub(crate) mod serde_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Explore/exploit parameters for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExplorationParams", into = "RawExplorationParams")]
pub struct ExplorationParams {
    /// Traffic fraction explored on *each* gateway; total exploration is m·e.
    pub factor: f64,
    pub window_size: usize,
    pub max_window_age: Duration,
}

pub const DEFAULT_MAX_WINDOW_AGE: Duration = Duration::from_secs(2 * 60 * 60);

impl ExplorationParams {
    pub fn new(factor: f64, window_size: usize, max_window_age: Duration) -> Result<Self> {
        if !(factor > 0.0 && factor <= 0.5) {
            return Err(invalid("exploration factor", format!("{factor} not in (0, 0.5]")));
        }
        if window_size == 0 {
            return Err(invalid("window size", "must be at least 1"));
        }
        if max_window_age.is_zero() {
            return Err(invalid("max window age", "must be positive"));
        }
        Ok(Self {
            factor,
            window_size,
            max_window_age,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawExplorationParams {
    factor: f64,
    window_size: usize,
    #[serde(with = "serde_secs", default = "default_age", rename = "max_window_age_s")]
    max_window_age: Duration,
}

fn default_age() -> Duration {
    DEFAULT_MAX_WINDOW_AGE
}

impl TryFrom<RawExplorationParams> for ExplorationParams {
    type Error = Error;

    fn try_from(r: RawExplorationParams) -> Result<Self> {
        Self::new(r.factor, r.window_size, r.max_window_age)
    }
}

impl From<ExplorationParams> for RawExplorationParams {
    fn from(p: ExplorationParams) -> Self {
        Self {
            factor: p.factor,
            window_size: p.window_size,
            max_window_age: p.max_window_age,
        }
    }
}

/// Health-score parameters for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDowntimeParams", into = "RawDowntimeParams")]
pub struct DowntimeParams {
    pub reward_factor: f64,
    pub threshold: f64,
    /// Number of stationary standard deviations between the mean score and
    /// the threshold.
    pub sigma_factor: f64,
    pub revival_interval: Duration,
}

pub const DEFAULT_REVIVAL_INTERVAL: Duration = Duration::from_secs(5 * 60);

impl DowntimeParams {
    pub fn new(
        reward_factor: f64,
        threshold: f64,
        sigma_factor: f64,
        revival_interval: Duration,
    ) -> Result<Self> {
        if !(reward_factor > 0.0 && reward_factor < 1.0) {
            return Err(invalid("reward factor", format!("{reward_factor} not in (0, 1)")));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid("threshold", format!("{threshold} not in (0, 1)")));
        }
        if !(sigma_factor > 0.0 && sigma_factor.is_finite()) {
            return Err(invalid("sigma factor", format!("{sigma_factor} must be positive")));
        }
        Ok(Self {
            reward_factor,
            threshold,
            sigma_factor,
            revival_interval,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawDowntimeParams {
    reward_factor: f64,
    threshold: f64,
    sigma_factor: f64,
    #[serde(with = "serde_secs", default = "default_revival", rename = "revival_interval_s")]
    revival_interval: Duration,
}

fn default_revival() -> Duration {
    DEFAULT_REVIVAL_INTERVAL
}

impl TryFrom<RawDowntimeParams> for DowntimeParams {
    type Error = Error;

    fn try_from(r: RawDowntimeParams) -> Result<Self> {
        Self::new(r.reward_factor, r.threshold, r.sigma_factor, r.revival_interval)
    }
}

impl From<DowntimeParams> for RawDowntimeParams {
    fn from(p: DowntimeParams) -> Self {
        Self {
            reward_factor: p.reward_factor,
            threshold: p.threshold,
            sigma_factor: p.sigma_factor,
            revival_interval: p.revival_interval,
        }
    }
}

/// Feedback deadlines: TP99.9 for success and TP99 for failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeedbackConfig", into = "RawFeedbackConfig")]
pub struct FeedbackConfig {
    pub success_timeout: Duration,
    pub failure_timeout: Duration,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            success_timeout: Duration::from_secs(180),
            failure_timeout: Duration::from_secs(90),
        }
    }
}

impl FeedbackConfig {
    pub fn new(success_timeout: Duration, failure_timeout: Duration) -> Result<Self> {
        if failure_timeout.is_zero() || success_timeout < failure_timeout {
            return Err(invalid(
                "feedback timeouts",
                "need success_timeout >= failure_timeout > 0",
            ));
        }
        Ok(Self {
            success_timeout,
            failure_timeout,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawFeedbackConfig {
    #[serde(with = "serde_secs", rename = "success_timeout_s")]
    success_timeout: Duration,
    #[serde(with = "serde_secs", rename = "failure_timeout_s")]
    failure_timeout: Duration,
}

impl TryFrom<RawFeedbackConfig> for FeedbackConfig {
    type Error = Error;

    fn try_from(r: RawFeedbackConfig) -> Result<Self> {
        Self::new(r.success_timeout, r.failure_timeout)
    }
}

impl From<FeedbackConfig> for RawFeedbackConfig {
    fn from(c: FeedbackConfig) -> Self {
        Self {
            success_timeout: c.success_timeout,
            failure_timeout: c.failure_timeout,
        }
    }
}
