//! Black-box query service: serves a translator to named clients, enforces
//! per-client budgets, applies an optional defense hook and keeps an
//! append-only ledger of every answered query.

mod cost;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

pub use cost::{cost_estimate, BudgetPolicy, Usd};

use crate::error::{Error, Result};
use crate::image::{ImageDigest, ImageTensor};
use crate::models::Translator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defended {
    #[default]
    None,
    Watermark,
    Poison,
}

/// One line of the ledger. Field names are part of the on-disk format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub client_id: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    /// Hex SHA-256 of the quantized input.
    pub input_digest: String,
    /// Hex SHA-256 of the returned (quantized) output.
    pub output_ref: String,
    pub defended: Defended,
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Micros, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

impl QueryRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Context handed to a defense hook for one query.
#[derive(Clone, Copy, Debug)]
pub struct QueryContext<'a> {
    pub client_id: &'a str,
    /// 1-based position of this query in the client's reservation order.
    pub ordinal: u64,
    pub input: &'a ImageTensor,
    pub input_digest: &'a ImageDigest,
}

/// Server-side modification of a response before it leaves the service.
pub trait DefenseHook: Send + Sync {
    /// Returns the (possibly modified) output and how it was defended.
    fn apply(&self, ctx: QueryContext<'_>, output: ImageTensor) -> Result<(ImageTensor, Defended)>;
}

/// The adversary-facing side of the service.
pub trait QueryClient: Send + Sync {
    fn client_id(&self) -> &str;
    fn query(&self, image: &ImageTensor) -> Result<ImageTensor>;
}

#[derive(Default)]
struct State {
    ledgers: BTreeMap<String, Vec<QueryRecord>>,
    /// Slots taken per client, including queries still in flight.
    reserved: BTreeMap<String, u64>,
    sink: Option<(PathBuf, File)>,
}

pub struct BlackBoxService {
    model: Arc<dyn Translator>,
    model_id: String,
    policy: BudgetPolicy,
    hook: Option<Arc<dyn DefenseHook>>,
    state: Mutex<State>,
}

impl BlackBoxService {
    pub fn new(model: Arc<dyn Translator>, policy: BudgetPolicy) -> Self {
        Self {
            model,
            model_id: "victim".into(),
            policy,
            hook: None,
            state: Mutex::new(State::default()),
        }
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn with_hook(mut self, hook: Arc<dyn DefenseHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    /// Appends every future record to `path` as one JSON object per line.
    pub fn with_ledger_file(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.lock().sink = Some((path, file));
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn policy(&self) -> &BudgetPolicy {
        &self.policy
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.model.input_shape()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn reserve(&self, client_id: &str) -> Result<u64> {
        let mut state = self.lock();
        let taken = state.reserved.entry(client_id.to_string()).or_insert(0);
        if let Some(limit) = self.policy.max_queries {
            if *taken >= limit {
                return Err(Error::BudgetExhausted {
                    client: client_id.to_string(),
                    limit,
                });
            }
        }
        *taken += 1;
        Ok(*taken)
    }

    fn release(&self, client_id: &str) {
        if let Some(taken) = self.lock().reserved.get_mut(client_id) {
            *taken = taken.saturating_sub(1);
        }
    }

    fn append(&self, record: QueryRecord) -> Result<()> {
        let mut state = self.lock();
        if let Some((path, file)) = state.sink.as_mut() {
            let mut line = record.to_json_line();
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        state.ledgers.entry(record.client_id.clone()).or_default().push(record);
        Ok(())
    }

    /// Answers one query. The returned image is quantized to 8 bits, exactly
    /// as a client would decode it from the wire.
    pub fn transform(&self, client_id: &str, image: &ImageTensor) -> Result<ImageTensor> {
        let expected = self.model.input_shape();
        if image.shape() != expected {
            return Err(Error::shape(format!("{expected:?}"), format!("{:?}", image.shape())));
        }
        if !image.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Malformed("image contains non-finite values".into()));
        }
        let input = image.quantized();
        let ordinal = self.reserve(client_id)?;
        let answer = self.answer(client_id, ordinal, &input);
        match answer {
            Ok((output, record)) => match self.append(record) {
                Ok(()) => Ok(output),
                Err(e) => {
                    self.release(client_id);
                    Err(e)
                }
            },
            Err(e) => {
                self.release(client_id);
                Err(e)
            }
        }
    }

    fn answer(&self, client_id: &str, ordinal: u64, input: &ImageTensor) -> Result<(ImageTensor, QueryRecord)> {
        let digest = input.digest();
        let mut output = self.model.translate(input)?.clipped();
        let mut defended = Defended::None;
        if let Some(hook) = &self.hook {
            let ctx = QueryContext {
                client_id,
                ordinal,
                input,
                input_digest: &digest,
            };
            (output, defended) = hook.apply(ctx, output)?;
        }
        let output = output.clipped().quantized();
        let record = QueryRecord {
            client_id: client_id.to_string(),
            timestamp: Utc::now(),
            input_digest: hex::encode(digest),
            output_ref: hex::encode(output.digest()),
            defended,
        };
        Ok((output, record))
    }

    /// Wire form of [`BlackBoxService::transform`]: PNG or JPEG in, PNG out.
    pub fn transform_bytes(&self, client_id: &str, body: &[u8]) -> Result<Vec<u8>> {
        let image = ImageTensor::decode(body).map_err(|e| Error::Malformed(e.to_string()))?;
        self.transform(client_id, &image)?.encode_png()
    }

    pub fn ledger(&self, client_id: &str) -> Vec<QueryRecord> {
        self.lock().ledgers.get(client_id).cloned().unwrap_or_default()
    }

    pub fn clients(&self) -> Vec<String> {
        self.lock().ledgers.keys().cloned().collect()
    }

    pub fn total_queries(&self) -> u64 {
        self.lock().ledgers.values().map(|l| l.len() as u64).sum()
    }

    /// What `client_id` has been charged so far.
    pub fn spent(&self, client_id: &str) -> Result<Usd> {
        cost_estimate(self.ledger(client_id).len() as u64, &self.policy)
    }

    /// Queries `client_id` may still issue; `None` when unlimited.
    pub fn remaining(&self, client_id: &str) -> Option<u64> {
        let taken = self.lock().reserved.get(client_id).copied().unwrap_or(0);
        self.policy.max_queries.map(|m| m.saturating_sub(taken))
    }

    pub fn client(self: &Arc<Self>, client_id: impl Into<String>) -> LocalClient {
        LocalClient {
            service: Arc::clone(self),
            client_id: client_id.into(),
        }
    }
}

/// In-process client bound to one identity.
#[derive(Clone)]
pub struct LocalClient {
    service: Arc<BlackBoxService>,
    client_id: String,
}

impl QueryClient for LocalClient {
    fn client_id(&self) -> &str {
        &self.client_id
    }

    fn query(&self, image: &ImageTensor) -> Result<ImageTensor> {
        self.service.transform(&self.client_id, image)
    }
}

/// Reads a ledger file written by [`BlackBoxService::with_ledger_file`].
pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Formats a timestamp the way ledger records do.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}
