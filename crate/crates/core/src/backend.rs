//! Generation backends: an HTTP client, mocks and the local n-gram model,
//! all producing a [`TurnPrediction`] per dialogue turn.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonicalizer::{canonicalize, RuleSet};
use crate::decoding::{decode, DecodeConfig};
use crate::error::{read_to_string, Error, Result};
use crate::lm::NGramModel;
use crate::metrics::TurnPrediction;
use crate::model::{
    detokenize, AnnotatedTurnExample, DialogueHistory, NLStateDescription, SlotValue, Speaker,
    StructuredState, TurnKey,
};
use crate::ontology::Ontology;
use crate::verbalizer::{verbalize, TemplateSet};

pub mod stub;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub top_p: f64,
    pub stop: Vec<String>,
    pub request_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub request_id: String,
    #[serde(default)]
    pub text: Option<String>,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ExternalHttp,
    MockOracle,
    MockCanned,
    NgramLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    NaturalLanguage,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubled on every further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_output_mode")]
    pub output_mode: OutputMode,
    /// Canned responses for `mock_canned`, keyed by request id.
    #[serde(default)]
    pub canned_path: Option<PathBuf>,
    /// Sent as `Authorization: Bearer <token>` when set.
    #[serde(default)]
    pub bearer_token: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    100
}
fn default_max_in_flight() -> usize {
    4
}
fn default_output_mode() -> OutputMode {
    OutputMode::NaturalLanguage
}

impl BackendSpec {
    pub fn new(kind: BackendKind, output_mode: OutputMode) -> Self {
        BackendSpec {
            kind,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
            output_mode,
            canned_path: None,
            bearer_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.endpoint) {
            (BackendKind::ExternalHttp, None) => {
                return Err(Error::contract("external_http backend requires an endpoint"))
            }
            (BackendKind::ExternalHttp, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::contract("endpoint is only valid for external_http"))
            }
        }
        if self.kind == BackendKind::MockCanned && self.canned_path.is_none() {
            return Err(Error::contract("mock_canned backend requires canned_path"));
        }
        if self.timeout_ms == 0 {
            return Err(Error::contract("timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::contract("max_in_flight must be at least 1"));
        }
        Ok(())
    }
}

/// Renders a state as `domain-slot: value` entries joined by `separator`;
/// the empty state renders as `none`.
pub fn render_structured(state: &StructuredState, separator: &str) -> String {
    if state.is_empty() {
        return "none".to_string();
    }
    state
        .iter()
        .map(|e| format!("{}-{}: {}", e.domain, e.slot, e.value))
        .collect::<Vec<_>>()
        .join(separator)
}

/// Parses the structured record grammar: entries `domain-slot: value`
/// separated by newlines or `;`, or the single word `none` for the empty
/// state. Values are normalized against the ontology; unknown slots, invalid
/// values, duplicate keys and empty output are errors.
pub fn parse_structured(text: &str, ontology: &Ontology) -> Result<StructuredState> {
    let entries: Vec<&str> = text
        .split(['\n', ';'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let fail = |msg: String| Error::parse("structured output", msg);
    if entries.is_empty() {
        return Err(fail("empty output".into()));
    }
    if entries == ["none"] {
        return Ok(StructuredState::new());
    }
    let mut state = StructuredState::new();
    for entry in entries {
        let (key, raw) = entry
            .split_once(':')
            .ok_or_else(|| fail(format!("entry without ':' in {entry:?}")))?;
        let (domain, slot) = key
            .trim()
            .split_once('-')
            .ok_or_else(|| fail(format!("key without '-' in {entry:?}")))?;
        let (domain, slot) = (domain.trim(), slot.trim());
        if ontology.slot(domain, slot).is_none() {
            return Err(fail(format!("unknown slot {domain}-{slot}")));
        }
        let value = ontology
            .normalize_value(domain, slot, raw.trim())
            .ok_or_else(|| fail(format!("invalid value {:?} for {domain}-{slot}", raw.trim())))?;
        if state.insert(SlotValue::new(domain, slot, &value)).is_some() {
            return Err(fail(format!("duplicate key {domain}-{slot}")));
        }
    }
    Ok(state)
}

/// Plain-text prompt in the same layout the n-gram model is conditioned on.
pub fn render_prompt(history: &DialogueHistory) -> String {
    let mut parts = Vec::new();
    for turn in history.turns() {
        let tag = match turn.speaker {
            Speaker::User => "user:",
            Speaker::System => "system:",
        };
        parts.push(format!("{tag} {}", detokenize(&turn.utterance)).trim_end().to_string());
    }
    format!("{} state:", parts.join(" <sep> "))
}

pub fn request_id(key: &TurnKey) -> String {
    key.to_string()
}

/// Reads a JSON-lines file of `{"request_id": .., "text": ..}` records.
pub fn load_canned(path: &Path) -> Result<HashMap<String, String>> {
    #[derive(Deserialize)]
    struct Canned {
        request_id: String,
        text: String,
    }
    let text = read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let c: Canned = serde_json::from_str(line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string())
        })?;
        out.insert(c.request_id, c.text);
    }
    Ok(out)
}

/// Shared read-only resources used to interpret backend output.
#[derive(Debug, Clone)]
pub struct Interpretation {
    pub ontology: Arc<Ontology>,
    pub templates: Arc<TemplateSet>,
    pub state_rules: Arc<RuleSet>,
}

enum Source {
    Http(ureq::Agent),
    Oracle(BTreeMap<TurnKey, StructuredState>),
    Canned(HashMap<String, String>),
    Ngram(Arc<NGramModel>),
}

/// A validated backend bound to its resources.
pub struct Backend {
    spec: BackendSpec,
    interp: Interpretation,
    source: Source,
}

impl Backend {
    /// Binds `spec`. `golds` feeds `mock_oracle`; `model` feeds `ngram_local`.
    pub fn bind(
        spec: BackendSpec,
        interp: Interpretation,
        golds: &[AnnotatedTurnExample],
        model: Option<Arc<NGramModel>>,
    ) -> Result<Self> {
        spec.validate()?;
        let source = match spec.kind {
            BackendKind::ExternalHttp => {
                let config = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
                    .http_status_as_error(false)
                    .build();
                Source::Http(ureq::Agent::new_with_config(config))
            }
            BackendKind::MockOracle => Source::Oracle(
                golds
                    .iter()
                    .map(|g| (g.key(), g.gold_structured.clone()))
                    .collect(),
            ),
            BackendKind::MockCanned => {
                Source::Canned(load_canned(spec.canned_path.as_deref().expect("validated"))?)
            }
            BackendKind::NgramLocal => Source::Ngram(
                model.ok_or_else(|| Error::contract("ngram_local backend needs a fitted model"))?,
            ),
        };
        Ok(Backend { spec, interp, source })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Produces the raw backend text for one turn.
    fn generate_text(&self, history: &DialogueHistory, key: &TurnKey, decode_cfg: &DecodeConfig) -> Result<String> {
        match &self.source {
            Source::Oracle(golds) => {
                let gold = golds
                    .get(key)
                    .ok_or_else(|| Error::Backend(format!("no gold state for {key}")))?;
                Ok(match self.spec.output_mode {
                    OutputMode::NaturalLanguage => verbalize(gold, &self.interp.templates)?.text(),
                    OutputMode::Structured => render_structured(gold, "\n"),
                })
            }
            Source::Canned(canned) => canned
                .get(&request_id(key))
                .cloned()
                .ok_or_else(|| Error::Backend(format!("no canned response for {key}"))),
            Source::Ngram(model) => {
                let result = decode(model.as_ref(), &model.prompt(history), decode_cfg)?;
                Ok(detokenize(&model.vocab().decode(&result.ids)))
            }
            Source::Http(agent) => self.call_http(agent, history, key, decode_cfg),
        }
    }

    fn call_http(
        &self,
        agent: &ureq::Agent,
        history: &DialogueHistory,
        key: &TurnKey,
        decode_cfg: &DecodeConfig,
    ) -> Result<String> {
        let endpoint = self.spec.endpoint.as_deref().expect("validated");
        let request = GenerationRequest {
            prompt: render_prompt(history),
            max_tokens: decode_cfg.max_len,
            top_p: decode_cfg.nucleus_p,
            stop: vec!["\n\n".to_string()],
            request_id: request_id(key),
        };
        let body = serde_json::to_string(&request).expect("request serializes") + "\n";
        let mut last_error = String::new();
        for attempt in 0..=self.spec.max_retries {
            if attempt > 0 {
                let delay = self.spec.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.http_once(agent, endpoint, &body, &request.request_id) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("{key}: attempt {} failed: {e}", attempt + 1);
                    last_error = e;
                }
            }
        }
        Err(Error::Backend(format!(
            "{key}: giving up after {} attempts: {last_error}",
            self.spec.max_retries + 1
        )))
    }

    fn http_once(&self, agent: &ureq::Agent, endpoint: &str, body: &str, id: &str) -> std::result::Result<String, String> {
        let mut req = agent.post(endpoint).header("Content-Type", "application/x-ndjson");
        if let Some(token) = &self.spec.bearer_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP status {status}"));
        }
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let parsed: GenerationResponse =
            serde_json::from_str(line).map_err(|e| format!("malformed response: {e}"))?;
        if parsed.request_id != id {
            return Err(format!("request_id mismatch: sent {id}, got {}", parsed.request_id));
        }
        match (parsed.finish_reason, parsed.text) {
            (FinishReason::Error, _) => Err("backend reported an error".into()),
            (_, None) => Err("response without text".into()),
            (_, Some(t)) => Ok(t),
        }
    }

    /// Runs one turn. Failures never propagate: they become an empty
    /// prediction carrying an error message.
    pub fn generate_state(&self, history: &DialogueHistory, decode_cfg: &DecodeConfig) -> TurnPrediction {
        let key = TurnKey {
            dialogue_id: history.dialogue_id().to_string(),
            turn_index: history.last_turn_index(),
        };
        let text = match self.generate_text(history, &key, decode_cfg) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{key}: {e}");
                return TurnPrediction::failed(key, e.to_string());
            }
        };
        self.interpret(key, &text)
    }

    /// Turns raw backend text into a prediction according to the output mode.
    pub fn interpret(&self, key: TurnKey, text: &str) -> TurnPrediction {
        match self.spec.output_mode {
            OutputMode::NaturalLanguage => {
                let nl = NLStateDescription::from_text(text);
                let state = canonicalize(&nl, &self.interp.ontology, &self.interp.state_rules);
                TurnPrediction {
                    key,
                    predicted_structured: state,
                    predicted_nl: Some(nl),
                    error: None,
                }
            }
            OutputMode::Structured => match parse_structured(text, &self.interp.ontology) {
                Ok(state) => TurnPrediction::new(key, state),
                Err(e) => {
                    log::warn!("{key}: {e}");
                    TurnPrediction::failed(key, e.to_string())
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Speaker;
    use proptest::prelude::*;

    fn interp() -> Interpretation {
        let o = Ontology::builtin();
        Interpretation {
            templates: Arc::new(TemplateSet::builtin(&o)),
            state_rules: Arc::new(RuleSet::builtin_state(&o)),
            ontology: Arc::new(o),
        }
    }

    fn table6() -> StructuredState {
        [
            SlotValue::new("train", "departure", "london kings cross"),
            SlotValue::new("train", "destination", "cambridge"),
            SlotValue::new("train", "day", "monday"),
            SlotValue::new("train", "leaveat", "07:00"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn spec_validation() {
        let mut s = BackendSpec::new(BackendKind::ExternalHttp, OutputMode::NaturalLanguage);
        assert!(s.validate().is_err());
        s.endpoint = Some("http://127.0.0.1:1/".into());
        s.validate().unwrap();
        s.timeout_ms = 0;
        assert!(s.validate().is_err());
        let mut o = BackendSpec::new(BackendKind::MockOracle, OutputMode::Structured);
        o.validate().unwrap();
        o.endpoint = Some("http://x".into());
        assert!(o.validate().is_err());
    }

    #[test]
    fn structured_round_trip() {
        let o = Ontology::builtin();
        let s = table6();
        for sep in ["\n", "; "] {
            assert_eq!(parse_structured(&render_structured(&s, sep), &o).unwrap(), s);
        }
        assert!(parse_structured("none", &o).unwrap().is_empty());
        let parsed = parse_structured("train-departure: london kings cross", &o).unwrap();
        assert_eq!(parsed.get("train", "departure"), Some("london kings cross"));
    }

    #[test]
    fn structured_rejects_malformed() {
        let o = Ontology::builtin();
        for bad in [
            "",
            "train departure: cambridge",
            "train-departure cambridge",
            "train-colour: red",
            "train-day: someday",
            "train-day: monday\ntrain-day: tuesday",
            "none\ntrain-day: monday",
        ] {
            assert!(parse_structured(bad, &o).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn canned_table6_sentence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canned.jsonl");
        std::fs::write(
            &path,
            "{\"request_id\":\"d#0\",\"text\":\"user is looking for a train from london kings cross to cambridge departing around 7am on monday\"}\n",
        )
        .unwrap();
        let mut spec = BackendSpec::new(BackendKind::MockCanned, OutputMode::NaturalLanguage);
        spec.canned_path = Some(path);
        let b = Backend::bind(spec, interp(), &[], None).unwrap();
        let h = DialogueHistory::from_texts("d", &[(Speaker::User, "hello")]).unwrap();
        let p = b.generate_state(&h, &DecodeConfig::default());
        assert_eq!(p.predicted_structured, table6());
        assert!(p.error.is_none());
        let missing = DialogueHistory::from_texts("e", &[(Speaker::User, "hello")]).unwrap();
        let p = b.generate_state(&missing, &DecodeConfig::default());
        assert!(p.error.is_some() && p.predicted_structured.is_empty());
    }

    #[test]
    fn prompt_layout() {
        let h = DialogueHistory::from_texts(
            "d",
            &[(Speaker::User, "Hi there"), (Speaker::System, "ok."), (Speaker::User, "")],
        )
        .unwrap();
        assert_eq!(render_prompt(&h), "user: hi there <sep> system: ok . <sep> user: state:");
    }

    proptest! {
        #[test]
        fn fuzz_structured_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let b = Backend::bind(
                BackendSpec::new(BackendKind::MockOracle, OutputMode::Structured),
                interp(),
                &[],
                None,
            ).unwrap();
            let text = String::from_utf8_lossy(&bytes);
            let key = TurnKey { dialogue_id: "f".into(), turn_index: 0 };
            let p = b.interpret(key, &text);
            prop_assert!(p.error.is_some() || p.predicted_structured.len() <= 64);
            if p.error.is_some() {
                prop_assert!(p.predicted_structured.is_empty());
            }
        }
    }
}
