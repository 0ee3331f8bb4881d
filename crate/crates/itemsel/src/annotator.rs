//! LLM annotation of items on the 16 demand rubrics through an
//! OpenAI-compatible chat-completions endpoint.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use itemsel_core::{BenchmarkItem, ScaleVector, DIMENSION_NAMES, MAX_LEVEL, N_DIMS};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const INSTANCE_PLACEHOLDER: &str = "{{instance}}";
pub const DIMENSION_PLACEHOLDER: &str = "{{dimension}}";
pub const RETRY_NUDGE: &str = "\n\nAnswer with only the final sentence.";

pub const DEFAULT_INSTRUCTION: &str = "TASK INSTANCE: {{instance}}\n\nINSTRUCTION: Score the level of *{{dimension}}* demanded by the given TASK INSTANCE using a discrete value from 0 to 5. Use CHAIN-OF-THOUGHTS REASONING to reason step by step before assigning the score. After the CHAIN-OF-THOUGHTS REASONING STEPS, conclude your assessment with the statement: \"Thus, the level of *{{dimension}}* demanded by the given TASK INSTANCE is: SCORE\", where 'SCORE' is the integer score you have determined.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub dimension_index: usize,
    pub dimension_name: String,
    pub rubric_text: String,
    pub instruction_template: String,
}

impl RubricSpec {
    pub fn new(dimension_index: usize, rubric_text: impl Into<String>, instruction_template: impl Into<String>) -> CliResult<Self> {
        let name = DIMENSION_NAMES
            .get(dimension_index)
            .ok_or_else(|| CliError::Validation(format!("dimension index {dimension_index} is outside 0-15")))?;
        let spec = RubricSpec {
            dimension_index,
            dimension_name: name.to_string(),
            rubric_text: rubric_text.into(),
            instruction_template: instruction_template.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.rubric_text.trim().is_empty() {
            return Err(CliError::Validation(format!("rubric for {:?} is empty", self.dimension_name)));
        }
        let count = self.instruction_template.matches(INSTANCE_PLACEHOLDER).count();
        if count != 1 {
            return Err(CliError::Validation(format!(
                "instruction template for {:?} must contain {INSTANCE_PLACEHOLDER} exactly once, found {count}",
                self.dimension_name
            )));
        }
        if DIMENSION_NAMES.get(self.dimension_index) != Some(&self.dimension_name.as_str()) {
            return Err(CliError::Validation(format!(
                "dimension {} is named {:?}, expected {:?}",
                self.dimension_index,
                self.dimension_name,
                DIMENSION_NAMES.get(self.dimension_index)
            )));
        }
        Ok(())
    }
}

/// File stem for a dimension: lowercase, spaces to underscores.
pub fn rubric_file_stem(dimension_index: usize) -> String {
    DIMENSION_NAMES[dimension_index].to_lowercase().replace(' ', "_")
}

/// Loads `<stem>.md` for every dimension. A line starting with
/// `TASK INSTANCE:` splits a file into rubric body and instruction template;
/// files without one use [`DEFAULT_INSTRUCTION`].
pub fn load_rubrics(dir: &Path) -> CliResult<Vec<RubricSpec>> {
    (0..N_DIMS)
        .map(|d| {
            let path = dir.join(format!("{}.md", rubric_file_stem(d)));
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let (body, template) = match text.find("\nTASK INSTANCE:") {
                Some(pos) => (text[..pos].to_string(), text[pos + 1..].to_string()),
                None if text.starts_with("TASK INSTANCE:") => (String::new(), text.clone()),
                None => (text.clone(), DEFAULT_INSTRUCTION.to_string()),
            };
            RubricSpec::new(d, body.trim_end().to_string(), template.trim_end().to_string())
                .map_err(|e| CliError::format(&path, e.to_string()))
        })
        .collect()
}

/// Query line, rubric body, then the instruction with item text substituted.
pub fn build_prompt(rubric: &RubricSpec, item: &BenchmarkItem) -> CliResult<String> {
    rubric.validate()?;
    let instruction = rubric
        .instruction_template
        .replace(DIMENSION_PLACEHOLDER, &rubric.dimension_name)
        .replacen(INSTANCE_PLACEHOLDER, &item.text, 1);
    Ok(format!(
        "QUERY: The following rubric describes six distinct levels of *{}* required by different tasks\n\n{}\n\n{}",
        rubric.dimension_name, rubric.rubric_text, instruction
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no \"is: <score>\" statement in the response")]
    ParseFailure,
    #[error("score {0} is outside 0-5")]
    RangeFailure(i64),
}

fn score_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bis:\s*\**\s*(-?\d+)").expect("valid regex"))
}

/// The integer after the last `is:` in the response.
pub fn parse_score(raw: &str) -> Result<u8, ParseError> {
    let caps = score_pattern().captures_iter(raw).last().ok_or(ParseError::ParseFailure)?;
    let v: i64 = caps[1].parse().map_err(|_| ParseError::ParseFailure)?;
    if (0..=i64::from(MAX_LEVEL)).contains(&v) {
        Ok(v as u8)
    } else {
        Err(ParseError::RangeFailure(v))
    }
}

/// Closing statement a well-behaved annotator ends with.
pub fn closing_sentence(dimension_name: &str, score: i64) -> String {
    format!("Thus, the level of *{dimension_name}* demanded by the given TASK INSTANCE is: {score}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// Base URL; requests go to `<endpoint>/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub cache_path: PathBuf,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            endpoint: "http://localhost:8000".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_parallel: 8,
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 120,
            cache_path: PathBuf::from("annotation_cache.jsonl"),
            api_key_env: "ITEMSEL_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// One prompt in, one completion out.
pub trait ChatClient: Sync {
    fn complete(&self, prompt: &str) -> Result<String, TransportError>;
}

pub struct HttpClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    requests: AtomicUsize,
}

impl HttpClient {
    pub fn new(config: &AnnotatorConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        HttpClient {
            agent,
            url: format!("{}/v1/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            requests: AtomicUsize::new(0),
        }
    }

    /// HTTP requests issued so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl ChatClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| TransportError(e.to_string()))?;
        let v: serde_json::Value = resp.into_json().map_err(|e| TransportError(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub key: String,
    pub item_id: String,
    pub dimension_index: usize,
    pub raw_response: String,
    pub score: u8,
    pub provider_model: String,
    pub timestamp: u64,
}

/// Hex SHA-256 of item text, dimension index and provider model.
pub fn cache_key(text: &str, dimension_index: usize, provider_model: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update([0u8]);
    h.update(dimension_index.to_le_bytes());
    h.update([0u8]);
    h.update(provider_model.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Append-only JSONL cache. Later records for a key win.
pub struct AnnotationCache {
    path: PathBuf,
    entries: HashMap<String, AnnotationRecord>,
}

impl AnnotationCache {
    pub fn open(path: &Path) -> CliResult<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| CliError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<AnnotationRecord>(&line) {
                    Ok(r) => {
                        entries.insert(r.key.clone(), r);
                    }
                    // a torn final line from an interrupted run is skipped
                    Err(e) => log::warn!("{}: line {}: skipping unreadable cache record: {e}", path.display(), n + 1),
                }
            }
        }
        Ok(AnnotationCache {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&AnnotationRecord> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, record: AnnotationRecord) -> CliResult<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::io(&self.path, e))?;
        let mut line = serde_json::to_string(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| CliError::io(&self.path, e))?;
        self.entries.insert(record.key.clone(), record);
        Ok(())
    }
}

/// Items that could not be fully annotated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub item_id: String,
    pub completed: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("annotation incomplete: {}", describe_failures(.0))]
    Partial(Vec<ItemFailure>),
    #[error(transparent)]
    Other(#[from] CliError),
}

fn describe_failures(fails: &[ItemFailure]) -> String {
    fails
        .iter()
        .map(|f| {
            let failed: Vec<String> = f
                .failed
                .iter()
                .map(|(d, e)| format!("{} ({e})", DIMENSION_NAMES[*d]))
                .collect();
            format!(
                "item {:?}: failed {}; completed dimensions {:?}",
                f.item_id,
                failed.join(", "),
                f.completed
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        match e {
            AnnotateError::Other(c) => c,
            p @ AnnotateError::Partial(_) => CliError::Runtime(p.to_string()),
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Sends `prompt` with bounded retries on transport errors and exponential
/// backoff; a parse or range failure gets one retry with [`RETRY_NUDGE`].
fn request_score(client: &dyn ChatClient, prompt: &str, config: &AnnotatorConfig) -> Result<(String, u8), String> {
    let send = |p: &str| -> Result<String, String> {
        let mut delay = config.backoff_ms;
        let mut attempt = 0;
        loop {
            match client.complete(p) {
                Ok(r) => return Ok(r),
                Err(e) if attempt >= config.max_retries => {
                    return Err(format!("transport failed after {} attempts: {e}", attempt + 1))
                }
                Err(e) => {
                    log::debug!("request failed ({e}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    };
    let raw = send(prompt)?;
    match parse_score(&raw) {
        Ok(s) => Ok((raw, s)),
        Err(first) => {
            let nudged = format!("{prompt}{RETRY_NUDGE}");
            let raw = send(&nudged)?;
            parse_score(&raw).map(|s| (raw, s)).map_err(|e| format!("{first}; after retry: {e}"))
        }
    }
}

/// Annotates every item on every dimension, using and extending the cache.
/// Uncached (item, dimension) pairs are spread over `max_parallel` workers;
/// cache writes go through one lock.
pub fn annotate_items(
    items: &[BenchmarkItem],
    rubrics: &[RubricSpec],
    client: &dyn ChatClient,
    cache: &mut AnnotationCache,
    config: &AnnotatorConfig,
) -> Result<Vec<ScaleVector>, AnnotateError> {
    if rubrics.len() != N_DIMS || rubrics.iter().enumerate().any(|(d, r)| r.dimension_index != d) {
        return Err(CliError::Validation("expected 16 rubrics in dimension order".into()).into());
    }
    let mut levels = vec![[None::<u8>; N_DIMS]; items.len()];
    let mut jobs = Vec::new();
    for (i, item) in items.iter().enumerate() {
        for (d, rubric) in rubrics.iter().enumerate() {
            let key = cache_key(&item.text, d, &config.model);
            match cache.get(&key) {
                Some(rec) => levels[i][d] = Some(rec.score),
                None => jobs.push((i, d, key, build_prompt(rubric, item)?)),
            }
        }
    }
    let next = AtomicUsize::new(0);
    let shared = Mutex::new((cache, Vec::<(usize, usize, Result<u8, String>)>::new()));
    let workers = config.max_parallel.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((i, d, key, prompt)) = jobs.get(j) else {
                    break;
                };
                let outcome = request_score(client, prompt, config);
                let mut guard = shared.lock().expect("cache lock");
                let (cache, results) = &mut *guard;
                let outcome = outcome.and_then(|(raw, score)| {
                    cache
                        .insert(AnnotationRecord {
                            key: key.clone(),
                            item_id: items[*i].id.clone(),
                            dimension_index: *d,
                            raw_response: raw,
                            score,
                            provider_model: config.model.clone(),
                            timestamp: now_secs(),
                        })
                        .map(|_| score)
                        .map_err(|e| e.to_string())
                });
                results.push((*i, *d, outcome));
            });
        }
    });
    let (_, results) = shared.into_inner().expect("cache lock");
    let mut failures: HashMap<usize, Vec<(usize, String)>> = HashMap::new();
    for (i, d, r) in results {
        match r {
            Ok(s) => levels[i][d] = Some(s),
            Err(e) => failures.entry(i).or_default().push((d, e)),
        }
    }
    if !failures.is_empty() {
        let mut report: Vec<ItemFailure> = failures
            .into_iter()
            .map(|(i, mut failed)| {
                failed.sort();
                ItemFailure {
                    item_id: items[i].id.clone(),
                    completed: (0..N_DIMS).filter(|&d| levels[i][d].is_some()).collect(),
                    failed,
                }
            })
            .collect();
        report.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        return Err(AnnotateError::Partial(report));
    }
    items
        .iter()
        .zip(&levels)
        .map(|(item, lv)| {
            let v: Vec<i64> = lv.iter().map(|l| i64::from(l.expect("all dimensions scored"))).collect();
            ScaleVector::new(item.id.clone(), &v).map_err(|e| AnnotateError::Other(e.into()))
        })
        .collect()
}

pub fn annotate_item(
    item: &BenchmarkItem,
    rubrics: &[RubricSpec],
    client: &dyn ChatClient,
    cache: &mut AnnotationCache,
    config: &AnnotatorConfig,
) -> Result<ScaleVector, AnnotateError> {
    Ok(annotate_items(std::slice::from_ref(item), rubrics, client, cache, config)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rubric(d: usize) -> RubricSpec {
        RubricSpec::new(d, format!("Levels 0-5 for {}.", DIMENSION_NAMES[d]), DEFAULT_INSTRUCTION).unwrap()
    }

    #[test]
    fn prompt_layout() {
        let item = BenchmarkItem::new("q", "b", "Is 2+2=4?").unwrap();
        let p = build_prompt(&rubric(10), &item).unwrap();
        assert!(p.contains("TASK INSTANCE: Is 2+2=4?"));
        assert!(p.contains("*Logical reasoning*"));
        let body = p.find("Levels 0-5").unwrap();
        let inst = p.find("TASK INSTANCE:").unwrap();
        let instr = p.find("INSTRUCTION:").unwrap();
        assert!(body < inst && inst < instr);
    }

    #[test]
    fn rubric_validation() {
        assert!(RubricSpec::new(0, "", DEFAULT_INSTRUCTION).is_err());
        assert!(RubricSpec::new(0, "x", "no placeholder").is_err());
        assert!(RubricSpec::new(0, "x", "{{instance}} {{instance}}").is_err());
        assert!(RubricSpec::new(16, "x", DEFAULT_INSTRUCTION).is_err());
    }

    #[test]
    fn parse_examples() {
        let s = "reasoning... Thus, the level of *Attention and Scan* demanded by the given TASK INSTANCE is: 3";
        assert_eq!(parse_score(s), Ok(3));
        assert_eq!(parse_score("... is: 7"), Err(ParseError::RangeFailure(7)));
        assert_eq!(parse_score("first it is: 2. Further, it is: 4"), Ok(4));
        assert_eq!(parse_score("no score here"), Err(ParseError::ParseFailure));
        assert_eq!(parse_score("The answer IS: **5**."), Ok(5));
        assert_eq!(parse_score("is: -1"), Err(ParseError::RangeFailure(-1)));
    }

    #[test]
    fn closing_sentence_round_trips() {
        for name in DIMENSION_NAMES {
            for s in 0..=5 {
                assert_eq!(parse_score(&closing_sentence(name, s)), Ok(s as u8));
            }
        }
    }

    #[test]
    fn cache_key_separates_fields() {
        let a = cache_key("text", 1, "m");
        assert_eq!(a.len(), 64);
        assert_ne!(a, cache_key("text", 2, "m"));
        assert_ne!(a, cache_key("text", 1, "n"));
        assert_eq!(a, cache_key("text", 1, "m"));
    }

    struct Scripted {
        calls: AtomicUsize,
        responses: Mutex<Vec<Result<String, TransportError>>>,
    }

    impl ChatClient for Scripted {
        fn complete(&self, _: &str) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses.lock().unwrap().remove(0)
        }
    }

    #[test]
    fn nudge_retry_then_success() {
        let c = Scripted {
            calls: AtomicUsize::new(0),
            responses: Mutex::new(vec![Ok("I think it is high".into()), Ok("... is: 4".into())]),
        };
        let cfg = AnnotatorConfig { backoff_ms: 0, ..Default::default() };
        assert_eq!(request_score(&c, "p", &cfg).unwrap().1, 4);
        assert_eq!(c.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn transport_retries_are_bounded() {
        let c = Scripted {
            calls: AtomicUsize::new(0),
            responses: Mutex::new((0..10).map(|_| Err(TransportError("down".into()))).collect()),
        };
        let cfg = AnnotatorConfig { backoff_ms: 0, max_retries: 3, ..Default::default() };
        assert!(request_score(&c, "p", &cfg).is_err());
        assert_eq!(c.calls.load(Ordering::SeqCst), 4);
    }
}
