//! HTTP teacher client and its offline replay twin.
//!
//! Speaks the OpenAI-compatible chat-completions wire protocol: one POST per
//! oracle call, bearer-token auth from an environment variable, exponential
//! backoff on non-2xx replies, and an append-only replay log of every
//! request/response pair. [`ReplayTeacher`] serves the same oracle surface
//! from a recorded log, so curation runs can be reproduced with no network.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TeacherError, TeacherOracle};
use crate::ei_probe::ProbeTemplate;
use crate::task_model::{AugmentedTuple, EIRuleId, ReasoningTrace, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Serialize, Deserialize)]
struct ReplayRecord {
    request: ChatRequest,
    response: String,
    timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct HttpTeacherConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; no Authorization
    /// header is sent when the variable is unset.
    pub auth_env_var: String,
    pub answer_delimiter: String,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub temperature: f64,
    pub replay_log: Option<PathBuf>,
}

impl HttpTeacherConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_env_var: "EXGRPO_TEACHER_TOKEN".into(),
            answer_delimiter: "The best answer is".into(),
            max_retries: 3,
            base_backoff_ms: 50,
            temperature: 0.0,
            replay_log: None,
        }
    }
}

fn parse_reply(raw: &str, delimiter: &str) -> Result<(ReasoningTrace, String), TeacherError> {
    let pos = raw.find(delimiter).ok_or_else(|| TeacherError::UnparseableReply {
        delimiter: delimiter.to_string(),
        raw: raw.to_string(),
    })?;
    let mut steps: Vec<String> = raw[..pos]
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if steps.is_empty() {
        steps.push("answer stated directly".to_string());
    }
    let answer = raw[pos + delimiter.len()..]
        .trim()
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .trim_end_matches('.')
        .to_string();
    if answer.is_empty() {
        return Err(TeacherError::UnparseableReply {
            delimiter: delimiter.to_string(),
            raw: raw.to_string(),
        });
    }
    Ok((ReasoningTrace::new(steps).expect("steps are non-empty"), answer))
}

/// Prompt assembly shared by the live client and the replay twin. Keeping it
/// byte-identical between the two is what makes replay lookups hit.
trait ChatBackend {
    fn model(&self) -> &str;
    fn temperature(&self) -> f64;
    fn delimiter(&self) -> &str;
    fn backend_name(&self) -> &str;
    fn complete(&mut self, request: &ChatRequest) -> Result<String, TeacherError>;

    fn request_for(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.model().to_string(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt }],
            temperature: self.temperature(),
        }
    }
}

fn probe_prompt(task: &Task, rule: EIRuleId, q_aug: &str, delimiter: &str) -> String {
    format!(
        "You are a teacher explaining the logic behind a solved problem.\n\
         Original question: {}\n\
         Probe ({rule}): {q_aug}\n\
         Answer the probe with short reasoning steps, one per line, and finish with \"{delimiter} <answer>\".",
        task.question
    )
}

fn backend_generate_probe<B: ChatBackend>(
    backend: &mut B,
    task: &Task,
    rule: EIRuleId,
) -> Result<AugmentedTuple, TeacherError> {
    let q_aug = ProbeTemplate::for_rule(rule).render(task)?;
    let prompt = probe_prompt(task, rule, &q_aug, backend.delimiter());
    let request = backend.request_for(prompt);
    let raw = backend.complete(&request)?;
    let (r_aug, a_aug) = parse_reply(&raw, backend.delimiter())?;
    Ok(AugmentedTuple::new(task.id.clone(), rule, q_aug, a_aug, r_aug))
}

fn backend_answer_probe<B: ChatBackend>(
    backend: &mut B,
    q_aug: &str,
    context: &str,
) -> Result<(ReasoningTrace, String), TeacherError> {
    let prompt = format!(
        "{context}\n{q_aug}\nRespond with reasoning steps, then finish with \"{} <answer>\".",
        backend.delimiter()
    );
    let request = backend.request_for(prompt);
    let raw = backend.complete(&request)?;
    parse_reply(&raw, backend.delimiter())
}

fn backend_predict_answer<B: ChatBackend>(
    backend: &mut B,
    prompt: &str,
) -> Result<String, TeacherError> {
    let full = format!("{prompt}\nFinish with \"{} <answer>\".", backend.delimiter());
    let request = backend.request_for(full);
    let raw = backend.complete(&request)?;
    Ok(parse_reply(&raw, backend.delimiter())?.1)
}

macro_rules! delegate_teacher_oracle {
    ($ty:ty) => {
        impl TeacherOracle for $ty {
            fn generate_probe(
                &mut self,
                task: &Task,
                rule: EIRuleId,
            ) -> Result<AugmentedTuple, TeacherError> {
                backend_generate_probe(self, task, rule)
            }

            fn answer_probe(
                &mut self,
                q_aug: &str,
                context: &str,
            ) -> Result<(ReasoningTrace, String), TeacherError> {
                backend_answer_probe(self, q_aug, context)
            }

            fn predict_answer(&mut self, prompt: &str) -> Result<String, TeacherError> {
                backend_predict_answer(self, prompt)
            }

            fn describe(&self) -> String {
                format!("{}({})", self.backend_name(), self.model())
            }
        }
    };
}

delegate_teacher_oracle!(HttpTeacher);
delegate_teacher_oracle!(ReplayTeacher);

/// Live chat-completions client with retry and replay logging.
pub struct HttpTeacher {
    config: HttpTeacherConfig,
    client: reqwest::blocking::Client,
    /// Retries spent on the most recent call.
    pub last_retries: u32,
}

impl HttpTeacher {
    pub fn new(config: HttpTeacherConfig) -> Self {
        Self { config, client: reqwest::blocking::Client::new(), last_retries: 0 }
    }

    fn append_replay(&self, request: &ChatRequest, response: &str) -> Result<(), TeacherError> {
        let Some(path) = &self.config.replay_log else { return Ok(()) };
        let record = ReplayRecord {
            request: request.clone(),
            response: response.to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(file, "{line}")?;
        Ok(())
    }
}

impl ChatBackend for HttpTeacher {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn delimiter(&self) -> &str {
        &self.config.answer_delimiter
    }

    fn backend_name(&self) -> &str {
        "http"
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<String, TeacherError> {
        self.last_retries = 0;
        let token = std::env::var(&self.config.auth_env_var).ok();
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self.config.base_backoff_ms << (attempt - 1);
                std::thread::sleep(std::time::Duration::from_millis(backoff));
                self.last_retries = attempt;
            }
            let mut builder = self.client.post(&self.config.endpoint).json(request);
            if let Some(t) = &token {
                builder = builder.bearer_auth(t);
            }
            match builder.send() {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: ChatResponse = resp.json().map_err(|e| TeacherError::Http {
                        attempts: attempt + 1,
                        message: format!("malformed completion body: {e}"),
                    })?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| TeacherError::Http {
                            attempts: attempt + 1,
                            message: "completion has no choices".into(),
                        })?;
                    self.append_replay(request, &content)?;
                    return Ok(content);
                }
                Ok(resp) => {
                    last_error = format!("status {}", resp.status());
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(TeacherError::Http { attempts: self.config.max_retries + 1, message: last_error })
    }
}

/// Serves recorded request/response pairs; identical prompts replay in
/// recording order, and any unrecorded request is an error.
pub struct ReplayTeacher {
    model: String,
    temperature: f64,
    delimiter: String,
    responses: HashMap<String, VecDeque<String>>,
}

impl ReplayTeacher {
    pub fn from_log<P: AsRef<Path>>(
        path: P,
        config: &HttpTeacherConfig,
    ) -> Result<Self, TeacherError> {
        let content = std::fs::read_to_string(path)?;
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                TeacherError::Http { attempts: 0, message: format!("replay log line {}: {e}", idx + 1) }
            })?;
            let key = serde_json::to_string(&record.request).expect("request serializes");
            responses.entry(key).or_default().push_back(record.response);
        }
        Ok(Self {
            model: config.model.clone(),
            temperature: config.temperature,
            delimiter: config.answer_delimiter.clone(),
            responses,
        })
    }
}

impl ChatBackend for ReplayTeacher {
    fn model(&self) -> &str {
        &self.model
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn delimiter(&self) -> &str {
        &self.delimiter
    }

    fn backend_name(&self) -> &str {
        "replay"
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<String, TeacherError> {
        let key = serde_json::to_string(request).expect("request serializes");
        self.responses
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| TeacherError::ReplayMiss(request.messages[0].content.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_env::{make_forward_task, Op};
    use std::io::{Read, Write as IoWrite};
    use std::net::TcpListener;

    fn completion_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    }

    /// One-shot HTTP stub: serves the given (status, body) replies in order,
    /// one connection each, then exits.
    fn stub_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                // drain headers + body
                let mut buf = Vec::new();
                let mut byte = [0u8; 1];
                while !buf.ends_with(b"\r\n\r\n") {
                    if stream.read(&mut byte).unwrap() == 0 {
                        break;
                    }
                    buf.push(byte[0]);
                }
                let headers = String::from_utf8_lossy(&buf).to_lowercase();
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .map(|v| v.trim().parse().unwrap())
                    .unwrap_or(0);
                let mut body_buf = vec![0u8; content_length];
                stream.read_exact(&mut body_buf).unwrap();
                let reason = if status == 200 { "OK" } else { "Internal Server Error" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (endpoint, handle)
    }

    fn task() -> Task {
        make_forward_task("t0", "forward pair-0", "tom", "apples", 5, 2, Op::Subtract)
    }

    fn config(endpoint: &str) -> HttpTeacherConfig {
        let mut c = HttpTeacherConfig::new(endpoint, "stub-model");
        c.base_backoff_ms = 1;
        c
    }

    #[test]
    fn echo_fixture_parses_into_probe_fields() {
        let content = "identify the operation\ncompute 6 minus 2\nThe best answer is 4";
        let (endpoint, handle) = stub_server(vec![(200, completion_body(content))]);
        let mut teacher = HttpTeacher::new(config(&endpoint));
        let probe = teacher.generate_probe(&task(), EIRuleId::R4).unwrap();
        handle.join().unwrap();
        assert_eq!(probe.a_aug, "4");
        assert_eq!(
            probe.r_aug.steps,
            vec!["identify the operation".to_string(), "compute 6 minus 2".to_string()]
        );
        assert_eq!(probe.q_aug, "what if the number was 6 instead consider 6 minus 2");
    }

    #[test]
    fn two_500s_then_200_succeeds_after_two_retries() {
        let content = "take 5 minus 2 gives 3\nThe best answer is 3";
        let (endpoint, handle) = stub_server(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (200, completion_body(content)),
        ]);
        let mut teacher = HttpTeacher::new(config(&endpoint));
        let answer = teacher.predict_answer("consider 5 minus 2").unwrap();
        handle.join().unwrap();
        assert_eq!(answer, "3");
        assert_eq!(teacher.last_retries, 2);
    }

    #[test]
    fn retry_cap_exhausted_is_an_error() {
        let (endpoint, handle) =
            stub_server(vec![(500, "{}".into()), (500, "{}".into())]);
        let mut cfg = config(&endpoint);
        cfg.max_retries = 1;
        let mut teacher = HttpTeacher::new(cfg);
        let err = teacher.predict_answer("consider 5 minus 2").unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, TeacherError::Http { attempts: 2, .. }), "got {err}");
    }

    #[test]
    fn missing_delimiter_is_a_parse_error_with_raw_text() {
        let content = "some rambling with no final marker";
        let (endpoint, handle) = stub_server(vec![(200, completion_body(content))]);
        let mut teacher = HttpTeacher::new(config(&endpoint));
        let err = teacher.predict_answer("consider 5 minus 2").unwrap_err();
        handle.join().unwrap();
        match err {
            TeacherError::UnparseableReply { raw, .. } => assert_eq!(raw, content),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn replay_log_reproduces_probes_without_network() {
        let content = "identify the operation\ncompute 6 minus 2\nThe best answer is 4";
        let (endpoint, handle) = stub_server(vec![(200, completion_body(content))]);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("replay.jsonl");
        let mut cfg = config(&endpoint);
        cfg.replay_log = Some(log.clone());
        let mut live = HttpTeacher::new(cfg.clone());
        let recorded = live.generate_probe(&task(), EIRuleId::R4).unwrap();
        handle.join().unwrap();

        let mut replay = ReplayTeacher::from_log(&log, &cfg).unwrap();
        let replayed = replay.generate_probe(&task(), EIRuleId::R4).unwrap();
        assert_eq!(replayed, recorded);
        // second identical request has no remaining recording
        assert!(replay.generate_probe(&task(), EIRuleId::R4).is_err());
    }
}
