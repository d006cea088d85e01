//! OpenAI-compatible chat-completions client.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::config::RemoteConfig;
use super::parse::{parse_rating, parse_scene, parse_selection, parse_yes_no};
use super::{BackendError, Reply, VlmBackend};
use crate::catalog::{QuestionSpec, Scene, NOTA};
use crate::manifest::ImageRecord;
use crate::sevi::RatingScale;

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    image_root: PathBuf,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

fn scene_prompt() -> String {
    "Look at the image and decide whether it was taken indoors or outdoors. \
     Reply with JSON of the form {\"answer\": \"indoor\"} or {\"answer\": \"outdoor\"}."
        .to_string()
}

fn visibility_prompt(question: &QuestionSpec) -> String {
    format!(
        "{}\nAnswer strictly from what is visible in the image. \
         Reply with JSON of the form {{\"answer\": \"yes\"}} or {{\"answer\": \"no\"}}.",
        question.visibility_text.as_deref().unwrap_or(&question.text)
    )
}

fn answer_prompt(question: &QuestionSpec, options: &[String], reask: Option<&str>) -> String {
    let listed = options
        .iter()
        .map(|o| format!("- {o}"))
        .collect::<Vec<_>>()
        .join("\n");
    let rule = if question.multi_select {
        "Select every option that applies."
    } else {
        "Select exactly one option."
    };
    let mut prompt = format!(
        "{}\nOptions:\n{listed}\n{rule} If none of the options fit, select only \"{NOTA}\". \
         Copy option labels exactly. Reply with JSON of the form {{\"answer\": [\"<option>\", ...]}}.",
        question.text
    );
    if let Some(complaint) = reask {
        prompt.push_str(&format!("\nYour previous reply could not be used: {complaint}. Try again."));
    }
    prompt
}

fn rating_prompt(scale: &RatingScale, reask: Option<&str>) -> String {
    let mut prompt = format!(
        "Rate the image for {} on a scale from 1 to 5:\n{}\n\
         Reply with JSON of the form {{\"answer\": <integer 1-5>}}.",
        scale.dimension.as_str().replace('_', " "),
        scale.describe()
    );
    if let Some(complaint) = reask {
        prompt.push_str(&format!("\nYour previous reply could not be used: {complaint}. Try again."));
    }
    prompt
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

impl RemoteBackend {
    /// `image_root` resolves relative image paths in manifests.
    pub fn new(config: RemoteConfig, image_root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            image_root: image_root.into(),
            agent,
            last_request: Mutex::new(None),
        })
    }

    fn image_url(&self, image: &ImageRecord) -> Result<String, BackendError> {
        if image.uri.starts_with("http://") || image.uri.starts_with("https://") || image.uri.starts_with("data:") {
            return Ok(image.uri.clone());
        }
        let raw = image.uri.strip_prefix("file://").unwrap_or(&image.uri);
        let path = self.image_root.join(raw);
        let bytes = std::fs::read(&path).map_err(|e| BackendError::Unreachable {
            image_id: image.image_id.clone(),
            reason: format!("{}: {e}", path.display()),
        })?;
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{};base64,{encoded}", mime_for(&path)))
    }

    fn throttle(&self) {
        if self.config.min_interval_ms == 0 {
            return;
        }
        let gap = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_request.lock().expect("throttle lock poisoned");
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < gap {
                std::thread::sleep(gap - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn request_body(&self, prompt: &str, image_url: &str) -> Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "top_k": self.config.top_k,
            "max_tokens": self.config.max_output_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image_url}}
                ]
            }]
        })
    }

    /// Sends one prompt about `image` and returns the model's text.
    pub fn complete(&self, image: &ImageRecord, prompt: &str) -> Result<String, BackendError> {
        let url = self.image_url(image)?;
        let body = self.request_body(prompt, &url);
        self.throttle();
        let endpoint = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut request = self.agent.post(&endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("response has no message content".into()))
    }
}

fn transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::StatusCode(status) => BackendError::Http {
            status,
            body: String::new(),
        },
        ureq::Error::BadUri(u) => BackendError::Config(format!("bad endpoint `{u}`")),
        other => BackendError::Transport(other.to_string()),
    }
}

fn parsed<T>(transcript: String, result: Result<T, String>) -> Result<Reply<T>, BackendError> {
    match result {
        Ok(value) => Ok(Reply::new(value, transcript)),
        Err(why) => Err(BackendError::Protocol(format!("{why}; transcript: {transcript}"))),
    }
}

impl VlmBackend for RemoteBackend {
    fn id(&self) -> String {
        format!(
            "remote:{}:{}:t={}:p={}:k={}",
            self.config.endpoint, self.config.model, self.config.temperature, self.config.top_p, self.config.top_k
        )
    }

    fn classify_scene(&self, image: &ImageRecord) -> Result<Reply<Scene>, BackendError> {
        let t = self.complete(image, &scene_prompt())?;
        let v = parse_scene(&t);
        parsed(t, v)
    }

    fn check_visibility(&self, image: &ImageRecord, question: &QuestionSpec) -> Result<Reply<bool>, BackendError> {
        let t = self.complete(image, &visibility_prompt(question))?;
        let v = parse_yes_no(&t);
        parsed(t, v)
    }

    fn answer_multiselect(
        &self,
        image: &ImageRecord,
        question: &QuestionSpec,
        options: &[String],
        reask: Option<&str>,
    ) -> Result<Reply<Vec<String>>, BackendError> {
        let t = self.complete(image, &answer_prompt(question, options, reask))?;
        let v = parse_selection(&t, options);
        parsed(t, v)
    }

    fn rate_scale(&self, image: &ImageRecord, scale: &RatingScale, reask: Option<&str>) -> Result<Reply<u8>, BackendError> {
        let t = self.complete(image, &rating_prompt(scale, reask))?;
        let v = parse_rating(&t);
        parsed(t, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::QuestionAxis;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex as StdMutex};

    /// Serves canned HTTP responses in order and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<StdMutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(StdMutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn config(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            model: "test-model".into(),
            ..RemoteConfig::default()
        }
    }

    fn image() -> ImageRecord {
        ImageRecord {
            image_id: "a".into(),
            uri: "https://example.invalid/a.png".into(),
            entity: "house".into(),
            country: "India".into(),
            dataset: "d".into(),
            seed: None,
        }
    }

    #[test]
    fn sends_deterministic_sampling_parameters() {
        let (url, seen) = serve(vec![(200, completion("{\"answer\": \"outdoor\"}"))]);
        let backend = RemoteBackend::new(config(url), ".").unwrap();
        let reply = backend.classify_scene(&image()).unwrap();
        assert_eq!(reply.value, Scene::Outdoor);
        let body: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["top_p"], 0.01);
        assert_eq!(body["top_k"], 1);
        assert_eq!(body["max_tokens"], 4000);
        assert_eq!(body["model"], "test-model");
    }

    #[test]
    fn parses_multiselect_transcripts() {
        let (url, _) = serve(vec![(200, completion("Walls, Windows"))]);
        let backend = RemoteBackend::new(config(url), ".").unwrap();
        let q = QuestionSpec {
            id: "bg.indoor.elements".into(),
            axis: QuestionAxis::BackgroundIndoor,
            entity: None,
            text: "Which elements are visible?".into(),
            options: vec!["Walls".into(), "Windows".into(), "Furniture".into()],
            multi_select: true,
            visibility_text: None,
        };
        let reply = backend.answer_multiselect(&image(), &q, &q.offered_options(), None).unwrap();
        assert_eq!(reply.value, ["Walls", "Windows"]);
        assert_eq!(reply.transcript, "Walls, Windows");
    }

    #[test]
    fn server_errors_are_transient() {
        let (url, _) = serve(vec![(503, "{}".into()), (400, "{}".into())]);
        let backend = RemoteBackend::new(config(url), ".").unwrap();
        let first = backend.classify_scene(&image()).unwrap_err();
        assert!(first.is_transient(), "{first:?}");
        let second = backend.classify_scene(&image()).unwrap_err();
        assert!(!second.is_transient());
    }

    #[test]
    fn missing_local_file_is_unreachable() {
        let backend = RemoteBackend::new(config("http://127.0.0.1:9".into()), "/nonexistent").unwrap();
        let mut img = image();
        img.uri = "a.png".into();
        assert!(matches!(backend.classify_scene(&img), Err(BackendError::Unreachable { .. })));
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        let mut c = config("http://127.0.0.1:9".into());
        c.api_key_env = Some("GEODIV_TEST_SURELY_UNSET_VAR".into());
        assert!(matches!(RemoteBackend::new(c, "."), Err(BackendError::Config(_))));
    }
}
