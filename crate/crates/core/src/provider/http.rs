use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ProviderBackend, ProviderError, ProviderRequest, ProviderResponse};
use crate::config::ProviderProfile;

const RETRIES: u32 = 2;
const BACKOFF_BASE_MS: u64 = 100;

/// Posts each request as JSON to a single endpoint.
///
/// Request body: `{"model", "kind", "payload", "languages", "seed"}`.
/// Expected reply: `{"kind"?, "payload", "provider_id"?}`.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
}

#[derive(Deserialize)]
struct Reply {
    #[serde(default)]
    kind: Option<super::RequestKind>,
    payload: serde_json::Value,
    #[serde(default)]
    provider_id: Option<String>,
}

impl HttpBackend {
    pub fn new(profile: &ProviderProfile) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(profile.timeout_ms.max(1)))
            .build();
        Self {
            agent,
            endpoint: profile.endpoint.clone(),
            model: profile.model.clone(),
        }
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, (bool, ProviderError)> {
        match self.agent.post(&self.endpoint).send_json(body.clone()) {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| (true, ProviderError::Unavailable(format!("reading response: {e}")))),
            Err(ureq::Error::Status(code, _)) => {
                let retry = code >= 500 || code == 429;
                Err((
                    retry,
                    ProviderError::Unavailable(format!("{} returned HTTP {code}", self.endpoint)),
                ))
            }
            Err(e) => Err((true, ProviderError::Unavailable(format!("{}: {e}", self.endpoint)))),
        }
    }
}

impl ProviderBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let body = json!({
            "model": self.model,
            "kind": request.kind,
            "payload": request.payload,
            "languages": request.languages,
            "seed": request.seed,
        });
        let mut attempt = 0;
        let text = loop {
            match self.post_once(&body) {
                Ok(t) => break t,
                Err((retry, e)) => {
                    if !retry || attempt >= RETRIES {
                        return Err(e);
                    }
                    thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << attempt));
                    attempt += 1;
                }
            }
        };
        let reply: Reply = serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        Ok(ProviderResponse {
            kind: reply.kind.unwrap_or(request.kind),
            payload: reply.payload,
            provider_id: reply.provider_id.unwrap_or_else(|| self.id()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProviderKind;
    use crate::db::ColumnMeta;
    use crate::provider::Provider;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn profile(endpoint: String) -> ProviderProfile {
        ProviderProfile {
            kind: ProviderKind::Http,
            endpoint,
            model: "m".into(),
            timeout_ms: 2000,
            aliases: Default::default(),
        }
    }

    /// Serves `replies` in order (repeating the last), one per connection.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let i = h.fetch_add(1, Ordering::SeqCst).min(replies.len() - 1);
                let (code, text) = &replies[i];
                write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1/infer"), hits)
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let p = Provider::new(
            Box::new(HttpBackend::new(&profile("http://127.0.0.1:1/x".into()))),
            0,
            vec!["en".into()],
        );
        let col = ColumnMeta::new("id", "INTEGER", false, true);
        let err = p.variant_values(&col, &[1i64.into()], 1).unwrap_err();
        assert!(matches!(err, crate::provider::ProviderError::Unavailable(_)), "{err}");
    }

    #[test]
    fn retries_server_errors_then_parses() {
        let (url, hits) = serve(vec![
            (503, "{}".into()),
            (200, r#"{"payload": {"values": [7, 8]}}"#.into()),
        ]);
        let p = Provider::new(Box::new(HttpBackend::new(&profile(url))), 0, vec!["en".into()]);
        let col = ColumnMeta::new("id", "INTEGER", false, true);
        let v = p.variant_values(&col, &[1i64.into()], 2).unwrap();
        assert_eq!(v, vec![7i64.into(), 8i64.into()]);
        assert_eq!(hits.load(Ordering::SeqCst), 2);
        assert_eq!(p.call_count(), 1);
    }

    #[test]
    fn gives_up_after_two_retries() {
        let (url, hits) = serve(vec![(500, "{}".into())]);
        let p = Provider::new(Box::new(HttpBackend::new(&profile(url))), 0, vec!["en".into()]);
        let col = ColumnMeta::new("id", "INTEGER", false, true);
        assert!(p.variant_values(&col, &[1i64.into()], 1).is_err());
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn garbage_reply_is_malformed() {
        let (url, _) = serve(vec![(200, "not json".into())]);
        let p = Provider::new(Box::new(HttpBackend::new(&profile(url))), 0, vec!["en".into()]);
        let col = ColumnMeta::new("id", "INTEGER", false, true);
        let err = p.variant_values(&col, &[1i64.into()], 1).unwrap_err();
        assert!(
            matches!(err, crate::provider::ProviderError::MalformedResponse(_)),
            "{err}"
        );
    }
}
