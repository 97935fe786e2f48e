//! Clients for the public MediaWiki search APIs.
//!
//! Wikidata uses `action=wbsearchentities` and yields QID candidates with
//! label and description. Wikipedia uses a `generator=search` query with
//! intro extracts and yields title candidates. Raw response bodies are
//! cached on disk, keyed by endpoint, mention and `k`, so reruns see the
//! same bytes.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EntitySearcher, SearchError};
use crate::domain::{CandidateList, EntityRef, Hit, Mention};
use crate::http::{send_with_retry, AdmissionGate, HttpRequest, ReqwestTransport, RetryPolicy, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbBackend {
    Wikidata,
    Wikipedia,
}

impl KbBackend {
    pub fn default_endpoint(self) -> &'static str {
        match self {
            KbBackend::Wikidata => "https://www.wikidata.org/w/api.php",
            KbBackend::Wikipedia => "https://en.wikipedia.org/w/api.php",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbClientConfig {
    pub backend: KbBackend,
    pub endpoint_url: String,
    pub language: String,
    #[serde(with = "crate::llm::duration_secs")]
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    #[serde(with = "crate::llm::duration_millis")]
    pub retry_base_delay: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl KbClientConfig {
    pub fn new(backend: KbBackend) -> Self {
        Self {
            backend,
            endpoint_url: backend.default_endpoint().into(),
            language: "en".into(),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
            max_retries: 3,
            retry_base_delay: Duration::from_millis(500),
            cache_dir: None,
        }
    }
}

pub struct KbClient {
    config: KbClientConfig,
    transport: Arc<dyn Transport>,
    gate: AdmissionGate,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct WbSearchResponse {
    #[serde(default)]
    search: Vec<WbSearchItem>,
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct WbSearchItem {
    id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Deserialize)]
struct WpQueryResponse {
    query: Option<WpQuery>,
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct WpQuery {
    #[serde(default)]
    pages: Vec<WpPage>,
}

#[derive(Deserialize)]
struct WpPage {
    title: String,
    #[serde(default)]
    index: u32,
    #[serde(default)]
    extract: Option<String>,
}

impl KbClient {
    pub fn new(config: KbClientConfig) -> Result<Self, SearchError> {
        let transport = ReqwestTransport::new().map_err(|e| SearchError::BackendUnavailable(e.to_string()))?;
        Ok(Self::with_transport(config, Arc::new(transport)))
    }

    pub fn with_transport(config: KbClientConfig, transport: Arc<dyn Transport>) -> Self {
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            base_delay: config.retry_base_delay,
            ..RetryPolicy::default()
        };
        Self {
            gate: AdmissionGate::new(config.max_in_flight),
            transport,
            retry,
            config,
        }
    }

    pub fn config(&self) -> &KbClientConfig {
        &self.config
    }

    fn query_params(&self, surface: &str, k: usize) -> Vec<(String, String)> {
        let pairs: Vec<(&str, String)> = match self.config.backend {
            KbBackend::Wikidata => vec![
                ("action", "wbsearchentities".into()),
                ("search", surface.into()),
                ("language", self.config.language.clone()),
                ("uselang", self.config.language.clone()),
                ("type", "item".into()),
                ("limit", k.to_string()),
                ("format", "json".into()),
            ],
            KbBackend::Wikipedia => vec![
                ("action", "query".into()),
                ("generator", "search".into()),
                ("gsrsearch", surface.into()),
                ("gsrnamespace", "0".into()),
                ("gsrlimit", k.to_string()),
                ("prop", "extracts".into()),
                ("exintro", "1".into()),
                ("explaintext", "1".into()),
                ("exlimit", "max".into()),
                ("format", "json".into()),
                ("formatversion", "2".into()),
            ],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn cache_path(&self, surface: &str, k: usize) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        for part in [self.config.endpoint_url.as_str(), surface, &k.to_string()] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn fetch(&self, surface: &str, k: usize) -> Result<String, SearchError> {
        let cache = self.cache_path(surface, k);
        if let Some(path) = &cache {
            if let Ok(body) = fs::read_to_string(path) {
                return Ok(body);
            }
        }
        let request = HttpRequest::get(&self.config.endpoint_url, self.query_params(surface, k), self.config.timeout);
        let response = send_with_retry(self.transport.as_ref(), &self.gate, &self.retry, &request)
            .map_err(|e| match e.last_status {
                Some(429) => SearchError::QuotaExceeded(e.to_string()),
                _ => SearchError::BackendUnavailable(e.to_string()),
            })?;
        if !(200..300).contains(&response.status) {
            return Err(SearchError::BackendUnavailable(format!("HTTP {}", response.status)));
        }
        // Parse before caching so a bad payload is never replayed.
        self.parse(surface, k, &response.body)?;
        if let Some(path) = &cache {
            let write = fs::create_dir_all(path.parent().expect("cache file has a parent"))
                .and_then(|_| fs::write(path, &response.body));
            if let Err(e) = write {
                log::warn!("could not write search cache {}: {e}", path.display());
            }
        }
        Ok(response.body)
    }

    fn parse(&self, surface: &str, k: usize, body: &str) -> Result<CandidateList, SearchError> {
        let mention = Mention::new(surface, "").map_err(|e| SearchError::InvalidMention(e.to_string()))?;
        let malformed = |e: serde_json::Error| SearchError::MalformedResponse(e.to_string());
        let hits: Vec<Hit> = match self.config.backend {
            KbBackend::Wikidata => {
                let resp: WbSearchResponse = serde_json::from_str(body).map_err(malformed)?;
                if let Some(err) = resp.error {
                    return Err(SearchError::MalformedResponse(err.to_string()));
                }
                resp.search
                    .into_iter()
                    .filter_map(|item| {
                        let entity = EntityRef::qid(&item.id).ok()?;
                        Some((entity, item.label.unwrap_or_else(|| item.id.clone()), item.description))
                    })
                    .enumerate()
                    .map(|(i, (entity, title, description))| Hit {
                        entity,
                        title,
                        description: description.unwrap_or_default(),
                        score: rank_score(i),
                    })
                    .collect()
            }
            KbBackend::Wikipedia => {
                let resp: WpQueryResponse = serde_json::from_str(body).map_err(malformed)?;
                if let Some(err) = resp.error {
                    return Err(SearchError::MalformedResponse(err.to_string()));
                }
                let mut pages = resp.query.map(|q| q.pages).unwrap_or_default();
                pages.sort_by_key(|p| p.index);
                pages
                    .into_iter()
                    .filter_map(|p| Some((EntityRef::title(&p.title).ok()?, p.title, p.extract)))
                    .enumerate()
                    .map(|(i, (entity, title, extract))| Hit {
                        entity,
                        title,
                        description: extract.unwrap_or_default().trim().to_string(),
                        score: rank_score(i),
                    })
                    .collect()
            }
        };
        Ok(CandidateList::from_hits(mention, k, hits))
    }

    pub fn kb_search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError> {
        let k = k.max(1);
        let body = self.fetch(&mention.surface, k)?;
        let mut list = self.parse(&mention.surface, k, &body)?;
        list.mention = mention.clone();
        Ok(list)
    }
}

/// Remote APIs return order, not scores; rank r scores 1/r.
fn rank_score(position: usize) -> f64 {
    1.0 / (position as f64 + 1.0)
}

impl EntitySearcher for KbClient {
    fn search(&self, mention: &Mention, k: usize) -> Result<CandidateList, SearchError> {
        self.kb_search(mention, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::CannedTransport;
    use crate::http::{HttpResponse, TransportError};
    use std::sync::Mutex;

    /// Hand-built payload in the shape of a `wbsearchentities` reply.
    const WIKIDATA_SNAPSHOT: &str = include_str!("../../tests/fixtures/wbsearchentities_girl_in_white.json");
    const WIKIPEDIA_SNAPSHOT: &str = include_str!("../../tests/fixtures/wikipedia_search_girl_in_white.json");

    /// Serves the snapshot truncated to the request's `limit`, like the API.
    struct SnapshotTransport {
        requests: Mutex<Vec<HttpRequest>>,
    }

    impl Transport for SnapshotTransport {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            self.requests.lock().unwrap().push(request.clone());
            let limit: usize = request
                .query
                .iter()
                .find(|(k, _)| k == "limit")
                .map(|(_, v)| v.parse().unwrap())
                .unwrap();
            let mut v: serde_json::Value = serde_json::from_str(WIKIDATA_SNAPSHOT).unwrap();
            let items = v["search"].as_array_mut().unwrap();
            items.truncate(limit);
            Ok(HttpResponse {
                status: 200,
                body: v.to_string(),
            })
        }
    }

    fn snapshot_client(cache_dir: Option<PathBuf>) -> (KbClient, Arc<SnapshotTransport>) {
        let transport = Arc::new(SnapshotTransport {
            requests: Mutex::default(),
        });
        let config = KbClientConfig {
            cache_dir,
            ..KbClientConfig::new(KbBackend::Wikidata)
        };
        (KbClient::with_transport(config, transport.clone()), transport)
    }

    fn mention(s: &str) -> Mention {
        Mention::new(s, "q").unwrap()
    }

    #[test]
    fn wikidata_snapshot_top_result() {
        let (client, transport) = snapshot_client(None);
        let list = client.kb_search(&mention("The Girl in White"), 5).unwrap();
        assert!(!list.is_empty() && list.len() <= 5);
        list.validate().unwrap();
        assert!(list.candidates[0].title.to_lowercase().contains("girl in white"));
        assert!(list.candidates.iter().all(|c| c.entity.namespace() == crate::domain::Namespace::WikidataQid));
        let req = &transport.requests.lock().unwrap()[0];
        assert!(req.query.contains(&("action".into(), "wbsearchentities".into())));
        assert!(req.query.contains(&("language".into(), "en".into())));
        assert!(req.query.contains(&("limit".into(), "5".into())));
    }

    #[test]
    fn k1_is_prefix_of_k5() {
        let (client, _) = snapshot_client(None);
        let five = client.kb_search(&mention("The Girl in White"), 5).unwrap();
        let one = client.kb_search(&mention("The Girl in White"), 1).unwrap();
        assert_eq!(one.candidates.len(), 1);
        assert_eq!(one.candidates[0], five.candidates[0]);
    }

    #[test]
    fn cache_replays_identical_results() {
        let dir = tempfile::tempdir().unwrap();
        let (client, transport) = snapshot_client(Some(dir.path().to_path_buf()));
        let first = client.kb_search(&mention("The Girl in White"), 5).unwrap();
        let second = client.kb_search(&mention("The Girl in White"), 5).unwrap();
        assert_eq!(transport.requests.lock().unwrap().len(), 1);
        assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&second).unwrap());
    }

    #[test]
    fn wikipedia_pages_sorted_by_search_index() {
        let transport = Arc::new(CannedTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: WIKIPEDIA_SNAPSHOT.into(),
        })]));
        let client = KbClient::with_transport(KbClientConfig::new(KbBackend::Wikipedia), transport);
        let list = client.kb_search(&mention("The Girl in White"), 3).unwrap();
        list.validate().unwrap();
        assert_eq!(list.candidates[0].title, "The Girl in White");
        assert_eq!(list.candidates[0].entity, EntityRef::title("the girl in white").unwrap());
        assert!(list.candidates[0].description.starts_with("The Girl in White is a 1952"));
    }

    #[test]
    fn failures_map_to_distinct_errors() {
        let quick = |outcomes| {
            let config = KbClientConfig {
                max_retries: 1,
                retry_base_delay: Duration::from_millis(1),
                ..KbClientConfig::new(KbBackend::Wikidata)
            };
            KbClient::with_transport(config, Arc::new(CannedTransport::new(outcomes)))
        };
        let throttled = || Ok(HttpResponse { status: 429, body: String::new() });
        let err = quick(vec![throttled(), throttled()]).kb_search(&mention("x"), 3).unwrap_err();
        assert!(matches!(err, SearchError::QuotaExceeded(_)));
        let err = quick(vec![Err(TransportError::Timeout), Err(TransportError::Connect("refused".into()))])
            .kb_search(&mention("x"), 3)
            .unwrap_err();
        assert!(matches!(err, SearchError::BackendUnavailable(_)));
        let err = quick(vec![Ok(HttpResponse { status: 200, body: "{\"error\":{\"code\":\"x\"}}".into() })])
            .kb_search(&mention("x"), 3)
            .unwrap_err();
        assert!(matches!(err, SearchError::MalformedResponse(_)));
    }

    #[test]
    fn unreachable_endpoint() {
        let config = KbClientConfig {
            endpoint_url: "http://127.0.0.1:9/w/api.php".into(),
            max_retries: 0,
            timeout: Duration::from_millis(300),
            ..KbClientConfig::new(KbBackend::Wikidata)
        };
        let err = KbClient::new(config).unwrap().kb_search(&mention("x"), 1).unwrap_err();
        assert!(matches!(err, SearchError::BackendUnavailable(_)));
    }
}
