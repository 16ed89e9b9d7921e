use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    CandidateHiddensRequest, ContextHiddensRequest, DetokenizeRequest, ErrorResponse,
    HiddensResponse, IdsResponse, InfoResponse, NextRequest, NextResponse, TextResponse,
    TokenizeRequest, PROTOCOL_VERSION,
};
use super::{BackendInfo, HiddenVector, LanguageModel, NextDistribution, TokenId};
use crate::{Error, Result};

/// Client for a model server speaking the [`wire`](super::wire) protocol.
///
/// The underlying agent pools connections and is safe to share across
/// threads, so concurrent decode sessions issue requests in parallel.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
    info: BackendInfo,
}

impl RemoteBackend {
    /// Connects and fetches `/info`. Fails if the server is unreachable or
    /// speaks a different protocol version.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(Error::InvalidArgument(format!(
                "endpoint must be an http(s) URL, got {endpoint:?}"
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut client = Self {
            endpoint,
            agent,
            info: BackendInfo {
                vocab_size: 0,
                hidden_dim: 0,
                eos_id: 0,
                max_context: 0,
                name: String::new(),
            },
        };
        let info: InfoResponse = client.get("/info")?;
        if info.protocol_version != PROTOCOL_VERSION {
            return Err(Error::ProtocolVersion {
                got: info.protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
        let info = BackendInfo::from(info);
        info.validate().map_err(|e| client.malformed(e.to_string()))?;
        client.info = info;
        Ok(client)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint, path)
    }

    fn malformed(&self, message: String) -> Error {
        Error::MalformedResponse {
            endpoint: self.endpoint.clone(),
            message,
        }
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        let response = self.agent.get(self.url(path)).call();
        self.finish(response)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let response = self.agent.post(self.url(path)).send_json(body);
        self.finish(response)
    }

    fn finish<R: DeserializeOwned>(
        &self,
        response: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<R> {
        let mut response = response.map_err(|e| Error::Unreachable {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| self.malformed(e.to_string()))?;
        if status == 200 {
            return serde_json::from_str(&text).map_err(|e| self.malformed(e.to_string()));
        }
        let message = serde_json::from_str::<ErrorResponse>(&text)
            .map(|e| e.error)
            .unwrap_or(text);
        Err(match status {
            413 => Error::RemoteOverflow(message),
            500..=599 => Error::Backend(message),
            _ => Error::Remote { status, message },
        })
    }

    fn hiddens(&self, response: HiddensResponse, expected: usize) -> Result<Vec<HiddenVector>> {
        if response.hiddens.len() != expected {
            return Err(self.malformed(format!(
                "{} hidden vectors, expected {expected}",
                response.hiddens.len()
            )));
        }
        response
            .hiddens
            .into_iter()
            .map(|values| {
                if values.len() != self.info.hidden_dim {
                    return Err(self.malformed(format!(
                        "hidden vector of dim {}, expected {}",
                        values.len(),
                        self.info.hidden_dim
                    )));
                }
                HiddenVector::new(values).map_err(|e| self.malformed(e.to_string()))
            })
            .collect()
    }
}

impl LanguageModel for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let r: IdsResponse = self.post(
            "/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        Ok(r.ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let r: TextResponse = self.post("/detokenize", &DetokenizeRequest { ids: ids.to_vec() })?;
        Ok(r.text)
    }

    fn next_distribution(&self, tokens: &[TokenId], top_m: usize) -> Result<NextDistribution> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        let r: NextResponse = self.post(
            "/next",
            &NextRequest {
                ids: tokens.to_vec(),
                top_m,
            },
        )?;
        if r.top.len() > top_m {
            return Err(self.malformed(format!("{} entries for top_m {top_m}", r.top.len())));
        }
        if r.top.windows(2).any(|w| w[1].prob > w[0].prob) {
            return Err(self.malformed("entries not sorted by probability".into()));
        }
        let dist = NextDistribution::new(r.top.into_iter().map(|e| (e.id, e.prob)).collect())
            .map_err(|e| self.malformed(e.to_string()))?;
        if (dist.truncation_mass() - r.truncation_mass).abs() > 1e-6 {
            return Err(self.malformed(format!(
                "truncation_mass {} disagrees with entry sum {}",
                r.truncation_mass,
                dist.truncation_mass()
            )));
        }
        Ok(dist)
    }

    fn context_hiddens(&self, tokens: &[TokenId]) -> Result<Vec<HiddenVector>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        let r: HiddensResponse = self.post(
            "/context_hiddens",
            &ContextHiddensRequest {
                ids: tokens.to_vec(),
            },
        )?;
        self.hiddens(r, tokens.len())
    }

    fn candidate_hiddens(&self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<HiddenVector>> {
        if prefix.is_empty() {
            return Err(Error::EmptyInput("prefix"));
        }
        if candidates.is_empty() {
            return Err(Error::EmptyInput("candidates"));
        }
        let r: HiddensResponse = self.post(
            "/candidate_hiddens",
            &CandidateHiddensRequest {
                ids: prefix.to_vec(),
                candidates: candidates.to_vec(),
            },
        )?;
        self.hiddens(r, candidates.len())
    }
}
