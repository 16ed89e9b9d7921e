//! JSON wire protocol between the engine and a model server.
//!
//! | method | path                 | request                     | response                           |
//! |--------|----------------------|-----------------------------|------------------------------------|
//! | GET    | `/info`              |                             | [`InfoResponse`]                   |
//! | POST   | `/tokenize`          | `{"text"}`                  | `{"ids"}`                          |
//! | POST   | `/detokenize`        | `{"ids"}`                   | `{"text"}`                         |
//! | POST   | `/next`              | `{"ids", "top_m"}`          | `{"top": [{"id","prob"}], "truncation_mass"}` |
//! | POST   | `/context_hiddens`   | `{"ids"}`                   | `{"hiddens"}`                      |
//! | POST   | `/candidate_hiddens` | `{"ids", "candidates"}`     | `{"hiddens"}`                      |
//!
//! Failures are `{"error": str}` with status 400 (malformed input), 413
//! (context overflow) or 500 (model failure).
//!
//! [`handle`] serves the protocol on top of any [`LanguageModel`], which is
//! how the client is tested against the synthetic backend.

use serde::{Deserialize, Serialize};

use super::{BackendInfo, LanguageModel, TokenId};
use crate::Error;

pub const PROTOCOL_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub eos_id: TokenId,
    pub max_context: usize,
    pub name: String,
    pub protocol_version: i64,
}

impl From<InfoResponse> for BackendInfo {
    fn from(r: InfoResponse) -> Self {
        BackendInfo {
            vocab_size: r.vocab_size,
            hidden_dim: r.hidden_dim,
            eos_id: r.eos_id,
            max_context: r.max_context,
            name: r.name,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdsResponse {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextRequest {
    pub ids: Vec<TokenId>,
    pub top_m: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TopEntry {
    pub id: TokenId,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextResponse {
    pub top: Vec<TopEntry>,
    pub truncation_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextHiddensRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateHiddensRequest {
    pub ids: Vec<TokenId>,
    pub candidates: Vec<TokenId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddensResponse {
    pub hiddens: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

fn status_for(err: &Error) -> u16 {
    match err {
        Error::ContextOverflow { .. } | Error::RemoteOverflow(_) => 413,
        Error::EmptyInput(_)
        | Error::UnknownToken { .. }
        | Error::InvalidArgument(_)
        | Error::Json(_) => 400,
        _ => 500,
    }
}

fn reply<T: Serialize>(result: crate::Result<T>) -> (u16, String) {
    match result.and_then(|v| Ok(serde_json::to_string(&v)?)) {
        Ok(body) => (200, body),
        Err(e) => error_reply(status_for(&e), e.to_string()),
    }
}

fn error_reply(status: u16, message: String) -> (u16, String) {
    let body = serde_json::to_string(&ErrorResponse { error: message })
        .unwrap_or_else(|_| r#"{"error":"unserializable error"}"#.to_string());
    (status, body)
}

/// Serves one request against `model`, returning `(status, json body)`.
pub fn handle(model: &dyn LanguageModel, method: &str, path: &str, body: &[u8]) -> (u16, String) {
    match (method, path) {
        ("GET", "/info") => {
            let info = model.info();
            reply(Ok(InfoResponse {
                vocab_size: info.vocab_size,
                hidden_dim: info.hidden_dim,
                eos_id: info.eos_id,
                max_context: info.max_context,
                name: info.name.clone(),
                protocol_version: PROTOCOL_VERSION,
            }))
        }
        ("POST", "/tokenize") => reply(
            serde_json::from_slice::<TokenizeRequest>(body)
                .map_err(Error::from)
                .and_then(|r| model.tokenize(&r.text))
                .map(|ids| IdsResponse { ids }),
        ),
        ("POST", "/detokenize") => reply(
            serde_json::from_slice::<DetokenizeRequest>(body)
                .map_err(Error::from)
                .and_then(|r| model.detokenize(&r.ids))
                .map(|text| TextResponse { text }),
        ),
        ("POST", "/next") => reply(
            serde_json::from_slice::<NextRequest>(body)
                .map_err(Error::from)
                .and_then(|r| model.next_distribution(&r.ids, r.top_m))
                .map(|d| NextResponse {
                    top: d
                        .entries()
                        .iter()
                        .map(|&(id, prob)| TopEntry { id, prob })
                        .collect(),
                    truncation_mass: d.truncation_mass(),
                }),
        ),
        ("POST", "/context_hiddens") => reply(
            serde_json::from_slice::<ContextHiddensRequest>(body)
                .map_err(Error::from)
                .and_then(|r| model.context_hiddens(&r.ids))
                .map(|h| HiddensResponse {
                    hiddens: h.into_iter().map(|v| v.into_values()).collect(),
                }),
        ),
        ("POST", "/candidate_hiddens") => reply(
            serde_json::from_slice::<CandidateHiddensRequest>(body)
                .map_err(Error::from)
                .and_then(|r| model.candidate_hiddens(&r.ids, &r.candidates))
                .map(|h| HiddensResponse {
                    hiddens: h.into_iter().map(|v| v.into_values()).collect(),
                }),
        ),
        _ => error_reply(404, format!("no route for {method} {path}")),
    }
}
