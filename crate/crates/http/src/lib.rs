//! Axum routers exposing a lookup-table API (`POST /invoke`) and an agent
//! (`POST /act`) over HTTP, matching the clients in `todsim-core`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use todsim_core::agents::remote::{ActResponse, CHECKPOINT_HEADER};
use todsim_core::agents::{Agent, AgentError, Observation};
use todsim_core::mock_api::ApiBackend;
use todsim_core::parse_call;

/// `POST /invoke`: plain-text call in, plain-text response out. Hits and
/// misses are both 200; a body that is not a call is 400.
pub fn invoke_router(api: Arc<dyn ApiBackend>) -> Router {
    Router::new().route("/invoke", post(invoke)).with_state(api)
}

async fn invoke(State(api): State<Arc<dyn ApiBackend>>, body: String) -> Response {
    match parse_call(&body) {
        Ok(call) => (StatusCode::OK, api.invoke(&call).to_string()).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

pub type Loader = dyn Fn(&str) -> Result<Arc<dyn Agent>, String> + Send + Sync;

/// Agents behind `/act`: a default one, and optionally a loader for requests
/// naming a checkpoint in the `X-Checkpoint` header. Loaded agents are cached.
pub struct AgentService {
    default: Option<Arc<dyn Agent>>,
    loader: Option<Box<Loader>>,
    cache: Mutex<HashMap<String, Arc<dyn Agent>>>,
}

impl AgentService {
    pub fn new(default: Arc<dyn Agent>) -> Self {
        Self {
            default: Some(default),
            loader: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_loader(default: Option<Arc<dyn Agent>>, loader: Box<Loader>) -> Self {
        Self {
            default,
            loader: Some(loader),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn agent(&self, checkpoint: Option<&str>) -> Result<Arc<dyn Agent>, (StatusCode, String)> {
        let Some(ckpt) = checkpoint else {
            return self
                .default
                .clone()
                .ok_or((StatusCode::BAD_REQUEST, format!("missing {CHECKPOINT_HEADER} header")));
        };
        let loader = self
            .loader
            .as_ref()
            .ok_or((StatusCode::BAD_REQUEST, "this server does not load checkpoints".to_string()))?;
        let mut cache = self.cache.lock().expect("agent cache poisoned");
        if let Some(agent) = cache.get(ckpt) {
            return Ok(agent.clone());
        }
        let agent = loader(ckpt).map_err(|e| (StatusCode::SERVICE_UNAVAILABLE, e))?;
        cache.insert(ckpt.to_string(), agent.clone());
        Ok(agent)
    }
}

/// `POST /act`: JSON observation in, `{"utterance"}` out. Malformed
/// grounding is 422; agent failures are 503.
pub fn agent_router(service: Arc<AgentService>) -> Router {
    Router::new().route("/act", post(act)).with_state(service)
}

async fn act(State(service): State<Arc<AgentService>>, headers: HeaderMap, Json(obs): Json<Observation>) -> Response {
    let ckpt = headers.get(CHECKPOINT_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    let result = tokio::task::spawn_blocking(move || {
        let agent = service.agent(ckpt.as_deref())?;
        agent.act(&obs).map_err(|e| match e {
            AgentError::MalformedGrounding(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            AgentError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
        })
    })
    .await;
    match result {
        Ok(Ok(utterance)) => Json(ActResponse { utterance }).into_response(),
        Ok(Err((status, msg))) => {
            log::warn!("act failed: {msg}");
            (status, msg).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Serves `router` on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
