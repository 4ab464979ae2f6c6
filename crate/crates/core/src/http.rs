//! HTTP front end for [`Environment`].
//!
//! | method | path                         | body                    | reply                   |
//! |--------|------------------------------|-------------------------|-------------------------|
//! | GET    | `/tasks`                     |                         | `[PublicTask]`          |
//! | POST   | `/runs/{run}/sessions`       | `{task_id, agent?}`     | `{session_token, observation}` |
//! | POST   | `/sessions/{token}/query`    | query spec              | `Observation`           |
//! | POST   | `/sessions/{token}/ranking`  | `{ranking: [item_id]}`  | `{accepted, reason}`    |
//! | GET    | `/runs/{run}/metrics`        | `?partial=true`         | metric report           |
//!
//! Errors reply `{code, message}` with the status from
//! [`ErrorCode::http_status`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::service::{CreateSession, Environment, ErrorCode, ServiceError, SubmitRanking};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = State<Arc<Environment>>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &str, code: ErrorCode) -> Result<T, ServiceError> {
    serde_json::from_str(body).map_err(|e| ServiceError { code, message: e.to_string() })
}

/// Runs blocking environment work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ServiceError {
            code: ErrorCode::Internal,
            message: e.to_string(),
        })
    })
}

async fn tasks(State(env): Shared) -> Response {
    Json(env.public_tasks()).into_response()
}

async fn create_session(State(env): Shared, Path(run): Path<String>, body: String) -> Response {
    let result = parse_body::<CreateSession>(&body, ErrorCode::MalformedSpec)
        .and_then(|req| env.create_session(&run, &req));
    match result {
        Ok(created) => (StatusCode::CREATED, Json(created)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn run_query(State(env): Shared, Path(token): Path<String>, body: String) -> Response {
    match blocking(move || env.query(&token, &body)).await {
        Ok(obs) => Json(obs).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(env): Shared, Path(token): Path<String>, body: String) -> Response {
    let result = parse_body::<SubmitRanking>(&body, ErrorCode::MalformedRanking)
        .and_then(|req| env.submit(&token, req.ranking));
    match result {
        Ok(receipt) => Json(receipt).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct MetricsParams {
    #[serde(default)]
    partial: bool,
}

async fn metrics(State(env): Shared, Path(run): Path<String>, Query(params): Query<MetricsParams>) -> Response {
    match env.metrics(&run, params.partial) {
        Ok(report) => Json(report).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(env: Arc<Environment>) -> Router {
    Router::new()
        .route("/tasks", get(tasks))
        .route("/runs/{run}/sessions", post(create_session))
        .route("/sessions/{token}/query", post(run_query))
        .route("/sessions/{token}/ranking", post(submit))
        .route("/runs/{run}/metrics", get(metrics))
        .with_state(env)
}

/// Serves until `shutdown` resolves. Idle sessions are swept every second.
pub async fn serve(
    env: Arc<Environment>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let env = env.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(1));
            loop {
                tick.tick().await;
                let env = env.clone();
                let _ = tokio::task::spawn_blocking(move || env.expire_idle()).await;
            }
        })
    };
    let result = axum::serve(listener, router(env)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}

/// Binds `addr` and reports the bound address (useful with port 0).
pub async fn bind(addr: SocketAddr) -> std::io::Result<(tokio::net::TcpListener, SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
