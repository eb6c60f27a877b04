//! HTTP front end for [`BlackBoxService`] and the matching blocking client.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use transex_core::service::{BlackBoxService, QueryClient};
use transex_core::{Error, ImageTensor};

pub const TRANSFORM_PATH: &str = "/v1/transform";
pub const CLIENT_HEADER: &str = "x-client-token";
pub const MODEL_HEADER: &str = "x-model-id";
/// Sent with 429 responses so clients can rebuild [`Error::BudgetExhausted`].
pub const LIMIT_HEADER: &str = "x-query-limit";

pub fn router(service: Arc<BlackBoxService>, max_payload_bytes: usize) -> Router {
    Router::new()
        .route(TRANSFORM_PATH, post(transform))
        .layer(DefaultBodyLimit::max(max_payload_bytes))
        .with_state(service)
}

fn text(status: StatusCode, message: impl Into<String>) -> Response {
    (status, message.into()).into_response()
}

fn error_response(e: Error) -> Response {
    match e {
        Error::BudgetExhausted { limit, .. } => {
            let mut r = text(StatusCode::TOO_MANY_REQUESTS, e.to_string());
            r.headers_mut()
                .insert(HeaderName::from_static(LIMIT_HEADER), HeaderValue::from(limit));
            r
        }
        Error::Malformed(_) | Error::ShapeMismatch { .. } | Error::Decode { .. } | Error::InvalidArgument(_) => {
            text(StatusCode::BAD_REQUEST, e.to_string())
        }
        other => text(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

async fn transform(State(service): State<Arc<BlackBoxService>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(client) = headers.get(CLIENT_HEADER).and_then(|v| v.to_str().ok()).filter(|v| !v.is_empty()) else {
        return text(StatusCode::UNAUTHORIZED, format!("missing {CLIENT_HEADER} header"));
    };
    let client = client.to_string();
    if let Some(requested) = headers.get(MODEL_HEADER) {
        if requested.as_bytes() != service.model_id().as_bytes() {
            return text(StatusCode::NOT_FOUND, "unknown model id");
        }
    }
    let svc = Arc::clone(&service);
    let answer = tokio::task::spawn_blocking(move || svc.transform_bytes(&client, &body)).await;
    match answer {
        Ok(Ok(png)) => {
            let model = HeaderValue::from_str(service.model_id()).unwrap_or(HeaderValue::from_static("victim"));
            (
                [
                    (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
                    (HeaderName::from_static(MODEL_HEADER), model),
                ],
                png,
            )
                .into_response()
        }
        Ok(Err(e)) => error_response(e),
        Err(e) => text(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// [`QueryClient`] that talks to a remote `transex serve`.
pub struct HttpClient {
    url: String,
    client_id: String,
    model_id: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: &str, client_id: impl Into<String>) -> Self {
        Self {
            url: format!("{}{TRANSFORM_PATH}", endpoint.trim_end_matches('/')),
            client_id: client_id.into(),
            model_id: None,
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = Some(id.into());
        self
    }
}

impl QueryClient for HttpClient {
    fn client_id(&self) -> &str {
        &self.client_id
    }

    fn query(&self, image: &ImageTensor) -> transex_core::Result<ImageTensor> {
        let mut req = self
            .http
            .post(&self.url)
            .header(CLIENT_HEADER, &self.client_id)
            .header(header::CONTENT_TYPE, "image/png")
            .body(image.encode_png()?);
        if let Some(id) = &self.model_id {
            req = req.header(MODEL_HEADER, id);
        }
        let resp = req
            .send()
            .map_err(|e| Error::Malformed(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        let limit = resp
            .headers()
            .get(LIMIT_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok());
        let body = resp
            .bytes()
            .map_err(|e| Error::Malformed(format!("{}: {e}", self.url)))?;
        match status.as_u16() {
            200 => ImageTensor::decode(&body),
            429 => Err(Error::BudgetExhausted {
                client: self.client_id.clone(),
                limit: limit.unwrap_or(0),
            }),
            code => Err(Error::Malformed(format!(
                "HTTP {code}: {}",
                String::from_utf8_lossy(&body).trim()
            ))),
        }
    }
}
