use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};

use super::{packed_stream, serve_json, serve_stats, Format, LodRequest, ServiceError};
use crate::store::{Aabb, Store};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

async fn patches(State(store): State<Arc<Store>>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    let req = match LodRequest::from_query(&q) {
        Ok(r) => r,
        Err(e) => return ServiceError::from(e).into_response(),
    };
    match req.format {
        Format::Json => match serve_json(&store, &req) {
            Ok(body) => Json(body).into_response(),
            Err(e) => e.into_response(),
        },
        Format::Packed => match packed_stream(store, &req) {
            Ok(stream) => {
                let chunks = stream.map(|c| c.map_err(std::io::Error::other));
                Response::builder()
                    .header(header::CONTENT_TYPE, "application/octet-stream")
                    .body(Body::from_stream(futures::stream::iter(chunks)))
                    .expect("static headers")
            }
            Err(e) => e.into_response(),
        },
    }
}

async fn stats(State(store): State<Arc<Store>>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    let bbox = match q.get("bbox").map(|b| Aabb::parse(b)).transpose() {
        Ok(b) => b,
        Err(e) => return ServiceError::from(e).into_response(),
    };
    match serve_stats(&store, bbox) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

/// `GET /patches` and `GET /stats` over a shared store.
pub fn router(store: Arc<Store>) -> Router {
    Router::new().route("/patches", get(patches)).route("/stats", get(stats)).with_state(store)
}

pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
