//! Remote backend client.
//!
//! Wire protocol: `POST {endpoint}/v1/respond` with body
//!
//! ```json
//! {
//!   "instruction": "...",
//!   "observation": {"viewpoint": 0, "cells": [[[...], [...]], ...]},
//!   "context": "goal line\niter 1: response ...; feedback ...",
//!   "feedback": [{"category": "COUNT_MISMATCH", "detail": "..."}] ,
//!   "round": 2
//! }
//! ```
//!
//! (`feedback` is `null` on the initial request.) The reply is
//! `{"response": {"kind": "plan"|"ids"|"count", "value": ...}, "rationale": "..."}`.
//!
//! The client mirrors the engine's full-variant context locally — it sees
//! every previous response and feedback signal — so only the scenario view,
//! feedback, and the context summary ever cross the boundary. One client
//! value serves one episode; `for_episode` clones the connection with fresh
//! per-episode state.

use std::time::Duration;

use cimr_core::backends::{Backend, Response, ResponseBody, ScenarioView};
use cimr_core::encoders::FeatureSeq;
use cimr_core::engine::{update_context, ContextState, FeedbackSignal, Variant};
use cimr_core::error::BackendError;
use cimr_core::fusion::FusedFeatures;
use cimr_core::mapsim::Observation;
use cimr_core::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Serialize)]
struct WireRequest<'a> {
    instruction: &'a str,
    observation: &'a Observation,
    context: String,
    feedback: Option<&'a FeedbackSignal>,
    round: usize,
}

#[derive(Deserialize)]
struct WireReply {
    response: ResponseBody,
    rationale: String,
}

pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    url: String,
    // Per-episode state.
    instruction: String,
    observation: Option<Observation>,
    context: Option<ContextState>,
}

impl RemoteBackend {
    pub fn new(endpoint: String, timeout_secs: u64) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let url = format!("{}/v1/respond", endpoint.trim_end_matches('/'));
        Ok(Self { client, url, instruction: String::new(), observation: None, context: None })
    }

    /// A fresh episode session sharing the connection pool.
    pub fn for_episode(&self) -> Self {
        Self {
            client: self.client.clone(),
            url: self.url.clone(),
            instruction: String::new(),
            observation: None,
            context: None,
        }
    }

    fn post(&self, request: &WireRequest<'_>) -> Result<Response, BackendError> {
        let reply = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        if !reply.status().is_success() {
            return Err(BackendError::BadReply(format!("status {}", reply.status())));
        }
        let reply: WireReply =
            reply.json().map_err(|e| BackendError::BadReply(e.to_string()))?;
        Ok(Response { body: reply.response, rationale: reply.rationale })
    }
}

impl Backend for RemoteBackend {
    fn generate_initial(
        &mut self,
        view: ScenarioView<'_>,
        _fused: &FusedFeatures,
        _rng: &mut SplitMix64,
    ) -> Result<Response, BackendError> {
        self.instruction = view.instruction.to_string();
        self.observation = Some(view.observation.clone());
        let context = ContextState::initial(self.instruction.clone());
        let request = WireRequest {
            instruction: &self.instruction,
            observation: view.observation,
            context: context.canonical_text(),
            feedback: None,
            round: 1,
        };
        let response = self.post(&request)?;
        self.context = Some(context);
        Ok(response)
    }

    fn refine_response(
        &mut self,
        prev: &Response,
        feedback: &FeedbackSignal,
        _context_features: &FeatureSeq,
        round: usize,
        _rng: &mut SplitMix64,
    ) -> Result<Response, BackendError> {
        let observation = self
            .observation
            .as_ref()
            .ok_or_else(|| BackendError::BadReply("refine before initial request".into()))?;
        // Fold the just-finished round into the local context mirror.
        let context = {
            let prev_ctx = self.context.take().unwrap_or_else(|| {
                ContextState::initial(self.instruction.clone())
            });
            update_context(&prev_ctx, prev, feedback, Variant::Full)
        };
        let request = WireRequest {
            instruction: &self.instruction,
            observation,
            context: context.canonical_text(),
            feedback: Some(feedback),
            round,
        };
        let response = self.post(&request)?;
        self.context = Some(context);
        Ok(response)
    }
}
