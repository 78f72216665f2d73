//! Blocking client for the HTTP API, plus a sampler sink that streams
//! through it.

use std::time::Duration;

use chainsight_core::model::ModelDescriptor;
use chainsight_core::report::Report;
use chainsight_core::sampler::{BatchSink, SinkError};
use chainsight_core::store::{
    BatchAck, ControlState, Outcome, RunId, RunSpec, RunStatus, RunSummary, SampleBatch,
};
use chainsight_core::warnings::WarningsView;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use ureq::Agent;

use crate::wire::*;
use crate::StatsResult;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{}", .body.error)]
    Api { status: u16, body: ErrorBody },
    #[error("cannot reach server: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    agent: Agent,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8765`.
    pub fn new(base: impl Into<String>) -> Self {
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T, ClientError> {
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
                error: format!("HTTP {status}: {text}"),
                expected: None,
                path: None,
            });
            return Err(ClientError::Api { status, body });
        }
        let env: Envelope<T> =
            serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?;
        if env.protocol_version != PROTOCOL_VERSION {
            return Err(ClientError::Decode(format!(
                "server speaks protocol_version {}",
                env.protocol_version
            )));
        }
        Ok(env.payload)
    }

    pub fn get<T: DeserializeOwned>(
        &self,
        path: &str,
        query: &[(&str, String)],
    ) -> Result<T, ClientError> {
        let mut req = self.agent.get(&self.url(path));
        for (k, v) in query {
            req = req.query(*k, v);
        }
        let resp = req
            .call()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        payload: &B,
    ) -> Result<T, ClientError> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(Envelope::new(payload))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(resp)
    }

    pub fn list_runs(&self) -> Result<Vec<RunSummary>, ClientError> {
        Ok(self.get::<RunList>("/runs", &[])?.runs)
    }

    pub fn create_run(
        &self,
        descriptor: &ModelDescriptor,
        metadata: &RunSpec,
    ) -> Result<RunId, ClientError> {
        let req = CreateRunRequest {
            descriptor: descriptor.clone(),
            metadata: metadata.clone(),
        };
        Ok(self.post::<_, CreateRunResponse>("/runs", &req)?.run_id)
    }

    pub fn send_batch(&self, batch: &SampleBatch) -> Result<BatchAck, ClientError> {
        self.post(&format!("/runs/{}/batches", batch.run_id), batch)
    }

    pub fn summary(&self, run_id: &RunId) -> Result<RunSummary, ClientError> {
        self.get(&format!("/runs/{run_id}"), &[])
    }

    pub fn control(&self, run_id: &RunId) -> Result<ControlState, ClientError> {
        self.get(&format!("/runs/{run_id}/control"), &[])
    }

    pub fn request_stop(&self, run_id: &RunId) -> Result<ControlState, ClientError> {
        self.post(
            &format!("/runs/{run_id}/control"),
            &ControlRequest { stop: true },
        )
    }

    pub fn finish(&self, run_id: &RunId, outcome: Outcome) -> Result<RunStatus, ClientError> {
        Ok(self
            .post::<_, FinishResponse>(
                &format!("/runs/{run_id}/finish"),
                &FinishRequest { outcome },
            )?
            .status)
    }

    pub fn model(&self, run_id: &RunId) -> Result<ModelResponse, ClientError> {
        self.get(&format!("/runs/{run_id}/model"), &[])
    }

    pub fn stats(
        &self,
        run_id: &RunId,
        variable: Option<&str>,
        chain: Option<&str>,
    ) -> Result<StatsResult, ClientError> {
        let mut q = Vec::new();
        if let Some(v) = variable {
            q.push(("variable", v.to_string()));
        }
        if let Some(c) = chain {
            q.push(("chain", c.to_string()));
        }
        self.get(&format!("/runs/{run_id}/stats"), &q)
    }

    pub fn warnings(&self, run_id: &RunId) -> Result<WarningsView, ClientError> {
        self.get(&format!("/runs/{run_id}/warnings"), &[])
    }

    pub fn events(
        &self,
        run_id: &RunId,
        since: u64,
        timeout: Duration,
    ) -> Result<EventsResponse, ClientError> {
        let q = [
            ("since", since.to_string()),
            ("timeout_ms", timeout.as_millis().to_string()),
        ];
        self.get(&format!("/runs/{run_id}/events"), &q)
    }

    pub fn report(&self, run_id: &RunId) -> Result<Report, ClientError> {
        self.get(&format!("/runs/{run_id}/report"), &[])
    }
}

/// Streams a sampler's traffic to a server.
#[derive(Debug, Clone)]
pub struct HttpSink {
    pub client: Client,
}

impl HttpSink {
    pub fn new(client: Client) -> Self {
        Self { client }
    }
}

impl From<ClientError> for SinkError {
    fn from(e: ClientError) -> Self {
        SinkError(e.to_string())
    }
}

impl BatchSink for HttpSink {
    fn create_run(
        &mut self,
        descriptor: &ModelDescriptor,
        spec: &RunSpec,
    ) -> Result<RunId, SinkError> {
        Ok(self.client.create_run(descriptor, spec)?)
    }

    fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError> {
        self.client.send_batch(batch)?;
        Ok(())
    }

    fn stop_requested(&mut self, run_id: &RunId) -> Result<bool, SinkError> {
        Ok(self.client.control(run_id)?.stop)
    }

    fn finish(&mut self, run_id: &RunId, outcome: Outcome) -> Result<(), SinkError> {
        self.client.finish(run_id, outcome)?;
        Ok(())
    }
}
