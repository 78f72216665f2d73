use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use chainsight_core::analysis::EngineConfig;
use chainsight_core::sampler::{run_sampler, BuiltinModel, SamplerConfig};
use chainsight_core::store::{
    AcceptEvidence, Algorithm, ChainStore, DrawMatrix, Outcome, Phase, RunId, RunSpec, SampleBatch,
};
use chainsight_server::client::{Client, ClientError, HttpSink};
use chainsight_server::wire::Event;
use chainsight_server::{ServerHandle, StatsResult};
use serde_json::{json, Value};

fn server() -> (ServerHandle, Client) {
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let handle = ServerHandle::spawn(ChainStore::new(), EngineConfig::default(), addr).unwrap();
    let client = Client::new(handle.base_url());
    (handle, client)
}

fn spec() -> RunSpec {
    RunSpec {
        algorithm: Algorithm::RandomWalkMh,
        n_chains: 2,
        n_tune: 0,
        n_draws_planned: 200,
        hyperparameters: BTreeMap::new(),
        started_at: None,
        label: None,
    }
}

fn batch(run: &RunId, chain: usize, first: u64, len: usize) -> SampleBatch {
    SampleBatch {
        run_id: run.clone(),
        chain,
        phase: Phase::Sample,
        first_iteration: first,
        draws: BTreeMap::from([
            (
                "alpha".into(),
                DrawMatrix::Scalars((0..len).map(|i| (i as f64).sin()).collect()),
            ),
            (
                "beta".into(),
                DrawMatrix::Scalars((0..len).map(|i| (i as f64).cos()).collect()),
            ),
            ("sigma".into(), DrawMatrix::Scalars(vec![1.1; len])),
        ]),
        accept: AcceptEvidence::Booleans(vec![true; len]),
    }
}

fn raw_post(base: &str, path: &str, body: &Value) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent
        .post(&format!("{base}/api/v1{path}"))
        .send_json(body)
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

#[test]
fn sampler_streams_over_http_and_queries_work() {
    let (handle, client) = server();
    let cfg = SamplerConfig {
        chains: 2,
        tune: 50,
        draws: 400,
        ..Default::default()
    };
    let out = run_sampler(
        BuiltinModel::EightSchoolsCentered,
        &cfg,
        &mut HttpSink::new(client.clone()),
    )
    .unwrap();
    let run = out.run_id;

    let summary = client.summary(&run).unwrap();
    assert_eq!(
        summary
            .progress
            .iter()
            .map(|p| p.sample)
            .collect::<Vec<_>>(),
        [400, 400]
    );

    let StatsResult::One(stats) = client.stats(&run, Some("theta[3]"), Some("ALL")).unwrap() else {
        panic!("expected a single series");
    };
    assert!(stats.rhat.is_some() && stats.ess_bulk.is_some());
    let StatsResult::All(all) = client.stats(&run, None, Some("1")).unwrap() else {
        panic!()
    };
    assert_eq!(all.stats.len(), 10);

    let model = client.model(&run).unwrap();
    assert_eq!(model.funnel_candidates.len(), 1);

    let trace: Value = client
        .get(
            &format!("/runs/{run}/plots/trace"),
            &[("variable", "mu".into()), ("max_points", "100".into())],
        )
        .unwrap();
    assert_eq!(trace["chains"].as_array().unwrap().len(), 2);
    assert_eq!(
        trace["chains"][0]["iterations"]
            .as_array()
            .unwrap()
            .last()
            .unwrap(),
        399
    );
    let hist: Value = client
        .get(
            &format!("/runs/{run}/plots/histogram"),
            &[("variable", "tau".into()), ("bins", "10".into())],
        )
        .unwrap();
    assert_eq!(
        hist["histogram"]["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum::<u64>(),
        800
    );
    let rank: Value = client
        .get(
            &format!("/runs/{run}/plots/rank"),
            &[("variable", "mu".into())],
        )
        .unwrap();
    assert_eq!(rank["ranks"]["counts"].as_array().unwrap().len(), 2);
    let pair: Value = client
        .get(
            &format!("/runs/{run}/plots/pair"),
            &[("x", "tau".into()), ("y", "theta[0]".into())],
        )
        .unwrap();
    assert!(pair["pairs"]["funnel_hint"].is_number(), "{pair}");

    let err = client
        .get::<Value>(
            &format!("/runs/{run}/plots/trace"),
            &[("variable", "nope".into())],
        )
        .unwrap_err();
    assert_eq!(err.status(), Some(422));

    let view = client.warnings(&run).unwrap();
    assert_eq!(view.evaluated_at, 400, "finish forces a final evaluation");
    let report = client.report(&run).unwrap();
    assert_eq!(report.series.len(), 10);

    let events = client.events(&run, 0, Duration::from_millis(10)).unwrap();
    assert!(events
        .events
        .iter()
        .any(|e| matches!(e.event, Event::Finished { .. })));
    assert!(events
        .events
        .iter()
        .any(|e| matches!(e.event, Event::StatsUpdated { .. })));
    drop(handle);
}

#[test]
fn error_statuses() {
    let (handle, client) = server();
    let base = handle.base_url();
    let descriptor = BuiltinModel::Linreg.descriptor();
    let run = client.create_run(&descriptor, &spec()).unwrap();

    client.send_batch(&batch(&run, 0, 0, 50)).unwrap();
    match client.send_batch(&batch(&run, 0, 60, 50)) {
        Err(ClientError::Api { status: 409, body }) => assert_eq!(body.expected, Some(50)),
        other => panic!("{other:?}"),
    }
    let (status, body) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"protocol_version": 1, "payload": serde_json::to_value(batch(&run, 0, 60, 50)).unwrap()}),
    );
    assert_eq!((status, body["expected"].as_u64()), (409, Some(50)));

    let unknown = RunId::from("run-9999");
    assert_eq!(client.summary(&unknown).unwrap_err().status(), Some(404));
    assert_eq!(
        client
            .send_batch(&batch(&unknown, 0, 0, 5))
            .unwrap_err()
            .status(),
        Some(404)
    );

    let mut bad = serde_json::to_value(batch(&run, 1, 0, 3)).unwrap();
    bad["first_iteration"] = json!("zero");
    let (status, body) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"protocol_version": 1, "payload": bad}),
    );
    assert_eq!(status, 422);
    assert_eq!(body["path"], "payload.first_iteration");

    let (status, body) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"protocol_version": 1, "payload": {"run_id": run.0}}),
    );
    assert_eq!(status, 422, "{body}");
    assert!(body["path"].as_str().unwrap().starts_with("payload"));

    let good = serde_json::to_value(batch(&run, 1, 0, 3)).unwrap();
    let (status, body) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"protocol_version": 2, "payload": good}),
    );
    assert_eq!(status, 400);
    assert_eq!(body["path"], "protocol_version");
    let (status, _) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"payload": good}),
    );
    assert_eq!(status, 422);

    // Unknown fields are ignored.
    let mut extra = good.clone();
    extra["comment"] = json!("hello");
    let (status, body) = raw_post(
        &base,
        &format!("/runs/{run}/batches"),
        &json!({"protocol_version": 1, "payload": extra, "x": 1}),
    );
    assert_eq!(
        (
            status,
            body["payload"]["accepted_through_iteration"].as_u64()
        ),
        (200, Some(2))
    );

    assert!(client.request_stop(&run).unwrap().stop);
    assert!(client.control(&run).unwrap().stop);
    client.finish(&run, Outcome::Aborted).unwrap();
    assert_eq!(
        client
            .send_batch(&batch(&run, 0, 50, 5))
            .unwrap_err()
            .status(),
        Some(409)
    );
}

#[test]
fn events_long_poll_wakes_on_ingest() {
    let (handle, client) = server();
    let run = client
        .create_run(&BuiltinModel::Linreg.descriptor(), &spec())
        .unwrap();
    let poller = {
        let client = client.clone();
        let run = run.clone();
        std::thread::spawn(move || client.events(&run, 0, Duration::from_secs(10)).unwrap())
    };
    std::thread::sleep(Duration::from_millis(100));
    let started = std::time::Instant::now();
    client.send_batch(&batch(&run, 0, 0, 10)).unwrap();
    let events = poller.join().unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(matches!(
        events.events[0].event,
        Event::Progress {
            chain: 0,
            through_iteration: 9,
            ..
        }
    ));
    drop(handle);
}

#[test]
fn scheduler_evaluates_without_finish() {
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let mut config = EngineConfig::default();
    config.set("max_interval_ms", "100").unwrap();
    let handle = ServerHandle::spawn(ChainStore::new(), config, addr).unwrap();
    let client = Client::new(handle.base_url());
    let run = client
        .create_run(&BuiltinModel::Linreg.descriptor(), &spec())
        .unwrap();
    // Fewer than every_n_iterations, so only the time tick can trigger.
    client.send_batch(&batch(&run, 0, 0, 20)).unwrap();
    client.send_batch(&batch(&run, 1, 0, 20)).unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while client.warnings(&run).unwrap().evaluated_at < 20 {
        assert!(
            std::time::Instant::now() < deadline,
            "no evaluation after the tick"
        );
        std::thread::sleep(Duration::from_millis(20));
    }
}
