use std::thread;
use std::time::{Duration, Instant};

use mmr_core::attack::{AttackKind, NoiseSpec};
use mmr_core::hil::OracleAnnotator;
use mmr_core::trainer::Method;
use mmr_lab::config::LabConfig;
use mmr_lab::pipeline;
use mmr_lab::serve::{QueryView, Service, Status};
use serde_json::Value;
use ureq::Agent;

fn small_config() -> LabConfig {
    let mut c = LabConfig::default();
    c.data.generator.n = 300;
    c.data.generator.h = 8;
    c.data.generator.w = 16;
    c.data.attack = Some(NoiseSpec::new(AttackKind::Sym, 0.3, 2));
    c.run.method = Method::MmrHil;
    c.run.epochs = 6;
    c.run.seed = 5;
    c.run.hil.rho = 0.02;
    c
}

struct Client {
    agent: Agent,
    base: String,
}

impl Client {
    fn new(service: &Service) -> Self {
        let agent = Agent::config_builder().http_status_as_error(false).build().new_agent();
        Self {
            agent,
            base: format!("http://{}", service.addr()),
        }
    }

    fn get(&self, path: &str) -> (u16, String) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    fn post(&self, path: &str, body: &str) -> (u16, String) {
        let mut r = self
            .agent
            .post(&format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    fn status(&self) -> Status {
        serde_json::from_str(&self.get("/api/status").1).unwrap()
    }

    fn pending(&self) -> Vec<QueryView> {
        serde_json::from_str(&self.get("/api/queries?state=pending").1).unwrap()
    }
}

#[test]
fn endpoints_validate_their_inputs() {
    let config = small_config();
    let data = pipeline::prepare(&config, None).unwrap();
    let service = Service::start("127.0.0.1:0", &data.train, Method::MmrHil, 6).unwrap();
    let c = Client::new(&service);

    let st = c.status();
    assert_eq!((st.epoch, st.done, st.round), (0, false, None));
    let (code, body) = c.get("/api/samples/0");
    assert_eq!(code, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["shape"], serde_json::json!([1, 8, 16]));
    assert_eq!(v["features"].as_array().unwrap().len(), 128);

    assert_eq!(c.get(&format!("/api/samples/{}", data.train.len())).0, 404);
    assert_eq!(c.get("/api/queries?state=bogus").0, 400);
    assert_eq!(c.get("/api/queries").1, "[]");
    assert_eq!(c.post("/api/queries/0/label", r#"{"label":"stable"}"#).0, 404);
    assert_eq!(c.post("/api/queries/0/label", r#"{"label":"maybe"}"#).0, 400);
    assert_eq!(c.post("/api/queries/0/label", "not json").0, 400);
    service.shutdown();
}

#[test]
fn answering_over_http_matches_the_oracle_run() {
    let config = small_config();
    let dir = tempfile::tempdir().unwrap();
    let oracle_dir = dir.path().join("oracle");
    let data = pipeline::prepare(&config, None).unwrap();
    let (oracle, _) = pipeline::train(&config, data, &mut OracleAnnotator, &mut (), Some(&oracle_dir)).unwrap();

    let data = pipeline::prepare(&config, None).unwrap();
    let truth = data.train.labels_true().to_vec();
    let service = Service::start("127.0.0.1:0", &data.train, Method::MmrHil, config.run.epochs).unwrap();
    let c = Client::new(&service);
    let mut annotator = service.annotator(&config.run.hil);
    let mut observer = service.observer();
    let http_dir = dir.path().join("http");
    let worker = {
        let (config, out) = (config.clone(), http_dir.clone());
        thread::spawn(move || pipeline::train(&config, data, &mut annotator, &mut observer, Some(&out)).map(|r| r.0))
    };

    let deadline = Instant::now() + Duration::from_secs(300);
    let mut answered = 0;
    let mut checked_conflict = false;
    while !worker.is_finished() {
        assert!(Instant::now() < deadline, "training did not finish");
        let pending = c.pending();
        if pending.is_empty() {
            thread::sleep(Duration::from_millis(20));
            continue;
        }
        let before = c.status().round.expect("a round is open").pending;
        assert_eq!(before, pending.len());
        for (k, q) in pending.iter().enumerate() {
            assert_eq!(q.features.len(), 128);
            let body = format!(r#"{{"label":"{}"}}"#, truth[q.sample_id].name());
            let (code, resp) = c.post(&format!("/api/queries/{}/label", q.id), &body);
            assert_eq!(code, 200, "{resp}");
            answered += 1;
            if k + 1 < pending.len() {
                assert_eq!(c.status().round.unwrap().pending, before - k - 1);
                if !checked_conflict {
                    assert_eq!(c.post(&format!("/api/queries/{}/label", q.id), &body).0, 409);
                    checked_conflict = true;
                }
            }
        }
    }
    let record = worker.join().unwrap().unwrap();
    assert!(answered > 0);
    assert!(c.status().done);
    service.shutdown();

    assert_eq!(record.summary, oracle.summary);
    assert_eq!(record.snapshots, oracle.snapshots);
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&http_dir, "labels_final.csv"), read(&oracle_dir, "labels_final.csv"));
    assert_eq!(read(&http_dir, "model.json"), read(&oracle_dir, "model.json"));
}
