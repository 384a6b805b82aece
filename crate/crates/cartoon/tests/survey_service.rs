mod common;

use std::io::Write;
use std::path::Path;

use cartoon::survey::{read_log, SessionPayload, SurveyService};
use cartoon_core::survey::{ModelId, QuestionId, SurveyDefinition};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use common::survey::{spawn, write_fixture};

fn definition(dir: &Path) -> SurveyDefinition {
    serde_json::from_str(&std::fs::read_to_string(dir.join("survey.json")).unwrap()).unwrap()
}

fn model_of(def: &SurveyDefinition, image_id: &str) -> ModelId {
    let (t, k) = def.resolve_image(image_id).unwrap();
    def.tasks[t].images[k].model
}

async fn new_session(http: &Client, base: &str) -> SessionPayload {
    http.post(format!("{base}/api/session")).send().await.unwrap().json().await.unwrap()
}

async fn post(http: &Client, base: &str, pid: &str, body: Value) -> (StatusCode, Value) {
    let r = http
        .post(format!("{base}/api/session/{pid}/response"))
        .json(&body)
        .send()
        .await
        .unwrap();
    (r.status(), r.json().await.unwrap_or(Value::Null))
}

fn ranks(images: &[&str], r: [u8; 3]) -> Value {
    json!(images.iter().zip(r).map(|(id, r)| json!({"image_id": id, "rank": r})).collect::<Vec<_>>())
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_blinded_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(dir.path(), &dir.path().join("log.jsonl"), 5).await;
    let http = Client::new();
    let raw = http.post(format!("{base}/api/session")).send().await.unwrap().text().await.unwrap();
    for m in ModelId::ALL {
        assert!(!raw.contains(m.as_str()), "payload names {m:?}");
    }
    let s: SessionPayload = serde_json::from_str(&raw).unwrap();
    assert_eq!(s.tasks.iter().map(|t| t.position).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
    let def = definition(dir.path());
    for t in &s.tasks {
        let q = if t.position <= 10 { QuestionId::Aesthetic } else { QuestionId::Cartoon };
        assert_eq!(t.prompt, def.prompt(q));
        let mut models: Vec<_> = t.images.iter().map(|i| model_of(&def, &i.image_id)).collect();
        models.sort_by_key(|m| *m as u8);
        assert_eq!(models, ModelId::ALL);
    }
    let again: SessionPayload = http
        .get(format!("{base}/api/session/{}", s.participant_id))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(serde_json::to_value(&again).unwrap(), serde_json::to_value(&s).unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(dir.path(), &dir.path().join("log.jsonl"), 6).await;
    let http = Client::new();
    let s = new_session(&http, &base).await;
    let pid = &s.participant_id;
    let (t0, t1) = (&s.tasks[0], &s.tasks[1]);
    let ids0: Vec<&str> = t0.images.iter().map(|i| i.image_id.as_str()).collect();
    let ids1: Vec<&str> = t1.images.iter().map(|i| i.image_id.as_str()).collect();

    let get = http.get(format!("{base}/api/session/ffff")).send().await.unwrap();
    assert_eq!(get.status(), StatusCode::NOT_FOUND);

    let ok = json!({"task_id": t0.task_id, "ranks": ranks(&ids0, [1, 2, 3])});
    let (code, body) = post(&http, &base, "nobody", ok.clone()).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());

    let (code, _) = post(&http, &base, pid, json!({"task_id": "task-99", "ranks": ranks(&ids0, [1, 2, 3])})).await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    let foreign = [ids0[0], ids0[1], ids1[0]];
    let (code, _) = post(&http, &base, pid, json!({"task_id": t0.task_id, "ranks": ranks(&foreign, [1, 2, 3])})).await;
    assert_eq!(code, StatusCode::CONFLICT);

    for bad in [[1, 1, 2], [0, 1, 2], [1, 2, 4]] {
        let (code, _) = post(&http, &base, pid, json!({"task_id": t0.task_id, "ranks": ranks(&ids0, bad)})).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{bad:?}");
    }
    let (code, _) = post(&http, &base, pid, json!({"task_id": t0.task_id, "ranks": ranks(&ids0[..2], [1, 2, 3])})).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = post(&http, &base, pid, json!({"task_id": t0.task_id})).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let r = http
        .post(format!("{base}/api/session/{pid}/response"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    // nothing above may have reached the log
    let report: Value = http.get(format!("{base}/api/report")).send().await.unwrap().json().await.unwrap();
    assert_eq!(report["records"], 0);
    let (code, _) = post(&http, &base, pid, ok).await;
    assert_eq!(code, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn images_are_served_by_opaque_id() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(dir.path(), &dir.path().join("log.jsonl"), 7).await;
    let http = Client::new();
    let s = new_session(&http, &base).await;
    let def = definition(dir.path());
    let img = &s.tasks[3].images[2];
    assert!(!img.image_id.contains("task"));
    let r = http.get(format!("{base}{}", img.url)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "image/png");
    let (t, k) = def.resolve_image(&img.image_id).unwrap();
    assert_eq!(r.bytes().await.unwrap().as_ref(), std::fs::read(dir.path().join(&def.tasks[t].images[k].path)).unwrap());
    let r = http.get(format!("{base}/img/0123456789abcdef")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = http.get(format!("{base}/img/..%2Fsurvey.json")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn resubmission_replaces_the_earlier_answer() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(dir.path(), &dir.path().join("log.jsonl"), 8).await;
    let http = Client::new();
    let def = definition(dir.path());
    let s = new_session(&http, &base).await;
    let t = &s.tasks[0];
    let ids: Vec<&str> = t.images.iter().map(|i| i.image_id.as_str()).collect();
    for r in [[1, 2, 3], [3, 1, 2]] {
        let (code, _) = post(&http, &base, &s.participant_id, json!({"task_id": t.task_id, "ranks": ranks(&ids, r)})).await;
        assert_eq!(code, StatusCode::OK);
    }
    let report: Value = http.get(format!("{base}/api/report")).send().await.unwrap().json().await.unwrap();
    assert_eq!(report["records"], 1);
    for (id, r) in ids.iter().zip([3, 1, 2]) {
        let cell = &report["means"]["aesthetic"][model_of(&def, id).as_str()];
        assert_eq!(cell["count"], 1);
        assert_eq!(cell["mean"], r as f64);
    }
    assert_eq!(report["means"]["cartoon"]["ours"]["count"], 0);
    assert!(report["means"]["cartoon"]["ours"]["mean"].is_null());
}

#[test]
fn restart_replays_the_log_and_tolerates_a_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (pid, before) = rt.block_on(async {
        let base = spawn(dir.path(), &log, 9).await;
        let (raw, _) = common::survey::scripted_client(&base, 4).await.unwrap();
        let s: SessionPayload = serde_json::from_str(&raw).unwrap();
        let report: Value = Client::new().get(format!("{base}/api/report")).send().await.unwrap().json().await.unwrap();
        (s.participant_id, report)
    });
    drop(rt);

    let good = std::fs::read(&log).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&log)
        .unwrap()
        .write_all(br#"{"kind":"response","participant_id":"#)
        .unwrap();

    let def_path = write_fixture(dir.path());
    let svc = SurveyService::open_files(&def_path, &log, 9).unwrap();
    assert_eq!(std::fs::read(&log).unwrap(), good, "torn tail is cut off");
    assert_eq!(serde_json::to_value(svc.report()).unwrap(), before);
    assert_eq!(svc.session_payload(&pid).unwrap().participant_id, pid);

    // the next session continues the seed sequence instead of repeating it
    let next = svc.create_session().unwrap();
    assert_ne!(next.participant_id, pid);
    let state = read_log(&log).unwrap();
    assert_eq!(state.sessions.len(), 2);
    assert_eq!(state.records.len(), 20);
}

#[test]
fn garbage_in_the_middle_of_the_log_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let def_path = write_fixture(dir.path());
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "not json\n{}\n").unwrap();
    assert!(SurveyService::open_files(&def_path, &log, 1).is_err());
}
