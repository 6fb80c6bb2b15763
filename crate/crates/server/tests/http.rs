use std::sync::Arc;

use amhate_core::annotation::{AnnotationService, Annotator, ManualClock, MemoryStore, Role};
use amhate_server::{issue_tokens, router};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn pool_record(id: &str, text: &str) -> Value {
    json!({
        "id": id,
        "source": "file",
        "author_hash": "h",
        "text": text,
        "created_at": "2020-05-01T10:00:00Z",
        "keyword_themes": ["hate"],
    })
}

fn app_with(annotators: Vec<Annotator>) -> Router {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()));
    let service = AnnotationService::new(Arc::new(MemoryStore::new())).with_clock(clock);
    for a in annotators {
        service.register_annotator(a).unwrap();
    }
    router(Arc::new(service))
}

fn app() -> Router {
    let mut people: Vec<Annotator> = (1..=4)
        .map(|i| Annotator::new(format!("a{i}"), Role::Annotator))
        .collect();
    people.push(Annotator::new("boss", Role::Admin));
    app_with(people)
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn import(app: &Router, records: Vec<Value>) -> String {
    let (status, body) = send(
        app,
        "POST",
        "/datasets",
        Some(json!({"admin_id": "boss", "records": records})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["dataset_id"].as_str().unwrap().to_string()
}

async fn vote(app: &Router, item: &str, who: &str, label: &str, token: Option<&str>) -> (StatusCode, Value) {
    let body = json!({"item_id": item, "annotator_id": who, "label": label, "client_token": token});
    send(app, "POST", "/votes", Some(body), None).await
}

#[tokio::test]
async fn import_requires_a_known_admin_and_valid_records() {
    let app = app();
    let records = vec![pool_record("p1", "ሰላም ነው")];
    let body = |who: &str| Some(json!({"admin_id": who, "records": records.clone()}));
    assert_eq!(
        send(&app, "POST", "/datasets", body("ghost"), None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        send(&app, "POST", "/datasets", body("a1"), None).await.0,
        StatusCode::FORBIDDEN
    );
    let (status, summary) = send(&app, "POST", "/datasets", body("boss"), None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(summary["tasks"], 1);
    let (status, err) = send(&app, "POST", "/datasets", body("boss"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("already imported"));

    let bad = json!({"admin_id": "boss", "records": [{"id": "x"}]});
    assert_eq!(
        send(&app, "POST", "/datasets", Some(bad), None).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let unknown_field = json!({"admin_id": "boss", "records": [], "extra": 1});
    assert_eq!(
        send(&app, "POST", "/datasets", Some(unknown_field), None).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let (status, err) = send(&app, "POST", "/votes", None, None).await;
    assert_eq!(
        (status, err["status"].as_u64()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some(422))
    );
}

#[tokio::test]
async fn voting_round_trip_with_idempotent_resubmission() {
    let app = app();
    let ds = import(&app, vec![pool_record("p1", "ሰላም ነው")]).await;

    let (status, task) = send(&app, "GET", "/tasks/next?annotator=a1", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["item_id"], "p1");
    assert!(task.get("votes").is_none(), "other votes must stay hidden");

    // double click: same token twice, one vote recorded
    for _ in 0..2 {
        let (status, body) = vote(&app, "p1", "a1", "racial", Some("click-1")).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["status"], "open");
    }
    let (_, stats) = send(&app, "GET", &format!("/datasets/{ds}/stats?annotator=a1"), None, None).await;
    assert_eq!(stats["votes"], 1);

    // a second, different vote from the same annotator conflicts
    assert_eq!(
        vote(&app, "p1", "a1", "gender", Some("click-2")).await.0,
        StatusCode::CONFLICT
    );
    // nothing left for a1
    let (status, body) = send(&app, "GET", "/tasks/next?annotator=a1", None, None).await;
    assert_eq!((status, body), (StatusCode::NO_CONTENT, Value::Null));

    for who in ["a2", "a3"] {
        send(&app, "GET", &format!("/tasks/next?annotator={who}"), None, None).await;
        assert_eq!(vote(&app, "p1", who, "racial", None).await.0, StatusCode::OK);
    }
    // redundancy reached; a fourth annotator gets nothing and cannot vote
    assert_eq!(
        send(&app, "GET", "/tasks/next?annotator=a4", None, None).await.0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(vote(&app, "p1", "a4", "racial", None).await.0, StatusCode::CONFLICT);

    let (status, gold) = send(
        &app,
        "GET",
        &format!("/datasets/{ds}/export?annotator=boss"),
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        gold,
        json!([{"id": "p1", "text": "ሰላም ነው", "tokens": ["ሰላም", "ነው"], "label": "racial"}])
    );
    assert_eq!(
        send(&app, "GET", &format!("/datasets/{ds}/export?annotator=a1"), None, None)
            .await
            .0,
        StatusCode::FORBIDDEN
    );
}

#[tokio::test]
async fn ties_go_to_admin_adjudication() {
    let app = app();
    let ds = import(&app, vec![pool_record("p1", "ሰላም ነው"), pool_record("p2", "ጤና ይስጥልኝ")]).await;
    let labels = [("a1", "racial"), ("a2", "gender"), ("a3", "nonhate")];
    for (who, label) in labels {
        for _ in 0..2 {
            let (_, task) = send(&app, "GET", &format!("/tasks/next?annotator={who}"), None, None).await;
            let item = task["item_id"].as_str().unwrap().to_string();
            let label = if item == "p2" { "nonhate" } else { label };
            assert_eq!(vote(&app, &item, who, label, None).await.0, StatusCode::OK);
        }
    }
    let (_, stats) = send(&app, "GET", &format!("/datasets/{ds}/stats?annotator=a1"), None, None).await;
    assert_eq!(
        (stats["complete"].as_u64(), stats["adjudication"].as_u64()),
        (Some(1), Some(1))
    );

    let adj = |who: &str| Some(json!({"item_id": "p1", "label": "gender", "adjudicator_id": who}));
    assert_eq!(
        send(&app, "POST", "/adjudications", adj("a1"), None).await.0,
        StatusCode::FORBIDDEN
    );
    let (status, body) = send(&app, "POST", "/adjudications", adj("boss"), None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("complete")));
    assert_eq!(
        send(&app, "POST", "/adjudications", adj("boss"), None).await.0,
        StatusCode::CONFLICT
    );

    let (status, report) = send(
        &app,
        "GET",
        &format!("/datasets/{ds}/agreement?annotator=boss"),
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["items"], 2);
    assert!(report["kappa"].as_f64().unwrap() < 1.0);
    assert_eq!(
        send(&app, "GET", "/datasets/ds-missing/stats?annotator=a1", None, None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn bearer_tokens_gate_annotators_that_have_one() {
    let mut people = vec![
        Annotator::new("a1", Role::Annotator),
        Annotator::new("boss", Role::Admin),
    ];
    let issued = issue_tokens(&mut people);
    assert_eq!(issued, ["a1", "boss"]);
    let token = people[0].token.clone().unwrap();
    assert_eq!(token.len(), 32);
    assert_ne!(people[0].token, people[1].token);
    let boss_token = people[1].token.clone().unwrap();
    let app = app_with(people);

    let body = json!({"admin_id": "boss", "records": [pool_record("p1", "ሰላም")]});
    assert_eq!(
        send(&app, "POST", "/datasets", Some(body.clone()), None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        send(&app, "POST", "/datasets", Some(body), Some(&boss_token)).await.0,
        StatusCode::CREATED
    );

    assert_eq!(
        send(&app, "GET", "/tasks/next?annotator=a1", None, None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        send(&app, "GET", "/tasks/next?annotator=a1", None, Some("nope"))
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        send(&app, "GET", "/tasks/next?annotator=a1", None, Some(&token))
            .await
            .0,
        StatusCode::OK
    );
    assert_eq!(
        send(&app, "GET", "/tasks/next", None, Some(&token)).await.0,
        StatusCode::UNAUTHORIZED
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clients_never_exceed_redundancy() {
    let annotators: Vec<String> = (0..12).map(|i| format!("c{i:02}")).collect();
    let mut people: Vec<Annotator> = annotators
        .iter()
        .map(|id| Annotator::new(id.clone(), Role::Annotator))
        .collect();
    people.push(Annotator::new("boss", Role::Admin));
    let app = app_with(people);
    let records: Vec<Value> = (0..20)
        .map(|i| pool_record(&format!("q{i:02}"), &format!("ቃል {i} ሰላም")))
        .collect();
    let ds = import(&app, records).await;

    let mut handles = Vec::new();
    for who in annotators {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let mut n = 0;
            loop {
                let (status, task) = send(&app, "GET", &format!("/tasks/next?annotator={who}"), None, None).await;
                if status == StatusCode::NO_CONTENT {
                    return n;
                }
                let item = task["item_id"].as_str().unwrap().to_string();
                let (status, _) = vote(&app, &item, &who, "religious", Some(&format!("{who}-{item}"))).await;
                assert!(status == StatusCode::OK || status == StatusCode::CONFLICT, "{status}");
                n += usize::from(status == StatusCode::OK);
            }
        }));
    }
    let mut total = 0;
    for h in handles {
        total += h.await.unwrap();
    }
    assert_eq!(total, 60);
    let (_, stats) = send(&app, "GET", &format!("/datasets/{ds}/stats?annotator=boss"), None, None).await;
    assert_eq!(
        (stats["votes"].as_u64(), stats["complete"].as_u64()),
        (Some(60), Some(20))
    );
}
