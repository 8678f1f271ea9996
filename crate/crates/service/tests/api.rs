use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use dressup_core::dataset::{render_person, PaperDollSpec};
use dressup_core::image::{RgbImage, LABEL_BOTTOM, LABEL_HAIR, LABEL_TOP};
use dressup_core::model::PersonInput;
use dressup_core::tweaking::{Attribute, AttributeDirection};
use dressup_core::Model32;
use dressup_service::session::{person_from_blob, person_to_blob, Session};
use dressup_service::store::StoredSession;
use dressup_service::{
    router, ApiError, ApiResult, Engine, ErrorBody, FsStore, ServiceConfig, SessionManager,
    SessionStore,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const CK: &str = "0123456789abcdef";

fn model() -> Model32 {
    Model32::new(21)
}

fn engine() -> Arc<Engine> {
    let mut direction = vec![0.0; dressup_core::encoders::LATENT];
    direction[0] = 1.0;
    let d = AttributeDirection {
        attribute: Attribute::DarkTop,
        direction,
        fit_accuracy: 0.9,
        train_count: 40,
        scale: 1.0,
        bias: 0.0,
    };
    Arc::new(Engine::new(model(), CK).with_directions(BTreeMap::from([("dark".to_string(), d)])))
}

struct App {
    router: Router,
    manager: Arc<SessionManager>,
}

fn app_with(engine: Arc<Engine>, store: Arc<dyn SessionStore>) -> App {
    let manager = Arc::new(SessionManager::new(engine, store));
    App {
        router: router(manager.clone()),
        manager,
    }
}

fn app(dir: &Path) -> App {
    app_with(engine(), Arc::new(FsStore::new(dir).unwrap()))
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|_| panic!("not JSON: {:?}", String::from_utf8_lossy(&self.body)))
    }

    fn error(&self) -> ErrorBody {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn call(app: &App, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply {
        status,
        headers,
        body,
    }
}

async fn create(app: &App, body: Value) -> String {
    let r = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(
        r.status,
        StatusCode::CREATED,
        "{:?}",
        String::from_utf8_lossy(&r.body)
    );
    r.json()["id"].as_str().unwrap().to_string()
}

async fn render(app: &App, id: &str) -> (Vec<u8>, String) {
    let r = call(app, Method::GET, &format!("/sessions/{id}/render"), None).await;
    assert_eq!(
        r.status,
        StatusCode::OK,
        "{:?}",
        String::from_utf8_lossy(&r.body)
    );
    assert_eq!(r.headers["content-type"], "image/png");
    assert_eq!(r.headers["x-model-checkpoint"], CK);
    (
        r.body,
        r.headers["x-render-cache"].to_str().unwrap().to_string(),
    )
}

fn seed_person(seed: u64) -> Value {
    json!({"person": {"kind": "toy_seed", "seed": seed}})
}

#[tokio::test]
async fn create_and_fetch_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let spec = serde_json::to_value(PaperDollSpec::random(4)).unwrap();
    let body = json!({"person": {"kind": "toy", "spec": spec}, "order": [LABEL_HAIR, LABEL_TOP]});
    let a = create(&app, body.clone()).await;
    let b = create(&app, body).await;
    assert_ne!(a, b);
    let view = call(&app, Method::GET, &format!("/sessions/{a}"), None)
        .await
        .json();
    assert_eq!(view["id"], a.as_str());
    assert_eq!(view["checkpoint_id"], CK);
    assert_eq!(view["garments"].as_array().unwrap().len(), 2);
    assert_eq!(view["garments"][1]["label_name"], "top");
    assert_eq!(view["keypoints"].as_array().unwrap().len(), 18);
    assert_eq!(view["dirty"], true);
    // Same spec, same render.
    assert_eq!(render(&app, &a).await.0, render(&app, &b).await.0);

    let default = create(&app, seed_person(4)).await;
    let view = call(&app, Method::GET, &format!("/sessions/{default}"), None)
        .await
        .json();
    let labels: Vec<u64> = view["garments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["label"].as_u64().unwrap())
        .collect();
    assert_eq!(labels, vec![4, 3, 2]);
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let s = render_person(&PaperDollSpec::random(2)).unwrap();
    let image_png = B64.encode(s.image.encode_png().unwrap());
    let seg_png = B64.encode(s.seg.encode_png().unwrap());

    let mut kps = s.keypoints.to_json();
    kps[5] = json!([1.0, "x", 1]);
    let r = call(&app, Method::POST, "/sessions", Some(json!({"person": {"kind": "upload", "image_png": image_png, "seg_png": seg_png, "keypoints": kps}}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = r.error();
    assert_eq!(e.code, "validation_error");
    assert_eq!(e.field.as_deref(), Some("person.keypoints[5][1]"));

    let r = call(&app, Method::POST, "/sessions", Some(json!({"person": {"kind": "upload", "image_png": "%%%", "seg_png": seg_png, "keypoints": s.keypoints.to_json()}}))).await;
    assert_eq!(r.error().field.as_deref(), Some("person.image_png"));

    // Uploads are 8-bit, so compare two identical uploads rather than the float toy render.
    let upload = json!({"person": {"kind": "upload", "image_png": image_png, "seg_png": seg_png, "keypoints": s.keypoints.to_json()}});
    let a = create(&app, upload.clone()).await;
    let b = create(&app, upload).await;
    assert_eq!(render(&app, &a).await.0, render(&app, &b).await.0);

    let r = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"person": {"kind": "toy_seed", "seed": 1}, "order": [3, 9]})),
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error().field.as_deref(), Some("order[1]"));

    let r = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"person": {"kind": "toy_seed", "seed": 1}, "colour": 1})),
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let req = Request::post("/sessions")
        .header("content-type", "application/json")
        .body(Body::from("{oops"))
        .unwrap();
    let resp = app.router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let missing = uuid::Uuid::new_v4();
    let r = call(&app, Method::GET, &format!("/sessions/{missing}"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error().code, "not_found");
    let r = call(&app, Method::GET, "/sessions/..%2Fetc", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn garments_insert_at_position() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(
        &app,
        json!({"person": {"kind": "toy_seed", "seed": 5}, "order": [LABEL_BOTTOM, LABEL_TOP]}),
    )
    .await;
    let donor = json!({"kind": "toy_seed", "seed": 77});
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/garments"),
        Some(json!({"source": donor, "label": LABEL_TOP})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["garments"][2]["origin"], "toy_seed");
    let (end, _) = render(&app, &id).await;

    // Definitional check: the same stack built directly through the model.
    let m = model();
    let person = render_person(&PaperDollSpec::random(5)).unwrap();
    let donor_s = render_person(&PaperDollSpec::random(77)).unwrap();
    fn input(s: &dressup_core::dataset::Sample) -> PersonInput<'_> {
        PersonInput {
            image: &s.image,
            seg: &s.seg,
            keypoints: &s.keypoints,
        }
    }
    let mut rep = m
        .encode_person(
            input(&person),
            &person.keypoints,
            &[LABEL_BOTTOM, LABEL_TOP],
        )
        .unwrap()
        .person;
    rep.garments.push(
        m.encode_garment(input(&donor_s), LABEL_TOP, &person.keypoints)
            .unwrap(),
    );
    let direct = RgbImage::from_tensor(&m.try_on(&rep).unwrap(), 0)
        .encode_png()
        .unwrap();
    assert_eq!(end, direct);

    let other = create(
        &app,
        json!({"person": {"kind": "toy_seed", "seed": 5}, "order": [LABEL_BOTTOM, LABEL_TOP]}),
    )
    .await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{other}/garments"),
        Some(json!({"source": donor, "label": LABEL_TOP, "position": 0})),
    )
    .await;
    assert_ne!(render(&app, &other).await.0, end);

    let before = call(&app, Method::GET, &format!("/sessions/{id}"), None)
        .await
        .json();
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/garments"),
        Some(json!({"source": donor, "label": LABEL_TOP, "position": 4})),
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error().field.as_deref(), Some("position"));
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .json(),
        before
    );

    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/garments"),
        Some(json!({"source": {"kind": "person"}, "label": 0})),
    )
    .await;
    assert_eq!(r.error().field.as_deref(), Some("label"));

    let thumb = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/garments/2/thumbnail"),
        None,
    )
    .await;
    assert_eq!(thumb.status, StatusCode::OK);
    assert!(thumb.body.starts_with(b"\x89PNG"));
    let r = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/garments/7/thumbnail"),
        None,
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn reorder_and_cache_contract() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({"person": {"kind": "toy_seed", "seed": 8}, "order": [LABEL_BOTTOM, LABEL_TOP, LABEL_HAIR]})).await;
    let (first, how) = render(&app, &id).await;
    assert_eq!(how, "miss");
    let (again, how) = render(&app, &id).await;
    assert_eq!((again.as_slice(), how.as_str()), (first.as_slice(), "hit"));

    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/reorder"),
        Some(json!({"permutation": [0, 1, 2]})),
    )
    .await;
    assert_eq!(r.json()["dirty"], false);
    assert_eq!(render(&app, &id).await, (first.clone(), "hit".to_string()));

    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/reorder"),
        Some(json!({"permutation": [0, 2, 1]})),
    )
    .await;
    let labels: Vec<u64> = r.json()["garments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["label"].as_u64().unwrap())
        .collect();
    assert_eq!(labels, vec![4, 2, 3]);
    let (swapped, how) = render(&app, &id).await;
    assert_eq!(how, "miss");
    assert_ne!(swapped, first);

    for bad in [json!([0, 0, 1]), json!([0, 1]), json!([0, 1, 3])] {
        let r = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/reorder"),
            Some(json!({"permutation": bad})),
        )
        .await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(r.error().field.as_deref(), Some("permutation"));
    }
    assert_eq!(render(&app, &id).await, (swapped, "hit".to_string()));
}

#[tokio::test]
async fn tweaks_append_replace_and_undo() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(
        &app,
        json!({"person": {"kind": "toy_seed", "seed": 9}, "order": [LABEL_BOTTOM, LABEL_TOP]}),
    )
    .await;
    let (base, _) = render(&app, &id).await;
    let url = format!("/sessions/{id}/tweaks");

    let zero = json!({"kind": "sleeve_length", "magnitude": 0.0, "target_garment": 1});
    assert_eq!(
        call(&app, Method::POST, &url, Some(zero)).await.status,
        StatusCode::OK
    );
    assert_eq!(render(&app, &id).await.0, base);
    call(&app, Method::DELETE, &format!("{url}/last"), None).await;

    let recolor = json!({"kind": "recolor", "magnitude": 1.0, "target_garment": 1, "payload": {"type": "color", "rgb": [0.9, 0.1, 0.1]}});
    let r = call(&app, Method::POST, &url, Some(recolor)).await;
    assert_eq!(r.json()["tweaks"].as_array().unwrap().len(), 1);
    let (red, _) = render(&app, &id).await;
    assert_ne!(red, base);

    let weaker = json!({"kind": "recolor", "magnitude": 0.3, "target_garment": 1, "payload": {"type": "color", "rgb": [0.9, 0.1, 0.1]}, "mode": "replace"});
    let r = call(&app, Method::POST, &url, Some(weaker)).await;
    let tweaks = r.json()["tweaks"].clone();
    assert_eq!(tweaks.as_array().unwrap().len(), 1);
    assert_eq!(tweaks[0]["magnitude"], 0.3);

    let latent = json!({"kind": "latent", "magnitude": -0.5, "target_garment": 0, "payload": {"type": "direction", "id": "dark"}});
    assert_eq!(
        call(&app, Method::POST, &url, Some(latent)).await.status,
        StatusCode::OK
    );
    let (two, _) = render(&app, &id).await;
    let r = call(&app, Method::DELETE, &format!("{url}/last"), None).await;
    assert_eq!(r.json()["tweaks"].as_array().unwrap().len(), 1);
    let (one, _) = render(&app, &id).await;
    assert_ne!(one, two);
    call(&app, Method::DELETE, &format!("{url}/last"), None).await;
    assert_eq!(render(&app, &id).await.0, base);
    let r = call(&app, Method::DELETE, &format!("{url}/last"), None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(
        &app,
        Method::POST,
        &url,
        Some(json!({"kind": "width", "magnitude": 0.5, "target_garment": 9})),
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error().field.as_deref(), Some("target_garment"));
    let r = call(
        &app,
        Method::POST,
        &url,
        Some(json!({"kind": "width", "magnitude": 2.0, "target_garment": 0})),
    )
    .await;
    assert_eq!(r.error().field.as_deref(), Some("magnitude"));
    let r = call(&app, Method::POST, &url, Some(json!({"kind": "latent", "magnitude": 0.5, "target_garment": 0, "payload": {"type": "direction", "id": "nope"}}))).await;
    assert_eq!(r.error().field.as_deref(), Some("payload"));
    let r = call(
        &app,
        Method::POST,
        &url,
        Some(json!({"kind": "spin", "magnitude": 0.5, "target_garment": 0})),
    )
    .await;
    assert_eq!(r.error().field.as_deref(), Some("kind"));
    assert!(call(&app, Method::GET, &format!("/sessions/{id}"), None)
        .await
        .json()["tweaks"]
        .as_array()
        .unwrap()
        .is_empty());

    let dirs = call(&app, Method::GET, "/directions", None).await.json();
    assert_eq!(dirs[0]["id"], "dark");
    assert_eq!(dirs[0]["attribute"], "dark_top");
}

#[tokio::test]
async fn tweaks_follow_their_garment_through_reorder() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(
        &app,
        json!({"person": {"kind": "toy_seed", "seed": 10}, "order": [LABEL_BOTTOM, LABEL_TOP]}),
    )
    .await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/tweaks"),
        Some(json!({"kind": "sleeve_length", "magnitude": 1.0, "target_garment": 1})),
    )
    .await;
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/reorder"),
        Some(json!({"permutation": [1, 0]})),
    )
    .await;
    assert_eq!(r.json()["tweaks"][0]["target_garment"], 0);
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/garments"),
        Some(json!({"source": {"kind": "person"}, "label": LABEL_HAIR, "position": 0})),
    )
    .await;
    assert_eq!(r.json()["tweaks"][0]["target_garment"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_renders_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let a = create(&app, seed_person(11)).await;
    let b = create(&app, seed_person(12)).await;
    let ((ra, _), (rb, _), (ra2, _)) =
        tokio::join!(render(&app, &a), render(&app, &b), render(&app, &a));
    assert_ne!(ra, rb);
    assert_eq!(ra, ra2);
    let solo = app_with(
        engine(),
        Arc::new(FsStore::new(dir.path().join("solo")).unwrap()),
    );
    let c = create(&solo, seed_person(12)).await;
    assert_eq!(render(&solo, &c).await.0, rb);
}

#[tokio::test]
async fn sessions_survive_restart_and_eviction() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path());
    let id = create(&app1, seed_person(13)).await;
    call(
        &app1,
        Method::POST,
        &format!("/sessions/{id}/tweaks"),
        Some(json!({"kind": "width", "magnitude": 0.5, "target_garment": 1})),
    )
    .await;
    let (before, _) = render(&app1, &id).await;
    let view = call(&app1, Method::GET, &format!("/sessions/{id}"), None)
        .await
        .json();

    app1.manager.evict(&id).await;
    assert_eq!(
        render(&app1, &id).await,
        (before.clone(), "hit".to_string())
    );

    let app2 = app(dir.path());
    assert_eq!(
        call(&app2, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .json(),
        view
    );
    assert_eq!(
        render(&app2, &id).await,
        (before.clone(), "hit".to_string())
    );

    // An unreadable blob falls back to re-encoding from the stored sources.
    for entry in std::fs::read_dir(dir.path().join(&id)).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "bin") {
            std::fs::write(&p, b"garbage").unwrap();
        }
    }
    let app3 = app(dir.path());
    let (reencoded, how) = render(&app3, &id).await;
    assert_eq!(how, "miss");
    assert_eq!(reencoded, before);
}

#[tokio::test]
async fn another_checkpoint_reencodes() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path());
    let id = create(&app1, seed_person(14)).await;
    render(&app1, &id).await;
    let other = Arc::new(Engine::new(Model32::new(99), "feedfacefeedface"));
    let app2 = app_with(other.clone(), Arc::new(FsStore::new(dir.path()).unwrap()));
    let view = call(&app2, Method::GET, &format!("/sessions/{id}"), None)
        .await
        .json();
    assert_eq!(view["checkpoint_id"], "feedfacefeedface");
    let r = call(&app2, Method::GET, &format!("/sessions/{id}/render"), None).await;
    assert_eq!(r.headers["x-model-checkpoint"], "feedfacefeedface");
    let fresh = create(&app2, seed_person(14)).await;
    let f = call(
        &app2,
        Method::GET,
        &format!("/sessions/{fresh}/render"),
        None,
    )
    .await;
    assert_eq!(r.body, f.body);
}

/// Fails every save while armed.
struct FlakyStore {
    inner: FsStore,
    fail: AtomicBool,
}

impl SessionStore for FlakyStore {
    fn save(&self, s: &Session) -> ApiResult<()> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(ApiError::internal("injected disk failure"));
        }
        self.inner.save(s)
    }

    fn load(&self, id: &str) -> ApiResult<Option<StoredSession>> {
        self.inner.load(id)
    }
}

#[tokio::test]
async fn failed_saves_leave_sessions_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FlakyStore {
        inner: FsStore::new(dir.path()).unwrap(),
        fail: AtomicBool::new(false),
    });
    let app = app_with(engine(), store.clone());
    let id = create(
        &app,
        json!({"person": {"kind": "toy_seed", "seed": 15}, "order": [LABEL_BOTTOM, LABEL_TOP]}),
    )
    .await;
    let (base, _) = render(&app, &id).await;
    let view = call(&app, Method::GET, &format!("/sessions/{id}"), None)
        .await
        .json();

    store.fail.store(true, Ordering::SeqCst);
    let mutations = [
        (
            Method::POST,
            "garments",
            Some(json!({"source": {"kind": "toy_seed", "seed": 3}, "label": LABEL_TOP})),
        ),
        (
            Method::POST,
            "reorder",
            Some(json!({"permutation": [1, 0]})),
        ),
        (
            Method::POST,
            "tweaks",
            Some(json!({"kind": "width", "magnitude": 0.5, "target_garment": 1})),
        ),
    ];
    for (method, path, body) in mutations {
        let r = call(&app, method, &format!("/sessions/{id}/{path}"), body).await;
        assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR, "{path}");
        assert_eq!(r.error().code, "internal_error");
        assert_eq!(
            call(&app, Method::GET, &format!("/sessions/{id}"), None)
                .await
                .json(),
            view
        );
    }
    let r = call(&app, Method::POST, "/sessions", Some(seed_person(1))).await;
    assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR);
    store.fail.store(false, Ordering::SeqCst);
    assert_eq!(render(&app, &id).await, (base, "hit".to_string()));
    // Nothing half-written survives on disk either.
    app.manager.evict(&id).await;
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .json(),
        view
    );
}

#[tokio::test]
async fn missing_model_is_service_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        model_path: Some(dir.path().join("missing.ckpt")),
        session_dir: dir.path().join("sessions"),
        port: 0,
    };
    let app = App {
        router: dressup_service::build_app(&cfg).unwrap(),
        manager: Arc::new(SessionManager::new(
            engine(),
            Arc::new(FsStore::new(dir.path()).unwrap()),
        )),
    };
    let health = call(&app, Method::GET, "/health", None).await.json();
    assert_eq!(health["model_loaded"], false);
    let r = call(&app, Method::POST, "/sessions", Some(seed_person(1))).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    let e = r.error();
    assert_eq!(e.code, "model_unavailable");
    assert!(e.message.contains("missing.ckpt"));
    let r = call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // Sessions stored earlier still load for reading; rendering needs the model.
    let with_model = app_with(
        engine(),
        Arc::new(FsStore::new(dir.path().join("sessions")).unwrap()),
    );
    let id = create(&with_model, seed_person(2)).await;
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .status,
        StatusCode::OK
    );
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}/render"), None)
            .await
            .status,
        StatusCode::SERVICE_UNAVAILABLE
    );
}

#[test]
fn blob_round_trip_is_lossless() {
    let m = model();
    let s = render_person(&PaperDollSpec::random(3)).unwrap();
    let input = PersonInput {
        image: &s.image,
        seg: &s.seg,
        keypoints: &s.keypoints,
    };
    let rep = m
        .encode_person(input, &s.keypoints, &[4, 3, 2])
        .unwrap()
        .person;
    let blob = person_to_blob(&rep);
    assert_eq!(person_from_blob(&blob).unwrap(), rep);
    let mut future = blob.clone();
    future[4] = 2;
    assert!(person_from_blob(&future).is_none());
    assert!(person_from_blob(&blob[..blob.len() - 1]).is_none());
    let mut longer = blob;
    longer.push(0);
    assert!(person_from_blob(&longer).is_none());
}

#[test]
fn config_reads_environment_names() {
    let cfg = ServiceConfig::from_lookup(|k| match k {
        "MODEL_PATH" => Some("m.ckpt".into()),
        "SESSION_DIR" => Some("/tmp/s".into()),
        "PORT" => Some("9001".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!(cfg.model_path.as_deref(), Some(Path::new("m.ckpt")));
    assert_eq!(cfg.session_dir, Path::new("/tmp/s"));
    assert_eq!(cfg.port, 9001);
    assert_eq!(
        ServiceConfig::from_lookup(|_| None).unwrap(),
        ServiceConfig::default()
    );
    let err = ServiceConfig::from_lookup(|k| (k == "PORT").then(|| "http".into())).unwrap_err();
    assert!(err.to_string().contains("PORT"));
}
