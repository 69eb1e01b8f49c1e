mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use attrfield::config::SceneConfig;
use attrfield::container::load_scene;
use attrfield::indexing::AttributeCatalog;
use attrfield::scene::Scene;
use attrfield_cli::server::{router, session_id, AppState, SESSION_CAPACITY};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    content_type: String,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

fn send(state: &Arc<AppState>, req: Request<Body>) -> Reply {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let res = router(state.clone()).oneshot(req).await.unwrap();
        let status = res.status();
        let content_type = res
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply {
            status,
            content_type,
            body,
        }
    })
}

fn get(state: &Arc<AppState>, uri: &str) -> Reply {
    send(state, Request::get(uri).body(Body::empty()).unwrap())
}

fn post_edit(state: &Arc<AppState>, body: &str) -> Reply {
    send(
        state,
        Request::post("/edit")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
}

fn edit_body(base: &str, source: &str, attr: &str) -> String {
    serde_json::json!({ "base": base, "source": source, "attribute": attr }).to_string()
}

/// Three oracles and a scene with a foreign catalog, loaded from a directory.
fn state() -> (tempfile::TempDir, Arc<AppState>) {
    let dir = tempfile::tempdir().unwrap();
    oracle(dir.path(), "alice", 1);
    oracle(dir.path(), "bob", 2);
    oracle(dir.path(), "dave", 4);
    let catalog = AttributeCatalog::new(vec!["Body".into(), "Tail".into()]).unwrap();
    let odd = Scene::new_random(
        catalog,
        load_scene(dir.path().join("alice.attrscn")).unwrap().field.dims(),
        3,
    )
    .unwrap();
    attrfield::container::save_scene(&odd, dir.path().join("odd.attrscn")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let state = Arc::new(AppState::load_dir(dir.path()).unwrap());
    (dir, state)
}

#[test]
fn health_scenes_and_attributes() {
    let (_d, st) = state();
    let r = get(&st, "/health");
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");

    let r = get(&st, "/scenes");
    assert_eq!(r.status, StatusCode::OK);
    let ids: Vec<String> = r.json()["scenes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["alice", "bob", "dave", "odd"]);

    let r = get(&st, "/attributes");
    assert!(r.content_type.starts_with("application/json"));
    let names: Vec<String> = r.json()["attributes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, SceneConfig::default().catalog.names());
    assert_eq!(names.len(), 11);
    assert_eq!(
        get(&st, "/attributes?scene=odd").json()["attributes"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    assert_eq!(get(&st, "/attributes?scene=carol").status, StatusCode::NOT_FOUND);
}

#[test]
fn empty_directory_still_lists_the_default_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let st = Arc::new(AppState::load_dir(dir.path()).unwrap());
    assert_eq!(
        get(&st, "/attributes").json()["attributes"].as_array().unwrap().len(),
        11
    );
    assert_eq!(get(&st, "/render?scene=alice").status, StatusCode::NOT_FOUND);
}

#[test]
fn render_returns_a_png_of_the_requested_size() {
    let (_d, st) = state();
    let r = get(&st, "/render?scene=alice&yaw=30&pitch=-10&dist=3&res=24");
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type, "image/png");
    let (w, h, _) = decode_png(&r.body);
    assert_eq!((w, h), (24, 24));
    let again = get(&st, "/render?scene=alice&yaw=390&pitch=-10&dist=3&res=24");
    assert_eq!(again.body, r.body);
    let sem = get(&st, "/render?scene=alice&res=24&layer=semantic");
    assert_eq!(sem.status, StatusCode::OK);
    let subset = get(&st, "/render?scene=alice&yaw=30&pitch=-10&dist=3&res=24&attrs=Body");
    assert_eq!(subset.status, StatusCode::OK);
}

#[test]
fn render_errors_map_to_status_codes() {
    let (_d, st) = state();
    for (uri, status) in [
        ("/render?scene=carol", StatusCode::NOT_FOUND),
        ("/render?res=16", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&yaw=left", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&res=0", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&res=4096", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&pitch=90", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&attrs=Cape", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&attrs=Body,Body", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&layer=depth", StatusCode::BAD_REQUEST),
        ("/render?scene=alice&edit=0123", StatusCode::NOT_FOUND),
    ] {
        let r = get(&st, uri);
        assert_eq!(r.status, status, "{uri}");
        assert!(r.json()["error"].is_string(), "{uri}");
    }
}

#[test]
fn edit_sessions_are_idempotent_and_render_deterministically() {
    let (_d, st) = state();
    let body = edit_body("alice", "bob", "Top");
    let a = post_edit(&st, &body);
    assert_eq!(a.status, StatusCode::OK);
    let id = a.json()["session"].as_str().unwrap().to_string();
    assert_eq!(id, session_id("alice", "bob", "Top"));
    assert_eq!(post_edit(&st, &body).json()["session"], id.as_str());

    let uri = format!("/render?edit={id}&yaw=15&res=32&attrs=Body,Top");
    let r1 = get(&st, &uri);
    let r2 = get(&st, &uri);
    assert_eq!(r1.status, StatusCode::OK);
    assert_eq!(r1.body, r2.body);
    let plain = get(&st, "/render?scene=alice&yaw=15&res=32&attrs=Body,Top");
    assert_ne!(plain.body, r1.body, "swap changed nothing");
    assert_eq!(get(&st, &format!("{uri}&scene=alice")).body, r1.body);
    assert_eq!(get(&st, &format!("{uri}&scene=bob")).status, StatusCode::BAD_REQUEST);

    // Sessions are not persisted; replaying the POST on a fresh service
    // reproduces the render.
    let (_d2, fresh) = state();
    assert_eq!(get(&fresh, &uri).status, StatusCode::NOT_FOUND);
    post_edit(&fresh, &body);
    assert_eq!(get(&fresh, &uri).body, r1.body);

    // Swapping an attribute back from the base restores the plain image.
    let back = post_edit(&st, &edit_body("alice", "alice", "Top")).json()["session"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(
        get(&st, &format!("/render?edit={back}&yaw=15&res=32&attrs=Body,Top")).body,
        plain.body
    );
}

#[test]
fn edit_request_errors_map_to_status_codes() {
    let (_d, st) = state();
    for (body, status) in [
        ("not json".to_string(), StatusCode::BAD_REQUEST),
        (r#"{"base":"alice"}"#.to_string(), StatusCode::BAD_REQUEST),
        (
            r#"{"base":"alice","source":"bob","attribute":"Top","extra":1}"#.to_string(),
            StatusCode::BAD_REQUEST,
        ),
        (edit_body("carol", "bob", "Top"), StatusCode::NOT_FOUND),
        (edit_body("alice", "carol", "Top"), StatusCode::NOT_FOUND),
        (edit_body("alice", "bob", "Cape"), StatusCode::BAD_REQUEST),
        (edit_body("alice", "odd", "Body"), StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        let r = post_edit(&st, &body);
        assert_eq!(r.status, status, "{body}");
        assert!(r.json()["error"].is_string());
    }
}

#[test]
fn session_table_is_a_bounded_lru() {
    let (_d, st) = state();
    let names = SceneConfig::default().catalog.names().to_vec();
    let mut ids = Vec::new();
    'outer: for base in ["alice", "bob", "dave"] {
        for source in ["alice", "bob", "dave"] {
            for n in &names {
                ids.push(
                    post_edit(&st, &edit_body(base, source, n)).json()["session"]
                        .as_str()
                        .unwrap()
                        .to_string(),
                );
                if ids.len() == SESSION_CAPACITY + 1 {
                    break 'outer;
                }
            }
        }
    }
    assert_eq!(ids.len(), SESSION_CAPACITY + 1);
    assert_eq!(
        get(&st, &format!("/render?edit={}&res=8", ids[0])).status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&st, &format!("/render?edit={}&res=8", ids[1])).status,
        StatusCode::OK
    );
}

#[test]
fn session_ids_separate_their_fields() {
    assert_ne!(session_id("ab", "c", "Top"), session_id("a", "bc", "Top"));
    assert_eq!(session_id("a", "b", "Top").len(), 64);
}

#[test]
fn state_from_a_map_matches_directory_loading() {
    let (dir, st) = state();
    let mut map = BTreeMap::new();
    map.insert(
        "alice".to_string(),
        load_scene(dir.path().join("alice.attrscn")).unwrap(),
    );
    let direct = Arc::new(AppState::new(map));
    let uri = "/render?scene=alice&res=16";
    assert_eq!(get(&direct, uri).body, get(&st, uri).body);
}
