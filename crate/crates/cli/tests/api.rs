mod common;

use common::{fixture_store, get, post, serve};
use serde_json::{json, Value};
use workbench_cli::api::{ServeConfig, ServeError, Server};
use workbench_cli::{ame_text, echo_text, export_text, Format, Table};
use workbench_core::analysis::{AnalysisOptions, Subject};
use workbench_core::domain::PromptSetting;
use workbench_core::store::{cell_counts, Store};

fn table3_count(csv: &str, code: &str, setting: &str) -> u32 {
    csv.lines()
        .find(|l| l.starts_with(&format!("{code},{setting},")))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn runs_list_has_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    fixture_store(dir.path(), false);
    let srv = serve(dir.path());
    let (status, body) = get(&srv.url("/api/runs"));
    assert_eq!(status, 200);
    let runs: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(runs.len(), 90);
    let (_, body) = get(&srv.url("/api/runs?setting=4-step/Toward"));
    let toward: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(toward.len(), 15);
    assert!(toward.iter().all(|r| r["setting"] == "4-step/Toward"));
    let (status, _) = get(&srv.url("/api/runs?setting=5-step/Sideways"));
    assert_eq!(status, 400);
}

#[test]
fn hypotheses_carry_marker_highlights() {
    let dir = tempfile::tempdir().unwrap();
    fixture_store(dir.path(), false);
    let srv = serve(dir.path());
    let (_, body) = get(&srv.url("/api/runs"));
    let runs: Vec<Value> = serde_json::from_str(&body).unwrap();
    let mut found_reiter = false;
    for r in &runs {
        let (status, body) = get(&srv.url(&format!("/api/runs/{}/hypotheses", r["run_id"].as_str().unwrap())));
        assert_eq!(status, 200);
        let units: Vec<Value> = serde_json::from_str(&body).unwrap();
        assert_eq!(units.len(), 5);
        for u in &units {
            for h in u["highlights"].as_array().unwrap() {
                let text: Vec<u16> = u[h["field"].as_str().unwrap()].as_str().unwrap().encode_utf16().collect();
                let span = String::from_utf16(&text[h["start"].as_u64().unwrap() as usize..h["end"].as_u64().unwrap() as usize]).unwrap();
                if h["marker"] == "reiter" {
                    assert!(span.to_lowercase().starts_with("reiter"));
                    found_reiter = true;
                }
            }
        }
    }
    assert!(found_reiter);
    let (status, body) = get(&srv.url("/api/runs/no-such-run/hypotheses"));
    assert_eq!(status, 404);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"], "UnknownRun");
}

#[test]
fn get_endpoints_do_not_mutate_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path(), true);
    let before = store.digest().unwrap();
    let srv = serve(dir.path());
    for path in [
        "/api/runs",
        "/api/runs/s2-01-4step-toward-001/hypotheses",
        "/api/codebook",
        "/api/codebook?all=true",
        "/api/assignments",
        "/api/assignments?log=true",
        "/api/analysis/ame?family=4step",
        "/api/analysis/ame?family=toward&subject=markers",
        "/api/analysis/ame?family=away&raw=true&format=csv",
        "/api/analysis/echo",
        "/api/analysis/report",
        "/api/export/table3",
    ] {
        let (status, _) = get(&srv.url(path));
        assert_eq!(status, 200, "{path}");
    }
    srv.stop();
    assert_eq!(Store::open(dir.path()).unwrap().digest().unwrap(), before);
}

#[test]
fn analysis_endpoints_match_library_emission() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path(), true);
    let opts = AnalysisOptions::default();
    let expected = [
        ("/api/analysis/ame?family=toward", ame_text(&store, "toward", Subject::Codes, false, &opts, Format::Json)),
        ("/api/analysis/ame?family=4step&format=csv", ame_text(&store, "4step", Subject::Codes, false, &opts, Format::Csv)),
        ("/api/analysis/ame?family=away&subject=markers&raw=true", ame_text(&store, "away", Subject::Markers, true, &opts, Format::Json)),
        ("/api/analysis/echo", echo_text(&store, &opts)),
        ("/api/export/table3", export_text(&store, Table::Table3)),
    ];
    let srv = serve(dir.path());
    for (path, want) in expected {
        let (status, body) = get(&srv.url(path));
        assert_eq!(status, 200);
        assert_eq!(body, want.unwrap(), "{path}");
    }
    let (status, body) = get(&srv.url("/api/analysis/ame?family=sideways"));
    assert_eq!(status, 400);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"], "UnknownFamily");
}

#[test]
fn analysis_without_codes_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    fixture_store(dir.path(), false);
    let srv = serve(dir.path());
    let (status, body) = get(&srv.url("/api/analysis/ame?family=toward"));
    assert_eq!(status, 404);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"], "NoMatrix");
    // The marker study only needs texts.
    assert_eq!(get(&srv.url("/api/analysis/echo")).0, 200);
    let (_, body) = get(&srv.url("/api/assignments"));
    let grid: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(grid["rows"].as_array().unwrap().len(), 450);
    assert_eq!(grid["columns"].as_array().unwrap().len(), 21);
}

#[test]
fn assignments_validate_and_shift_counts_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path(), true);
    let unit = "s2-01-4step-toward-001-h1";
    let current = store.matrix().unwrap();
    let row = current.rows.iter().position(|r| r.hypothesis_id == unit).unwrap();
    let col = current.column_index("Teach").unwrap();
    let old = current.cells[row][col];
    let srv = serve(dir.path());
    let before = get(&srv.url("/api/export/table3")).1;

    let (status, body) = post(&srv.url("/api/assignments"), json!({ "hypothesis_id": unit, "code": "Teach", "value": 2 }));
    assert_eq!(status, 422);
    assert_eq!(body["error"], "NonBinaryCell");
    assert_eq!(body["value"], "2");

    let (status, body) = post(
        &srv.url("/api/assignments"),
        json!({ "hypothesis_id": unit, "code": "Teach", "value": 1 - old, "codebook_version": 1 }),
    );
    assert_eq!(status, 201, "{body}");
    let after = get(&srv.url("/api/export/table3")).1;
    let (b, a) = (table3_count(&before, "Teach", "4-step/Toward"), table3_count(&after, "Teach", "4-step/Toward"));
    assert_eq!(i64::from(a) - i64::from(b), if old == 0 { 1 } else { -1 });

    let (status, body) = post(&srv.url("/api/assignments"), json!({ "hypothesis_id": unit, "code": "Nope", "value": "1" }));
    assert_eq!(status, 422);
    assert_eq!(body["error"], "UnknownCode");
    let (status, _) = post(&srv.url("/api/assignments"), json!({ "hypothesis_id": "x-h1", "code": "Teach", "value": "1" }));
    assert_eq!(status, 404);
}

#[test]
fn codebook_versions_and_renames() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path(), true);
    let agile_before = cell_counts(&store.matrix().unwrap(), "Agile").unwrap();
    let srv = serve(dir.path());

    let (status, book) = post(&srv.url("/api/codebook"), json!({ "op": "add", "name": "Hedge", "description": "Hedged attribution" }));
    assert_eq!(status, 201);
    assert_eq!(book["version"], 2);
    assert_eq!(book["codes"].as_array().unwrap().len(), 22);
    let (_, grid) = get(&srv.url("/api/assignments"));
    assert_eq!(serde_json::from_str::<Value>(&grid).unwrap()["columns"].as_array().unwrap().len(), 22);

    let (status, body) = post(
        &srv.url("/api/assignments"),
        json!({ "hypothesis_id": "s2-01-4step-toward-001-h1", "code": "Hedge", "value": 1, "codebook_version": 1 }),
    );
    assert_eq!(status, 409);
    assert_eq!(body["error"], "StaleCodebook");

    let (status, body) = post(&srv.url("/api/codebook"), json!({ "op": "rename", "from": "Agile", "to": "Canon" }));
    assert_eq!(status, 409);
    assert_eq!(body["error"], "InvalidCodebook");

    let (status, book) = post(&srv.url("/api/codebook"), json!({ "op": "rename", "from": "Agile", "to": "Flex" }));
    assert_eq!(status, 201);
    assert_eq!(book["version"], 3);
    srv.stop();

    let store = Store::open(dir.path()).unwrap();
    let m = store.matrix().unwrap();
    assert!(m.column_index("Agile").is_none());
    let flex = cell_counts(&m, "Flex").unwrap();
    for s in PromptSetting::ALL {
        assert_eq!(flex.get(s).count, agile_before.get(s).count);
    }
    // Stored events keep the version they were made under.
    assert!(store.assignments().unwrap().iter().all(|a| a.codebook_version == 1));
}

#[test]
fn serve_reports_busy_port_and_locked_store() {
    let dir = tempfile::tempdir().unwrap();
    fixture_store(dir.path(), false);
    let srv = serve(dir.path());
    let rt = tokio::runtime::Runtime::new().unwrap();

    let other = tempfile::tempdir().unwrap();
    let busy = rt.block_on(Server::bind(ServeConfig {
        addr: srv.addr,
        store: other.path().to_path_buf(),
        options: AnalysisOptions::default(),
        assets: None,
    }));
    assert!(matches!(busy, Err(ServeError::PortBusy(p)) if p == srv.addr.port()));

    let locked = rt.block_on(Server::bind(ServeConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        store: dir.path().to_path_buf(),
        options: AnalysisOptions::default(),
        assets: None,
    }));
    assert!(matches!(locked, Err(ServeError::StoreLocked(_))));

    srv.stop();
    // The lock goes with the server.
    let again = rt.block_on(Server::bind(ServeConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        store: dir.path().to_path_buf(),
        options: AnalysisOptions::default(),
        assets: None,
    }));
    assert!(again.is_ok());
}

#[test]
fn shutdown_waits_for_in_flight_writes() {
    let dir = tempfile::tempdir().unwrap();
    fixture_store(dir.path(), true);
    let srv = serve(dir.path());
    let url = srv.url("/api/assignments");
    let writers: Vec<_> = (1..=5)
        .map(|i| {
            let url = url.clone();
            std::thread::spawn(move || {
                post(&url, json!({ "hypothesis_id": format!("s2-01-1step-away-005-h{i}"), "code": "Test", "value": 1 })).0
            })
        })
        .collect();
    let statuses: Vec<u16> = writers.into_iter().map(|w| w.join().unwrap()).collect();
    srv.stop();
    assert!(statuses.iter().all(|s| *s == 201));
    let m = Store::open(dir.path()).unwrap().matrix().unwrap();
    let col = m.column_index("Test").unwrap();
    for i in 1..=5 {
        let row = m.rows.iter().position(|r| r.hypothesis_id == format!("s2-01-1step-away-005-h{i}")).unwrap();
        assert_eq!(m.cells[row][col], 1);
    }
}
