#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use tokio::sync::oneshot;
use workbench_cli::api::{ServeConfig, Server};
use workbench_cli::{gateway, load_attachments, load_context};
use workbench_core::analysis::AnalysisOptions;
use workbench_core::orchestrator::{run_plan, RunManifest};
use workbench_core::prompt::TemplateSet;
use workbench_core::provider::ProviderMode;
use workbench_core::store::Store;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn manifest() -> RunManifest {
    RunManifest::load(&repo_root().join("plan.cfg")).unwrap()
}

/// A store holding the replayed default plan, optionally with the shipped codes.
pub fn fixture_store(dir: &Path, with_codes: bool) -> Store {
    let m = manifest();
    let plan = run_plan(
        &m,
        &load_context(&m).unwrap(),
        &load_attachments(&m).unwrap(),
        &gateway(&m, Some(ProviderMode::Replay)).unwrap(),
        &TemplateSet::embedded(),
    )
    .unwrap();
    let store = Store::open(dir).unwrap();
    store.record_plan(&plan).unwrap();
    if with_codes {
        let csv = std::fs::read_to_string(repo_root().join("fixtures/codes.csv")).unwrap();
        store.import_code_matrix(&csv).unwrap();
    }
    store
}

pub struct Running {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    /// Signals shutdown and waits for the server to drain.
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn serve(store: &Path) -> Running {
    let config = ServeConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        store: store.to_path_buf(),
        options: AnalysisOptions::default(),
        assets: None,
    };
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let server = Server::bind(config).await.unwrap();
            addr_tx.send(server.local_addr().unwrap()).unwrap();
            server
                .run(async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
        });
    });
    let addr = addr_rx.recv().unwrap();
    Running { addr, stop: Some(stop_tx), thread: Some(thread) }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn get(url: &str) -> (u16, String) {
    let mut r = agent().get(url).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_to_string().unwrap())
}

pub fn post(url: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    let mut r = agent().post(url).send_json(&body).unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap())
}
