#![allow(dead_code)]

use std::sync::Arc;
use std::thread::JoinHandle;

use remixhub::Config;
use remixhub_core::container::{serialize_project, Asset, AssetKind, Block, Project, Script, Sprite};
use remixhub_core::platform::Platform;
use serde_json::Value;

/// An in-process server on an ephemeral port, stopped on drop.
pub struct TestServer {
    pub base: String,
    pub platform: Arc<Platform>,
    pub dir: tempfile::TempDir,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start() -> Self {
        Self::start_with(|_| {})
    }

    pub fn start_with(tweak: impl FnOnce(&mut Config)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config {
            bind: "127.0.0.1:0".parse().unwrap(),
            data_dir: dir.path().to_path_buf(),
            admin_token: Some("admin-token".into()),
            ..Config::default()
        };
        tweak(&mut config);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let (platform, listener) = runtime.block_on(remixhub::bind(&config)).unwrap();
        let base = format!("http://{}", remixhub::local_addr(&listener));
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let served = platform.clone();
        let max = config.max_body_bytes;
        let thread = std::thread::spawn(move || {
            runtime
                .block_on(remixhub::serve(served, listener, max, async {
                    let _ = rx.await;
                }))
                .unwrap();
        });
        TestServer {
            base,
            platform,
            dir,
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn client(&self) -> Client {
        Client::new(&self.base)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct Resp {
    pub status: u16,
    pub bytes: Vec<u8>,
    pub content_type: Option<String>,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("status {}: not JSON ({e}): {}", self.status, String::from_utf8_lossy(&self.bytes)))
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

pub struct Client {
    http: reqwest::blocking::Client,
    base: String,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client {
            http: reqwest::blocking::Client::new(),
            base: base.to_string(),
        }
    }

    pub fn send(&self, method: &str, path: &str, token: Option<&str>, body: Option<Vec<u8>>) -> Resp {
        let method = reqwest::Method::from_bytes(method.as_bytes()).unwrap();
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        if let Some(b) = body {
            req = req.body(b);
        }
        let resp = req.send().unwrap();
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        Resp {
            status,
            bytes: resp.bytes().unwrap().to_vec(),
            content_type,
        }
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Resp {
        self.send("GET", path, token, None)
    }

    pub fn post_json(&self, path: &str, token: Option<&str>, body: Value) -> Resp {
        self.send("POST", path, token, Some(serde_json::to_vec(&body).unwrap()))
    }

    pub fn post_bytes(&self, path: &str, token: Option<&str>, body: Vec<u8>) -> Resp {
        self.send("POST", path, token, Some(body))
    }

    /// Creates a member and returns their token.
    pub fn signup(&self, name: &str) -> String {
        let r = self.post_json("/api/users", None, serde_json::json!({ "username": name }));
        assert_eq!(r.status, 201, "{}", String::from_utf8_lossy(&r.bytes));
        r.json()["token"].as_str().unwrap().to_string()
    }
}

/// A small project: a cat that moves right when the arrow key is pressed.
pub fn cat_project(author: &str) -> Project {
    let mut p = Project::new("Cat", author);
    let costume = p.add_asset(Asset::new(AssetKind::Image, "image/png", b"\x89PNG cat costume".to_vec()));
    let meow = p.add_asset(Asset::new(AssetKind::Audio, "audio/wav", b"RIFF meow".to_vec()));
    let mut cat = Sprite::new("cat");
    cat.costumes.push(costume);
    cat.sounds.push(meow);
    cat.scripts.push(Script::new(vec![Block::new("whenKeyPressed", ["right arrow"])
        .with_body(Script::new(vec![Block::new("move", ["10"])]))]));
    p.sprites.push(cat);
    p
}

pub fn cat_bytes(author: &str) -> Vec<u8> {
    serialize_project(&cat_project(author)).unwrap()
}
