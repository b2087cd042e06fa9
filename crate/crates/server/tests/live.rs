use std::sync::{Arc, OnceLock};
use std::time::Duration;

use capascan_core::electrodes::ElectrodeAssembly;
use capascan_core::imaging;
use capascan_core::io;
use capascan_core::scan::{run_scan, ScanMode, ScanPath};
use capascan_core::scene::{Material, Scene};
use capascan_core::sensor::{ConverterConfig, EncoderModel};
use capascan_server::protocol::*;
use capascan_server::session::LIVE_Y_PITCH_MM;
use capascan_server::{serve, LiveSession, LoadedScene, Phase};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

const TD: f64 = 11.486;

fn small_scene() -> Arc<LoadedScene> {
    static CELL: OnceLock<Arc<LoadedScene>> = OnceLock::new();
    CELL.get_or_init(|| {
        let scene = Scene::slab([200.0, 100.0, 30.0], 2.0, Material::plywood(), 12.0);
        let asm = ElectrodeAssembly::lookup("comb_default").unwrap();
        Arc::new(LoadedScene::build(scene, asm, Default::default()).unwrap())
    })
    .clone()
}

fn send(s: &mut LiveSession, v: Value) -> Vec<ServerMessage> {
    let r = s.handle(&v.to_string());
    assert!(!r.close);
    r.messages
}

fn samples(msgs: &[ServerMessage]) -> Vec<u32> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Sample { tick, .. } => Some(*tick),
            _ => None,
        })
        .collect()
}

fn error_code(msgs: &[ServerMessage]) -> Option<ErrorCode> {
    msgs.iter().find_map(|m| match m {
        ServerMessage::Error { code, .. } => Some(*code),
        _ => None,
    })
}

fn begin(s: &mut LiveSession, origin: [f64; 2]) -> Vec<ServerMessage> {
    send(s, json!({"type": "begin_line", "origin": origin, "direction": [1.0, 0.0]}))
}

fn move_to(s: &mut LiveSession, p: [f64; 2]) -> Vec<ServerMessage> {
    send(s, json!({"type": "move_head", "x": p[0], "y": p[1]}))
}

#[test]
fn begin_line_samples_tick_zero() {
    let mut s = LiveSession::new(Some(small_scene()));
    let out = begin(&mut s, [60.0, 50.0]);
    assert!(matches!(out[0], ServerMessage::LineOk { line_id: 0 }));
    assert_eq!(samples(&out), vec![0]);
    assert_eq!(s.phase(), Phase::Scanning);
}

#[test]
fn moving_23_mm_along_the_line_emits_two_samples() {
    let mut s = LiveSession::new(Some(small_scene()));
    begin(&mut s, [60.0, 50.0]);
    assert_eq!(samples(&move_to(&mut s, [83.0, 50.0])), vec![1, 2]);
}

#[test]
fn perpendicular_motion_emits_nothing() {
    let mut s = LiveSession::new(Some(small_scene()));
    begin(&mut s, [60.0, 50.0]);
    assert!(samples(&move_to(&mut s, [60.0, 70.0])).is_empty());
    assert!(samples(&move_to(&mut s, [60.0, 30.0])).is_empty());
}

#[test]
fn backward_motion_emits_nothing_until_the_head_passes_its_furthest_point() {
    let mut s = LiveSession::new(Some(small_scene()));
    begin(&mut s, [60.0, 50.0]);
    assert_eq!(samples(&move_to(&mut s, [60.0 + 2.5 * TD, 50.0])), vec![1, 2]);
    assert!(samples(&move_to(&mut s, [60.0 + 0.5 * TD, 50.0])).is_empty());
    assert!(samples(&move_to(&mut s, [60.0 + 2.9 * TD, 50.0])).is_empty());
    assert_eq!(samples(&move_to(&mut s, [60.0 + 3.1 * TD, 50.0])), vec![3]);
}

#[test]
fn positions_past_the_reachable_area_are_clamped_and_reported() {
    let loaded = small_scene();
    let b = loaded.head_bounds_mm;
    let mut s = LiveSession::new(Some(loaded));
    let out = move_to(&mut s, [1000.0, -5.0]);
    assert_eq!(error_code(&out), Some(ErrorCode::OutOfBounds));
    assert_eq!(s.head_mm(), Some([b[2], b[1]]));

    let out = begin(&mut s, [b[0] - 10.0, 50.0]);
    assert_eq!(error_code(&out), Some(ErrorCode::OutOfBounds));
    assert_eq!(samples(&out), vec![0]);
    let out = move_to(&mut s, [b[2] + 50.0, 50.0]);
    assert_eq!(error_code(&out), Some(ErrorCode::OutOfBounds));
    let n = ((b[2] - b[0]) / TD).floor() as u32;
    assert_eq!(*samples(&out).last().unwrap(), n);
}

#[test]
fn protocol_errors_leave_the_session_usable() {
    let mut s = LiveSession::new(None);
    assert_eq!(error_code(&begin(&mut s, [0.0, 0.0])), Some(ErrorCode::NoScene));
    assert_eq!(error_code(&send(&mut s, json!({"type": "end_line"}))), Some(ErrorCode::NoActiveLine));
    assert_eq!(error_code(&send(&mut s, json!({"type": "detect"}))), Some(ErrorCode::NoImage));
    assert_eq!(error_code(&send(&mut s, json!({"type": "export"}))), Some(ErrorCode::NoImage));
    assert_eq!(error_code(&s.handle("{not json").messages), Some(ErrorCode::Malformed));
    assert_eq!(
        error_code(&send(&mut s, json!({"type": "move_head", "x": 1.0}))),
        Some(ErrorCode::Malformed)
    );
    assert_eq!(
        error_code(&send(&mut s, json!({"type": "teleport"}))),
        Some(ErrorCode::Malformed)
    );
    let out = send(&mut s, json!({"type": "hello", "protocol_version": PROTOCOL_VERSION}));
    assert!(matches!(&out[0], ServerMessage::Hello { scene: None, .. }));

    let mut s = LiveSession::new(Some(small_scene()));
    begin(&mut s, [60.0, 50.0]);
    assert_eq!(error_code(&begin(&mut s, [60.0, 60.0])), Some(ErrorCode::LineActive));
    assert_eq!(
        error_code(&send(&mut s, json!({"type": "end_line"}))),
        None
    );
    assert_eq!(
        error_code(&send(&mut s, json!({"type": "begin_line", "origin": [60.0, 50.0], "direction": [0.0, 0.0]}))),
        Some(ErrorCode::InvalidParameter)
    );
}

#[test]
fn version_mismatch_closes() {
    let mut s = LiveSession::new(None);
    let r = s.handle(&json!({"type": "hello", "protocol_version": 99}).to_string());
    assert!(r.close);
    assert_eq!(error_code(&r.messages), Some(ErrorCode::VersionMismatch));
}

#[test]
fn invalid_scene_lists_violations() {
    let mut s = LiveSession::new(None);
    let mut scene = serde_json::to_value(Scene::slab([100.0, 100.0, 30.0], 2.0, Material::plywood(), 12.0)).unwrap();
    scene["voxel_size_mm"] = json!(-1.0);
    let out = send(&mut s, json!({"type": "load_scene", "scene": scene}));
    match &out[0] {
        ServerMessage::SceneError { violations } => {
            assert!(violations.iter().any(|v| v.field.contains("voxel_size_mm")), "{violations:?}")
        }
        other => panic!("{other:?}"),
    }
    let out = send(&mut s, json!({"type": "load_scene", "preset": "no_such_preset"}));
    assert!(matches!(&out[0], ServerMessage::SceneError { .. }));
    let out = send(&mut s, json!({"type": "load_scene"}));
    assert!(matches!(&out[0], ServerMessage::SceneError { .. }));
}

#[test]
fn image_updates_carry_changed_rows() {
    let mut s = LiveSession::new(Some(small_scene()));
    for j in 0..3 {
        let y = 30.0 + 20.0 * j as f64;
        begin(&mut s, [40.0, y]);
        move_to(&mut s, [40.0 + 8.2 * TD, y]);
        let out = send(&mut s, json!({"type": "end_line"}));
        assert!(matches!(out[0], ServerMessage::LineDone { line_id, n_samples: 9 } if line_id == j));
        match &out[1] {
            ServerMessage::ImageUpdate { rows_total, cols, rows, .. } => {
                assert_eq!(*cols, 9);
                assert_eq!(*rows_total, 1 + (20.0 * j as f64 / LIVE_Y_PITCH_MM) as usize);
                // the shape grows with every line so every row is resent
                assert_eq!(rows.len(), *rows_total);
            }
            other => panic!("{other:?}"),
        }
    }
    assert_eq!(s.phase(), Phase::Finished);
    assert_eq!(s.completed_lines(), 3);
    let out = send(&mut s, json!({"type": "detect", "k_mad": 4.0}));
    assert!(matches!(&out[0], ServerMessage::Detections { .. }));
    let out = send(&mut s, json!({"type": "detect", "k_mad": -1.0}));
    assert_eq!(error_code(&out), Some(ErrorCode::InvalidParameter));
}

/// Drive every fig9 scan line through the live protocol.
fn replay_fig9(s: &mut LiveSession, conv: &ConverterConfig) -> Vec<ServerMessage> {
    let path = ScanPath::preset("fig9").unwrap();
    let n = path.samples_per_line(&EncoderModel::default());
    let mut log = Vec::new();
    log.extend(send(
        s,
        json!({"type": "load_scene", "preset": "fig9_wall_stud", "converter": serde_json::to_value(conv).unwrap()}),
    ));
    for j in 0..path.num_lines {
        let o = path.head_mm(j, 0.0);
        log.extend(send(s, json!({"type": "begin_line", "origin": o, "direction": path.direction})));
        // uneven strides, including a stall and a short backtrack
        let mut along: f64 = 0.0;
        let end = (n - 1) as f64 * TD + 1.0;
        let mut k = 0;
        while along < end {
            along = (along + [7.3, 17.9, 0.0, 31.0, -4.0][k % 5]).min(end);
            k += 1;
            log.extend(send(s, json!({"type": "move_head", "x": path.head_mm(j, along)[0], "y": path.head_mm(j, along)[1]})));
        }
        log.extend(send(s, json!({"type": "end_line"})));
    }
    log
}

#[test]
fn live_fig9_replay_matches_batch_kernel_scan() {
    let conv = ConverterConfig {
        noise_sigma_pf: 0.001,
        rng_seed: 21,
        ..Default::default()
    };
    let scene = Scene::preset("fig9_wall_stud").unwrap();
    let asm = ElectrodeAssembly::lookup("comb_default").unwrap();
    let path = ScanPath::preset("fig9").unwrap();
    let batch = run_scan(&scene, &asm, &path, &EncoderModel::default(), &conv, ScanMode::Kernel, &Default::default()).unwrap();

    let mut s = LiveSession::new(None);
    let log = replay_fig9(&mut s, &conv);
    assert_eq!(error_code(&log), None);
    let live = s.session(false).unwrap();
    assert_eq!(live.lines.len(), batch.lines.len());
    for (a, b) in live.lines.iter().zip(&batch.lines) {
        assert!((a.offset_mm - b.offset_mm).abs() < 1e-9);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.tick, y.tick);
            assert!((x.along_track_mm - y.along_track_mm).abs() < 1e-9);
            assert!((x.calibrated_pf - y.calibrated_pf).abs() < 1e-6, "{x:?} vs {y:?}");
        }
    }
    let img_batch = imaging::assemble(&batch, LIVE_Y_PITCH_MM).unwrap();
    let img_live = s.image().unwrap();
    assert_eq!((img_live.rows, img_live.cols), (img_batch.rows, img_batch.cols));
    for (a, b) in img_live.values.iter().zip(&img_batch.values) {
        assert!((a - b).abs() < 1e-6);
    }

    // the exported document parses back to the same lines
    let out = send(&mut s, json!({"type": "export"}));
    let ServerMessage::Session { document } = &out[0] else { panic!("{out:?}") };
    let back = io::session_from_str(document).unwrap();
    assert_eq!(back.lines, live.lines);
}

#[test]
fn identical_message_logs_give_identical_output() {
    let conv = ConverterConfig {
        noise_sigma_pf: 0.002,
        rng_seed: 3,
        ..Default::default()
    };
    let text = |log: Vec<ServerMessage>| log.iter().map(|m| m.to_line()).collect::<Vec<_>>();
    let a = text(replay_fig9(&mut LiveSession::new(None), &conv));
    let b = text(replay_fig9(&mut LiveSession::new(None), &conv));
    assert_eq!(a, b);
}

async fn start_server() -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, Some(small_scene())));
    addr
}

struct LineClient {
    lines: tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>,
    write: tokio::net::tcp::OwnedWriteHalf,
}

impl LineClient {
    async fn connect(addr: std::net::SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        LineClient {
            lines: BufReader::new(r).lines(),
            write: w,
        }
    }

    async fn send(&mut self, v: &str) {
        self.write.write_all(format!("{v}\n").as_bytes()).await.unwrap();
    }

    async fn recv(&mut self) -> Option<Value> {
        let line = tokio::time::timeout(Duration::from_secs(30), self.lines.next_line())
            .await
            .expect("server reply in time")
            .unwrap()?;
        Some(serde_json::from_str(&line).unwrap())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn tcp_lines_transport() {
    let addr = start_server().await;
    let mut c = LineClient::connect(addr).await;
    c.send(r#"{"type":"hello","protocol_version":1}"#).await;
    let hello = c.recv().await.unwrap();
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["protocol_versions"], json!([1]));
    assert!(hello["scene"]["head_bounds_mm"].is_array());

    c.send("garbage").await;
    assert_eq!(c.recv().await.unwrap()["code"], "malformed");

    c.send(r#"{"type":"begin_line","origin":[60,50],"direction":[1,0]}"#).await;
    assert_eq!(c.recv().await.unwrap()["type"], "line_ok");
    let s0 = c.recv().await.unwrap();
    assert_eq!(s0["type"], "sample");
    assert_eq!(s0["tick"], 0);
    assert!(s0["calibrated_pF"].as_f64().unwrap() > 0.0);

    c.send(r#"{"type":"hello","protocol_version":7}"#).await;
    assert_eq!(c.recv().await.unwrap()["code"], "version_mismatch");
    assert!(c.recv().await.is_none(), "connection closes after a version mismatch");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn connections_are_independent() {
    let addr = start_server().await;
    let mut a = LineClient::connect(addr).await;
    let mut b = LineClient::connect(addr).await;
    a.send(r#"{"type":"begin_line","origin":[60,50],"direction":[1,0]}"#).await;
    assert_eq!(a.recv().await.unwrap()["line_id"], 0);
    a.recv().await.unwrap();
    // b has no open line even though a does
    b.send(r#"{"type":"end_line"}"#).await;
    assert_eq!(b.recv().await.unwrap()["code"], "no_active_line");
    b.send(r#"{"type":"begin_line","origin":[60,50],"direction":[1,0]}"#).await;
    assert_eq!(b.recv().await.unwrap()["line_id"], 0);
    assert_eq!(b.recv().await.unwrap()["tick"], 0);
    a.send(r#"{"type":"end_line"}"#).await;
    assert_eq!(a.recv().await.unwrap()["type"], "line_done");
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

async fn next(ws: &mut Ws) -> Value {
    loop {
        match tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap().unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("{other:?}"),
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_transport() {
    let addr = start_server().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/live")).await.unwrap();
    ws.send(Message::text(r#"{"type":"hello","protocol_version":1}"#)).await.unwrap();
    assert_eq!(next(&mut ws).await["type"], "hello");
    ws.send(Message::text(r#"{"type":"begin_line","origin":[60,50],"direction":[1,0]}"#)).await.unwrap();
    assert_eq!(next(&mut ws).await["type"], "line_ok");
    assert_eq!(next(&mut ws).await["tick"], 0);
    ws.send(Message::text(r#"{"type":"move_head","x":83,"y":50}"#)).await.unwrap();
    assert_eq!(next(&mut ws).await["tick"], 1);
    assert_eq!(next(&mut ws).await["tick"], 2);
    ws.send(Message::text(r#"{"type":"end_line"}"#)).await.unwrap();
    assert_eq!(next(&mut ws).await["n_samples"], 3);
    assert_eq!(next(&mut ws).await["type"], "image_update");
    ws.close(None).await.unwrap();
}
