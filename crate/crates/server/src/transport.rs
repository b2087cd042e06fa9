//! TCP front end. A connection whose first bytes are `GET` is upgraded to a
//! WebSocket with one JSON message per text frame; anything else is treated
//! as newline-delimited JSON. Each connection owns a `LiveSession` running on
//! its own worker thread, so a slow scene load never stalls other clients.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

use crate::session::{LiveSession, LoadedScene, Reply};

/// Accept connections until the listener fails.
pub async fn serve(listener: TcpListener, default_scene: Option<Arc<LoadedScene>>) -> io::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let scene = default_scene.clone();
        tokio::spawn(async move {
            // a broken connection only ends that connection
            let _ = handle_connection(stream, scene).await;
        });
    }
}

/// Bind `addr`, report the bound address, then serve forever on a fresh runtime.
pub fn serve_blocking(
    addr: &str,
    default_scene: Option<Arc<LoadedScene>>,
    on_ready: impl FnOnce(SocketAddr),
) -> io::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = TcpListener::bind(addr).await?;
        on_ready(listener.local_addr()?);
        serve(listener, default_scene).await
    })
}

pub async fn handle_connection(stream: TcpStream, default_scene: Option<Arc<LoadedScene>>) -> io::Result<()> {
    if sniff_http(&stream).await? {
        let ws = tokio_tungstenite::accept_async(stream).await.map_err(io::Error::other)?;
        run_websocket(ws, default_scene).await
    } else {
        run_lines(stream, default_scene).await
    }
}

async fn sniff_http(stream: &TcpStream) -> io::Result<bool> {
    let mut buf = [0u8; 3];
    loop {
        let n = stream.peek(&mut buf).await?;
        if n == 0 || !b"GET".starts_with(&buf[..n]) {
            return Ok(false);
        }
        if n == buf.len() {
            return Ok(true);
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

struct Worker {
    input: std::sync::mpsc::Sender<String>,
    output: mpsc::UnboundedReceiver<Reply>,
}

fn spawn_worker(default_scene: Option<Arc<LoadedScene>>) -> Worker {
    let (in_tx, in_rx) = std::sync::mpsc::channel::<String>();
    let (out_tx, out_rx) = mpsc::unbounded_channel();
    std::thread::spawn(move || {
        let mut session = LiveSession::new(default_scene);
        for line in in_rx {
            let reply = session.handle(&line);
            let close = reply.close;
            if out_tx.send(reply).is_err() || close {
                break;
            }
        }
    });
    Worker {
        input: in_tx,
        output: out_rx,
    }
}

async fn run_lines(stream: TcpStream, default_scene: Option<Arc<LoadedScene>>) -> io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    let Worker { input, mut output } = spawn_worker(default_scene);
    let mut input = Some(input);
    loop {
        tokio::select! {
            line = lines.next_line(), if input.is_some() => match line? {
                Some(l) if l.trim().is_empty() => {}
                Some(l) => {
                    let _ = input.as_ref().unwrap().send(l);
                }
                // drain replies still in flight, then stop
                None => input = None,
            },
            reply = output.recv() => {
                let Some(reply) = reply else { break };
                for m in &reply.messages {
                    let mut text = m.to_line();
                    text.push('\n');
                    write.write_all(text.as_bytes()).await?;
                }
                write.flush().await?;
                if reply.close {
                    break;
                }
            }
        }
    }
    write.shutdown().await
}

async fn run_websocket(
    ws: tokio_tungstenite::WebSocketStream<TcpStream>,
    default_scene: Option<Arc<LoadedScene>>,
) -> io::Result<()> {
    let (mut sink, mut frames) = ws.split();
    let Worker { input, mut output } = spawn_worker(default_scene);
    let mut input = Some(input);
    loop {
        tokio::select! {
            frame = frames.next(), if input.is_some() => match frame {
                Some(Ok(Message::Text(t))) => {
                    let _ = input.as_ref().unwrap().send(t.to_string());
                }
                Some(Ok(Message::Binary(b))) => {
                    let _ = input.as_ref().unwrap().send(String::from_utf8_lossy(&b).into_owned());
                }
                Some(Ok(Message::Close(_))) | None => input = None,
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(io::Error::other(e)),
            },
            reply = output.recv() => {
                let Some(reply) = reply else { break };
                for m in &reply.messages {
                    sink.send(Message::text(m.to_line())).await.map_err(io::Error::other)?;
                }
                if reply.close {
                    break;
                }
            }
        }
    }
    let _ = sink.send(Message::Close(None)).await;
    Ok(())
}
