//! A local OpenAI-compatible stub. Each accepted connection consumes the next
//! scripted reply and records the JSON request body.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Clone, Debug)]
pub enum Canned {
    /// A chat completion whose message content is this text.
    Chat(String),
    Embedding(Vec<f32>),
    Status(u16, String),
    /// Wait, then send the inner reply (usually to a client that has given up).
    Stall(Duration, Box<Canned>),
}

pub struct Stub {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Value>>>,
}

impl Stub {
    pub fn bodies(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    /// The prompt text of every chat request so far.
    pub fn prompts(&self) -> Vec<String> {
        self.bodies()
            .iter()
            .filter_map(|b| b.pointer("/messages/0/content/0/text").and_then(Value::as_str))
            .map(str::to_string)
            .collect()
    }
}

pub fn serve(script: Vec<Canned>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let queue = Arc::new(Mutex::new(VecDeque::from(script)));
    let seen = requests.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let reply = queue.lock().unwrap().pop_front();
            let seen = seen.clone();
            thread::spawn(move || handle(stream, reply, &seen));
        }
    });
    Stub { url, requests }
}

fn handle(stream: TcpStream, reply: Option<Canned>, seen: &Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    seen.lock().unwrap().push(serde_json::from_slice(&body).unwrap_or(Value::Null));
    let reply = reply.unwrap_or(Canned::Status(500, "stub script exhausted".into()));
    respond(stream, reply);
}

fn respond(mut stream: TcpStream, reply: Canned) {
    let (status, body) = match reply {
        Canned::Chat(text) => (200, json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()),
        Canned::Embedding(v) => (200, json!({"data": [{"embedding": v}]}).to_string()),
        Canned::Status(code, text) => (code, text),
        Canned::Stall(pause, inner) => {
            thread::sleep(pause);
            return respond(stream, *inner);
        }
    };
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
}
