//! Start the frame server in-process, then act as a client: load a volume,
//! stream a few progressively refined frames, and shut down.

use std::io::Write;
use std::net::TcpStream;

use serde_json::json;

use oocv::service::protocol::{decode_payload, read_payload, Incoming};
use oocv::service::{encode_message, start_server, SessionConfig, WireMessage};

fn send(stream: &mut TcpStream, v: serde_json::Value) -> std::io::Result<()> {
    stream.write_all(&encode_message(&WireMessage::Control(v)))
}

fn recv(stream: &mut TcpStream) -> Result<WireMessage, Box<dyn std::error::Error>> {
    match read_payload(stream)? {
        Some(Incoming::Payload(p)) => Ok(decode_payload(&p)?),
        other => Err(format!("unexpected {other:?}").into()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SessionConfig { width: 96, height: 96, pump_budget: 16, ..Default::default() };
    let server = start_server("127.0.0.1:0", Some("127.0.0.1:0".parse()?), config)?;
    println!("tcp {} / websocket {}", server.local_addr(), server.ws_addr().unwrap());

    let mut c = TcpStream::connect(server.local_addr())?;
    send(&mut c, json!({"cmd": "hello"}))?;
    println!("hello: {}", recv(&mut c)?.as_control().unwrap()["commands"]);
    send(&mut c, json!({"cmd": "load_volume", "procedural": "noise:256:5"}))?;
    println!("loaded: {}", recv(&mut c)?.as_control().unwrap()["meta"]["dims0"]);
    send(&mut c, json!({"cmd": "set_camera", "position": [0, 0, 220], "target": [0, 0, 0]}))?;
    recv(&mut c)?;
    send(&mut c, json!({"cmd": "set_continuous", "on": true, "format": "png"}))?;
    loop {
        match recv(&mut c)? {
            WireMessage::Frame(f) => print!("frame {} ({} png bytes) ", f.frame_id, f.data.len()),
            WireMessage::Control(v) if v["cmd"] == "stats" => {
                println!("fallback {} pending {}", v["fallback_samples"], v["pending_loads"]);
                if v["fallback_samples"] == 0 && v["pending_loads"] == 0 {
                    break;
                }
            }
            WireMessage::Control(v) => println!("{v}"),
        }
    }
    server.shutdown();
    Ok(())
}
