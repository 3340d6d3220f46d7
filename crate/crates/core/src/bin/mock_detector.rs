//! Reference child process for the JSON-lines detector protocol, with fault
//! injection for tests. Speaks the wire format directly (hand-built JSON) so
//! it stays independent of the library's serializers.
//!
//! Flags:
//!   --boxes "x,y,w,h,score,class;…"  respond with these detections
//!   --echo-dims                      respond with one box sized from the request
//!   --check-image                    decode the image and report its true size
//!   --garbage-first                  emit one malformed line before the first reply
//!   --wrong-id-first                 emit a mis-addressed reply before the first real one
//!   --die-after N                    exit(1) when request N+1 arrives
//!   --silent                         consume requests, never reply
//!   --sleep-ms N                     delay each reply by N ms

use std::io::{BufRead, Write};

struct Options {
    boxes: Vec<(f64, f64, f64, f64, f64, u64)>,
    echo_dims: bool,
    check_image: bool,
    garbage_first: bool,
    wrong_id_first: bool,
    die_after: Option<u64>,
    silent: bool,
    sleep_ms: u64,
}

fn parse_options() -> Options {
    let mut opts = Options {
        boxes: Vec::new(),
        echo_dims: false,
        check_image: false,
        garbage_first: false,
        wrong_id_first: false,
        die_after: None,
        silent: false,
        sleep_ms: 0,
    };
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--boxes" => {
                let spec = args.next().expect("--boxes needs a value");
                for entry in spec.split(';').filter(|s| !s.is_empty()) {
                    let f: Vec<&str> = entry.split(',').collect();
                    assert_eq!(f.len(), 6, "box spec is x,y,w,h,score,class");
                    opts.boxes.push((
                        f[0].parse().unwrap(),
                        f[1].parse().unwrap(),
                        f[2].parse().unwrap(),
                        f[3].parse().unwrap(),
                        f[4].parse().unwrap(),
                        f[5].parse().unwrap(),
                    ));
                }
            }
            "--echo-dims" => opts.echo_dims = true,
            "--check-image" => opts.check_image = true,
            "--garbage-first" => opts.garbage_first = true,
            "--wrong-id-first" => opts.wrong_id_first = true,
            "--die-after" => {
                opts.die_after = Some(args.next().expect("--die-after needs a value").parse().unwrap())
            }
            "--silent" => opts.silent = true,
            "--sleep-ms" => {
                opts.sleep_ms = args.next().expect("--sleep-ms needs a value").parse().unwrap()
            }
            other => panic!("unknown flag {other}"),
        }
    }
    opts
}

fn box_json(b: &(f64, f64, f64, f64, f64, u64)) -> String {
    format!(
        "{{\"x\":{},\"y\":{},\"w\":{},\"h\":{},\"score\":{},\"class_id\":{}}}",
        b.0, b.1, b.2, b.3, b.4, b.5
    )
}

fn decode_request_image(v: &serde_json::Value) -> Option<(u32, u32)> {
    if let Some(path) = v["image_path"].as_str() {
        return image::open(path).ok().map(|i| (i.width(), i.height()));
    }
    if let Some(b64) = v["image_b64"].as_str() {
        use base64::Engine;
        let bytes = base64::engine::general_purpose::STANDARD.decode(b64).ok()?;
        return image::load_from_memory(&bytes).ok().map(|i| (i.width(), i.height()));
    }
    None
}

fn main() {
    let opts = parse_options();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut served = 0u64;
    let mut first = true;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let Ok(v) = serde_json::from_str::<serde_json::Value>(&line) else { continue };
        let id = v["id"].as_u64().unwrap_or(0);
        if let Some(limit) = opts.die_after {
            if served >= limit {
                std::process::exit(1);
            }
        }
        if opts.silent {
            continue;
        }
        if opts.sleep_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(opts.sleep_ms));
        }
        if first && opts.garbage_first {
            writeln!(out, "this line is not a protocol frame").unwrap();
        }
        if first && opts.wrong_id_first {
            writeln!(out, "{{\"id\":999999,\"detections\":[]}}").unwrap();
        }
        first = false;
        let boxes: Vec<String> = if opts.check_image {
            match decode_request_image(&v) {
                Some((w, h)) => vec![box_json(&(0.0, 0.0, w as f64, h as f64, 1.0, 0))],
                None => Vec::new(),
            }
        } else if opts.echo_dims {
            let w = v["width"].as_u64().unwrap_or(0) as f64;
            let h = v["height"].as_u64().unwrap_or(0) as f64;
            vec![box_json(&(0.0, 0.0, w / 2.0, h / 2.0, 0.5, 0))]
        } else {
            opts.boxes.iter().map(box_json).collect()
        };
        writeln!(out, "{{\"id\":{},\"detections\":[{}]}}", id, boxes.join(",")).unwrap();
        out.flush().unwrap();
        served += 1;
    }
}
