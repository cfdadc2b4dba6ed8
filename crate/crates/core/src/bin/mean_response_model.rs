//! Reference external response model: answers every request with the mean
//! pixel value and its gradient.
//!
//! Flags for exercising failure handling:
//! `--nan` replies with a NaN response, `--delay-ms N` sleeps before each
//! reply, `--truncate` writes half a reply and exits.

use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::time::Duration;

use mei3d::render::Image;
use mei3d::response::{encode_response, read_request, write_response};

fn main() -> ExitCode {
    let mut nan = false;
    let mut truncate = false;
    let mut delay = Duration::ZERO;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--nan" => nan = true,
            "--truncate" => truncate = true,
            "--delay-ms" => match args.next().and_then(|v| v.parse::<u64>().ok()) {
                Some(ms) => delay = Duration::from_millis(ms),
                None => {
                    eprintln!("--delay-ms needs a non-negative integer");
                    return ExitCode::from(2);
                }
            },
            other => {
                eprintln!("unknown argument {other}");
                return ExitCode::from(2);
            }
        }
    }
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    loop {
        let img = match read_request(&mut input) {
            Ok(Some(img)) => img,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::FAILURE;
            }
        };
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let n = img.len().max(1) as f64;
        let grad = Image::filled(img.width(), img.height(), 1.0 / n);
        let response = if nan { f64::NAN } else { img.mean() };
        if truncate {
            let bytes = encode_response(response, &grad);
            let _ = output.write_all(&bytes[..bytes.len() / 2]);
            let _ = output.flush();
            return ExitCode::FAILURE;
        }
        if let Err(e) = write_response(&mut output, response, &grad) {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    }
}
