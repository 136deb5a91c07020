//! Networked mock of the injection bench: a signal generator feeding a
//! simulated ADC, driven over a small line protocol.
//!
//! Every line is UTF-8 terminated by `\n`; one request is in flight per
//! connection. Commands:
//!
//! | request | reply |
//! |---|---|
//! | `IDN?` | `OK sigstrength-bench 1` |
//! | `FREQ <hz>` | carrier frequency |
//! | `POW <value>DBM` / `POW <value>VPK` | peak level of the transmitted signal |
//! | `AM:DEPTH <0..1>` | modulation depth |
//! | `AM:FREQ <hz>` | frequency of the modulating tone |
//! | `TONE SINE\|EXPSINE\|ZERO` | modulating tone shape |
//! | `SEED <u64>` | noise seed of the next capture |
//! | `OUTP ON\|OFF` | generator output |
//! | `RATE?` | `OK <hz>`, the ADC sampling rate |
//! | `CAPT? <n>` | `OK <n>`, then `n` lines `index,value`, then `END` |
//!
//! Setters reply `OK` or `ERR <reason>`. `RATE?` is an extension so that
//! clients can timestamp captures.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adcmodel::{digitize_pipeline, AdcConfig};
use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::signalgen::{am_modulate, dbm_to_vpk, synthesize, AmSpec, ToneSpec};
use crate::trace::Trace;

pub const IDN: &str = "sigstrength-bench 1";
/// Largest capture a server accepts in one request.
pub const MAX_CAPTURE: usize = 1 << 22;

/// Everything a capture depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPreset {
    pub adc: AdcConfig,
    #[serde(default)]
    pub channel: ChannelModel,
    pub noise: NoiseModel,
    pub tone: ToneSpec,
    pub am: AmSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Digitize `n` ADC samples of the modulated `tone`.
///
/// The analog side runs at [`AdcConfig::simulation_rate`] for the carrier,
/// an integer multiple of the ADC rate, with the sensor signal absent.
/// In-process sweeps and the TCP server both go through this function, which
/// is what makes their outputs bit-identical.
pub fn capture(
    adc: &AdcConfig,
    channel: &ChannelModel,
    noise: &NoiseModel,
    tone: &ToneSpec,
    am: &AmSpec,
    seed: u64,
    n: usize,
) -> Result<Trace> {
    if n < 2 {
        return Err(Error::invalid("capture needs at least two samples"));
    }
    let rate = adc.simulation_rate(am.carrier);
    let per_sample = (rate / adc.f_s).round() as usize;
    let duration = (n * per_sample) as f64 / rate;
    let w = synthesize(tone, rate, duration)?;
    let v = am_modulate(&w, am, rate)?;
    let s = Trace::zeros(v.len(), rate)?;
    let d = digitize_pipeline(adc, channel, &v, &s, noise, seed)?;
    let mut samples = d.volts.into_samples();
    samples.truncate(n);
    Trace::new(samples, adc.f_s)
}

/// Per-connection generator and ADC state.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSession {
    pub adc: AdcConfig,
    pub channel: ChannelModel,
    pub noise: NoiseModel,
    pub tone: ToneSpec,
    pub am: AmSpec,
    pub seed: u64,
    pub output_enabled: bool,
    /// Frequency used when `TONE` switches the waveform shape.
    modulation_freq: f64,
}

/// One protocol reply; `Capture` is written as a header, rows and `END`.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ok(Option<String>),
    Err(String),
    Capture(Vec<f64>),
}

impl Reply {
    fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        match self {
            Reply::Ok(None) => writeln!(out, "OK"),
            Reply::Ok(Some(body)) => writeln!(out, "OK {body}"),
            Reply::Err(reason) => writeln!(out, "ERR {reason}"),
            Reply::Capture(values) => {
                writeln!(out, "OK {}", values.len())?;
                for (i, v) in values.iter().enumerate() {
                    writeln!(out, "{i},{v:?}")?;
                }
                writeln!(out, "END")
            }
        }
    }
}

fn parse_num<T: std::str::FromStr>(arg: Option<&str>) -> std::result::Result<T, Reply> {
    arg.and_then(|a| a.trim().parse().ok())
        .ok_or_else(|| Reply::Err("parse".into()))
}

/// Split `"5DBM"` or `"0.3 VPK"` into value and upper-case unit.
fn parse_power(arg: &str) -> Option<(f64, String)> {
    let arg = arg.trim();
    let split = arg
        .char_indices()
        .find(|(_, c)| c.is_ascii_alphabetic() && *c != 'e' && *c != 'E')
        .map(|(i, _)| i)?;
    let value: f64 = arg[..split].trim().parse().ok()?;
    Some((value, arg[split..].trim().to_ascii_uppercase()))
}

impl BenchSession {
    pub fn new(preset: &BenchPreset) -> Self {
        Self {
            adc: preset.adc.clone(),
            channel: preset.channel.clone(),
            noise: preset.noise.clone(),
            tone: preset.tone.clone(),
            am: preset.am,
            seed: preset.seed,
            output_enabled: false,
            modulation_freq: preset.tone.max_frequency(),
        }
    }

    /// Capture `n` samples with the current settings.
    pub fn capture(&self, n: usize) -> Result<Trace> {
        if !self.output_enabled {
            return Err(Error::invalid("output disabled"));
        }
        capture(
            &self.adc,
            &self.channel,
            &self.noise,
            &self.tone,
            &self.am,
            self.seed,
            n,
        )
    }

    fn set_am(&mut self, am: AmSpec) -> Reply {
        match am.validate() {
            Ok(()) => {
                self.am = am;
                Reply::Ok(None)
            }
            Err(Error::InvalidArgument(msg)) => Reply::Err(msg),
            Err(e) => Reply::Err(e.to_string()),
        }
    }

    /// Execute one request line.
    pub fn handle(&mut self, line: &str) -> Reply {
        let line = line.trim();
        let (cmd, arg) = match line.split_once(char::is_whitespace) {
            Some((c, a)) => (c, Some(a.trim())),
            None => (line, None),
        };
        let cmd = cmd.to_ascii_uppercase();
        let result = (|| -> std::result::Result<Reply, Reply> {
            Ok(match cmd.as_str() {
                "IDN?" => Reply::Ok(Some(IDN.into())),
                "RATE?" => Reply::Ok(Some(format!("{:?}", self.adc.f_s))),
                "FREQ" => {
                    let f: f64 = parse_num(arg)?;
                    self.set_am(AmSpec { carrier: f, ..self.am })
                }
                "POW" => {
                    let (value, unit) = arg.and_then(parse_power).ok_or(Reply::Err("parse".into()))?;
                    let v_pk = match unit.as_str() {
                        "DBM" => dbm_to_vpk(value),
                        "VPK" => value,
                        _ => return Err(Reply::Err("parse".into())),
                    };
                    self.set_am(AmSpec { v_pk, ..self.am })
                }
                "AM:DEPTH" => {
                    let depth: f64 = parse_num(arg)?;
                    self.set_am(AmSpec { depth, ..self.am })
                }
                "AM:FREQ" => {
                    let freq: f64 = parse_num(arg)?;
                    if !(freq.is_finite() && freq >= 0.0) {
                        return Err(Reply::Err(format!("tone frequency must be >= 0, got {freq}")));
                    }
                    self.modulation_freq = freq;
                    self.tone = match &self.tone {
                        ToneSpec::Zero => ToneSpec::Zero,
                        ToneSpec::ExpSine { .. } => ToneSpec::exp_sine(freq, 1.0),
                        _ => ToneSpec::sine(freq, 1.0),
                    };
                    Reply::Ok(None)
                }
                "TONE" => {
                    let kind = arg.ok_or(Reply::Err("parse".into()))?.to_ascii_uppercase();
                    let freq = self.modulation_freq;
                    self.tone = match kind.as_str() {
                        "SINE" => ToneSpec::sine(freq, 1.0),
                        "EXPSINE" => ToneSpec::exp_sine(freq, 1.0),
                        "ZERO" => ToneSpec::Zero,
                        _ => return Err(Reply::Err("parse".into())),
                    };
                    Reply::Ok(None)
                }
                "SEED" => {
                    self.seed = parse_num(arg)?;
                    Reply::Ok(None)
                }
                "OUTP" => {
                    let state = arg.ok_or(Reply::Err("parse".into()))?.to_ascii_uppercase();
                    self.output_enabled = match state.as_str() {
                        "ON" | "1" => true,
                        "OFF" | "0" => false,
                        _ => return Err(Reply::Err("parse".into())),
                    };
                    Reply::Ok(None)
                }
                "CAPT?" => {
                    let n: usize = parse_num(arg)?;
                    if !self.output_enabled {
                        return Err(Reply::Err("output disabled".into()));
                    }
                    if n > MAX_CAPTURE {
                        return Err(Reply::Err(format!("capture larger than {MAX_CAPTURE}")));
                    }
                    match self.capture(n) {
                        Ok(t) => Reply::Capture(t.into_samples()),
                        Err(e) => Reply::Err(e.to_string()),
                    }
                }
                "" => Reply::Err("parse".into()),
                _ => Reply::Err("unknown command".into()),
            })
        })();
        result.unwrap_or_else(|r| r)
    }
}

/// Handle of a running bench server. Dropping it stops the accept loop.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections and wait for the accept loop to exit.
    /// Sessions already open run until their client disconnects.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Block until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_inner(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Bind `addr` and serve bench sessions, one thread per connection.
///
/// Every connection starts from a fresh [`BenchSession`] built from
/// `preset`; sessions never share mutable state.
pub fn serve(addr: impl ToSocketAddrs, preset: BenchPreset) -> Result<ServerHandle> {
    preset.adc.validate()?;
    preset.channel.validate()?;
    preset.noise.validate()?;
    preset.tone.validate()?;
    preset.am.validate()?;
    let listener = TcpListener::bind(addr)
        .map_err(|e| Error::Transport(format!("cannot bind bench server: {e}")))?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let preset = Arc::new(preset);
    let flag = Arc::clone(&stop);
    let thread = std::thread::Builder::new()
        .name("bench-accept".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let preset = Arc::clone(&preset);
                let _ = std::thread::Builder::new()
                    .name("bench-session".into())
                    .spawn(move || {
                        if let Err(e) = run_session(stream, &preset) {
                            log::debug!("bench session ended: {e}");
                        }
                    });
            }
        })?;
    log::info!("bench server listening on {local}");
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

fn run_session(stream: TcpStream, preset: &BenchPreset) -> std::io::Result<()> {
    let mut session = BenchSession::new(preset);
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        session.handle(&line).write_to(&mut writer)?;
        writer.flush()?;
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
    Ok(())
}

/// Default client timeout for connects and single replies.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Synchronous client for the bench protocol.
#[derive(Debug)]
pub struct BenchClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    peer: String,
}

/// Reply to a setter or query, as seen by the client.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(String),
    Err(String),
    Capture(Trace),
}

fn transport(peer: &str, e: impl std::fmt::Display) -> Error {
    Error::Transport(format!("{peer}: {e}"))
}

impl BenchClient {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let mut last = None;
        let addrs = addr
            .to_socket_addrs()
            .map_err(|e| transport(addr, format!("cannot resolve: {e}")))?;
        for sa in addrs {
            match TcpStream::connect_timeout(&sa, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.set_nodelay(true)?;
                    return Ok(Self {
                        reader: BufReader::new(stream.try_clone()?),
                        writer: BufWriter::new(stream),
                        peer: addr.to_string(),
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(transport(
            addr,
            last.map_or("no address".to_string(), |e| e.to_string()),
        ))
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| transport(&self.peer, e))?;
        if n == 0 {
            return Err(transport(&self.peer, "connection closed"));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }

    fn send(&mut self, command: &str) -> Result<()> {
        if command.contains('\n') {
            return Err(Error::invalid("commands must be single lines"));
        }
        writeln!(self.writer, "{command}").map_err(|e| transport(&self.peer, e))?;
        self.writer.flush().map_err(|e| transport(&self.peer, e))
    }

    fn status(&mut self) -> Result<std::result::Result<String, String>> {
        let line = self.read_line()?;
        if line == "OK" {
            Ok(Ok(String::new()))
        } else if let Some(body) = line.strip_prefix("OK ") {
            Ok(Ok(body.to_string()))
        } else if let Some(reason) = line.strip_prefix("ERR") {
            Ok(Err(reason.trim_start().to_string()))
        } else {
            Err(Error::Transport(format!(
                "{}: protocol violation, reply '{line}' lacks an OK/ERR prefix",
                self.peer
            )))
        }
    }

    /// Send one command and wait for its reply. `CAPT?` payloads are
    /// collected into a trace at `sample_rate`.
    pub fn execute(&mut self, command: &str, sample_rate: f64) -> Result<Response> {
        self.send(command)?;
        let status = self.status()?;
        let is_capture = command
            .split_whitespace()
            .next()
            .is_some_and(|c| c.eq_ignore_ascii_case("CAPT?"));
        match status {
            Err(reason) => Ok(Response::Err(reason)),
            Ok(body) if !is_capture => Ok(Response::Ok(body)),
            Ok(body) => {
                let n: usize = body.trim().parse().map_err(|_| {
                    Error::Transport(format!("{}: bad capture header 'OK {body}'", self.peer))
                })?;
                let mut values = Vec::with_capacity(n);
                for i in 0..n {
                    let row = self.read_line()?;
                    let value = row
                        .split_once(',')
                        .filter(|(idx, _)| idx.trim().parse::<usize>().ok() == Some(i))
                        .and_then(|(_, v)| v.trim().parse::<f64>().ok())
                        .ok_or_else(|| {
                            Error::Transport(format!("{}: malformed capture row '{row}'", self.peer))
                        })?;
                    values.push(value);
                }
                let end = self.read_line()?;
                if end != "END" {
                    return Err(Error::Transport(format!(
                        "{}: expected END after capture, got '{end}'",
                        self.peer
                    )));
                }
                Ok(Response::Capture(Trace::new(values, sample_rate)?))
            }
        }
    }

    /// Send a setter or query; an `ERR` reply becomes an error.
    pub fn command(&mut self, command: &str) -> Result<String> {
        match self.execute(command, 1.0)? {
            Response::Ok(body) => Ok(body),
            Response::Err(reason) => Err(Error::Protocol(format!("'{command}' rejected: {reason}"))),
            Response::Capture(_) => Err(Error::Protocol(format!("unexpected capture for '{command}'"))),
        }
    }

    /// ADC sampling rate reported by the server.
    pub fn sample_rate(&mut self) -> Result<f64> {
        let body = self.command("RATE?")?;
        body.trim()
            .parse()
            .map_err(|_| Error::Transport(format!("{}: bad rate '{body}'", self.peer)))
    }

    /// Capture `n` samples. The outer error is a transport failure; the
    /// inner one carries the server's `ERR` reason.
    pub fn capture(&mut self, n: usize, sample_rate: f64) -> Result<std::result::Result<Trace, String>> {
        match self.execute(&format!("CAPT? {n}"), sample_rate)? {
            Response::Capture(t) => Ok(Ok(t)),
            Response::Err(reason) => Ok(Err(reason)),
            Response::Ok(body) => Err(Error::Transport(format!(
                "{}: capture reply without payload: 'OK {body}'",
                self.peer
            ))),
        }
    }
}

/// Connect, run `commands` in order and return one response per command.
pub fn client_execute(address: &str, commands: &[&str], timeout: Duration) -> Result<Vec<Response>> {
    let mut client = BenchClient::connect(address, timeout)?;
    let rate = client.sample_rate()?;
    commands.iter().map(|c| client.execute(c, rate)).collect()
}
