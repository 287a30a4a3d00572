//! Single-file checkpoints.
//!
//! A UTF-8 header (version, counters, RNG and batch positions, the full run
//! config and an array manifest) terminated by a line `end`, followed by the
//! arrays as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchStream, StreamPosition};
use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{Matrix, Shape};
use crate::trainer::{seeds, RunConfig, TrainState};

pub const MAGIC: &str = "dcs-checkpoint";
pub const VERSION: u32 = 1;

fn groups(state: &TrainState) -> [(&'static str, &ParamSet); 6] {
    [
        ("theta", &state.theta),
        ("phi", &state.phi),
        ("adam_gen.m", &state.adam_gen.m),
        ("adam_gen.v", &state.adam_gen.v),
        ("adam_meas.m", &state.adam_meas.m),
        ("adam_meas.v", &state.adam_meas.v),
    ]
}

fn groups_mut(state: &mut TrainState) -> [&mut ParamSet; 6] {
    [
        &mut state.theta,
        &mut state.phi,
        &mut state.adam_gen.m,
        &mut state.adam_gen.v,
        &mut state.adam_meas.m,
        &mut state.adam_meas.v,
    ]
}

fn manifest(state: &TrainState) -> Vec<(String, Shape)> {
    groups(state)
        .iter()
        .flat_map(|(g, p)| p.manifest().into_iter().map(move |(n, s)| (format!("{g}/{n}"), s)))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("malformed rng seed {s:?}"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let pos = state.batches.position();
    let config = state.config.to_text();
    let man = manifest(state);
    let mut h = String::new();
    h += &format!("{MAGIC} {VERSION}\n");
    h += &format!("step {}\n", state.step);
    h += &format!("train_rows {}\n", state.batches.num_rows());
    h += &format!("rng_seed {}\n", hex(&state.rng.get_seed()));
    h += &format!("rng_stream {}\n", state.rng.get_stream());
    h += &format!("rng_word_pos {}\n", state.rng.get_word_pos());
    h += &format!("batch_epoch {}\n", pos.epoch);
    h += &format!("batch_cursor {}\n", pos.cursor);
    h += &format!("adam_gen_step {}\n", state.adam_gen.step);
    h += &format!("adam_meas_step {}\n", state.adam_meas.step);
    h += &format!("config {}\n", config.lines().count());
    h += &config;
    h += &format!("arrays {}\n", man.len());
    for (name, s) in &man {
        h += &format!("{name} {} {}\n", s.rows, s.cols);
    }
    h += "end\n";

    let mut out = h.into_bytes();
    for (_, p) in groups(state) {
        for (_, m) in p.iter() {
            let start = out.len();
            out.resize(start + 8 * m.len(), 0);
            LittleEndian::write_f64_into(m.as_slice(), &mut out[start..]);
        }
    }
    out
}

/// Line-oriented reader over the header.
struct Header<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> Header<'a> {
    fn line(&mut self, what: &str) -> Result<&'a str> {
        self.lines.next().ok_or_else(|| Error::Checkpoint(format!("header ends before {what}")))
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.line(key)?;
        let value = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint(format!("expected `{key}`, found {line:?}")))?;
        value.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}: {value:?}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    const END: &[u8] = b"\nend\n";
    let header_len = bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
        .ok_or_else(|| Error::Checkpoint("no header terminator; file truncated or not a checkpoint".into()))?;
    let text = std::str::from_utf8(&bytes[..header_len]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut h = Header { lines: text.lines() };

    let first = h.line("magic")?;
    match first.split_once(' ') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(Error::Checkpoint(format!("unsupported format version {v} (this build reads {VERSION})"))),
        _ => return Err(Error::Checkpoint(format!("not a checkpoint (first line {first:?})"))),
    }
    let step: u64 = h.field("step")?;
    let train_rows: usize = h.field("train_rows")?;
    let rng_seed = unhex(&h.field::<String>("rng_seed")?)?;
    let rng_stream: u64 = h.field("rng_stream")?;
    let rng_word_pos: u128 = h.field("rng_word_pos")?;
    let pos = StreamPosition { epoch: h.field("batch_epoch")?, cursor: h.field("batch_cursor")? };
    let adam_gen_step: u64 = h.field("adam_gen_step")?;
    let adam_meas_step: u64 = h.field("adam_meas_step")?;
    let n_config: usize = h.field("config")?;
    let mut config_text = String::new();
    for _ in 0..n_config {
        config_text += h.line("config entries")?;
        config_text.push('\n');
    }
    let config = RunConfig::parse(&config_text).map_err(|e| Error::Checkpoint(format!("embedded {e}")))?;
    let n_arrays: usize = h.field("arrays")?;
    let mut stored = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let line = h.line("array manifest")?;
        let parts: Vec<&str> = line.split(' ').collect();
        let dims = match parts.as_slice() {
            [name, r, c] => r.parse().ok().zip(c.parse().ok()).map(|(r, c)| (name.to_string(), Shape::new(r, c))),
            _ => None,
        };
        stored.push(dims.ok_or_else(|| Error::Checkpoint(format!("malformed manifest line {line:?}")))?);
    }
    if h.line("end")? != "end" {
        return Err(Error::Checkpoint("manifest longer than declared".into()));
    }

    // Everything is validated against a freshly built state before any
    // stored value is used.
    let mut state = TrainState::new(config, train_rows).map_err(|e| Error::Checkpoint(format!("cannot rebuild state: {e}")))?;
    let expected = manifest(&state);
    if stored != expected {
        let diff = stored
            .iter()
            .zip(&expected)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("stored {} {} vs expected {} {}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("{} arrays stored, {} expected", stored.len(), expected.len()));
        return Err(Error::Checkpoint(format!("manifest does not match config: {diff}")));
    }
    let mut values = Vec::with_capacity(stored.len());
    let mut offset = header_len;
    for (name, shape) in &stored {
        let need = 8 * shape.len();
        let have = bytes.len().saturating_sub(offset);
        if have < need {
            return Err(Error::Checkpoint(format!("array {name} truncated: needs {need} bytes, {have} remain")));
        }
        let mut data = vec![0.0; shape.len()];
        LittleEndian::read_f64_into(&bytes[offset..offset + need], &mut data);
        values.push(Matrix::from_vec(shape.rows, shape.cols, data));
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", bytes.len() - offset)));
    }

    let mut values = values.into_iter();
    for set in groups_mut(&mut state) {
        for (_, m) in set.iter_mut() {
            *m = values.next().expect("manifest checked");
        }
    }
    state.step = step;
    state.adam_gen.step = adam_gen_step;
    state.adam_meas.step = adam_meas_step;
    state.rng = ChaCha8Rng::from_seed(rng_seed);
    state.rng.set_stream(rng_stream);
    state.rng.set_word_pos(rng_word_pos);
    state.batches = BatchStream::resume(train_rows, state.config.batch_size, seeds::derive(state.config.seed, seeds::BATCHES), pos)?;
    Ok(state)
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
