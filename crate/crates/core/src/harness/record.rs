//! Per-frame records and their CSV form.

use std::io::{Read, Write};

use crate::decision::{bit_string, popcount};
use crate::error::{IsacError, Result};

/// Bumped whenever the column layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// 1-based frame index.
    pub frame: usize,
    pub u_genie: f64,
    /// NaN when not computed.
    pub u_practical: f64,
    /// `Σ w_k C_k` of the selected decision.
    pub comm_utility: f64,
    /// `Σ w_q R_q` of the selected decision.
    pub radar_cost: f64,
    pub comm_bits: Vec<bool>,
    pub radar_bits: Vec<bool>,
    pub count_comm: usize,
    pub count_radar: usize,
    pub index_comm: usize,
    pub index_radar: usize,
    /// NaN while the learner warms up and for baselines.
    pub loss: f64,
    /// Pilot symbols of the selected decision.
    pub m1: usize,
    /// Pilot symbols of the union of explored user decisions.
    pub m1_practical: usize,
    pub iterations: usize,
    pub power_excess: f64,
    /// Not part of the CSV, which must be reproducible.
    pub wall_seconds: f64,
}

impl FrameRecord {
    pub fn users(&self) -> usize {
        self.comm_bits.len()
    }

    pub fn targets(&self) -> usize {
        self.radar_bits.len()
    }

    pub fn reestimations(&self) -> usize {
        popcount(&self.comm_bits)
    }
}

/// `%.9g`: nine significant digits, trailing zeros removed.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| IsacError::Parse(format!("'{s}' is not a number")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| IsacError::Parse(format!("'{s}' is not a count")))
}

const LEADING: [&str; 5] = [
    "frame",
    "u_genie",
    "u_practical",
    "comm_utility",
    "radar_cost",
];
const TRAILING: [&str; 9] = [
    "count_comm",
    "count_radar",
    "index_comm",
    "index_radar",
    "loss",
    "m1",
    "m1_practical",
    "iterations",
    "power_excess",
];

pub fn csv_header(users: usize, targets: usize) -> Vec<String> {
    LEADING
        .iter()
        .map(|s| s.to_string())
        .chain((0..users).map(|k| format!("a_c{k}")))
        .chain((0..targets).map(|q| format!("a_r{q}")))
        .chain(TRAILING.iter().map(|s| s.to_string()))
        .collect()
}

fn csv_row(r: &FrameRecord) -> Vec<String> {
    let bit = |b: &bool| if *b { "1" } else { "0" }.to_string();
    let mut row = vec![
        r.frame.to_string(),
        fmt_g9(r.u_genie),
        fmt_g9(r.u_practical),
        fmt_g9(r.comm_utility),
        fmt_g9(r.radar_cost),
    ];
    row.extend(r.comm_bits.iter().map(bit));
    row.extend(r.radar_bits.iter().map(bit));
    row.extend([
        r.count_comm.to_string(),
        r.count_radar.to_string(),
        r.index_comm.to_string(),
        r.index_radar.to_string(),
        fmt_g9(r.loss),
        r.m1.to_string(),
        r.m1_practical.to_string(),
        r.iterations.to_string(),
        fmt_g9(r.power_excess),
    ]);
    row
}

/// Streams records to a comma-separated file with LF line endings.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W, users: usize, targets: usize) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        inner.write_record(csv_header(users, targets))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &FrameRecord) -> Result<()> {
        self.inner.write_record(csv_row(r))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_records<W: Write>(out: W, records: &[FrameRecord]) -> Result<()> {
    let (k, q) = records.first().map_or((0, 0), |r| (r.users(), r.targets()));
    let mut w = RecordWriter::new(out, k, q)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

/// Parses a file written by [`RecordWriter`]. Wall time is not stored and
/// reads back as NaN.
pub fn read_records<R: Read>(input: R) -> Result<Vec<FrameRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let users = header.iter().filter(|h| h.starts_with("a_c")).count();
    let targets = header.iter().filter(|h| h.starts_with("a_r")).count();
    if header != csv_header(users, targets) {
        return Err(IsacError::Parse(format!("unexpected header {header:?}")));
    }
    let bit = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IsacError::Parse(format!("'{other}' is not a bit"))),
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f: Vec<&str> = row.iter().collect();
        let b = 5 + users + targets;
        out.push(FrameRecord {
            frame: parse_usize(f[0])?,
            u_genie: parse_f64(f[1])?,
            u_practical: parse_f64(f[2])?,
            comm_utility: parse_f64(f[3])?,
            radar_cost: parse_f64(f[4])?,
            comm_bits: f[5..5 + users]
                .iter()
                .map(|s| bit(s))
                .collect::<Result<_>>()?,
            radar_bits: f[5 + users..b]
                .iter()
                .map(|s| bit(s))
                .collect::<Result<_>>()?,
            count_comm: parse_usize(f[b])?,
            count_radar: parse_usize(f[b + 1])?,
            index_comm: parse_usize(f[b + 2])?,
            index_radar: parse_usize(f[b + 3])?,
            loss: parse_f64(f[b + 4])?,
            m1: parse_usize(f[b + 5])?,
            m1_practical: parse_usize(f[b + 6])?,
            iterations: parse_usize(f[b + 7])?,
            power_excess: parse_f64(f[b + 8])?,
            wall_seconds: f64::NAN,
        });
    }
    Ok(out)
}

/// Short human-readable form of a decision, e.g. `101|01`.
pub fn decision_label(r: &FrameRecord) -> String {
    format!("{}|{}", bit_string(&r.comm_bits), bit_string(&r.radar_bits))
}
