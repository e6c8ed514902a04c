//! EDF and EDF+ reading: fixed-width ASCII header, 16-bit little-endian data
//! records, and time-stamped annotation lists (TALs).

use std::path::Path;

use neurosleep_core::signal::{Annotation, Channel, Recording};

use crate::error::{Error, Result};

/// Label of the EDF+ annotation signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Digital to physical: `(d − dmin)·(pmax − pmin)/(dmax − dmin) + pmin`,
    /// evaluated as an interpolation so both endpoints map exactly.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let t = (f64::from(digital) - f64::from(self.digital_min))
            / (f64::from(self.digital_max) - f64::from(self.digital_min));
        (1.0 - t) * self.physical_min + t * self.physical_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    /// "EDF+C" / "EDF+D" for EDF+, blank for plain EDF.
    pub reserved: String,
    pub num_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

// (width) of each fixed field, in file order
const MAIN: [usize; 10] = [8, 80, 80, 8, 8, 8, 44, 8, 8, 4];
const PER_SIGNAL: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, width: usize, name: &str) -> Result<String> {
        let start = self.offset;
        let raw = self.bytes.get(start..start + width).ok_or_else(|| Error::Edf {
            offset: start,
            msg: format!("header ends before field `{name}` ({} bytes available)", self.bytes.len()),
        })?;
        self.offset += width;
        if let Some(i) = raw.iter().position(|b| !(0x20..=0x7e).contains(b)) {
            return Err(Error::Edf {
                offset: start + i,
                msg: format!("non-printable byte 0x{:02x} in field `{name}`", raw[i]),
            });
        }
        // printable ASCII is valid UTF-8
        Ok(String::from_utf8_lossy(raw).trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, name: &str) -> Result<T> {
        let start = self.offset;
        let s = self.field(width, name)?;
        s.trim().parse().map_err(|_| Error::Edf {
            offset: start,
            msg: format!("field `{name}` is not a number: {s:?}"),
        })
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.is_empty() {
        return Err(Error::Edf {
            offset: 0,
            msg: "empty file".into(),
        });
    }
    if bytes.len() < 256 {
        return Err(Error::Edf {
            offset: bytes.len(),
            msg: format!("header needs at least 256 bytes, file has {}", bytes.len()),
        });
    }
    let mut c = Cursor { bytes, offset: 0 };
    let version = c.field(MAIN[0], "version")?;
    let patient = c.field(MAIN[1], "patient")?;
    let recording = c.field(MAIN[2], "recording")?;
    let start_date = c.field(MAIN[3], "start date")?;
    let start_time = c.field(MAIN[4], "start time")?;
    let header_bytes: usize = c.number(MAIN[5], "header bytes")?;
    let reserved = c.field(MAIN[6], "reserved")?;
    let num_records: i64 = c.number(MAIN[7], "number of data records")?;
    let duration_at = c.offset;
    let record_duration: f64 = c.number(MAIN[8], "record duration")?;
    let ns: usize = c.number(MAIN[9], "number of signals")?;

    if header_bytes != 256 * (ns + 1) {
        return Err(Error::Edf {
            offset: 184,
            msg: format!("header bytes field says {header_bytes}, {ns} signals need {}", 256 * (ns + 1)),
        });
    }
    if num_records < 0 {
        return Err(Error::Edf {
            offset: 236,
            msg: format!("unknown record count {num_records} (file was not closed properly)"),
        });
    }
    if !(record_duration >= 0.0 && record_duration.is_finite()) {
        return Err(Error::Edf {
            offset: duration_at,
            msg: format!("record duration must be non-negative, got {record_duration}"),
        });
    }
    if bytes.len() < header_bytes {
        return Err(Error::Edf {
            offset: bytes.len(),
            msg: format!("header of {header_bytes} bytes is truncated"),
        });
    }

    // per-signal fields are stored column-wise: all labels, then all transducers...
    let mut cols: Vec<Vec<(usize, String)>> = Vec::with_capacity(PER_SIGNAL.len());
    let names = [
        "label",
        "transducer",
        "physical dimension",
        "physical minimum",
        "physical maximum",
        "digital minimum",
        "digital maximum",
        "prefiltering",
        "samples per record",
        "signal reserved",
    ];
    for (w, name) in PER_SIGNAL.iter().zip(names) {
        let mut col = Vec::with_capacity(ns);
        for _ in 0..ns {
            let at = c.offset;
            col.push((at, c.field(*w, name)?));
        }
        cols.push(col);
    }
    let num = |col: usize, i: usize| -> Result<f64> {
        let (at, s) = &cols[col][i];
        s.trim().parse().map_err(|_| Error::Edf {
            offset: *at,
            msg: format!("signal {i} `{}` is not a number: {s:?}", names[col]),
        })
    };
    let int = |col: usize, i: usize| -> Result<i64> {
        let (at, s) = &cols[col][i];
        s.trim().parse().map_err(|_| Error::Edf {
            offset: *at,
            msg: format!("signal {i} `{}` is not an integer: {s:?}", names[col]),
        })
    };

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let physical_min = num(3, i)?;
        let physical_max = num(4, i)?;
        let digital_min = int(5, i)?;
        let digital_max = int(6, i)?;
        let samples_per_record = int(8, i)?;
        if physical_max == physical_min {
            return Err(Error::Edf {
                offset: cols[4][i].0,
                msg: format!("signal {i}: physical maximum equals physical minimum ({physical_min})"),
            });
        }
        let range = i64::from(i16::MIN)..=i64::from(i16::MAX);
        if !range.contains(&digital_min) || !range.contains(&digital_max) || digital_max <= digital_min {
            return Err(Error::Edf {
                offset: cols[6][i].0,
                msg: format!("signal {i}: digital range [{digital_min}, {digital_max}] is not a 16-bit increasing range"),
            });
        }
        if samples_per_record <= 0 {
            return Err(Error::Edf {
                offset: cols[8][i].0,
                msg: format!("signal {i}: samples per record must be positive, got {samples_per_record}"),
            });
        }
        signals.push(SignalHeader {
            label: cols[0][i].1.clone(),
            transducer: cols[1][i].1.clone(),
            physical_dimension: cols[2][i].1.clone(),
            physical_min,
            physical_max,
            digital_min: digital_min as i32,
            digital_max: digital_max as i32,
            prefiltering: cols[7][i].1.clone(),
            samples_per_record: samples_per_record as usize,
            reserved: cols[9][i].1.clone(),
        });
    }

    // annotation-only files (hypnograms) may declare zero-length records
    if record_duration == 0.0 && !signals.iter().all(SignalHeader::is_annotation) {
        return Err(Error::Edf {
            offset: duration_at,
            msg: "record duration 0 is only valid when every signal is an annotation signal".into(),
        });
    }

    Ok(EdfHeader {
        version,
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        reserved,
        num_records: num_records as usize,
        record_duration,
        signals,
    })
}

fn put(out: &mut Vec<u8>, value: &str, width: usize, name: &str) -> Result<()> {
    if value.len() > width || !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(Error::Format(format!(
            "field `{name}` value {value:?} does not fit {width} printable ASCII characters"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

impl EdfHeader {
    pub fn samples_per_record_total(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }

    pub fn record_bytes(&self) -> usize {
        2 * self.samples_per_record_total()
    }

    pub fn sampling_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration
    }

    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }

    /// The fixed-width header, `256·(ns+1)` bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let ns = self.signals.len();
        let mut out = Vec::with_capacity(256 * (ns + 1));
        put(&mut out, &self.version, 8, "version")?;
        put(&mut out, &self.patient, 80, "patient")?;
        put(&mut out, &self.recording, 80, "recording")?;
        put(&mut out, &self.start_date, 8, "start date")?;
        put(&mut out, &self.start_time, 8, "start time")?;
        put(&mut out, &(256 * (ns + 1)).to_string(), 8, "header bytes")?;
        put(&mut out, &self.reserved, 44, "reserved")?;
        put(&mut out, &self.num_records.to_string(), 8, "number of data records")?;
        put(&mut out, &self.record_duration.to_string(), 8, "record duration")?;
        put(&mut out, &ns.to_string(), 4, "number of signals")?;
        let columns: [(usize, &str, fn(&SignalHeader) -> String); 10] = [
            (16, "label", |s| s.label.clone()),
            (80, "transducer", |s| s.transducer.clone()),
            (8, "physical dimension", |s| s.physical_dimension.clone()),
            (8, "physical minimum", |s| s.physical_min.to_string()),
            (8, "physical maximum", |s| s.physical_max.to_string()),
            (8, "digital minimum", |s| s.digital_min.to_string()),
            (8, "digital maximum", |s| s.digital_max.to_string()),
            (80, "prefiltering", |s| s.prefiltering.clone()),
            (8, "samples per record", |s| s.samples_per_record.to_string()),
            (32, "signal reserved", |s| s.reserved.clone()),
        ];
        for (w, name, get) in columns {
            for s in &self.signals {
                put(&mut out, &get(s), w, name)?;
            }
        }
        Ok(out)
    }
}

fn check_signal(header: &EdfHeader, signal: usize) -> Result<()> {
    if signal >= header.signals.len() {
        return Err(Error::Format(format!(
            "signal index {signal} out of range ({} signals)",
            header.signals.len()
        )));
    }
    Ok(())
}

/// Byte ranges of `signal` in every data record, after checking that all
/// declared records are present.
fn signal_slices<'a>(bytes: &'a [u8], header: &EdfHeader, signal: usize) -> Result<Vec<&'a [u8]>> {
    check_signal(header, signal)?;
    let rec = header.record_bytes();
    let before: usize = header.signals[..signal].iter().map(|s| 2 * s.samples_per_record).sum();
    let len = 2 * header.signals[signal].samples_per_record;
    (0..header.num_records)
        .map(|r| {
            let start = header.header_bytes + r * rec;
            bytes.get(start..start + rec).map(|record| &record[before..before + len]).ok_or_else(|| {
                Error::Edf {
                    offset: bytes.len(),
                    msg: format!(
                        "data record {r} is truncated: needs bytes {start}..{}, file has {}",
                        start + rec,
                        bytes.len()
                    ),
                }
            })
        })
        .collect()
}

/// Raw digital samples of one signal.
pub fn read_digital(bytes: &[u8], header: &EdfHeader, signal: usize) -> Result<Vec<i16>> {
    Ok(signal_slices(bytes, header, signal)?
        .into_iter()
        .flat_map(|s| s.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])))
        .collect())
}

/// Physical samples and sampling rate of one signal.
pub fn read_signal(bytes: &[u8], header: &EdfHeader, signal: usize) -> Result<(Vec<f64>, f64)> {
    check_signal(header, signal)?;
    let sh = &header.signals[signal];
    let digital = read_digital(bytes, header, signal)?;
    Ok((digital.into_iter().map(|d| sh.to_physical(d)).collect(), header.sampling_rate(signal)))
}

/// One time-stamped annotation list. A TAL without labels is a record
/// time-keeping entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Tal {
    pub onset: f64,
    pub duration: Option<f64>,
    pub labels: Vec<String>,
}

const DUR: u8 = 0x15;
const SEP: u8 = 0x14;

fn tal_number(raw: &[u8], at: usize, what: &str, signed: bool) -> Result<f64> {
    let s = std::str::from_utf8(raw).map_err(|_| Error::Edf {
        offset: at,
        msg: format!("{what} is not ASCII"),
    })?;
    let t = s.trim_matches(' ');
    let ok_sign = !signed || t.starts_with('+') || t.starts_with('-');
    match t.parse::<f64>() {
        Ok(v) if ok_sign && v.is_finite() => Ok(v),
        _ => Err(Error::Edf {
            offset: at,
            msg: format!("malformed {what} {s:?}"),
        }),
    }
}

/// Parses the TALs of one annotation-signal byte stream. Zero bytes between
/// TALs are padding.
pub fn parse_annotations(bytes: &[u8]) -> Result<Vec<Tal>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        let end = bytes[i..]
            .iter()
            .position(|&b| b == 0)
            .map(|p| i + p)
            .ok_or_else(|| Error::Edf {
                offset: start,
                msg: "annotation list is not terminated by 0x00".into(),
            })?;
        let tal = &bytes[start..end];
        let head_end = tal.iter().position(|&b| b == SEP).ok_or_else(|| Error::Edf {
            offset: start,
            msg: "annotation list has no 0x14 after its onset".into(),
        })?;
        let head = &tal[..head_end];
        let (onset, duration) = match head.iter().position(|&b| b == DUR) {
            Some(d) => (
                tal_number(&head[..d], start, "onset", true)?,
                Some(tal_number(&head[d + 1..], start + d + 1, "duration", false)?),
            ),
            None => (tal_number(head, start, "onset", true)?, None),
        };
        let body = &tal[head_end + 1..];
        if body.last().is_some_and(|&b| b != SEP) {
            return Err(Error::Edf {
                offset: end,
                msg: "annotation text is not terminated by 0x14".into(),
            });
        }
        let mut labels = Vec::new();
        let mut at = start + head_end + 1;
        for part in body.split(|&b| b == SEP).take(body.iter().filter(|&&b| b == SEP).count()) {
            let text = std::str::from_utf8(part).map_err(|_| Error::Edf {
                offset: at,
                msg: "annotation text is not UTF-8".into(),
            })?;
            if !text.is_empty() {
                labels.push(text.to_string());
            }
            at += part.len() + 1;
        }
        out.push(Tal { onset, duration, labels });
        i = end + 1;
    }
    Ok(out)
}

/// Every TAL of every annotation signal, record by record.
pub fn read_annotations(bytes: &[u8], header: &EdfHeader) -> Result<Vec<Tal>> {
    let mut out = Vec::new();
    for (i, s) in header.signals.iter().enumerate() {
        if s.is_annotation() {
            for chunk in signal_slices(bytes, header, i)? {
                out.extend(parse_annotations(chunk)?);
            }
        }
    }
    Ok(out)
}

/// Scoring events from TALs: labelled, with a duration. Time-keeping TALs
/// are dropped; labelled TALs without a duration are skipped with a warning.
pub fn scoring_events(tals: &[Tal]) -> Vec<Annotation> {
    let mut out = Vec::new();
    for t in tals {
        for label in &t.labels {
            match t.duration {
                Some(duration) => out.push(Annotation {
                    onset: t.onset,
                    duration,
                    label: label.clone(),
                }),
                None => log::warn!("annotation {label:?} at {}s has no duration; skipped", t.onset),
            }
        }
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    out
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// A recording from a signal file and an optional separate annotation file
/// (the hypnogram). Annotation signals inside the signal file are used too.
pub fn load_recording(psg: &Path, hypnogram: Option<&Path>, subject_id: &str) -> Result<Recording> {
    let bytes = read_file(psg)?;
    let header = parse_header(&bytes).map_err(|e| e.in_file(psg))?;
    let mut channels = Vec::new();
    for (i, s) in header.signals.iter().enumerate() {
        if s.is_annotation() {
            continue;
        }
        let (samples, fs) = read_signal(&bytes, &header, i).map_err(|e| e.in_file(psg))?;
        channels.push(Channel {
            name: s.label.clone(),
            samples,
            fs,
        });
    }
    let mut tals = read_annotations(&bytes, &header).map_err(|e| e.in_file(psg))?;
    if let Some(h) = hypnogram {
        let hb = read_file(h)?;
        let hh = parse_header(&hb).map_err(|e| e.in_file(h))?;
        tals.extend(read_annotations(&hb, &hh).map_err(|e| e.in_file(h))?);
    }
    Ok(Recording {
        subject_id: subject_id.to_string(),
        channels,
        annotations: scoring_events(&tals),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(label: &str, n: usize) -> SignalHeader {
        SignalHeader {
            label: label.into(),
            transducer: "AgAgCl electrode".into(),
            physical_dimension: "uV".into(),
            physical_min: -250.0,
            physical_max: 250.0,
            digital_min: -2048,
            digital_max: 2047,
            prefiltering: "HP:0.1Hz".into(),
            samples_per_record: n,
            reserved: String::new(),
        }
    }

    fn header() -> EdfHeader {
        EdfHeader {
            version: "0".into(),
            patient: "X F 01-JAN-1980 test".into(),
            recording: "Startdate 01-JAN-2020 X X X".into(),
            start_date: "01.01.20".into(),
            start_time: "22.00.00".into(),
            header_bytes: 768,
            reserved: String::new(),
            num_records: 2,
            record_duration: 1.0,
            signals: vec![signal("EEG Fpz-Cz", 4), signal("EEG Pz-Oz", 2)],
        }
    }

    #[test]
    fn header_round_trip() {
        let h = header();
        let b = h.to_bytes().unwrap();
        assert_eq!(b.len(), 768);
        assert_eq!(parse_header(&b).unwrap(), h);
    }

    #[test]
    fn header_bytes_mismatch_names_offset() {
        let mut b = header().to_bytes().unwrap();
        b[184..192].copy_from_slice(b"512     ");
        match parse_header(&b) {
            Err(Error::Edf { offset, .. }) => assert_eq!(offset, 184),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_its_offset() {
        let mut b = header().to_bytes().unwrap();
        b[244..252].copy_from_slice(b"one     ");
        assert!(matches!(parse_header(&b), Err(Error::Edf { offset: 244, .. })));
    }

    #[test]
    fn empty_and_short_input() {
        assert!(parse_header(&[]).is_err());
        assert!(parse_header(&[b' '; 100]).is_err());
    }

    #[test]
    fn signals_interleave_per_record() {
        let h = header();
        let mut b = h.to_bytes().unwrap();
        let records: [[i16; 6]; 2] = [[0, 1, 2, 3, -2048, 2047], [4, 5, 6, 7, 10, 11]];
        for r in records {
            for v in r {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        assert_eq!(read_digital(&b, &h, 0).unwrap(), vec![0, 1, 2, 3, 4, 5, 6, 7]);
        let (phys, fs) = read_signal(&b, &h, 1).unwrap();
        assert_eq!(fs, 2.0);
        assert_eq!(phys[0], -250.0);
        assert_eq!(phys[1], 250.0);

        b.truncate(b.len() - 3);
        let err = read_signal(&b, &h, 0).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");
    }

    #[test]
    fn tal_forms() {
        assert_eq!(
            parse_annotations(b"+0\x14\x14\x00").unwrap(),
            vec![Tal { onset: 0.0, duration: None, labels: vec![] }]
        );
        assert_eq!(
            parse_annotations(b"+30\x15 30\x14Sleep stage W\x14\x00").unwrap(),
            vec![Tal { onset: 30.0, duration: Some(30.0), labels: vec!["Sleep stage W".into()] }]
        );
        let two = parse_annotations(b"+0\x14\x14\x00+60\x1530\x14Sleep stage 2\x14\x00\x00\x00").unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].labels, vec!["Sleep stage 2".to_string()]);
        let multi = parse_annotations(b"-1.5\x14a\x14b\x14\x00").unwrap();
        assert_eq!(multi[0].onset, -1.5);
        assert_eq!(multi[0].labels, vec!["a".to_string(), "b".into()]);
    }

    #[test]
    fn malformed_tals_are_rejected_with_offsets() {
        assert!(matches!(parse_annotations(b"30\x14\x14\x00"), Err(Error::Edf { offset: 0, .. })));
        assert!(parse_annotations(b"+30\x14x\x14").is_err());
        assert!(parse_annotations(b"+30\x00").is_err());
        assert!(matches!(parse_annotations(b"\x00\x00+x\x14\x14\x00"), Err(Error::Edf { offset: 2, .. })));
    }
}
