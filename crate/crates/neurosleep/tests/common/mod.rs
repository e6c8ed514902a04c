//! Hand-assembled EDF fixtures and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

pub fn field(s: &str, width: usize) -> Vec<u8> {
    assert!(s.len() <= width, "{s:?} wider than {width}");
    let mut v = s.as_bytes().to_vec();
    v.resize(width, b' ');
    v
}

pub struct Sig<'a> {
    pub label: &'a str,
    pub phys: (&'a str, &'a str),
    pub dig: (&'a str, &'a str),
    pub samples: usize,
}

/// Header written field by field from the published layout.
pub fn header(reserved: &str, records: usize, duration: &str, sigs: &[Sig]) -> Vec<u8> {
    let ns = sigs.len();
    let mut h = Vec::new();
    h.extend(field("0", 8));
    h.extend(field("X M 01-JAN-1970 fixture", 80));
    h.extend(field("Startdate 01-JAN-2020 X X X", 80));
    h.extend(field("01.01.20", 8));
    h.extend(field("23.00.00", 8));
    h.extend(field(&(256 * (ns + 1)).to_string(), 8));
    h.extend(field(reserved, 44));
    h.extend(field(&records.to_string(), 8));
    h.extend(field(duration, 8));
    h.extend(field(&ns.to_string(), 4));
    for s in sigs {
        h.extend(field(s.label, 16));
    }
    for s in sigs {
        h.extend(field(if s.label == "EDF Annotations" { "" } else { "AgAgCl electrode" }, 80));
    }
    for s in sigs {
        h.extend(field(if s.label == "EDF Annotations" { "" } else { "uV" }, 8));
    }
    for s in sigs {
        h.extend(field(s.phys.0, 8));
    }
    for s in sigs {
        h.extend(field(s.phys.1, 8));
    }
    for s in sigs {
        h.extend(field(s.dig.0, 8));
    }
    for s in sigs {
        h.extend(field(s.dig.1, 8));
    }
    for s in sigs {
        h.extend(field(if s.label == "EDF Annotations" { "" } else { "HP:0.5Hz LP:100Hz" }, 80));
    }
    for s in sigs {
        h.extend(field(&s.samples.to_string(), 8));
    }
    for _ in sigs {
        h.extend(field("", 32));
    }
    assert_eq!(h.len(), 256 * (ns + 1));
    h
}

pub fn eeg(label: &str, samples: usize) -> Sig<'_> {
    Sig {
        label,
        phys: ("-250", "250"),
        dig: ("-2048", "2047"),
        samples,
    }
}

pub fn annotations(samples: usize) -> Sig<'static> {
    Sig {
        label: "EDF Annotations",
        phys: ("-1", "1"),
        dig: ("-32768", "32767"),
        samples,
    }
}

pub fn push_i16(out: &mut Vec<u8>, values: &[i16]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// TAL bytes padded with zeros to `2 * samples` bytes.
pub fn tal_block(tals: &[u8], samples: usize) -> Vec<u8> {
    assert!(tals.len() <= 2 * samples);
    let mut v = tals.to_vec();
    v.resize(2 * samples, 0);
    v
}

/// The scored stages of the EDF+ fixture, as (onset, duration, label).
pub const HYPNOGRAM: [(u32, u32, &str); 6] = [
    (0, 60, "Sleep stage W"),
    (60, 30, "Sleep stage 1"),
    (90, 90, "Sleep stage 2"),
    (180, 60, "Sleep stage 3"),
    (240, 30, "Sleep stage R"),
    (270, 30, "Sleep stage W"),
];

/// Two 100 Hz EEG channels, ten 30 s records, and a separate annotation-only
/// hypnogram file. Returns (psg, hypnogram) paths.
pub fn write_edf_plus_recording(dir: &Path, name: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let fs = 100usize;
    let records = 10;
    let per = 30 * fs;
    let ann = 30;
    let mut psg = header(
        "EDF+C",
        records,
        "30",
        &[eeg("EEG Fpz-Cz", per), eeg("EEG Pz-Oz", per), annotations(ann)],
    );
    for r in 0..records {
        for (ch, f) in [(0, 10.0), (1, 3.0)] {
            let v: Vec<i16> = (0..per)
                .map(|i| {
                    let t = (r * per + i) as f64 / fs as f64;
                    let x = 800.0 * (2.0 * std::f64::consts::PI * f * t).sin()
                        + 150.0 * (2.0 * std::f64::consts::PI * 17.0 * t + ch as f64).sin();
                    x.round() as i16
                })
                .collect();
            push_i16(&mut psg, &v);
        }
        let keeping = format!("+{}\x14\x14\x00", r * 30);
        psg.extend(tal_block(keeping.as_bytes(), ann));
    }

    let mut tals = b"+0\x14\x14\x00".to_vec();
    for (onset, dur, label) in HYPNOGRAM {
        tals.extend(format!("+{onset}\x15{dur}\x14{label}\x14\x00").as_bytes());
    }
    let samples = tals.len().div_ceil(2) + 4;
    let mut hyp = header("EDF+C", 1, "0", &[annotations(samples)]);
    hyp.extend(tal_block(&tals, samples));

    let p = dir.join(format!("{name}-PSG.edf"));
    let h = dir.join(format!("{name}-Hypnogram.edf"));
    std::fs::write(&p, psg).unwrap();
    std::fs::write(&h, hyp).unwrap();
    (p, h)
}
