mod common;

use common::*;
use neurosleep::edf::{self, parse_annotations, parse_header, read_digital, read_signal, EdfHeader, SignalHeader, Tal};
use neurosleep::Error;
use proptest::prelude::*;

fn fixture() -> Vec<u8> {
    let mut b = header("", 2, "1", &[eeg("EEG Fpz-Cz", 4), eeg("EEG Pz-Oz", 2)]);
    push_i16(&mut b, &[-2048, 2047, 0, 1000, -5, 5]);
    push_i16(&mut b, &[1, 2, 3, 4, 0, -2048]);
    b
}

#[test]
fn fixture_header_fields() {
    let h = parse_header(&fixture()).unwrap();
    assert_eq!(h.version, "0");
    assert_eq!(h.patient, "X M 01-JAN-1970 fixture");
    assert_eq!(h.start_date, "01.01.20");
    assert_eq!(h.start_time, "23.00.00");
    assert_eq!(h.header_bytes, 768);
    assert_eq!(h.num_records, 2);
    assert_eq!(h.record_duration, 1.0);
    assert!(!h.is_edf_plus());
    assert_eq!(h.signals.len(), 2);
    let s = &h.signals[1];
    assert_eq!(s.label, "EEG Pz-Oz");
    assert_eq!(s.transducer, "AgAgCl electrode");
    assert_eq!(s.physical_dimension, "uV");
    assert_eq!((s.physical_min, s.physical_max), (-250.0, 250.0));
    assert_eq!((s.digital_min, s.digital_max), (-2048, 2047));
    assert_eq!(s.prefiltering, "HP:0.5Hz LP:100Hz");
    assert_eq!(s.samples_per_record, 2);
}

#[test]
fn fixture_signals_and_scaling() {
    let b = fixture();
    let h = parse_header(&b).unwrap();
    assert_eq!(read_digital(&b, &h, 0).unwrap(), vec![-2048, 2047, 0, 1000, 1, 2, 3, 4]);
    let (x, fs) = read_signal(&b, &h, 0).unwrap();
    assert_eq!(fs, 4.0);
    assert_eq!(x[0], -250.0);
    assert_eq!(x[1], 250.0);
    // 2048·500/4095 − 250
    assert!((x[2] - 0.061050061050061).abs() < 1e-12, "{}", x[2]);
    let (y, fs) = read_signal(&b, &h, 1).unwrap();
    assert_eq!(fs, 2.0);
    assert_eq!(y.len(), 4);
    assert_eq!(y[3], -250.0);
}

#[test]
fn truncated_records_name_the_record() {
    let b = fixture();
    let h = parse_header(&b).unwrap();
    let err = read_signal(&b[..b.len() - 1], &h, 1).unwrap_err().to_string();
    assert!(err.contains("data record 1"), "{err}");
}

#[test]
fn header_bytes_mismatch_points_at_184() {
    let mut b = fixture();
    b[184..192].copy_from_slice(&field("1024", 8));
    let err = parse_header(&b).unwrap_err();
    assert!(matches!(err, Error::Edf { offset: 184, .. }));
    assert!(err.to_string().contains("offset 184"));
}

#[test]
fn empty_file_is_rejected() {
    assert!(parse_header(b"").is_err());
}

#[test]
fn zero_duration_only_for_annotation_files() {
    let ok = header("EDF+C", 1, "0", &[annotations(8)]);
    assert!(parse_header(&ok).is_ok());
    let bad = header("", 1, "0", &[eeg("EEG", 8)]);
    assert!(parse_header(&bad).is_err());
}

#[test]
fn tal_examples() {
    assert_eq!(
        parse_annotations(b"+0\x14\x14\x00").unwrap(),
        vec![Tal { onset: 0.0, duration: None, labels: vec![] }]
    );
    assert_eq!(
        parse_annotations(b"+30\x1530\x14Sleep stage W\x14\x00").unwrap(),
        vec![Tal { onset: 30.0, duration: Some(30.0), labels: vec!["Sleep stage W".into()] }]
    );
    let missing = parse_annotations(b"+12.5\x14Lights off\x14\x00").unwrap();
    assert_eq!(missing[0].duration, None);
    assert_eq!(missing[0].labels, vec!["Lights off".to_string()]);
}

#[test]
fn edf_plus_recording_loads_with_hypnogram() {
    let dir = tempfile::tempdir().unwrap();
    let (psg, hyp) = write_edf_plus_recording(dir.path(), "SC0001");
    let rec = edf::load_recording(&psg, Some(&hyp), "SC0001").unwrap();
    assert_eq!(rec.channels.len(), 2);
    assert_eq!(rec.channels[0].name, "EEG Fpz-Cz");
    assert_eq!(rec.channels[0].fs, 100.0);
    assert_eq!(rec.channels[0].samples.len(), 30_000);
    assert_eq!(rec.annotations.len(), HYPNOGRAM.len());
    assert_eq!(rec.annotations[2].label, "Sleep stage 2");
    assert_eq!((rec.annotations[2].onset, rec.annotations[2].duration), (90.0, 90.0));
}

fn text(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("([!-~][ -~]{{0,{}}}[!-~])?", max - 2)).unwrap()
}

fn signal_header() -> impl Strategy<Value = SignalHeader> {
    (
        (text(16), text(80), text(8), text(80)),
        (-99_999i32..99_999, 1i32..99_999, -32768i32..32000, 1i32..700, 1usize..5000),
    )
        .prop_map(|((label, transducer, dim, pre), (pmin, prange, dmin, drange, n))| SignalHeader {
            label,
            transducer,
            physical_dimension: dim,
            physical_min: f64::from(pmin) / 10.0,
            physical_max: f64::from(pmin + prange) / 10.0,
            digital_min: dmin,
            digital_max: (dmin + drange).min(32767),
            prefiltering: pre,
            samples_per_record: n,
            reserved: String::new(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn header_serialization_round_trips(
        patient in text(80),
        recording in text(80),
        records in 0usize..99_999_999,
        duration in prop::sample::select(vec![0.5, 1.0, 2.0, 30.0]),
        signals in prop::collection::vec(signal_header(), 1..6),
    ) {
        let h = EdfHeader {
            version: "0".into(),
            patient,
            recording,
            start_date: "02.03.04".into(),
            start_time: "05.06.07".into(),
            header_bytes: 256 * (signals.len() + 1),
            reserved: String::new(),
            num_records: records,
            record_duration: duration,
            signals,
        };
        let bytes = h.to_bytes().unwrap();
        prop_assert_eq!(bytes.len(), h.header_bytes);
        prop_assert_eq!(parse_header(&bytes).unwrap(), h);
    }

    #[test]
    fn scaling_is_exact_at_digital_endpoints(s in signal_header()) {
        prop_assert_eq!(s.to_physical(s.digital_min as i16), s.physical_min);
        prop_assert_eq!(s.to_physical(s.digital_max as i16), s.physical_max);
    }
}
