use neurosleep_core::gradcheck::tiny_config;
use neurosleep_core::model::{forward, ModelConfig, ModelParams, Pass};
use neurosleep_core::signal::prep::{epochize, pack_sequences, preprocess, Annotation, Channel, PrepConfig, Recording, WakePolicy};
use neurosleep_core::synth::{generate_dataset, generate_epoch, SynthSpec};
use neurosleep_core::train::{evaluate, subject_kfold_split, train, TrainConfig};
use neurosleep_core::Stage;

fn tiny_spec(subjects: usize, per: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        subjects,
        epochs_per_subject: per,
        samples_per_epoch: 144,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn history_does_not_depend_on_thread_count() {
    let data = generate_dataset(&tiny_spec(3, 12, 5)).unwrap();
    let (tr, va) = data.split_at(24);
    let cfg = tiny_config();
    let tc = TrainConfig {
        train_batch: 20,
        max_epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(tr, va, &cfg, &tc).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.history, three.history);
    assert_eq!(one.params, three.params);
}

#[test]
fn folds_keep_subjects_apart_and_training_runs_on_them() {
    let data = generate_dataset(&tiny_spec(5, 8, 2)).unwrap();
    let subjects: Vec<String> = data.iter().map(|e| e.subject_id.clone()).collect();
    let folds = subject_kfold_split(&subjects, 5, 0).unwrap();
    assert_eq!(folds.len(), 5);
    for f in &folds {
        assert_eq!(f.val_subjects.len(), 1);
        assert!(f.train.iter().all(|&i| subjects[i] != f.val_subjects[0]));
        assert_eq!(f.train.len() + f.val.len(), data.len());
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (tr, va) = (pick(&folds[0].train), pick(&folds[0].val));
    let cfg = tiny_config();
    let out = train(&tr, &va, &cfg, &TrainConfig { train_batch: 8, max_epochs: 1, ..TrainConfig::default() }).unwrap();
    let ev = evaluate(&out.params, &va, &cfg).unwrap();
    assert_eq!(ev.predictions.len(), va.len());
    assert_eq!(ev.hypnograms().len(), 1);
}

#[test]
fn packed_sequences_feed_a_many_to_one_model() {
    let data = generate_dataset(&tiny_spec(2, 6, 1)).unwrap();
    let packed = pack_sequences(&data, 3).unwrap();
    // each subject of 6 epochs yields 4 windows
    assert_eq!(packed.len(), 8);
    assert_eq!(packed[0].label, data[2].label);
    assert_eq!(packed[0].width(), 3 * 144);
    let cfg = ModelConfig {
        sequence_length: 3,
        ..tiny_config()
    };
    let params = ModelParams::init(&cfg, 0).unwrap();
    let p = forward(&packed[0].to_tensor().unwrap(), &params, &cfg, Pass::Eval).unwrap();
    assert_eq!(p.shape(), [5]);
    assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn raw_recording_becomes_labelled_epochs() {
    // 200 Hz signals, five 30 s stages then an unscored tail
    let spec = SynthSpec {
        sampling_rate: 200.0,
        samples_per_epoch: 6000,
        channels: 1,
        ..SynthSpec::default()
    };
    let stages = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R];
    let mut samples = Vec::new();
    for (i, &s) in stages.iter().enumerate() {
        samples.extend(generate_epoch(&spec, s, i as u64).unwrap());
    }
    samples.extend(vec![0.0; 3000]);
    let labels = ["Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3", "Sleep stage R"];
    let rec = Recording {
        subject_id: "r1".into(),
        channels: vec![Channel {
            name: "EEG".into(),
            samples,
            fs: 200.0,
        }],
        annotations: labels
            .iter()
            .enumerate()
            .map(|(i, l)| Annotation {
                onset: 30.0 * i as f64,
                duration: 30.0,
                label: (*l).into(),
            })
            .collect(),
    };
    let (epochs, report) = preprocess(&rec, &PrepConfig::default()).unwrap();
    assert_eq!(epochs.iter().map(|e| e.label).collect::<Vec<_>>(), stages);
    assert!(epochs.iter().all(|e| e.samples.len() == 3000 && e.samples.iter().all(|v| v.is_finite())));
    assert_eq!(report.kept, 5);
    assert_eq!(report.dropped_unannotated, 0);

    let raw = epochize(&rec, WakePolicy::KeepAll).unwrap().0;
    assert_eq!(raw.len(), 5);
    assert_eq!(raw[0].samples.len(), 6000);
}
