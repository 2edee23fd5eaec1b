use super::*;
use crate::io::manifest::parse_segments;
use crate::Tensor;
use std::collections::BTreeMap;
use std::path::PathBuf;

fn small_config(data: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(
        r#"
        seed = 11
        [data]
        subjects = [2, 3]
        blocks = 2
        [split]
        hidden_subjects = [3]
        "#,
    )
    .unwrap();
    cfg.data.dir = data.to_path_buf();
    cfg
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn echo_round_trips_to_resolved_config() {
    let cfg = RunConfig::parse("seed = 3\n[eegnet.train]\nepochs = 4\n").unwrap();
    let back = RunConfig::parse(&cfg.echo().unwrap()).unwrap();
    assert_eq!(back, cfg.resolved());
    assert_eq!(back.eegnet_train(), cfg.eegnet_train());
    assert_eq!(back.eegnet_train().epochs, 4);
    assert_eq!(back.eegnet_train().batch_size, 64);
}

#[test]
fn augment_lists_parse_into_specs() {
    let cfg = RunConfig::parse(
        r#"
        [[ablation.rows]]
        epochs = 2
        augment = [{ kind = "time_mask", max_width = 25, max_count = 0 }]
        [[ablation.rows]]
        augment = [{ kind = "salt_pepper", sigma = 0.5, p = 0.5 }]
        "#,
    )
    .unwrap();
    assert_eq!(cfg.ablation.rows[0].display_label(), "Time mask; 25, 0");
    assert_eq!(cfg.ablation.rows[1].display_label(), "Salt pepper; 0.5");
    assert_eq!(RunConfig::parse(&cfg.echo().unwrap()).unwrap(), cfg.resolved());
}

#[test]
fn bad_configs_are_usage_errors() {
    for text in [
        "sede = 1",
        "[split]\nratio = [8, 0, 1]",
        "[fusion]\nalphas = [0.5, 1.5]",
        "[fusion]\nalphas = []",
        "[eegnet.train]\nlearning_rate = -1.0",
        "[[eegnet.augment]]\nkind = \"salt_pepper\"\nsigma = -2.0",
        "[data]\nblocks = 0",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.is_usage(), "{text}: {err}");
    }
}

/// Magnitude of the naive DFT of `x` at bin `k`.
fn dft_mag(x: &[f32], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, &v) in x.iter().enumerate() {
        let ph = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n;
        re += v as f64 * ph.cos();
        im += v as f64 * ph.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn synth_writes_manifest_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_synth(&cfg, &a).unwrap();
    cmd_synth(&cfg, &b).unwrap();
    let rows = parse_segments(&read_text(&a.join(data::SEGMENT_MANIFEST)).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 40 * 2);
    assert_eq!(tree(&a), tree(&b));

    // rerunning from the echo reproduces the files
    let echoed = RunConfig::load(&a.join(CONFIG_ECHO)).unwrap();
    let c = tmp.path().join("c");
    cmd_synth(&echoed, &c).unwrap();
    assert_eq!(tree(&a), tree(&c));

    // the occipital spectrum of a target-5 segment peaks at its 9 Hz stimulus
    let segs = data::read_segments(&a).unwrap();
    let seg = segs.iter().find(|s| s.label == 5).unwrap();
    let n = seg.data.dim(1);
    let rate = cfg.synth.sample_rate / cfg.preprocess.decimation as f64;
    let bin = |hz: f64| (hz * n as f64 / rate).round() as usize;
    let power = |k: usize| -> f64 {
        cfg.synth
            .occipital
            .iter()
            .map(|&c| dft_mag(&seg.data.data()[c * n..(c + 1) * n], k))
            .sum()
    };
    let peak = (bin(7.0)..=bin(30.0)).max_by(|&i, &j| power(i).total_cmp(&power(j))).unwrap();
    assert!(peak.abs_diff(bin(cfg.synth.frequency(5))) <= 1, "peak bin {peak}");
}

#[test]
fn segment_dataset_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let segs = data::synth_segments(&Default::default(), &Default::default(), &[4], 1, 2).unwrap();
    data::write_segments(tmp.path(), &segs).unwrap();
    let back = data::read_segments(tmp.path()).unwrap();
    assert_eq!(back.len(), segs.len());
    for (a, b) in segs.iter().zip(&back) {
        assert_eq!((a.subject, a.label, a.block), (b.subject, b.label, b.block));
        assert_eq!(a.data, b.data);
    }
}

fn zero_dataset(dir: &Path) {
    let segs: Vec<SegmentSample> = (0..80)
        .map(|i| SegmentSample {
            data: Tensor::zeros(&[64, 250]),
            label: i % 40,
            subject: 2 + (i / 40) as u32,
            block: 1,
            flat_channel: true,
        })
        .collect();
    data::write_segments(dir, &segs).unwrap();
}

#[test]
fn history_has_one_row_per_epoch_and_shows_plateau_halving() {
    // all-zero inputs keep the logits at ~1e-30, so the validation loss is
    // exactly ln 40 every epoch and the plateau rule must fire
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    zero_dataset(&data_dir);
    let mut cfg = RunConfig::parse(
        r#"
        [split]
        hidden_subjects = []
        [eegnet.model]
        dropout_rate = 0.0
        [eegnet.train]
        epochs = 6
        learning_rate = 1e-30
        scheduler = { kind = "plateau", factor = 0.5, patience = 2, min_lr = 1e-32 }
        "#,
    )
    .unwrap();
    cfg.data.dir = data_dir;
    let out = tmp.path().join("run");
    let trained = cmd_train_eegnet(&cfg, &out).unwrap();
    let csv = read_text(&out.join("history.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr\n"));
    assert_eq!(csv.lines().count(), 7);
    let lrs: Vec<f64> = trained.history.epochs.iter().map(|e| e.lr).collect();
    // epoch 1 sets the best; epochs 2-3 stall -> halve for epoch 4; 4-5 stall -> epoch 6
    assert_eq!(lrs, [1e-30, 1e-30, 1e-30, 5e-31, 5e-31, 2.5e-31]);
    let val: Vec<f64> = trained.history.epochs.iter().map(|e| e.val_loss).collect();
    assert!(val.iter().all(|&v| v == val[0]));
    assert!(out.join("eegnet.eft").exists() && out.join("metrics.csv").exists());
}

#[test]
fn ablation_identity_row_matches_baseline_and_failures_are_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    let mut cfg = small_config(&data_dir);
    cmd_synth(&cfg, &data_dir).unwrap();
    cfg.eegnet.train.epochs = Some(1);
    cfg.ablation = config::AblationSection {
        sort: SortKey::ValAcc,
        rows: vec![
            config::AblationRowSpec {
                label: None,
                augment: vec![crate::augment::AugSpec::new(crate::augment::AugKind::TimeMask {
                    max_width: 25,
                    max_count: 0,
                })],
                epochs: None,
            },
            config::AblationRowSpec {
                label: Some("broken".into()),
                augment: vec![],
                epochs: Some(0),
            },
        ],
        ..Default::default()
    };
    let out = tmp.path().join("ablate");
    let table = cmd_ablate(&cfg, &out).unwrap();
    assert_eq!(table.rows.len(), 3);
    let base = table.baseline().unwrap();
    assert_eq!(base.label, "Baseline");
    let ident = table.by_label("Time mask; 25, 0").unwrap();
    assert_eq!(
        (ident.train_acc, ident.val_acc, ident.val_loss, ident.test_acc_1, ident.test_acc_2),
        (base.train_acc, base.val_acc, base.val_loss, base.test_acc_1, base.test_acc_2)
    );
    let broken = table.by_label("broken").unwrap();
    assert!(broken.status.starts_with("error"));
    assert_eq!(table.rows.last().unwrap().label, "broken");
    let csv = read_text(&out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("row,label,epochs,train_acc,val_acc,val_loss,test_acc_1,test_acc_2,status\n"));
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("histories/row_00.csv").exists() && out.join("histories/row_01.csv").exists());
}

#[test]
fn stitch_then_fuse_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    let mut cfg = small_config(&data_dir);
    cmd_synth(&cfg, &data_dir).unwrap();
    let words_file = tmp.path().join("mini.txt");
    std::fs::write(&words_file, "cab\nface\nbead\na\n").unwrap();
    cfg.words.lists = vec![words_file.display().to_string()];
    cfg.words.dir = tmp.path().join("words");
    cmd_stitch_words(&cfg, &cfg.words.dir).unwrap();
    assert!(cfg.words.dir.join("hidden_mini.manifest").exists());
    assert!(cfg.words.dir.join("all_mini.manifest").exists());

    cfg.eegnet.train.epochs = Some(1);
    cmd_train_eegnet(&cfg, &tmp.path().join("eeg")).unwrap();
    cfg.eegnet.weights = tmp.path().join("eeg/eegnet");
    cfg.charrnn.model = crate::models::CharRnnConfig {
        embed_dim: 8,
        hidden: 16,
        ..Default::default()
    };
    cfg.charrnn.train.epochs = Some(1);
    cmd_train_charrnn(&cfg, &tmp.path().join("lm")).unwrap();
    cfg.charrnn.weights = tmp.path().join("lm/charrnn");

    cfg.fusion.alphas = vec![0.0, 0.5, 0.75, 1.0];
    let out = tmp.path().join("fuse");
    let res = cmd_fuse_eval(&cfg, &out).unwrap();
    let csv = read_text(&out.join("alpha_sweep.csv")).unwrap();
    assert!(csv.starts_with("dataset,alpha,accuracy,n_chars\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert_eq!(res.table.accuracy("all_mini", 1.0).map(|_| ()), Some(()));
    assert!(res.summary.contains("hidden_mini: peak"));
    assert_eq!(read_text(&out.join("traces/all_mini.txt")).unwrap().lines().count(), 12);
    assert!(out.join("alpha_sweep.gp").exists());

    let again = tmp.path().join("fuse2");
    cmd_fuse_eval(&RunConfig::load(&out.join(CONFIG_ECHO)).unwrap(), &again).unwrap();
    assert_eq!(tree(&out), tree(&again));
}

#[test]
fn gnuplot_script_names_every_dataset() {
    let s = report::gnuplot_script("alpha_sweep.csv", &["all_top100_common", "hidden_top100_common"]);
    assert!(s.contains("'^all_top100_common,'") && s.contains("'^hidden_top100_common,'"));
}
