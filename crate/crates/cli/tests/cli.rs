use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn latfill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latfill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_CORPUS: &str =
    "speakers_per_language = 3, 3\nholdout_speakers_per_language = 2\nutterances_per_speaker = 3\n";
const SMALL_TRAIN: &str = "steps = 20\nbatch_size = 4\n";

#[test]
fn gradcheck_passes() {
    let o = latfill(&["gradcheck", "--trials", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("cosine"));
    assert!(table.contains("lfcl_end_to_end"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn epsilon_out_of_range_is_usage_error() {
    let o = latfill(&["augment", "--in", "a", "--out", "b", "--epsilon", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("--epsilon"), "{err}");
    assert!(err.contains("[0, 1]"), "{err}");
}

#[test]
fn unknown_flag_and_mode_are_usage_errors() {
    assert_eq!(latfill(&["gradcheck", "--bogus"]).status.code(), Some(2));
    let o = latfill(&["augment", "--in", "a", "--out", "b", "--mode", "mixup"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(latfill(&[]).status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    for (cmd, needles) in [
        (
            "augment",
            &[
                "[default: 0.5]",
                "[default: 0.0001]",
                "[default: full]",
                "[default: 1000]",
            ][..],
        ),
        ("compare", &["[default: 5]", "[default: 1000]"][..]),
        ("eval", &["[default: 1000]"][..]),
        ("gradcheck", &["[default: 100]", "[default: 0]"][..]),
    ] {
        let o = latfill(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = stdout(&o);
        for n in needles {
            assert!(text.contains(n), "{cmd} --help lacks {n}:\n{text}");
        }
    }
}

#[test]
fn unknown_config_key_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "seed = 1\nspeakers = 4\n").unwrap();
    let out = dir.path().join("c.txt");
    let o = latfill(&["gen-data", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("c.cfg:2"), "{err}");
    assert!(err.contains("speakers"), "{err}");
    assert!(!out.exists());
}

#[test]
fn malformed_records_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tsv");
    fs::write(&input, "0\t0\t1,0\n1\t0\tnot-a-number\n").unwrap();
    let o = latfill(&["stats", "--in", p(&input)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("in.tsv:2"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_reported() {
    let o = latfill(&["stats", "--in", "/nonexistent/records.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/records.tsv"));
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("corpus.cfg"), SMALL_CORPUS).unwrap();
    fs::write(d.join("train.cfg"), SMALL_TRAIN).unwrap();

    for run in ["a", "b"] {
        let corpus = d.join(format!("corpus_{run}.txt"));
        let o = latfill(&[
            "gen-data",
            "--config",
            p(&d.join("corpus.cfg")),
            "--out",
            p(&corpus),
            "--seed",
            "7",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let model = d.join(format!("model_{run}.txt"));
        let log = d.join(format!("log_{run}.txt"));
        let o = latfill(&[
            "train",
            "--config",
            p(&d.join("train.cfg")),
            "--corpus",
            p(&corpus),
            "--out-model",
            p(&model),
            "--out-log",
            p(&log),
            "--seed",
            "3",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report = d.join(format!("eval_{run}.txt"));
        let o = latfill(&[
            "eval",
            "--model",
            p(&model),
            "--corpus",
            p(&corpus),
            "--out",
            p(&report),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("secs_mean "));
    }
    for name in ["corpus", "model", "log", "eval"] {
        let a = fs::read(d.join(format!("{name}_a.txt"))).unwrap();
        let b = fs::read(d.join(format!("{name}_b.txt"))).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
}

#[test]
fn eval_refuses_corpus_without_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.cfg"),
        "speakers_per_language = 2, 2\nholdout_speakers_per_language = 0\nutterances_per_speaker = 2\n",
    )
    .unwrap();
    fs::write(d.join("t.cfg"), "steps = 2\nbatch_size = 2\n").unwrap();
    let corpus = d.join("c.txt");
    assert!(
        latfill(&["gen-data", "--config", p(&d.join("c.cfg")), "--out", p(&corpus)])
            .status
            .success()
    );
    let model = d.join("m.txt");
    let log = d.join("l.txt");
    let o = latfill(&[
        "train",
        "--config",
        p(&d.join("t.cfg")),
        "--corpus",
        p(&corpus),
        "--out-model",
        p(&model),
        "--out-log",
        p(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = latfill(&["eval", "--model", p(&model), "--corpus", p(&corpus)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("holdout"));
}

#[test]
fn compare_reports_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), SMALL_CORPUS).unwrap();
    fs::write(d.join("base.cfg"), format!("{SMALL_TRAIN}tau = 0\n")).unwrap();
    fs::write(d.join("lf.cfg"), format!("{SMALL_TRAIN}tau = 0.25\n")).unwrap();
    let corpus = d.join("c.txt");
    assert!(
        latfill(&["gen-data", "--config", p(&d.join("c.cfg")), "--out", p(&corpus)])
            .status
            .success()
    );
    let table = d.join("table.tsv");
    let o = latfill(&[
        "compare",
        "--config-base",
        p(&d.join("base.cfg")),
        "--config-lf",
        p(&d.join("lf.cfg")),
        "--corpus",
        p(&corpus),
        "--seeds",
        "2",
        "--out-table",
        p(&table),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("lf_wins "));
    let t = fs::read_to_string(&table).unwrap();
    assert_eq!(t.lines().count(), 3);
    assert!(t.starts_with("seed\tsecs_base\tsecs_lf\tlf_wins"));

    fs::write(
        d.join("lf_bad.cfg"),
        format!("{SMALL_TRAIN}tau = 0.25\nlearning_rate = 0.01\n"),
    )
    .unwrap();
    let o = latfill(&[
        "compare",
        "--config-base",
        p(&d.join("base.cfg")),
        "--config-lf",
        p(&d.join("lf_bad.cfg")),
        "--corpus",
        p(&corpus),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn augment_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("in.tsv");
    fs::write(&input, "0\t0\t1,0,0\n1\t0\t0,1,0\n2\t1\t0,0,1\n3\t1\t1,1,1\n").unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = d.join(format!("aug_{run}.tsv"));
        let o = latfill(&[
            "augment",
            "--in",
            p(&input),
            "--out",
            p(&out),
            "--n",
            "40",
            "--seed",
            "9",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let audit = d.join(format!("aug_{run}.tsv.audit"));
        outputs.push((fs::read(&out).unwrap(), fs::read(&audit).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let recs = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(recs.lines().filter(|l| !l.starts_with('#')).count(), 40);
    let audit = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert_eq!(audit.lines().filter(|l| !l.starts_with('#')).count(), 40);

    let cfg = d.join("stats.cfg");
    fs::write(&cfg, "draws = 500\nseed = 4\n").unwrap();
    let o = latfill(&["stats", "--in", p(&input), "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("draws 500"));
    assert!(text.contains("mean_displacement_noise_only"));
}
