use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toxspan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toxspan")).args(args).output().expect("spawn toxspan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"
[tagger]
word_dim = 12
char_dim = 6
"Char BiLSTM Hidden Size" = 6
"BiLSTM size" = 12

[tagger_schedule]
max_epochs = 3

[biaffine]
word_dim = 12
char_dim = 6
"Char BiLSTM Hidden Size" = 6
"BiLSTM size" = 8
"BiLSTM layer" = 1
"FFNN size" = 8

[biaffine_schedule]
max_steps = 20
eval_every = 10
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(ws.path("run.toml"), SMALL_CONFIG).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, name: &str, seed: u64, size: usize) -> PathBuf {
        let out = self.path(name);
        let o = toxspan(&["synth", "--seed", &seed.to_string(), "--size", &size.to_string(), "--output", p(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }

    fn train(&self, arch: &str, model: &str) -> Output {
        let (train, dev) = (self.synth("train.csv", 1, 50), self.synth("dev.csv", 2, 20));
        toxspan(&[
            "train",
            "--config",
            p(&self.path("run.toml")),
            "--arch",
            arch,
            "--input",
            p(&train),
            "--dev",
            p(&dev),
            "--model",
            p(&self.path(model)),
        ])
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(toxspan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(toxspan(&["train"]).status.code(), Some(1));
    let o = toxspan(&["gradcheck", "--arch", "biaffine", "--no-crf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert_eq!(toxspan(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let ws = Workspace::new();
    let missing = ws.path("nope.csv");
    assert_eq!(toxspan(&["analyze", "--input", p(&missing)]).status.code(), Some(2));

    let bad = ws.path("bad.csv");
    std::fs::write(&bad, "spans,text\n\"[0, 1]\",hi\n\"[99]\",short\n").unwrap();
    assert_eq!(toxspan(&["analyze", "--input", p(&bad)]).status.code(), Some(2));
    let o = toxspan(&["analyze", "--input", p(&bad), "--lenient"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("records: 1\nskipped: 1"), "{}", stdout(&o));
}

#[test]
fn synth_is_deterministic() {
    let ws = Workspace::new();
    let a = std::fs::read(ws.synth("a.csv", 5, 100)).unwrap();
    let b = std::fs::read(ws.synth("b.csv", 5, 100)).unwrap();
    let c = std::fs::read(ws.synth("c.csv", 6, 100)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn evaluate_identical_files_scores_one() {
    let o = toxspan(&["evaluate", "--input", &fixture("gold.csv"), "--gold", &fixture("gold.csv")]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "corpus F1: 1.0000 over 4 posts\n");
}

#[test]
fn evaluate_golden_fixture() {
    // per post: exact match 1, missed span 0, false alarm 0, both empty 1
    let o = toxspan(&["evaluate", "--input", &fixture("pred.csv"), "--gold", &fixture("gold.csv")]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "corpus F1: 0.5000 over 4 posts\n");
}

#[test]
fn evaluate_buckets_partition_posts() {
    let ws = Workspace::new();
    let out = ws.path("report.csv");
    let o = toxspan(&[
        "evaluate",
        "--input",
        &fixture("pred.csv"),
        "--gold",
        &fixture("gold.csv"),
        "--buckets",
        "--lexicon",
        "builtin",
        "--output",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let posts_in = |section: &str| -> usize {
        csv.lines()
            .filter(|l| l.starts_with(section))
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum()
    };
    assert_eq!(posts_in("bucket,"), 4);
    assert_eq!(posts_in("lexicon,"), 2);
    assert!(csv.contains("bucket,1,2,2,0.500000"), "{csv}");
}

#[test]
fn evaluate_rejects_misaligned_files() {
    let ws = Workspace::new();
    let short = ws.synth("short.csv", 1, 2);
    let o = toxspan(&["evaluate", "--input", p(&short), "--gold", &fixture("gold.csv")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ws = Workspace::new();
    let config = ws.path("run.toml");
    for arch in ["tagger", "biaffine"] {
        let o = toxspan(&["gradcheck", "--config", p(&config), "--arch", arch]);
        assert!(o.status.success(), "{arch}: {}", stdout(&o));
        assert!(stdout(&o).contains("PASS"));
    }
    let o = toxspan(&["gradcheck", "--config", p(&config), "--corrupt-gradient"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL"));
}

#[test]
fn train_predict_smoke() {
    let ws = Workspace::new();
    let o = ws.train("tagger", "model.json");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(ws.path("model.json.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3, "{log}");

    let dev = ws.path("dev.csv");
    let mut outputs = Vec::new();
    for name in ["p1.csv", "p2.csv"] {
        let out = ws.path(name);
        let o = toxspan(&["predict", "--model", p(&ws.path("model.json")), "--input", p(&dev), "--output", p(&out)]);
        assert!(o.status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count();
    assert_eq!(rows, 21);
    let o = toxspan(&["evaluate", "--input", p(&ws.path("p1.csv")), "--gold", p(&dev)]);
    assert!(o.status.success());
}

#[test]
fn biaffine_train_smoke() {
    let ws = Workspace::new();
    let o = ws.train("biaffine", "b.json");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(ws.path("b.json.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2, "{log}");
}

#[test]
fn header_only_input() {
    let ws = Workspace::new();
    let empty = ws.path("empty.csv");
    std::fs::write(&empty, "spans,text\n").unwrap();
    ws.train("tagger", "model.json");
    let out = ws.path("pred.csv");
    let o = toxspan(&["predict", "--model", p(&ws.path("model.json")), "--input", p(&empty), "--output", p(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "spans,text\n");
    let o = toxspan(&["analyze", "--input", p(&empty)]);
    assert!(stdout(&o).starts_with("records: 0\n"));
}

#[test]
fn preprocess_keeps_offsets() {
    let o = toxspan(&["preprocess", "--input", &fixture("gold.csv")]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("post,token,start,end\n0,you,0,2\n0,idiot,4,8\n0,!,9,9\n"), "{out}");
}
