use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "image={height=8,width=8,channels=3}",
    "data.count=220",
    "benchmark.samples_per_family=220",
    "benchmark.split_ratio=0.9090909090909091",
    "benchmark.shots=2",
    "seeds=[1]",
    "coverage.train=100",
    "coverage.test=20",
    "coverage.schedule={iterations=20,base_lr=0.02,warmup=1,milestones=[10],decay=0.1,momentum=0.9,weight_decay=0.0005,batch_size=16}",
    "schedule.base={iterations=20,base_lr=0.02,warmup=1,milestones=[10],decay=0.1,momentum=0.9,weight_decay=0.0005,batch_size=16}",
    "schedule.finetune={iterations=10,base_lr=0.01,warmup=0,milestones=[],decay=0.1,momentum=0.9,weight_decay=0.0005,batch_size=16}",
    "gai.steps=2",
];

fn gai_forge(root: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gai-forge"));
    cmd.args(args).env("RUST_LOG", "warn").env("GAI_FORGE_THREADS", "1");
    for o in TINY {
        cmd.arg("--set").arg(o);
    }
    cmd.arg("--set")
        .arg(format!("data.dir={:?}", root.join("data")))
        .arg("--set")
        .arg(format!("output_dir={:?}", root.join("out")));
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = gai_forge(dir.path(), &["run", "--method", "sgd"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
    assert_eq!(code(&gai_forge(dir.path(), &["ablate", "beta"])), 2);
    assert_eq!(code(&gai_forge(dir.path(), &["gen-data", "--set", "fpr_point=2"])), 2);
    assert_eq!(code(&gai_forge(dir.path(), &["frobnicate"])), 2);
    let help = Command::new(env!("CARGO_BIN_EXE_gai-forge")).arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gai_forge(dir.path(), &["coverage"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("run gen-data first"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let files = ["manifest.json", "real/train.gait", "grid-a/test.gait", "shift-b/train.gait"];
    let read = |f: &str| std::fs::read(dir.path().join("data").join(f)).unwrap();
    assert_eq!(code(&gai_forge(dir.path(), &["gen-data"])), 0);
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(f)).collect();
    std::fs::remove_dir_all(dir.path().join("data")).unwrap();
    assert_eq!(code(&gai_forge(dir.path(), &["gen-data"])), 0);
    for (f, bytes) in files.iter().zip(&first) {
        assert!(read(f) == *bytes, "{f} differs");
    }
}

#[test]
fn full_command_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&gai_forge(root, &["gen-data"])), 0);
    let o = gai_forge(root, &["coverage"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["coverage.csv", "components.csv", "edges.txt", "taxonomy.dot"] {
        assert!(root.join("out/coverage").join(f).exists(), "{f}");
    }
    // The tiny detectors decide whether assembly passes the coverage check;
    // either way it must not be a crash.
    let o = gai_forge(root, &["assemble"]);
    assert!(matches!(code(&o), 0 | 1));
    std::fs::remove_dir_all(root.join("out/coverage")).unwrap();

    assert_eq!(code(&gai_forge(root, &["train-base"])), 0);
    let o = gai_forge(root, &["run", "--method", "gai"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("method,acc_minor_mean"));
    assert!(root.join("out/runs/gai/seed-1.json").exists());

    let o = gai_forge(root, &["ablate", "lambda", "--set", "ablate.lambda=[0.0,0.5]"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(root.join("out/ablate/lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = gai_forge(root, &["export-samples", "-n", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("out/samples/quintuples.json").exists());
}
