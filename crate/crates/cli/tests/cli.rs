use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
seeds = [0]

[dataset]
kind = "toy"
samples_per_class = 8
test_samples_per_class = 5

[distill]
kind = "run"
method = "dm"
ipc = 1
iterations = 2
lr_images = 1.0
seed = 0
model = { family = "convnet", depth = 3, width = 8, norm = "instance", num_classes = 4, input_shape = [3, 16, 16] }

[extractor]
seed = 0
model = { family = "convnet", depth = 3, width = 16, norm = "instance", num_classes = 4, input_shape = [3, 16, 16] }
train = { batch_size = 16 }

[train]
epochs = 2

[[grid]]
model = { family = "vgg", depth = 11, width = 2, norm = "bn", num_classes = 4, input_shape = [3, 16, 16] }

[[grid]]
model = { family = "vgg", depth = 11, width = 2, norm = "bn", num_classes = 4, input_shape = [3, 16, 16] }
elf = { feature_epoch = 1 }
"#;

fn elf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elf")).args(args).output().unwrap()
}

fn setup(dir: &Path) -> String {
    let cfg = dir.join("tiny.toml");
    let text = format!("output_dir = {:?}\n{TINY}", dir.join("out").display().to_string());
    std::fs::write(&cfg, text).unwrap();
    cfg.display().to_string()
}

#[test]
fn grid_report_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());

    let out = elf(&["grid", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MiniVGG-BN-w2"));

    let run_dir = dir.path().join("out");
    let out = elf(&[
        "report",
        run_dir.to_str().unwrap(),
        "--format",
        "csv",
        "--gold",
        "CIFAR-10/DM",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("NOT COMPARABLE"));
    assert!(run_dir.join("metrics.csv").exists());

    // an earlier split yields a front output the cached features cannot match
    let out = elf(&["eval", "--config", &cfg, "--split", "layer3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = elf(&["grid", "--config", &cfg, "--distance", "hamming"]);
    assert_eq!(out.status.code(), Some(2));
    let out = elf(&["grid", "--config", "/nonexistent.toml"]);
    assert_ne!(out.status.code(), Some(0));

    // an unreachable learning rate makes every ELF cell diverge
    let broken = std::fs::read_to_string(&cfg).unwrap().replace(
        "elf = { feature_epoch = 1 }",
        "elf = { feature_epoch = 1 }\ntrain = { epochs = 2, lr = 1e30 }",
    );
    let broken_cfg = dir.path().join("broken.toml");
    std::fs::write(&broken_cfg, broken).unwrap();
    let out = elf(&[
        "grid",
        "--config",
        broken_cfg.to_str().unwrap(),
        "--output-dir",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = elf(&["report", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
