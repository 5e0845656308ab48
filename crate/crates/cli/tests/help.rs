//! `--help` output is pinned by golden files in `tests/golden`. Regenerate
//! with `VIGC_UPDATE_GOLDEN=1 cargo test -p vigc-cli --test help`.

use std::path::PathBuf;
use std::process::Command;

const COMMANDS: [(&str, &[&str]); 5] = [
    ("vigc", &[]),
    ("gradcheck", &[]),
    ("train", &["--config", "--out", "--resume"]),
    ("infer", &["--checkpoint", "--start", "--end", "--samples", "--out", "--seed"]),
    ("gen-data", &["--dataset", "--seed", "--count", "--out", "--mnist-idx", "--image-size"]),
];

fn help(sub: &str) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vigc"));
    if sub != "vigc" {
        cmd.arg(sub);
    }
    let out = cmd.arg("--help").output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_matches_golden_files() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("VIGC_UPDATE_GOLDEN").is_some();
    for (sub, flags) in COMMANDS {
        let text = help(sub);
        for flag in flags {
            assert!(text.contains(flag), "`{sub} --help` does not document {flag}");
        }
        let path = dir.join(format!("{sub}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
        } else {
            let golden = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(text, golden, "`{sub} --help` changed");
        }
    }
}
