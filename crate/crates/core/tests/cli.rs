use std::path::Path;
use std::process::{Command, Output};

use hmcsim::report::parse_run_report;

fn hmcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmcsim"))
        .args(args)
        .output()
        .expect("spawn hmcsim")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
[trace.generate]
pattern = "kv_mix"
count = 3000
footprint = 4194304
seed = 3
"#;

#[test]
fn missing_trace_file_is_io_error() {
    let o = hmcsim(&["run", "--trace", "/nonexistent/trace.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("/nonexistent/trace.txt"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "prefetc_depth = 2\n");
    let o = hmcsim(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prefetc_depth"), "{}", stderr(&o));
}

#[test]
fn bad_trace_line_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = write(dir.path(), "t.txt", "1 R 0x40 0x400\n0 R 0x80 0x400\n");
    let o = hmcsim(&["run", "--trace", &t]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
}

#[test]
fn gen_binary_has_25_bytes_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.bin");
    let o = hmcsim(&[
        "gen",
        "--out",
        out.to_str().unwrap(),
        "--count",
        "1234",
        "--binary",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 25 * 1234);

    let run = hmcsim(&["run", "--trace", out.to_str().unwrap(), "--format", "json"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let r = parse_run_report(&String::from_utf8(run.stdout).unwrap()).unwrap();
    assert_eq!(r.counters.records, 1234);
}

#[test]
fn gen_text_then_run_matches_generated_run() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    let spec = write(
        dir.path(),
        "g.toml",
        "pattern = \"zipfian\"\ncount = 2000\nseed = 5\n",
    );
    assert!(
        hmcsim(&["gen", "--config", &spec, "--out", t.to_str().unwrap()])
            .status
            .success()
    );
    let from_file = hmcsim(&["run", "--trace", t.to_str().unwrap(), "--format", "json"]);
    let cfg = write(
        dir.path(),
        "c.toml",
        "[trace.generate]\npattern = \"zipfian\"\ncount = 2000\nseed = 5\n",
    );
    let generated = hmcsim(&["run", "--config", &cfg, "--format", "json"]);
    let a = parse_run_report(&String::from_utf8(from_file.stdout).unwrap()).unwrap();
    let b = parse_run_report(&String::from_utf8(generated.stdout).unwrap()).unwrap();
    assert_eq!(a.counters, b.counters);
}

#[test]
fn print_config_round_trips() {
    let o = hmcsim(&["run", "--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = hmcsim::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, hmcsim::ExperimentConfig::default());
}

#[test]
fn compare_reports_coverage_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("cmp.csv");
    let o = hmcsim(&[
        "compare",
        "--config",
        &cfg,
        "--system",
        "hmc",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("coverage"));
    let text = std::fs::read_to_string(out).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let hmc = rows
        .iter()
        .find(|r| &r[1] == "with_prefetch" && &r[3] == "hmc")
        .unwrap();
    let cov: f64 = hmc[26].parse().unwrap();
    assert!(cov > 0.0, "{cov}");
    let l1i = rows
        .iter()
        .find(|r| &r[1] == "with_prefetch" && &r[3] == "l1i")
        .unwrap();
    assert_eq!(&l1i[26], "n/a");
}

#[test]
fn sweep_rows_in_product_order_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!(
            "{SMALL}\n[hierarchy]\nprefetch_system = \"hmc_plus_l1\"\n\
             [[sweep]]\nkey = \"hierarchy.prefetch.hmc.next_line.depth\"\nvalues = [0, 1, 2]\n\
             [[sweep]]\nkey = \"hierarchy.prefetch.l1.stride.depth\"\nvalues = [0, 4]\n"
        ),
    );
    let run = || {
        let o = hmcsim(&["sweep", "--config", &cfg, "--format", "csv"]);
        assert!(o.status.success(), "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let mut r = csv::Reader::from_reader(a.as_bytes());
    let labels: Vec<String> = r
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[3] == "summary")
        .map(|r| r[1].to_string())
        .collect();
    let want: Vec<String> = [0, 1, 2]
        .iter()
        .flat_map(|h| {
            [0, 4].map(|s| {
                format!(
                    "hierarchy.prefetch.hmc.next_line.depth={h};hierarchy.prefetch.l1.stride.depth={s}"
                )
            })
        })
        .collect();
    assert_eq!(labels, want);
}

#[test]
fn sweep_with_unknown_key_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!("{SMALL}\n[[sweep]]\nkey = \"hierarchy.l2.wayz\"\nvalues = [4]\n"),
    );
    let o = hmcsim(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hierarchy.l2.wayz"), "{}", stderr(&o));
}

#[test]
fn human_output_has_no_ipc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let o = hmcsim(&["run", "--config", &cfg, "--format", "human"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("AMAT"));
    assert!(!text.to_lowercase().contains("ipc"));
}
