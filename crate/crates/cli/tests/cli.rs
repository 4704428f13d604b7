use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hilight::data::load_jsonl;
use hilight::text::tokenize;
use serde_json::Value;
use tempfile::TempDir;

fn hilight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hilight"))
        .args(args)
        .env_remove("HILIGHT_ENDPOINT")
        .env_remove("HILIGHT_AUTH_TOKEN")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
}

fn fixture(steps: u32) -> Fixture {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.jsonl");
    let o = hilight(&["gen-synth", "--n", "24", "--target-tokens", "300", "--seed", "5", "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let o = hilight(&[
        "train",
        "--train-path",
        p(&data),
        "--out-dir",
        p(&run),
        "--steps",
        &steps.to_string(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    Fixture {
        checkpoint: run.join("checkpoint.json"),
        data,
        dir,
    }
}

#[test]
fn train_without_dataset_names_the_field() {
    let o = hilight(&["train", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train_path"), "{}", stderr(&o));

    let o = hilight(&["train", "--train-path", "/nonexistent/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train_path"));
}

#[test]
fn train_writes_checkpoint_and_log_deterministically() {
    let f = fixture(200);
    let log = f.dir.path().join("run/metrics.jsonl");
    assert!(f.checkpoint.is_file());
    let first = fs::read_to_string(&log).unwrap();
    assert_eq!(first.lines().count(), 200);
    let rec: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["step", "rewards", "L_PG", "L_LEN", "L_ENT", "mean_p", "k"] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }

    let run2 = f.dir.path().join("run2");
    let o = hilight(&[
        "train",
        "--train-path",
        p(&f.data),
        "--out-dir",
        p(&run2),
        "--steps",
        "200",
        "--seed",
        "3",
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(run2.join("metrics.jsonl")).unwrap(), first);
}

#[test]
fn train_reads_flat_config_and_flags_override() {
    let f = fixture(1);
    let cfg = f.dir.path().join("run.toml");
    let out = f.dir.path().join("cfgrun");
    fs::write(
        &cfg,
        format!(
            "train_path = \"{}\"\nout_dir = \"{}\"\nsteps = 50\nmarker = \"html-b\"\n",
            p(&f.data),
            p(&out)
        ),
    )
    .unwrap();
    let o = hilight(&["train", "--config", p(&cfg), "--steps", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 7);

    fs::write(&cfg, "stepz = 3\n").unwrap();
    let o = hilight(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn http_solver_without_endpoint_is_config_error() {
    let f = fixture(1);
    let o = hilight(&["train", "--train-path", p(&f.data), "--solver", "http", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("endpoint"));
}

#[test]
fn unreachable_solver_exits_3_with_partial_checkpoint() {
    let f = fixture(1);
    let cfg = f.dir.path().join("http.toml");
    let out = f.dir.path().join("http-run");
    fs::write(
        &cfg,
        format!(
            "train_path = \"{}\"\nout_dir = \"{}\"\nsolver = \"http\"\nendpoint = \"http://127.0.0.1:9/v1\"\nmax_attempts = 1\nfailure_budget = 2\nsteps = 10\n",
            p(&f.data),
            p(&out)
        ),
    )
    .unwrap();
    let o = hilight(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("checkpoint.json").is_file());
}

#[test]
fn highlight_zero_budget_is_identity() {
    let f = fixture(20);
    let text = "Marta hid code 12345 inside the box at Elm Court. Birds sang.";
    let o = hilight(&["highlight", "--checkpoint", p(&f.checkpoint), "--text", text, "--gamma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), format!("{text}\n"));
}

#[test]
fn highlight_formats_spans_and_is_repeatable() {
    let f = fixture(20);
    let text = "Marta hid code 12345 inside the box at Elm Court. Birds sang over the quiet hills all day long.";
    let args = [
        "highlight",
        "--checkpoint",
        p(&f.checkpoint),
        "--text",
        text,
        "--query",
        "where did Marta hide the code ?",
        "--gamma",
        "0.3",
        "--format",
        "html-b",
        "--spans",
    ];
    let a = hilight(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let out = stdout(&a);
    let mut lines = out.lines();
    let emphasized = lines.next().unwrap();
    assert!(emphasized.contains("<b>") && emphasized.contains("</b>"));
    assert_eq!(emphasized.replace("<b>", "").replace("</b>", ""), text);
    let spans: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let spans = spans["spans"].as_array().unwrap();
    assert!(!spans.is_empty());
    for s in spans {
        let (a, b) = (s[0].as_u64().unwrap() as usize, s[1].as_u64().unwrap() as usize);
        assert!(a < b && b <= text.len());
    }
    assert_eq!(hilight(&args).stdout, a.stdout);
}

#[test]
fn highlight_reads_file_input() {
    let f = fixture(5);
    let input = f.dir.path().join("in.txt");
    fs::write(&input, "alpha beta gamma delta epsilon zeta eta theta iota kappa").unwrap();
    let o = hilight(&["highlight", "--checkpoint", p(&f.checkpoint), "--input", p(&input), "--gamma", "0.2"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("<start_important>"));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let f = fixture(5);
    let text = fs::read_to_string(&f.checkpoint).unwrap();
    let corrupt = f.dir.path().join("bad.json");
    fs::write(&corrupt, text.replacen('1', "2", 1)).unwrap();
    let o = hilight(&["highlight", "--checkpoint", p(&corrupt), "--text", "a b c"]);
    assert_eq!(o.status.code(), Some(4));
    fs::write(&corrupt, &text[..text.len() / 2]).unwrap();
    let o = hilight(&["highlight", "--checkpoint", p(&corrupt), "--text", "a b c"]);
    assert_eq!(o.status.code(), Some(4));
}

fn rows(report: &Path) -> Vec<Value> {
    let v: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    v["rows"].as_array().unwrap().clone()
}

#[test]
fn eval_emits_requested_rows_and_evidence_block() {
    let f = fixture(50);
    let report = f.dir.path().join("report.json");
    let o = hilight(&["eval", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--all", "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&report);
    let names: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["no-highlight", "random", "pruned", "highlight"]);
    assert!(rows[3]["evidence"].is_array());
    assert!(rows[0]["evidence"].is_null());

    let o = hilight(&["eval", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--out", p(&report)]);
    assert!(o.status.success());
    assert_eq!(self::rows(&report).len(), 1);
}

#[test]
fn no_highlight_row_shows_nothing() {
    let f = fixture(5);
    let report = f.dir.path().join("report.json");
    let o = hilight(&["eval", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--no-highlight", "--out", p(&report)]);
    assert!(o.status.success());
    let mi = &rows(&report)[0];
    assert_eq!(mi["mean_highlight_fraction"], 0.0);
    // The oracle sees no markers at all, so nothing is covered.
    assert_eq!(mi["reward"], 0.0);
}

#[test]
fn pruned_with_full_coverage_matches_no_highlight() {
    let f = fixture(5);
    let report = f.dir.path().join("report.json");
    let o = hilight(&[
        "eval",
        "--checkpoint",
        p(&f.checkpoint),
        "--data",
        p(&f.data),
        "--gamma",
        "1",
        "--delta",
        "100000",
        "--pruned",
        "--no-highlight",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&report);
    assert_eq!(rows[0]["metrics"], rows[1]["metrics"]);
    assert_eq!(rows[0]["reward"], rows[1]["reward"]);
}

fn csv_rows(text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(text.as_bytes()).records().map(Result::unwrap).collect()
}

#[test]
fn sweep_axes_produce_one_row_per_grid_point() {
    let f = fixture(30);
    let base = ["sweep", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data)];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        let o = hilight(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };

    let budget = run(&["--axis", "budget", "--grid", "0.10,0.15,0.25,0.30"]);
    assert!(budget.starts_with("axis_value,"));
    let header = budget.lines().next().unwrap();
    assert!(header.contains("mean_highlight_fraction"));
    let rows = csv_rows(&budget);
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[0][0], "0.10");

    let width = csv_rows(&run(&["--axis", "width", "--grid", "4,6,8,10,12,14,16"]));
    assert_eq!(width.len(), 7);
    assert_eq!(csv_rows(&run(&["--axis", "width"])).len(), 7);

    assert_eq!(csv_rows(&run(&["--axis", "sampler"])).len(), 4);
}

#[test]
fn marker_sweep_keeps_span_sets() {
    let f = fixture(30);
    let o = hilight(&["sweep", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--axis", "marker"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<String> = text.lines().next().unwrap().split(',').map(String::from).collect();
    let digest = header.iter().position(|h| h == "span_digest").unwrap();
    let reward = header.iter().position(|h| h == "reward").unwrap();
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert_eq!(&r[digest], &rows[0][digest]);
        assert_eq!(&r[reward], &rows[0][reward]);
    }
}

#[test]
fn empty_grid_is_usage_error() {
    let f = fixture(1);
    let o = hilight(&["sweep", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--axis", "budget", "--grid", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = hilight(&["sweep", "--checkpoint", p(&f.checkpoint), "--data", p(&f.data), "--axis", "depth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_synth_counts_lengths_and_determinism() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.jsonl");
    assert!(hilight(&["gen-synth", "--n", "0", "--out", p(&empty)]).status.success());
    assert_eq!(fs::read_to_string(&empty).unwrap(), "");

    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = hilight(&["gen-synth", "--n", "100", "--target-tokens", "8000", "--seed", "11", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let data = load_jsonl(&a).unwrap();
    assert_eq!(data.len(), 100);
    for inst in &data {
        let n = tokenize(&inst.context).len();
        assert!((7600..=8400).contains(&n), "{n} tokens");
    }
}

#[test]
fn gen_synth_unwritable_path_is_io_error() {
    let o = hilight(&["gen-synth", "--n", "1", "--out", "/nonexistent-dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn malformed_dataset_is_data_error() {
    let f = fixture(1);
    let bad = f.dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\"}\n").unwrap();
    let o = hilight(&["eval", "--checkpoint", p(&f.checkpoint), "--data", p(&bad)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("line 1"));
}
