use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hcral(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcral"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn train_into(config: &str, out: &Path) -> Output {
    hcral(&["train", "--config", config, "--out", out.to_str().unwrap()])
}

fn summary_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .to_owned()
}

const SHORT: &str = "seed = 4\noptim.steps = 40\n";

#[test]
fn train_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SHORT);
    let out = tmp.path().join("out");
    let o = train_into(&config, &out);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = read(&out, "report.csv");
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("step,cls_loss,reg_loss,total,mean_iou"));
    assert_eq!(lines.count(), 40);

    let summary = read(&out, "summary.txt");
    assert_eq!(summary_value(&summary, "loss"), "hcral");
    assert_eq!(summary_value(&summary, "seed"), "4");
    assert_eq!(summary_value(&summary, "steps"), "40");
    assert!(read(&out, "timing.txt").starts_with("wall_clock_s = "));
    assert!(stdout(&o).contains("final_mean_iou = "));
}

#[test]
fn identical_config_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SHORT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train_into(&config, &a).status.success());
    assert!(train_into(&config, &b).status.success());
    for name in ["report.csv", "summary.txt", "effective_config.toml"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "optim.steps = 30\nloss = \"ghmc_giou\"\ncls.theta = 4.0\nassign.l = 2\n",
    );
    let first = tmp.path().join("first");
    assert!(train_into(&config, &first).status.success());
    let effective = first.join("effective_config.toml");
    let second = tmp.path().join("second");
    assert!(train_into(effective.to_str().unwrap(), &second).status.success());
    for name in ["report.csv", "summary.txt", "effective_config.toml"] {
        assert_eq!(read(&first, name), read(&second, name), "{name} differs");
    }
    assert_eq!(summary_value(&read(&second, "summary.txt"), "loss"), "ghmc_giou");
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SHORT);
    let out = tmp.path().join("out");
    let o = hcral(&[
        "train",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--loss",
        "focal+giou",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(&out, "summary.txt");
    assert_eq!(summary_value(&summary, "seed"), "9");
    assert_eq!(summary_value(&summary, "loss"), "focal_giou");
}

#[test]
fn unknown_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cls.thetaa = 5.0\n");
    let o = train_into(&config, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("thetaa"), "{}", stderr(&o));
}

#[test]
fn out_of_range_value_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "cls.theta = -1.0\n");
    let o = train_into(&config, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_loss_name_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hcral(&["train", "--loss", "hinge", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hinge"), "{}", stderr(&o));
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(hcral(&["--help"]).status.code(), Some(0));
    assert_eq!(hcral(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(hcral(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hcral(&[]).status.code(), Some(1));
}

fn curve_rows(o: &Output) -> Vec<(f64, f64, f64)> {
    assert!(o.status.success(), "{}", stderr(o));
    let text = stdout(o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("param,x,y"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn omega_curve_values() {
    let rows = curve_rows(&hcral(&["curves", "omega_neg", "--params", "0.7", "--xs", "0,0.7,1"]));
    let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
    assert_eq!(ys.len(), 3);
    // 1 - u (u - 0.7)^2 at u = 0, 0.7, 1
    approx::assert_relative_eq!(ys[0], 1.0);
    approx::assert_relative_eq!(ys[1], 1.0);
    approx::assert_relative_eq!(ys[2], 0.91, max_relative = 1e-12);
}

#[test]
fn suppression_curve_starts_at_one_and_falls() {
    let rows = curve_rows(&hcral(&["curves", "t_gamma", "--params", "1.2", "--points", "50"]));
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0].2, 1.0);
    assert!(rows.windows(2).all(|w| w[1].2 < w[0].2));
}

#[test]
fn default_curve_params_and_file_output() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("gate.csv");
    let o = hcral(&["curves", "rci_gate", "--points", "10", "--alpha", "-0.1", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&path).unwrap();
    // three default θ values on an 11-point grid
    assert_eq!(text.lines().count(), 1 + 3 * 11);
}

#[test]
fn curve_errors() {
    let empty = hcral(&["curves", "t_gamma", "--points", "0"]);
    assert_eq!(empty.status.code(), Some(1), "{}", stderr(&empty));
    let outside = hcral(&["curves", "t_gamma", "--xs", "0.5,1.5"]);
    assert_eq!(outside.status.code(), Some(1));
    let unknown = hcral(&["curves", "sawtooth"]);
    assert_eq!(unknown.status.code(), Some(1));
}

fn assign_summary(extra: &str) -> String {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("seed = 2\n{extra}"));
    let out = tmp.path().join("out");
    let o = hcral(&["assign", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&out, "assignment.csv");
    assert!(csv.starts_with("anchor,level,cx,cy,atss_gt,eatss_gt,expanded,best_gt,iou,distance\n"));
    read(&out, "assign_summary.txt")
}

#[test]
fn assign_with_zero_expansion_matches_atss() {
    let summary = assign_summary("assign.l = 0\n");
    assert_eq!(
        summary_value(&summary, "atss_positive"),
        summary_value(&summary, "eatss_positive")
    );
    assert_eq!(summary_value(&summary, "superset"), "true");
}

#[test]
fn assign_expansion_is_a_superset() {
    let summary = assign_summary("");
    let atss: usize = summary_value(&summary, "atss_positive").parse().unwrap();
    let eatss: usize = summary_value(&summary, "eatss_positive").parse().unwrap();
    assert!(eatss >= atss);
    assert_eq!(summary_value(&summary, "superset"), "true");
    assert!(summary.contains("gt.0.dis_f = "));
}

#[test]
fn verify_passes_with_defaults() {
    let o = hcral(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("[FAIL]"));
}
