use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn write_panel(dir: &Path, rows: &[(&str, [f64; 6])]) {
    let mut s = String::from("unit,time,outcome\n");
    for (unit, ys) in rows {
        for (t, y) in ys.iter().enumerate() {
            s.push_str(&format!("{unit},{},{y}\n", 2000 + t));
        }
    }
    fs::write(dir.join("panel.csv"), s).unwrap();
}

fn write_config(dir: &Path, roles: &str) {
    let text = format!(
        "[data]\npath = \"panel.csv\"\nunit_column = \"unit\"\ntime_column = \"time\"\noutcome_column = \"outcome\"\nintervention = \"2004\"\n\n[roles]\n{roles}\n"
    );
    fs::write(dir.join("config.toml"), text).unwrap();
}

fn run(dir: &Path, cmd: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iscm"))
        .current_dir(dir)
        .args(["--config", "config.toml", "--output", "out", cmd])
        .output()
        .unwrap()
}

fn standard(dir: &Path) {
    write_panel(
        dir,
        &[
            ("t", [1.0, 2.0, 3.0, 4.0, 9.0, 10.0]),
            ("a", [1.1, 2.1, 2.9, 4.2, 6.0, 6.5]),
            ("p1", [0.5, 1.5, 2.5, 3.5, 4.5, 5.5]),
            ("p2", [1.5, 2.5, 3.5, 4.5, 5.5, 6.5]),
            ("p3", [2.0, 1.0, 4.0, 3.0, 6.0, 5.0]),
        ],
    );
    write_config(dir, "main_treated = \"t\"\npotentially_affected = [\"a\"]");
}

#[test]
fn every_command_succeeds_on_a_clean_panel() {
    let dir = tempfile::tempdir().unwrap();
    standard(dir.path());
    for cmd in ["fit", "compare", "iscm", "placebo"] {
        let out = run(dir.path(), cmd);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let weights = fs::read_to_string(dir.path().join("out/weights.csv")).unwrap();
    assert!(weights.starts_with("target,specification,donor,weight"));
    assert!(dir.path().join("out/omega.csv").exists());
    assert!(dir.path().join("out/ratios.csv").exists());
}

#[test]
fn malformed_csv_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    standard(dir.path());
    let path = dir.path().join("panel.csv");
    let text = fs::read_to_string(&path).unwrap().replacen("t,2002,3", "t,2002,three", 1);
    fs::write(&path, text).unwrap();
    let out = run(dir.path(), "fit");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("three"), "{err}");
}

#[test]
fn missing_cell_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    standard(dir.path());
    let path = dir.path().join("panel.csv");
    let text: String = fs::read_to_string(&path).unwrap().lines().filter(|l| *l != "p2,2001,2.5").map(|l| format!("{l}\n")).collect();
    fs::write(&path, text).unwrap();
    let out = run(dir.path(), "fit");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p2"));
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "fit");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_unit_names_the_config_line() {
    let dir = tempfile::tempdir().unwrap();
    standard(dir.path());
    write_config(dir.path(), "main_treated = \"t\"\npotentially_affected = [\"zz\"]");
    let out = run(dir.path(), "fit");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 10") && err.contains("zz"), "{err}");
}

#[test]
fn mutual_replicas_give_a_singular_system() {
    // The treated and affected units are copies of each other and far from
    // every control, so each takes the other with weight one.
    let dir = tempfile::tempdir().unwrap();
    write_panel(
        dir.path(),
        &[
            ("t", [10.0, 11.0, 12.0, 13.0, 14.0, 9.0]),
            ("a", [10.0, 11.0, 12.0, 13.0, 14.0, 11.0]),
            ("p1", [0.5, 1.5, 2.5, 3.5, 4.5, 5.5]),
            ("p2", [1.5, 2.5, 3.5, 4.5, 5.5, 6.5]),
            ("p3", [2.0, 1.0, 4.0, 3.0, 6.0, 5.0]),
        ],
    );
    write_config(dir.path(), "main_treated = \"t\"\npotentially_affected = [\"a\"]");
    let out = run(dir.path(), "iscm");
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/omega.csv").exists());
    assert!(!dir.path().join("out/effects.csv").exists());
}

#[test]
fn single_donor_takes_all_weight() {
    let dir = tempfile::tempdir().unwrap();
    write_panel(dir.path(), &[("t", [1.0, 2.0, 3.0, 4.0, 9.0, 10.0]), ("p1", [0.5, 1.5, 2.5, 3.5, 4.5, 5.5])]);
    write_config(dir.path(), "main_treated = \"t\"");
    let out = run(dir.path(), "fit");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let weights = fs::read_to_string(dir.path().join("out/weights.csv")).unwrap();
    let line = weights.lines().find(|l| l.contains(",p1,")).unwrap();
    let w: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(w, 1.0);
}
