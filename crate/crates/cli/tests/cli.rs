use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lukconvex"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lukconvex")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value_of(text: &str, atom: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            let (lhs, rhs) = l.split_once(" = ")?;
            (lhs.trim_start_matches("fixed ") == atom).then(|| rhs.parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no `{atom}` in\n{text}"))
}

#[test]
fn compile_implication_example() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "ex.lkb", "rule ex: ((x ^ y) + ~y + z) ^ ~z\n");
    let o = run(&["compile", s(&kb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["label"], "concave");
    assert_eq!(line["form"]["kind"], "min");
    let vars: Vec<String> = serde_json::from_value(line["form"]["vars"].clone()).unwrap();
    let mut rows: Vec<(Vec<f64>, f64)> = line["form"]["pieces"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            let c: Vec<f64> = serde_json::from_value(p["coeffs"].clone()).unwrap();
            let ordered = ["x", "y", "z"].iter().map(|v| vars.iter().position(|w| w == v).map_or(0.0, |i| c[i])).collect();
            (ordered, p["constant"].as_f64().unwrap())
        })
        .collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(rows, vec![(vec![0.0, 0.0, -1.0], 1.0), (vec![0.0, 0.0, 0.0], 1.0), (vec![1.0, -1.0, 1.0], 1.0)]);
}

#[test]
fn compile_rejects_mixed_translation() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "t1.lkb", "domain G = {g0, g1}\npred A(G) pred B(G) pred C(G) pred D(G)\nrule t1: forall x: (~A(x) + ~B(x) + C(x)) * (~A(x) + ~B(x) + D(x))\n");
    let o = run(&["compile", s(&kb)]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("neither fragment"), "{err}");
    assert!(err.contains("strong conjunction") && err.contains("strong disjunction"), "{err}");
}

#[test]
fn compile_empty_kb() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "empty.lkb", "# nothing\n");
    let o = run(&["compile", s(&kb)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn ground_lists_atoms_and_rules() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "g.lkb", "domain U = {a, b}\npred p(U) pred q(U)\nrule r: forall x: p(x) -> q(x)\n");
    let o = run(&["ground", s(&kb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["map"]["len"], 4);
    let grounded = doc["rules"][0]["grounded"].as_str().unwrap();
    assert!(grounded.contains("p(a)") && grounded.contains("q(b)"), "{grounded}");
}

#[test]
fn psl_map_propagates_evidence() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "m.lkb", "rule r [w=1]: a -> b\n");
    let ev = write(&dir, "ev.vals", "fixed a = 1\n");
    let o = run(&["psl-map", s(&kb), s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((value_of(&stdout(&o), "b") - 1.0).abs() < 1e-6);
}

#[test]
fn collective_keeps_satisfying_priors() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "c.lkb", "domain U = {a, b}\npred p(U) pred q(U)\nrule r: forall x: p(x) -> q(x)\n");
    let priors = write(&dir, "p.vals", "p(a) = 0.2\np(b) = 0.5\nq(a) = 0.7\nq(b) = 0.5\n");
    let o = run(&["solve-collective", s(&kb), s(&priors), "--c1", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for (atom, v) in [("p(a)", 0.2), ("p(b)", 0.5), ("q(a)", 0.7), ("q(b)", 0.5)] {
        assert!((value_of(&out, atom) - v).abs() < 1e-6, "{atom}: {out}");
    }
}

#[test]
fn collective_manifold_ties_close_points() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "c.lkb", "domain U = {a, b}\npred p(U)\n");
    let priors = write(&dir, "p.vals", "p(a) = 0.1\np(b) = 0.9\n");
    let pts = write(&dir, "pts.csv", "id,x\na,0\nb,0\n");
    let o = run(&["solve-collective", s(&kb), s(&priors), "--c1", "100", "--manifold", "p=1", "--points", s(&pts)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((value_of(&out, "p(a)") - value_of(&out, "p(b)")).abs() < 1e-5, "{out}");
}

#[test]
fn malformed_priors_report_line() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "c.lkb", "rule r: a -> b\n");
    let priors = write(&dir, "p.vals", "a = 0.2\nb 0.5\n");
    let o = run(&["solve-collective", s(&kb), s(&priors)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn psl_learn_writes_kb() {
    let dir = TempDir::new().unwrap();
    let kb = write(&dir, "l.lkb", "rule r1 [w=1]: a -> b\nrule r2 [w=1]: ~b\n");
    let train = write(&dir, "t.vals", "fixed a = 1\nb = 1\n");
    let out = dir.path().join("learned.lkb");
    let o = run(&["psl-learn", s(&kb), s(&train), "--rate", "0.5", "--steps", "4", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let kb = lukconvex::parse_kb(&text).unwrap();
    assert!(kb.rules[0].weight > 1.0, "{text}");
    assert!(kb.rules[1].weight < 1.0, "{text}");
}

#[test]
fn solve_kernel_from_config() {
    let dir = TempDir::new().unwrap();
    write(&dir, "p.csv", "id,x,label\na,0,1\nb,2,-1\nc,0.2,\nd,1.8,\n");
    write(&dir, "k.lkb", "domain U = {a, b, c, d}\npred p(U) pred q(U)\nrule r: forall x: p(x) -> q(x)\n");
    let cfg = write(&dir, "k.toml", "kb = \"k.lkb\"\n[[predicate]]\nname = \"p\"\ndata = \"p.csv\"\nkernel = { kind = \"gaussian\", sigma = 1.0 }\n[[predicate]]\nname = \"q\"\ndata = \"p.csv\"\nkernel = { kind = \"linear\" }\n");
    let out = dir.path().join("model.json");
    let o = run(&["solve-kernel", s(&cfg), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = lukconvex::KernelModel::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    let p = model.predicate("p").unwrap();
    assert!(p.predict(&[0.0]).unwrap() >= 0.5 && p.predict(&[2.0]).unwrap() < 0.5);
}

#[test]
fn experiment_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "e.toml", "step = 1.0\nfractions = [0.5]\nrepetitions = 1\nvariants = [\"none\", \"2\"]\n");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&["experiment", "--config", s(&cfg), "--seed", "7", "-o", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("fraction,rep,variant,class,f1\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn experiment_zero_reps_writes_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "e.toml", "repetitions = 0\n");
    let o = run(&["experiment", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "fraction,rep,variant,class,f1\n");
}

#[test]
fn missing_file_fails() {
    let o = run(&["compile", "/nonexistent/kb.lkb"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/kb.lkb"));
}
