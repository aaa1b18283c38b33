use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maas_core::gen::MarketInstance;
use maas_core::model::{Contract, Matching};
use serde_json::Value;
use tempfile::TempDir;

fn maas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = maas(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    maas(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = TempDir::new().unwrap();
        fs::write(
            dir.path().join("gen.json"),
            r#"{"n_suppliers": 3, "lambda_orders": 4.0, "seed": 5}"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("sim.json"),
            r#"{"gen": {"n_suppliers": 5, "lambda_orders": 5.0, "seed": 2}, "mechanism": "as",
                "n_periods": 4, "replications": 2, "switching_cost_sweep": [0.0, 0.5]}"#,
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn instance(&self, name: &str, seed: u64) -> PathBuf {
        let p = self.path(name);
        ok(&[
            "gen",
            s(&self.path("gen.json")),
            "--out",
            s(&p),
            "--seed",
            &seed.to_string(),
        ]);
        p
    }

    fn matching(&self, instance: &Path, mechanism: &str) -> PathBuf {
        let p = self.path(&format!("{mechanism}.json"));
        ok(&["match", s(instance), "--mechanism", mechanism, "--out", s(&p)]);
        p
    }
}

/// Best total utility over every assignment of at most one contract per order.
fn brute_force(inst: &MarketInstance) -> f64 {
    let mut by_order: Vec<Vec<&Contract>> = Vec::new();
    for o in inst.orders() {
        by_order.push(inst.contracts.iter().filter(|c| c.order_id == o.id).collect());
    }
    let mut best: f64 = 0.0;
    let mut pick = vec![0usize; by_order.len()];
    loop {
        let chosen = by_order
            .iter()
            .zip(&pick)
            .filter(|(_, &k)| k > 0)
            .map(|(cs, &k)| cs[k - 1].clone());
        let m = Matching::from_contracts(chosen);
        if m.is_feasible(&inst.suppliers, inst.from()) {
            best = best.max(m.total_utility());
        }
        let mut i = 0;
        loop {
            if i == pick.len() {
                return best;
            }
            pick[i] += 1;
            if pick[i] <= by_order[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn mw_matches_brute_force() {
    let f = Fixture::new();
    let inst_path = f.instance("inst.json", 5);
    let inst: MarketInstance = serde_json::from_str(&fs::read_to_string(&inst_path).unwrap()).unwrap();
    assert!(!inst.contracts.is_empty());
    let m = json(&f.matching(&inst_path, "mw"));
    assert!((m["utility"].as_f64().unwrap() - brute_force(&inst)).abs() < 1e-9);
}

#[test]
fn mwas_audit_reports_lb_groups() {
    let f = Fixture::new();
    let inst = f.instance("inst.json", 7);
    let m = f.matching(&inst, "mwas-max");
    let lb = json(&m)["lb"].as_u64().unwrap();
    let out = f.path("audit");
    let text = ok(&[
        "audit",
        s(&inst),
        s(&m),
        "--out",
        s(&out),
        "--switching-cost",
        "0,0.1,0.3,1",
    ]);
    assert!(text.contains(&format!("{lb} blocking groups")), "{text}");
    let metrics = json(&out.join("transient_metrics.json"));
    assert_eq!(metrics["groups"]["records"].as_u64().unwrap(), lb);
    assert_eq!(metrics["pairs"]["available"].as_f64().unwrap(), 0.0);
}

#[test]
fn switching_cost_rows_do_not_increase() {
    let f = Fixture::new();
    let inst = f.instance("inst.json", 9);
    let m = f.matching(&inst, "as");
    let out = f.path("audit");
    ok(&[
        "audit",
        s(&inst),
        s(&m),
        "--out",
        s(&out),
        "--switching-cost",
        "0,0.1,0.2,0.5,1",
    ]);
    let rows: Vec<(usize, usize)> = fs::read_to_string(out.join("switching_cost.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 <= w[0].1));
    assert_eq!(
        code(&[
            "audit",
            s(&inst),
            s(&m),
            "--out",
            s(&f.path("neg")),
            "--switching-cost",
            "-0.5"
        ]),
        2
    );
}

#[test]
fn posterior_audit_runs_on_consecutive_periods() {
    let f = Fixture::new();
    let a = f.path("t1.json");
    let b = f.path("t2.json");
    ok(&["gen", s(&f.path("gen.json")), "--out", s(&a), "--period", "1"]);
    ok(&[
        "gen",
        s(&f.path("gen.json")),
        "--out",
        s(&b),
        "--period",
        "2",
        "--seed",
        "6",
    ]);
    let ma = f.path("ma.json");
    let mb = f.path("mb.json");
    ok(&["match", s(&a), "--mechanism", "as", "--out", s(&ma)]);
    ok(&["match", s(&b), "--mechanism", "as", "--out", s(&mb)]);
    let out = f.path("post");
    let text = ok(&["audit", s(&a), s(&ma), "--posterior", s(&b), s(&mb), "--out", s(&out)]);
    assert!(text.contains("posterior:"));
    assert!(out.join("posterior_records.csv").exists());
    assert_eq!(
        code(&[
            "audit",
            s(&a),
            s(&ma),
            "--posterior",
            s(&a),
            s(&ma),
            "--out",
            s(&f.path("bad"))
        ]),
        2
    );
}

#[test]
fn usage_errors_exit_with_two() {
    let f = Fixture::new();
    let inst = f.instance("inst.json", 5);
    let other = f.instance("other.json", 6);
    let m = f.matching(&inst, "mw");
    assert_eq!(
        code(&[
            "match",
            s(&f.path("missing.json")),
            "--mechanism",
            "mw",
            "--out",
            s(&f.path("x.json"))
        ]),
        2
    );
    assert_eq!(
        code(&[
            "match",
            s(&inst),
            "--mechanism",
            "greedy",
            "--out",
            s(&f.path("x.json"))
        ]),
        2
    );
    assert_eq!(code(&["audit", s(&other), s(&m), "--out", s(&f.path("a"))]), 2);
    assert_eq!(
        code(&["simulate", s(&f.path("missing.json")), "--out", s(&f.path("r"))]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
    fs::write(f.path("typo.json"), r#"{"n_period": 3}"#).unwrap();
    assert_eq!(
        code(&["simulate", s(&f.path("typo.json")), "--out", s(&f.path("r"))]),
        2
    );
}

#[test]
fn resource_limits_exit_with_three() {
    let f = Fixture::new();
    fs::write(
        f.path("tight.json"),
        r#"{"gen": {"n_suppliers": 5, "lambda_orders": 8.0, "seed": 2}, "mechanism": "mwas-max",
            "n_periods": 2, "replications": 1, "bundle_cap": 1}"#,
    )
    .unwrap();
    assert_eq!(
        code(&["simulate", s(&f.path("tight.json")), "--out", s(&f.path("r"))]),
        3
    );
}

#[test]
fn output_directories_need_force() {
    let f = Fixture::new();
    let inst = f.instance("inst.json", 5);
    let m = f.matching(&inst, "mw");
    let out = f.path("audit");
    ok(&["audit", s(&inst), s(&m), "--out", s(&out)]);
    assert_eq!(code(&["audit", s(&inst), s(&m), "--out", s(&out)]), 2);
    ok(&["audit", s(&inst), s(&m), "--out", s(&out), "--force"]);
    let run = f.path("run");
    ok(&["simulate", s(&f.path("sim.json")), "--out", s(&run)]);
    assert_eq!(code(&["simulate", s(&f.path("sim.json")), "--out", s(&run)]), 2);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_write_identical_files() {
    let f = Fixture::new();
    let sim = f.path("sim.json");
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&["simulate", s(&sim), "--out", s(&a)]);
    ok(&["simulate", s(&sim), "--out", s(&b)]);
    let files = snapshot(&a);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"as_lambda5_seed2.json"), "{names:?}");
    assert!(names.contains(&"as_lambda5_seed2_periods.csv"));
    assert!(names.contains(&"as_lambda5_seed2_aggregate.csv"));
    assert!(names.contains(&"as_lambda5_seed2_rep1.json"));
    assert_eq!(files, snapshot(&b));

    let (x, y) = (f.path("x.json"), f.path("y.json"));
    ok(&["gen", s(&f.path("gen.json")), "--out", s(&x)]);
    ok(&["gen", s(&f.path("gen.json")), "--out", s(&y)]);
    assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap());
}

#[test]
fn sweep_and_anarchy_write_their_reports() {
    let f = Fixture::new();
    let sim = f.path("sim.json");
    let out = f.path("sweep");
    let text = ok(&[
        "sweep",
        s(&sim),
        "--lambdas",
        "3,6",
        "--replications",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(text.contains("supplier rank decreasing="));
    let trends = json(&out.join("trends.json"));
    assert_eq!(trends["lambdas"].as_array().unwrap().len(), 2);
    assert!(out.join("sweep.csv").exists());
    assert!(out.join("as_lambda3_seed2.json").exists());

    let out = f.path("anarchy");
    ok(&[
        "anarchy",
        s(&sim),
        "--access",
        "restricted",
        "--periods",
        "3",
        "--out",
        s(&out),
    ]);
    let report = json(&out.join("anarchy_restricted_lambda5_seed2.json"));
    let periods = report["replications"][0]["anarchy"]["periods"].as_array().unwrap();
    assert_eq!(periods.len(), 3);
    assert_eq!(periods[0]["defectors"].as_u64().unwrap(), 0);
    assert_eq!(
        code(&["anarchy", s(&sim), "--access", "partial", "--out", s(&f.path("z"))]),
        2
    );
}
