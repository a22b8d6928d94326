use std::path::{Path, PathBuf};
use std::process::Command;

use distreach::export::{read_traces, trace_records, TraceRecord};
use distreach::reach::reach_distributed;
use distreach::scenario::Scenario;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn distreach(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_distreach"))
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn bundled(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.scenario"))
        .display()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SCALAR_AGENT: &str = r#"
[[agent]]
A = [[0.0]]
B = [[1.0]]
B1 = [[1.0]]
K_self = [[-1.0]]
X0 = { box = { lo = [0.0], hi = [1.0] } }
W = { box = { lo = [-1.0], hi = [1.0] } }
"#;

fn uncoupled(nodes: usize, extra: &str) -> String {
    format!(
        "[config]\ntau = 0.1\ndt = 0.05\n\n[graph]\nnodes = {nodes}\nedges = []\n{extra}\n{}",
        SCALAR_AGENT.repeat(nodes)
    )
}

#[test]
fn scalar_run_reaches_the_analytic_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = distreach(&["run", &bundled("scalar_integrator"), "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("steps 100"));
    let boxes: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("agents_boxes.json")).unwrap()).unwrap();
    let last = &boxes.as_array().unwrap()[100]["agents"][0];
    let lo = last["lo"][0].as_f64().unwrap();
    let hi = last["hi"][0].as_f64().unwrap();
    assert!((lo + 1.0).abs() < 1e-2 && (hi - 2.0).abs() < 1e-2, "[{lo}, {hi}]");
    for f in ["traces.csv", "outer_k0.json", "outer_k100.json", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn oracle_output_has_the_same_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("d"), tmp.path().join("o"));
    assert_eq!(
        distreach(&[
            "run",
            &bundled("coupled_pair"),
            "--tau",
            "0.1",
            "--out",
            a.to_str().unwrap()
        ])
        .code,
        0
    );
    assert_eq!(
        distreach(&[
            "run",
            &bundled("coupled_pair"),
            "--tau",
            "0.1",
            "--oracle",
            "--out",
            b.to_str().unwrap()
        ])
        .code,
        0
    );
    let header = |d: &PathBuf| {
        std::fs::read_to_string(d.join("traces.csv"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header(&a), header(&b));
    let names = |d: &PathBuf| {
        let mut v: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(names(&a), names(&b));
}

#[test]
fn malformed_scenario_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "bad.scenario", "[config]\ntau = 1.0\ndt = = 0.1\n");
    let r = distreach(&["run", &p, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);

    let p = write(
        tmp.path(),
        "dims.scenario",
        &uncoupled(1, "").replace("B1 = [[1.0]]", "B1 = [[1.0], [2.0]]"),
    );
    let r = distreach(&["run", &p]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line"), "{}", r.stderr);

    assert_eq!(distreach(&["run", "/nonexistent.scenario"]).code, 2);
    assert_eq!(distreach(&["run", &bundled("coupled_pair"), "--dt", "0.3"]).code, 2);
}

#[test]
fn disconnected_graph_exits_3_with_components() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "split.scenario", &uncoupled(2, ""));
    for cmd in ["run", "verify"] {
        let r = distreach(&[cmd, &p, "--out", tmp.path().join("o").to_str().unwrap()]);
        assert_eq!(r.code, 3, "{cmd}: {}", r.stderr);
        assert!(
            r.stderr.contains("not connected") && r.stderr.contains("[[0], [1]]"),
            "{}",
            r.stderr
        );
    }
    // the oracle does not need communication
    let r = distreach(&["run", &p, "--oracle", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.code, 0);
}

#[test]
fn iteration_cap_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let r = distreach(&[
        "run",
        &bundled("coupled_pair"),
        "--max-iters",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("no consensus"), "{}", r.stderr);
}

#[test]
fn verify_passes_on_scalar_integrator() {
    let r = distreach(&[
        "verify",
        &bundled("scalar_integrator"),
        "--samples",
        "1000",
        "--seed",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["samples"], 1000);
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn corrupted_gamma_is_located() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let scen = bundled("coupled_pair");
    assert_eq!(
        distreach(&["run", &scen, "--tau", "0.3", "--out", out.to_str().unwrap()]).code,
        0
    );
    let file = out.join("traces.csv");
    let ok = distreach(&[
        "verify",
        &scen,
        "--tau",
        "0.3",
        "--samples",
        "50",
        "--traces",
        file.to_str().unwrap(),
    ]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);

    let text = std::fs::read_to_string(&file).unwrap();
    let corrupted: Vec<String> = text
        .lines()
        .map(|l| {
            let mut f: Vec<String> = l.split(',').map(String::from).collect();
            if f[0] == "agent1" && f[1] == "17" && f[3] == "2" {
                let g: f64 = f[4].parse().unwrap();
                f[4] = format!("{:.16e}", g + 1e-3);
            }
            f.join(",")
        })
        .collect();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, corrupted.join("\n") + "\n").unwrap();
    let r = distreach(&[
        "verify",
        &scen,
        "--tau",
        "0.3",
        "--samples",
        "50",
        "--traces",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("view agent1, trace 2, step 17"), "{}", r.stderr);
}

#[test]
fn graphcheck_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let k3 = uncoupled(3, "")
        .replace("edges = []", "edges = [[0, 1], [1, 2], [0, 2]]")
        .replace("K_self = [[-1.0]]", "K_self = [[-1.0]]\nK_neighbors = {}");
    // give each agent gains for its two neighbors
    let mut k3_agents = k3.split("[[agent]]").map(String::from).collect::<Vec<_>>();
    let pairs = [("1", "2"), ("0", "2"), ("0", "1")];
    for (i, (a, b)) in pairs.iter().enumerate() {
        k3_agents[i + 1] = k3_agents[i + 1].replace(
            "K_neighbors = {}",
            &format!("K_neighbors = {{ \"{a}\" = [[0.1]], \"{b}\" = [[0.1]] }}"),
        );
    }
    let k3 = write(tmp.path(), "k3.scenario", &k3_agents.join("[[agent]]"));
    let r = distreach(&["graphcheck", &k3]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("connected, diam 1"), "{}", r.stdout);

    let r = distreach(&["graphcheck", &bundled("alternating_path")]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("jointly connected, window 2"), "{}", r.stdout);

    let isolated = write(
        tmp.path(),
        "iso.scenario",
        &uncoupled(3, "[schedule]\ngraphs = [[[0, 1]], [[0, 1]]]\n"),
    );
    let r = distreach(&["graphcheck", &isolated]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.contains("NOT jointly connected"), "{}", r.stdout);

    let r = distreach(&["graphcheck", &isolated, "--window", "4"]);
    assert!(r.stdout.contains("NOT jointly connected, window 4"), "{}", r.stdout);
    assert_eq!(distreach(&["graphcheck", "/nonexistent"]).code, 2);
}

fn same_bits(a: &[TraceRecord], b: &[TraceRecord]) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.view == y.view
                && x.step == y.step
                && x.trace == y.trace
                && x.time.to_bits() == y.time.to_bits()
                && x.gamma.to_bits() == y.gamma.to_bits()
                && bits(&x.lambda) == bits(&y.lambda)
                && bits(&x.contact) == bits(&y.contact)
                && x.w_star.as_deref().map(bits) == y.w_star.as_deref().map(bits)
        })
}

#[test]
fn exported_traces_round_trip_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, extra) in [("planar_pair", None), ("alternating_path", Some("product"))] {
        let mut s = Scenario::load(Path::new(&bundled(name))).unwrap();
        s.config.tau = 0.2;
        let mut args = vec!["--tau", "0.2"];
        if let Some(mode) = extra {
            s.config.disturbance = distreach::reach::DisturbanceMode::Product;
            args.extend(["--disturbance", mode]);
        }
        let expected = trace_records(&reach_distributed(&s.agents, &s.coupling, &s.schedule, &s.config).unwrap());
        for format in ["csv", "jsonl"] {
            let out = tmp.path().join(format!("{name}-{format}"));
            let scen = bundled(name);
            let mut full = vec!["run", &scen[..], "--format", format, "--out", out.to_str().unwrap()];
            full.extend(&args);
            assert_eq!(distreach(&full).code, 0);
            let back = read_traces(&out.join(format!("traces.{format}"))).unwrap();
            assert!(same_bits(&expected, &back), "{name} {format}");
        }
    }
}
