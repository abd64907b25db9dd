use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rank_cli::RunReport;
use tempfile::TempDir;

fn rank(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rank"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_config(dir: &Path, text: &str) -> (Output, Option<RunReport>) {
    let cfg = write(dir, "run.conf", &format!("{text}\nreport_path = report.json\n"));
    let out = rank(&["run", cfg.to_str().unwrap()], &[]);
    let report = std::fs::read_to_string(dir.join("report.json")).ok().map(|t| RunReport::from_json(&t).unwrap());
    (out, report)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn two_cycle_sync_is_fixed_at_once() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cycle.txt", "0 1\n1 0\n");
    let (out, report) = run_config(dir.path(), "graph = cycle.txt\ntop_k = 2\n");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report.unwrap();
    assert_eq!(r.sync.as_ref().unwrap().iterations, 1);
    assert_eq!(r.global_residual, 0.0);
    assert_eq!(r.top_k.iter().map(|p| p.page).collect::<Vec<_>>(), vec![0, 1]);
    assert!(r.converged);
}

#[test]
fn empty_config_runs_the_default_graph() {
    let dir = TempDir::new().unwrap();
    let (out, report) = run_config(dir.path(), "");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report.unwrap();
    assert_eq!(r.mode, "sync");
    assert_eq!(r.graph.pages, 1000);
    assert!(r.oracle_error.unwrap() < 1e-5);
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged        yes"));
}

#[test]
fn invalid_configs_exit_with_an_error() {
    let dir = TempDir::new().unwrap();
    let (out, report) = run_config(dir.path(), "alpha = 1.5");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"));
    assert!(report.is_none());

    let (out, _) = run_config(dir.path(), "mode = sync\ntolerence = 1e-6");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2: unknown key `tolerence`"));

    let out = rank(&["run", dir.path().join("missing.conf").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn async_sim_reports_import_matrix_and_speedup() {
    let dir = TempDir::new().unwrap();
    let (out, report) = run_config(
        dir.path(),
        "graph = synthetic:n=200,seed=5\nmode = async-sim\np = 4\nseed = 3\ndelay_bound = 3\ndrop_rate = 0.2\ntolerance = 1e-9\ntrace_path = trace.tsv\n",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report.unwrap();
    let a = r.asynchronous.as_ref().unwrap();
    assert_eq!(a.import_matrix.len(), 4);
    for i in 0..4 {
        assert_eq!(a.import_matrix[i].len(), 4);
        assert_eq!(a.import_matrix[i][i], a.per_ue_iters[i]);
        assert!(a.completed_imports_pct[i] <= 100.0);
    }
    assert!(r.sync.is_some());
    assert!(r.speedup.is_some());
    assert!(r.oracle_error.unwrap() <= 1e-5);
    let trace = std::fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
    assert!(trace.lines().any(|l| l.split('\t').nth(2) == Some("step")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("completed imports"));
    assert!(stdout.contains("imports %"));
}

#[test]
fn report_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let (_, report) = run_config(dir.path(), "graph = synthetic:n=50\nmode = async-sim\np = 2\n");
    let r = report.unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(RunReport::from_json(&r.to_json()).unwrap(), r);
    assert_eq!(RunReport::from_json(&text).unwrap().to_json(), text);
}

#[test]
fn environment_overrides_the_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.conf", "graph = synthetic:n=40\nalpha = 0.85\nreport_path = r.json\n");
    let out = rank(&["run", cfg.to_str().unwrap()], &[("RANK_ALPHA", "0.5")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = RunReport::from_json(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r.config["alpha"], "0.5");

    let out = rank(&["run", cfg.to_str().unwrap()], &[("RANK_P", "many")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("RANK_P"));
}

#[test]
fn iteration_cap_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let (out, report) = run_config(dir.path(), "graph = synthetic:n=100\ntolerance = 1e-12\nmax_iters = 3\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(!report.unwrap().converged);
    let (out, report) =
        run_config(dir.path(), "graph = synthetic:n=100\nmode = async-sim\np = 2\ntolerance = 1e-12\nmax_iters = 3\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(!report.unwrap().converged);
}

#[test]
fn generated_graphs_keep_isolated_pages() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("g.txt");
    let out = rank(&["gen", "synthetic:n=30,avg=1,dangling=0.9,seed=1", graph.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(std::fs::read_to_string(&graph).unwrap().starts_with("# synthetic:n=30"));
    let (out, report) = run_config(dir.path(), "graph = g.txt\n");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(report.unwrap().graph.pages, 30);
}

#[test]
fn sync_and_async_rankings_agree() {
    let dir = TempDir::new().unwrap();
    let common = "graph = synthetic:n=100,seed=7\ntolerance = 1e-8\n";
    for (name, extra) in [("sync", "mode = sync\n"), ("async", "mode = async-sim\np = 4\nseed = 2\ndelay_bound = 3\n")]
    {
        let cfg = write(
            dir.path(),
            &format!("{name}.conf"),
            &format!("{common}{extra}report_path = {name}.json\nvector_path = {name}.vec\n"),
        );
        let out = rank(&["run", cfg.to_str().unwrap()], &[]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let (a, b) = (dir.path().join("sync.json"), dir.path().join("async.json"));
    let out = rank(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--top-k", "10"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("top-10 overlap 1.0000"));

    let v = dir.path().join("sync.vec");
    let out = rank(&["compare", v.to_str().unwrap(), b.to_str().unwrap(), "--top-k", "101"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_subcommand() {
    let dir = TempDir::new().unwrap();
    let graph = write(dir.path(), "g.txt", "1 2\n2 3\n3 1\n");
    let out = rank(&["oracle", graph.to_str().unwrap(), "--one-based", "--top-k", "3"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().contains("3.3333333333333"));

    let vec = dir.path().join("x.txt");
    let out = rank(&["oracle", "synthetic:n=20", "--alpha", "0.5", "--out", vec.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let x: Vec<f64> = std::fs::read_to_string(&vec).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(x.len(), 20);
    assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn concurrent_modes_converge() {
    for mode in ["async-threads", "async-tcp"] {
        let dir = TempDir::new().unwrap();
        let (out, report) = run_config(
            dir.path(),
            &format!(
                "graph = synthetic:n=150\nmode = {mode}\np = 3\ntolerance = 1e-9\npc_max_ue = 2\npc_max_monitor = 2\n"
            ),
        );
        assert_eq!(out.status.code(), Some(0), "{mode}: {}", stderr(&out));
        let r = report.unwrap();
        assert!(r.oracle_error.unwrap() < 1e-5, "{mode}");
        assert_eq!(r.asynchronous.unwrap().p, 3);
    }
}

#[test]
fn scripted_schedule_from_file() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "rr.script", "cycle\nstep 0\nstep 1\ndeliver-all\n");
    let (out, report) = run_config(
        dir.path(),
        "graph = synthetic:n=30\nmode = async-sim\np = 2\nschedule = scripted\nscript = rr.script\n",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let a = report.unwrap().asynchronous.unwrap();
    assert_eq!(a.iters_min, a.iters_max);
}
