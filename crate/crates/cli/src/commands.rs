use llt_core::dp::{self, Problem, ToyErm};
use llt_core::gibbs::{analyze, DiscreteJoint};
use llt_core::llt::LltView;
use llt_core::localization::Localizer;
use llt_core::prox::{run_replica, ChainStats};
use llt_core::rng::stream;
use llt_core::verify::{self, CheckReport, Suite, CRITERIA};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::Path;

use crate::config::{self, LltConfig, LocalizeConfig, PlanConfig, ProxRunConfig, ToyConfig};
use crate::emit::{json_bytes, Artifacts, Table};
use crate::{Cli, Command, DpAction, Failure, GibbsAction, LltAction, RunAction};

pub struct Outcome {
    pub artifacts: Artifacts,
    /// Bytes for standard output.
    pub summary: Vec<u8>,
    pub passed: bool,
}

pub fn run(cli: &Cli) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Llt {
            action: LltAction::Eval { config },
        } => llt_eval(cli, config),
        Command::Localize {
            action: RunAction::Run { config },
        } => localize_run(cli, config),
        Command::Prox {
            action: RunAction::Run { config },
        } => prox_run(cli, config),
        Command::Gibbs {
            action: GibbsAction::Analyze { joint },
        } => gibbs_analyze(cli, joint),
        Command::Dp {
            action: DpAction::Plan { json },
        } => dp_plan(cli, json),
        Command::Dp {
            action: DpAction::RunToy { config },
        } => dp_toy(cli, config),
        Command::Verify { suite } => verify_suite(cli, *suite),
    }
}

fn header(cli: &Cli, command: &str, hash: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("config_hash".into(), json!(hash));
    m.insert("seed".into(), json!(cli.seed));
    m.insert("replicas".into(), json!(cli.replicas));
    m
}

fn finish(mut artifacts: Artifacts, summary: serde_json::Map<String, Value>) -> Result<Outcome, Failure> {
    let bytes = json_bytes(&Value::Object(summary))?;
    artifacts.add("summary.json", bytes.clone());
    Ok(Outcome {
        artifacts,
        summary: bytes,
        passed: true,
    })
}

fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}{i}"))
}

fn llt_eval(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let loaded = config::load::<LltConfig>(path)?;
    let cfg = loaded.config;
    let d = cfg.potential.dim();
    if let Some(bad) = cfg.points.iter().find(|x| x.len() != d) {
        return Err(Failure::Schema(format!("point {bad:?} does not have dimension {d}")));
    }
    let view = LltView::new(cfg.potential).map_err(|e| Failure::from_core("llt", e))?;
    let hess = (1..=d).flat_map(|i| (1..=d).map(move |j| format!("h{i}_{j}")));
    let mut table = Table::new(
        indexed("x", d)
            .chain(["value".to_string()])
            .chain(indexed("g", d))
            .chain(hess)
            .chain(["third".to_string(), "error".to_string()]),
    );
    for x in &cfg.points {
        let e = view.eval(x).map_err(|e| Failure::from_core("llt", e))?;
        let mut row: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
        row.push(Some(e.value));
        row.extend(e.gradient.iter().map(|&v| Some(v)));
        row.extend(e.hessian.transpose().iter().map(|&v| Some(v)));
        row.push(e.third);
        row.push(Some(e.error));
        table.push(row);
    }
    let mut artifacts = Artifacts::default();
    artifacts.table("llt", &table, cli.format)?;
    let mut summary = header(cli, "llt eval", &loaded.hash);
    summary.insert("backend".into(), json!(view.backend()));
    summary.insert("points".into(), json!(cfg.points.len()));
    finish(artifacts, summary)
}

fn localize_run(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let loaded = config::load::<LocalizeConfig>(path)?;
    let model = loaded.config.model.build()?;
    if model.tau() == 0 {
        return Err(Failure::Schema("localization needs τ ≥ 1".into()));
    }
    let d = model.dim();
    let runs: Vec<_> = (0..cli.replicas)
        .into_par_iter()
        .map(|r| {
            let loc = Localizer::new(&model)?;
            loc.trajectory(model.tau(), &mut stream(cli.seed, r))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::from_core("localize", e))?;
    let mut artifacts = Artifacts::default();
    let mut finals = Vec::new();
    for (r, rows) in runs.iter().enumerate() {
        let mut table = Table::new(["step".to_string()].into_iter().chain(indexed("y", d)).chain(indexed("z", d)));
        for row in rows {
            table.push_values(std::iter::once(row.step as f64).chain(row.y.iter().copied()).chain(row.z.iter().copied()));
        }
        let stem = if cli.replicas == 1 {
            "trajectory".to_string()
        } else {
            format!("trajectory-{r}")
        };
        artifacts.table(&stem, &table, cli.format)?;
        finals.push(rows.last().map(|row| row.y.clone()));
    }
    let mut summary = header(cli, "localize run", &loaded.hash);
    summary.insert("tau".into(), json!(model.tau()));
    summary.insert("dim".into(), json!(d));
    summary.insert("final_y".into(), json!(finals));
    finish(artifacts, summary)
}

fn prox_run(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let loaded = config::load::<ProxRunConfig>(path)?;
    let cfg = &loaded.config.chain;
    let model = loaded.config.model.build()?;
    let sampler = cfg.sampler(&model).map_err(|e| Failure::from_core("prox", e))?;
    let runs: Vec<_> = (0..cli.replicas)
        .into_par_iter()
        .map(|r| run_replica(&sampler, cfg, cli.seed, r))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::from_core("prox", e))?;
    let stats = ChainStats::merge(&model, cfg, &runs).map_err(|e| Failure::from_core("prox", e))?;
    let mut table = Table::new(["iteration", "chi2", "kl", "accept_rate"]);
    for rec in &stats.records {
        table.push(vec![Some(rec.iteration as f64), rec.chi2, rec.kl, Some(rec.accept_rate)]);
    }
    let mut artifacts = Artifacts::default();
    artifacts.table("iterations", &table, cli.format)?;
    let mut summary = header(cli, "prox run", &loaded.hash);
    summary.insert("backward".into(), json!(sampler.kind().as_str()));
    summary.insert("iterations".into(), json!(cfg.iterations));
    summary.insert("accept_rate".into(), json!(stats.accept_rate));
    summary.insert("oracle_calls".into(), json!(stats.oracle_calls));
    summary.insert("final_states".into(), json!(stats.final_states));
    if let Some(laws) = &stats.exact_laws {
        summary.insert("exact_laws".into(), json!(laws));
    }
    finish(artifacts, summary)
}

fn read_joint(path: &Path) -> Result<(Vec<Vec<f64>>, String), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Schema(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Schema(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok((rows, config::hex_digest(&bytes)))
}

fn gibbs_analyze(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let (rows, hash) = read_joint(path)?;
    let joint = DiscreteJoint::from_rows(&rows).map_err(|e| Failure::from_core("gibbs", e))?;
    let report = analyze(&joint).map_err(|e| Failure::from_core("gibbs", e))?;
    let mut table = Table::new(["lambda2", "gap", "forward_sup", "backward_sup"]);
    table.push_values([report.lambda2, report.gap, report.forward_sup, report.backward_sup]);
    let mut artifacts = Artifacts::default();
    artifacts.table("gibbs", &table, cli.format)?;
    let mut summary = header(cli, "gibbs analyze", &hash);
    summary.insert("report".into(), json!(report));
    summary.insert("passed".into(), json!(report.passed()));
    finish(artifacts, summary)
}

fn dp_plan(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let loaded = config::load::<PlanConfig>(path)?;
    let cfg = &loaded.config;
    let plan = match cfg.problem {
        Problem::Erm => dp::plan_erm(&cfg.instance, &cfg.constants, cfg.theta),
        Problem::Sco => dp::plan_sco(&cfg.instance, &cfg.constants, cfg.theta),
    }
    .map_err(|e| Failure::from_core("dp", e))?;
    let mut artifacts = Artifacts::default();
    artifacts.add("plan.json", json_bytes(&plan)?);
    let mut summary = header(cli, "dp plan", &loaded.hash);
    summary.insert("plan".into(), json!(plan));
    summary.insert("excess_risk_scale".into(), json!(dp::excess_risk_scale(&cfg.instance)));
    finish(artifacts, summary)
}

fn dp_toy(cli: &Cli, path: &Path) -> Result<Outcome, Failure> {
    let loaded = config::load::<ToyConfig>(path)?;
    let cfg = &loaded.config;
    let inst = &cfg.instance;
    if cfg.seeds == 0 {
        return Err(Failure::Schema("seeds must be at least 1".into()));
    }
    let losses = cfg
        .losses
        .clone()
        .unwrap_or_else(|| dp::synthetic_losses(inst.n, inst.dim, inst.lipschitz, inst.p, cli.seed));
    let toy = ToyErm::new(inst, losses, &cfg.options).map_err(|e| Failure::from_core("dp", e))?;
    let sampler = toy.sampler().map_err(|e| Failure::from_core("dp", e))?;
    let runs: Vec<_> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| toy.run(&sampler, cli.seed.wrapping_add(s)))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::from_core("dp", e))?;
    let mut table = Table::new(["seed", "excess_risk", "accept_rate", "oracle_calls"]);
    for r in &runs {
        table.push_values([r.seed as f64, r.excess_risk, r.accept_rate, r.oracle_calls as f64]);
    }
    let mean = runs.iter().map(|r| r.excess_risk).sum::<f64>() / runs.len() as f64;
    let mut artifacts = Artifacts::default();
    artifacts.table("toy", &table, cli.format)?;
    let mut summary = header(cli, "dp run-toy", &loaded.hash);
    summary.insert("plan".into(), json!(toy.plan()));
    summary.insert("iterations".into(), json!(toy.iterations()));
    summary.insert("mean_excess_risk".into(), json!(mean));
    summary.insert("excess_risk_scale".into(), json!(dp::excess_risk_scale(inst)));
    finish(artifacts, summary)
}

fn verify_suite(cli: &Cli, suite: Suite) -> Result<Outcome, Failure> {
    let mut lines = String::new();
    let mut reports = Vec::new();
    let mut passed = true;
    for &id in suite.criteria() {
        let name = CRITERIA[id as usize - 1];
        let (ok, entry) = match verify::run_criterion(id, cli.seed) {
            Ok(r) => (r.passed(), report_entry(id, &r)),
            Err(e) => (false, json!({"criterion": id, "name": name, "status": "fail", "error": e.to_string()})),
        };
        passed &= ok;
        let margin = entry.get("margin").and_then(Value::as_f64);
        lines.push_str(&format!(
            "criterion {id:>2} {name:<24} {}{}\n",
            if ok { "PASS" } else { "FAIL" },
            margin.map(|m| format!("  margin {m:.3e}")).unwrap_or_default()
        ));
        reports.push(entry);
    }
    let mut artifacts = Artifacts::default();
    let mut summary = header(cli, "verify", "");
    summary.remove("config_hash");
    summary.insert("checks".into(), Value::Array(reports));
    summary.insert("passed".into(), json!(passed));
    artifacts.add("verify.json", json_bytes(&Value::Object(summary))?);
    Ok(Outcome {
        artifacts,
        summary: lines.into_bytes(),
        passed,
    })
}

fn report_entry(id: u8, r: &CheckReport) -> Value {
    let mut v = json!(r);
    v["criterion"] = json!(id);
    v
}
