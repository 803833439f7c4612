//! Subcommand bodies. Each writes only inside the configured output
//! directory and records every file it writes in the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use famtune::experiment::{
    bars_csv, budget_csv, build_landscape, run_accuracy_bars, run_budget_report, run_compare, run_heatmap, run_tune,
    RunSetup,
};
use famtune::family::cluster;
use famtune::graph::ModelGraph;
use famtune::{Landscape, TunerState};

use crate::config::RunConfig;
use crate::manifest::{emit_manifest, read_manifest, sha256_hex, Manifest, MANIFEST_FILE};

/// Median budget ratio the foresee policy must reach at 100% of final performance.
pub const MAX_RATIO_FULL: f64 = 0.8;
/// Median budget ratio allowed at 80% of final performance.
pub const MAX_RATIO_EARLY: f64 = 1.1;
/// Minimum median gap between within- and cross-archetype heatmap cells.
pub const MIN_HEATMAP_GAP: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Tune,
    Compare,
    Heatmap,
    Bars,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Tune => "tune",
            Command::Compare => "compare",
            Command::Heatmap => "heatmap",
            Command::Bars => "bars",
            Command::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "tune" => Command::Tune,
            "compare" => Command::Compare,
            "heatmap" => Command::Heatmap,
            "bars" => Command::Bars,
            "report" => Command::Report,
            other => bail!("unknown command {other:?} in manifest"),
        })
    }
}

/// Result of a run: its manifest and whether its property checks held.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: Manifest,
    pub passed: bool,
}

struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest.outputs.insert(rel.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn landscape(&mut self, model: &ModelGraph, setup: &RunSetup, seed: u64, rel: &str) -> Result<Landscape> {
        let landscape: Landscape = build_landscape(model, setup, seed)?;
        let csv = landscape.to_csv(model);
        self.manifest.landscape_digests.insert(seed, sha256_hex(csv.as_bytes()));
        self.write(rel, &csv)?;
        Ok(landscape)
    }

    fn finish(self, passed: bool) -> Result<Outcome> {
        emit_manifest(&self.manifest, &self.dir)?;
        Ok(Outcome {
            manifest: self.manifest,
            passed,
        })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn seed_dir(config: &RunConfig, seed: u64, file: &str) -> String {
    if config.seeds == 1 {
        file.to_string()
    } else {
        format!("seed-{seed}/{file}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into())
}

pub fn execute(command: Command, config: &RunConfig) -> Result<Outcome> {
    let model = config.load_model()?;
    let setup = config.setup();
    let mut out = Outputs {
        dir: config.out_dir.clone(),
        manifest: Manifest::new(command.name(), config, &model.to_json()),
    };
    let families = cluster(&model.subgraphs, config.cluster_algo);
    out.write("families.csv", &families.to_csv())?;
    let passed = match command {
        Command::Tune => tune(&mut out, config, &model, &setup)?,
        Command::Report => report(&mut out, config, &model, &setup)?,
        Command::Compare => compare(&mut out, config, &model, &setup)?,
        Command::Heatmap => heatmap(&mut out, config, &model, &setup)?,
        Command::Bars => bars(&mut out, config, &model, &setup)?,
    };
    out.finish(passed)
}

fn single_run(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<TunerState> {
    let landscape = out.landscape(model, setup, config.seed, "landscape.csv")?;
    let state: TunerState = run_tune(model, &landscape, setup, config.policy, config.seed)?;
    out.write(&config.out, &state.curve_csv())?;
    Ok(state)
}

fn tune(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<bool> {
    let state = single_run(out, config, model, setup)?;
    let wall = state.curve.last().map(|c| c.wall_seconds).unwrap_or(0.0);
    println!(
        "{} on {}: b={} of {}, model latency {:.6} ms, simulated wall {:.1} s",
        config.policy,
        model.name,
        state.b,
        state.budget,
        state.final_latency(),
        wall
    );
    Ok(true)
}

fn report(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<bool> {
    let state = single_run(out, config, model, setup)?;
    let rows = run_budget_report(&state);
    out.write("budget.csv", &budget_csv(&rows))?;
    println!("subgraph  allocated  share   last_improvement  state");
    for r in &rows {
        let flag = if r.exhausted {
            "exhausted"
        } else if r.plateau {
            "plateau"
        } else {
            ""
        };
        println!("{:>8}  {:>9}  {:.3}  {:>16}  {flag}", r.subgraph, r.allocated, r.share, r.last_improvement);
    }
    let total: usize = rows.iter().map(|r| r.allocated).sum();
    if total != state.b {
        eprintln!("FAIL: allocations sum to {total} but b = {}", state.b);
        return Ok(false);
    }
    Ok(true)
}

fn compare(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<bool> {
    let mut summary = String::from("seed,ratio_80,ratio_90,ratio_100,wall_ratio_80,wall_ratio_90,wall_ratio_100\n");
    let mut full = Vec::new();
    let mut early = Vec::new();
    for seed in config.seed_list() {
        out.landscape(model, setup, seed, &seed_dir(config, seed, "landscape.csv"))?;
        let report = run_compare::<f64>(model, setup, seed)?;
        let (base, fore) = report.curves_csv();
        let (dat, script) = report.gnuplot();
        out.write(&seed_dir(config, seed, "thresholds.csv"), &report.thresholds_csv())?;
        out.write(&seed_dir(config, seed, "curve_monolithic.csv"), &base)?;
        out.write(&seed_dir(config, seed, "curve_foresee.csv"), &fore)?;
        out.write(&seed_dir(config, seed, "curves.dat"), &dat)?;
        out.write(&seed_dir(config, seed, "curves.gp"), &script)?;
        out.write(&seed_dir(config, seed, "budget_monolithic.csv"), &budget_csv(&run_budget_report(&report.baseline)))?;
        out.write(&seed_dir(config, seed, "budget_foresee.csv"), &budget_csv(&run_budget_report(&report.foresee)))?;
        let ratios: Vec<f64> = report
            .thresholds
            .iter()
            .map(|t| t.budget_ratio().unwrap_or(f64::INFINITY))
            .collect();
        let walls: Vec<String> = report.thresholds.iter().map(|t| fmt_opt(t.wall_ratio())).collect();
        summary.push_str(&format!(
            "{seed},{:.6},{:.6},{:.6},{}\n",
            ratios[0],
            ratios[1],
            ratios[2],
            walls.join(",")
        ));
        println!(
            "seed {seed}: budget ratio 80% {:.3}, 90% {:.3}, 100% {:.3}",
            ratios[0], ratios[1], ratios[2]
        );
        early.push(ratios[0]);
        full.push(ratios[2]);
    }
    let (m_early, m_full) = (median(early), median(full));
    summary.push_str(&format!("median,{m_early:.6},,{m_full:.6},,,\n"));
    out.write("compare_summary.csv", &summary)?;
    let ok_full = m_full <= MAX_RATIO_FULL;
    let ok_early = m_early <= MAX_RATIO_EARLY;
    println!(
        "{}: median budget ratio at 100% = {m_full:.3} (limit {MAX_RATIO_FULL})",
        if ok_full { "PASS" } else { "FAIL" }
    );
    println!(
        "{}: median budget ratio at 80% = {m_early:.3} (limit {MAX_RATIO_EARLY})",
        if ok_early { "PASS" } else { "FAIL" }
    );
    Ok(ok_full && ok_early)
}

fn heatmap(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<bool> {
    let mut summary = String::from("seed,diagonal,within_archetype,cross_archetype,gap\n");
    let mut gaps = Vec::new();
    for seed in config.seed_list() {
        out.landscape(model, setup, seed, &seed_dir(config, seed, "landscape.csv"))?;
        let h = run_heatmap::<f64>(model, setup, config.samples, seed)?;
        out.write(&seed_dir(config, seed, "heatmap.csv"), &h.to_csv())?;
        let (within, cross) = (h.within_archetype_mean(), h.cross_archetype_mean());
        let gap = match (within, cross) {
            (Some(w), Some(c)) => Some(w - c),
            _ => None,
        };
        summary.push_str(&format!(
            "{seed},{},{},{},{}\n",
            fmt_opt(h.diagonal_mean()),
            fmt_opt(within),
            fmt_opt(cross),
            fmt_opt(gap)
        ));
        println!(
            "seed {seed}: diagonal {}, within {}, cross {}",
            fmt_opt(h.diagonal_mean()),
            fmt_opt(within),
            fmt_opt(cross)
        );
        if let Some(g) = gap {
            gaps.push(g);
        }
    }
    out.write("heatmap_summary.csv", &summary)?;
    if gaps.is_empty() {
        eprintln!("FAIL: the model has no pair of archetypes with within- and cross-archetype cells");
        return Ok(false);
    }
    let m = median(gaps);
    let ok = m >= MIN_HEATMAP_GAP;
    println!(
        "{}: median within-minus-cross gap = {m:.3} (need {MIN_HEATMAP_GAP})",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn bars(out: &mut Outputs, config: &RunConfig, model: &ModelGraph, setup: &RunSetup) -> Result<bool> {
    for &id in config.starve.keys() {
        model.subgraph(id)?;
    }
    let n = model.len();
    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); n];
    for seed in config.seed_list() {
        out.landscape(model, setup, seed, &seed_dir(config, seed, "landscape.csv"))?;
        let bars = run_accuracy_bars::<f64>(model, setup, config.samples, &config.starve, seed)?;
        out.write(&seed_dir(config, seed, "bars.csv"), &bars_csv(&bars))?;
        for b in &bars {
            if let (Some(m), Some(i)) = (b.monolithic, b.individual) {
                diffs[b.subgraph].push(i - m);
            }
        }
    }
    let mut summary = String::from("subgraph_id,starved,median_individual_minus_monolithic\n");
    let mut ok = true;
    println!("subgraph  individual-monolithic (median)");
    for (s, d) in diffs.into_iter().enumerate() {
        let starved = config.starve.contains_key(&s);
        let m = (!d.is_empty()).then(|| median(d));
        summary.push_str(&format!("{s},{starved},{}\n", fmt_opt(m)));
        println!("{s:>8}  {}{}", fmt_opt(m), if starved { "  (starved)" } else { "" });
        // a starved subgraph should do better under the shared model
        if starved && m.is_none_or(|m| m >= 0.0) {
            eprintln!("FAIL: starved subgraph {s} does not favor the monolithic model");
            ok = false;
        }
    }
    out.write("bars_summary.csv", &summary)?;
    Ok(ok)
}

/// Re-runs a manifest's command into `out_dir` (or its original directory)
/// and checks every recorded output digest.
pub fn replay(manifest_path: &Path, out_dir: Option<PathBuf>) -> Result<Outcome> {
    let recorded = read_manifest(manifest_path)?;
    let command = Command::from_name(&recorded.command)?;
    let mut config = recorded.config.clone();
    if let Some(dir) = out_dir {
        config.out_dir = dir;
    }
    let outcome = execute(command, &config)?;
    let fresh = &outcome.manifest;
    let mut mismatched = Vec::new();
    if fresh.model_digest != recorded.model_digest {
        mismatched.push("model".to_string());
    }
    if fresh.landscape_digests != recorded.landscape_digests {
        mismatched.push("landscape".to_string());
    }
    for (name, digest) in &recorded.outputs {
        if fresh.outputs.get(name) != Some(digest) {
            mismatched.push(name.clone());
        }
    }
    if !mismatched.is_empty() {
        bail!("replay differs from {}: {}", manifest_path.display(), mismatched.join(", "));
    }
    println!(
        "replayed {} into {}: {} outputs identical",
        recorded.command,
        config.out_dir.join(MANIFEST_FILE).display(),
        recorded.outputs.len()
    );
    Ok(outcome)
}

