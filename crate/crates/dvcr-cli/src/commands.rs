//! One function per subcommand. Everything prints to stdout; errors bubble
//! up to `main` for the exit-code mapping.

use std::path::{Path, PathBuf};

use dvcr::predictor::{GtChooser, LexicalChooser, NoneChooser};
use dvcr::ranker::neighbor_seed;
use dvcr::{
    element_html_text, evaluate, generate_corpus, load_chooser, load_grids, load_image,
    load_op_head, load_ranker, neighbors, oracle_rank, parse_corpus, patch_featurize,
    predict_from_ranked, rank_elements, render_action, save_chooser, save_op_head, save_ranker,
    train_chooser, train_op_head, train_ranker, ChooserSpec, Election, ElementChooser, Error,
    EvalReport, FeatureGrid, OpSpec, OperationPredictor, OracleOpPredictor, RankerSpec, Result,
    Step, Task,
};
use indexmap::IndexMap;

use crate::config::{ChooserChoice, Settings};

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| {
        Error::Config(format!("no {key} path set (use --{key} or [paths] {key})"))
    })
}

/// Screenshots default to the directory the corpus file lives in.
fn screenshot_dir<'a>(s: &'a Settings, corpus: &'a Path) -> &'a Path {
    s.paths
        .screenshots
        .as_deref()
        .unwrap_or_else(|| corpus.parent().unwrap_or_else(|| Path::new(".")))
}

pub fn cmd_synth(s: &Settings) -> Result<()> {
    let out = require(&s.paths.out, "out")?;
    let corpus = generate_corpus(&s.synth, out)?;
    println!(
        "wrote {} pages to {} ({} train / {} test, split {})",
        corpus.manifest.pages.len(),
        out.display(),
        corpus.train.len(),
        corpus.test.len(),
        s.synth.split.name(),
    );
    Ok(())
}

pub fn cmd_train(s: &Settings) -> Result<()> {
    let corpus_path = require(&s.paths.corpus, "corpus")?;
    let out = require(&s.paths.out, "out")?;
    let tasks = parse_corpus(corpus_path)?;
    let shots = screenshot_dir(s, corpus_path);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let grids = load_grids(shots, &tasks, s.train.model.patch, s.train.model.d_v)?;
    let mut losses: IndexMap<&str, Vec<f64>> = IndexMap::new();

    let ranker = train_ranker(&tasks, &grids, &s.train)?;
    report_epochs("ranker", &ranker.epoch_losses, ranker.skipped_steps);
    save_ranker(&ranker.weights, out.join("ranker.dvcr"))?;
    losses.insert("ranker", ranker.epoch_losses);

    if s.chooser == ChooserChoice::Trained {
        let chooser = train_chooser(&tasks, &s.chooser_train)?;
        report_epochs("chooser", &chooser.epoch_losses, chooser.skipped_steps);
        save_chooser(&chooser.weights, out.join("chooser.dvcr"))?;
        losses.insert("chooser", chooser.epoch_losses);

        let op = train_op_head(&tasks, &s.op_train)?;
        report_epochs("op_head", &op.epoch_losses, op.skipped_steps);
        if op.span_misses > 0 {
            println!("op_head: {} argument spans not found in instructions", op.span_misses);
        }
        save_op_head(&op.weights, out.join("op_head.dvcr"))?;
        losses.insert("op_head", op.epoch_losses);
    }

    let trace = serde_json::to_string_pretty(&losses).expect("loss map serializes") + "\n";
    let trace_path = out.join("losses.json");
    std::fs::write(&trace_path, trace)
        .map_err(|e| Error::io(trace_path.display().to_string(), e))?;
    println!("weights and loss trace written to {}", out.display());
    Ok(())
}

fn report_epochs(name: &str, epoch_losses: &[f64], skipped: usize) {
    for (i, loss) in epoch_losses.iter().enumerate() {
        println!("{name} epoch {}/{} loss {loss:.6}", i + 1, epoch_losses.len());
    }
    if skipped > 0 {
        println!("{name}: skipped {skipped} unusable steps");
    }
}

/// Runs one evaluation under the settings; grids are only loaded when the
/// trained ranker actually needs them.
fn eval_once(s: &Settings, tasks: &[Task], ranker_path: Option<&Path>) -> Result<EvalReport> {
    let chooser_weights = match s.chooser {
        ChooserChoice::Trained => Some(load_chooser(require(&s.paths.chooser, "chooser")?)?),
        _ => None,
    };
    let chooser = match s.chooser {
        ChooserChoice::Trained => ChooserSpec::Trained(chooser_weights.as_ref().unwrap()),
        ChooserChoice::Lexical => ChooserSpec::Lexical,
        ChooserChoice::ScriptedGt => ChooserSpec::ScriptedGt,
        ChooserChoice::ScriptedNone => ChooserSpec::ScriptedNone,
    };
    let op_head = if s.op_oracle { None } else { Some(load_op_head(require(&s.paths.op, "op")?)?) };
    let op = match &op_head {
        Some(h) => OpSpec::Trained(h),
        None => OpSpec::Oracle,
    };

    // An explicit path (the --compare side) always means trained weights,
    // even when the primary run uses the oracle ranker.
    let report = if s.oracle_ranker && ranker_path.is_none() {
        let (report, _) =
            evaluate(tasks, &IndexMap::new(), &RankerSpec::Oracle, &chooser, &op, &s.predict)?;
        report
    } else {
        let path = ranker_path.map(Ok).unwrap_or_else(|| require(&s.paths.ranker, "ranker"))?;
        let w = load_ranker(path)?;
        let corpus_path = require(&s.paths.corpus, "corpus")?;
        let grids =
            load_grids(screenshot_dir(s, corpus_path), tasks, w.cfg.patch, w.cfg.d_v)?;
        let (report, _) =
            evaluate(tasks, &grids, &RankerSpec::Trained(&w), &chooser, &op, &s.predict)?;
        report
    };
    Ok(report)
}

pub fn cmd_eval(s: &Settings, compare: Option<&Path>) -> Result<()> {
    let corpus_path = require(&s.paths.corpus, "corpus")?;
    let tasks = parse_corpus(corpus_path)?;
    let report = eval_once(s, &tasks, None)?;

    match compare {
        None => println!("{}", report.table()),
        Some(other_path) => {
            let other = eval_once(s, &tasks, Some(other_path))?;
            println!("{:<10}{:>10}{:>10}{:>10}", "metric", "primary", "compare", "delta");
            let mut rows: Vec<(String, f64, f64)> = Vec::new();
            for ((k, v), (_, ov)) in report.recall_at.iter().zip(other.recall_at.iter()) {
                rows.push((format!("R@{k}"), *v, *ov));
            }
            rows.push(("Ele.Acc".into(), report.element_accuracy, other.element_accuracy));
            rows.push(("Op.F1".into(), report.operation_f1, other.operation_f1));
            rows.push(("Step SR".into(), report.step_success_rate, other.step_success_rate));
            for (name, a, b) in rows {
                println!("{name:<10}{a:>10.4}{b:>10.4}{:>+10.4}", a - b);
            }
        }
    }

    if let Some(path) = &s.paths.report {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn find_step<'a>(tasks: &'a [Task], task_id: &str, step: usize) -> Result<(&'a Task, &'a Step)> {
    let task = tasks.iter().find(|t| t.task_id == task_id).ok_or_else(|| {
        Error::Config(format!("task {task_id:?} not found in corpus ({} tasks)", tasks.len()))
    })?;
    let s = task.steps.get(step).ok_or_else(|| {
        Error::Config(format!("task {task_id:?} has {} steps, no index {step}", task.steps.len()))
    })?;
    Ok((task, s))
}

/// Ranked candidates for one step, trained or oracle, loading at most the
/// one screenshot the step references.
fn rank_one(s: &Settings, step: &Step, instruction: &str) -> Result<Vec<(String, f64)>> {
    if s.oracle_ranker {
        return Ok(oracle_rank(step, s.predict.k));
    }
    let w = load_ranker(require(&s.paths.ranker, "ranker")?)?;
    let grid: Option<FeatureGrid> = match &step.document.screenshot {
        Some(name) => {
            let corpus_path = require(&s.paths.corpus, "corpus")?;
            let img = load_image(screenshot_dir(s, corpus_path).join(name))?;
            Some(patch_featurize(&img, w.cfg.patch, w.cfg.d_v))
        }
        None => None,
    };
    rank_elements(step, instruction, grid.as_ref(), &w, s.predict.k, s.predict.neighbor_source)
}

fn print_ranked(s: &Settings, step: &Step, ranked: &[(String, f64)]) -> Result<()> {
    for (i, (id, score)) in ranked.iter().enumerate() {
        let e = step.document.require(id)?;
        println!("{:>3}. {score:>8.4}  {id}  {}", i + 1, element_html_text(e));
        let list = neighbors(
            &step.document,
            id,
            s.predict.m,
            s.predict.neighbor_source,
            neighbor_seed(step.step_id, id),
        )?;
        for (nid, dist) in &list.neighbors {
            let ne = step.document.require(nid)?;
            println!("       nbr {nid} d={dist:.1}  {}", element_html_text(ne));
        }
    }
    Ok(())
}

pub fn cmd_rank(s: &Settings, task_id: &str, step_idx: usize) -> Result<()> {
    let tasks = parse_corpus(require(&s.paths.corpus, "corpus")?)?;
    let (task, step) = find_step(&tasks, task_id, step_idx)?;
    let ranked = rank_one(s, step, &task.instruction)?;
    println!("instruction: {}", task.instruction);
    println!("step {} of task {} ({} candidates)\n", step_idx, task.task_id, ranked.len());
    print_ranked(s, step, &ranked)
}

fn print_election(election: &Election) {
    for (r, round) in election.rounds.iter().enumerate() {
        println!("round {}", r + 1);
        for (g, snippet) in round.snippets.iter().enumerate() {
            println!("  group {}", g + 1);
            for line in snippet.render().lines() {
                println!("    {line}");
            }
            match round.picks[g] {
                Some(i) => {
                    let opt = &snippet.options[i];
                    println!("  pick: ({}) {}", opt.label, opt.element_id);
                }
                None => println!("  pick: None"),
            }
        }
        println!("  survivors: {}", if round.survivors.is_empty() {
            "(none)".to_string()
        } else {
            round.survivors.join(", ")
        });
    }
    match &election.winner {
        Some(id) => println!("winner: {id}"),
        None => println!("winner: none"),
    }
}

pub fn cmd_predict(s: &Settings, task_id: &str, step_idx: usize) -> Result<()> {
    let tasks = parse_corpus(require(&s.paths.corpus, "corpus")?)?;
    let (task, step) = find_step(&tasks, task_id, step_idx)?;
    let ranked = rank_one(s, step, &task.instruction)?;

    println!("instruction: {}", task.instruction);
    println!("step {} of task {} ({} candidates)\n", step_idx, task.task_id, ranked.len());
    print_ranked(s, step, &ranked)?;
    println!();

    let chooser: Box<dyn ElementChooser> = match s.chooser {
        ChooserChoice::Trained => Box::new(load_chooser(require(&s.paths.chooser, "chooser")?)?),
        ChooserChoice::Lexical => Box::new(LexicalChooser),
        ChooserChoice::ScriptedGt => {
            Box::new(GtChooser { gt_element_id: step.gt_action.element_id.clone() })
        }
        ChooserChoice::ScriptedNone => Box::new(NoneChooser),
    };
    let op: Box<dyn OperationPredictor> = if s.op_oracle {
        Box::new(OracleOpPredictor { operation: step.gt_action.operation.clone() })
    } else {
        Box::new(load_op_head(require(&s.paths.op, "op")?)?)
    };

    let prediction =
        predict_from_ranked(step, &task.instruction, ranked, chooser.as_ref(), op.as_ref(), &s.predict)?;
    print_election(&prediction.election);
    match &prediction.action {
        Some(a) => println!("action: {}", render_action(a, &step.document)?),
        None => println!("action: none"),
    }
    Ok(())
}
