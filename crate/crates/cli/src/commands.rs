use std::path::{Path, PathBuf};

use hetnid::explain::explain_graph;
use hetnid::explain::llm::LlmClient;
use hetnid::graph::codec::{read_corpus, write_corpus};
use hetnid::io::{read_jsonl, write_jsonl};
use hetnid::model::{train, TrainedModel};
use hetnid::pipeline::stages::{
    self, artifact_name, PredictionRecord, FEATURIZED_KIND, FLOW_KIND, PREDICTION_KIND,
};
use hetnid::pipeline::{run_pipeline, write_synthetic_captures, PipelineConfig, RunOptions, SynthConfig};
use hetnid::temporal::FeaturizedFlow;
use hetnid::{Error, FlowRecord, Result};

use crate::{Command, ConfigArg};

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    match &arg.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            flows_per_class,
            seed,
        } => {
            let cfg = SynthConfig {
                flows_per_class,
                seed,
                ..SynthConfig::default()
            };
            for c in write_synthetic_captures(&out, &cfg)? {
                println!("{}", c.path.display());
            }
            Ok(())
        }
        Command::Extract { captures, out, config } => {
            let cfg = load_config(&config)?;
            let paths = stages::resolve_captures(&captures)?;
            let (flows, stats) = stages::extract(&paths, &cfg.flow)?;
            write_jsonl(&out, FLOW_KIND, &flows)?;
            for s in &stats {
                println!(
                    "{}: {} of {} frames accepted ({} non-IP, {} malformed), {} flows",
                    s.capture, s.pcap.accepted, s.pcap.frames, s.pcap.skipped_non_ip, s.pcap.malformed, s.flows
                );
            }
            Ok(())
        }
        Command::Featurize {
            flows,
            out,
            window_s,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(w) = window_s {
                cfg.temporal.window_us = (w * 1e6).round() as u64;
            }
            let flows: Vec<FlowRecord> = read_jsonl(&flows, FLOW_KIND)?;
            let feats = stages::featurize(flows, &cfg.temporal)?;
            let n = write_jsonl(&out, FEATURIZED_KIND, &feats)?;
            println!("{n} featurized flows");
            Ok(())
        }
        Command::PrepareDataset {
            features,
            out_dir,
            test_cap,
            train_target,
            seed,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.split.test_cap = test_cap.unwrap_or(cfg.split.test_cap);
            cfg.split.train_target = train_target.unwrap_or(cfg.split.train_target);
            cfg.split.seed = seed.unwrap_or(cfg.split.seed);
            let feats: Vec<FeaturizedFlow> = read_jsonl(&features, FEATURIZED_KIND)?;
            let ds = stages::prepare_dataset(feats, &cfg.labeling, &cfg.split)?;
            write_jsonl(&out_dir.join("train.jsonl"), FEATURIZED_KIND, &ds.train)?;
            write_jsonl(&out_dir.join("test.jsonl"), FEATURIZED_KIND, &ds.test)?;
            let summary = serde_json::to_string_pretty(&ds.summary)?;
            write_file(&out_dir.join("summary.json"), &summary)?;
            println!("{summary}");
            Ok(())
        }
        Command::BuildGraphs { features, out } => {
            let feats: Vec<FeaturizedFlow> = read_jsonl(&features, FEATURIZED_KIND)?;
            let n = write_corpus(&out, &stages::build_graphs(&feats)?)?;
            println!("{n} graphs");
            Ok(())
        }
        Command::Train {
            graphs,
            out,
            epochs,
            seed,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            let graphs = read_corpus(&graphs)?;
            let (model, log) = train(&graphs, &cfg.model, &cfg.train)?;
            model.save(&out)?;
            match log.best_val_macro_f1 {
                Some(f1) => println!("{} epochs, best epoch {} with validation macro F1 {f1:.4}", log.epochs.len(), log.best_epoch),
                None => println!("{} epochs", log.epochs.len()),
            }
            Ok(())
        }
        Command::Infer { model, graphs, out } => {
            let model = TrainedModel::load(&model)?;
            let graphs = read_corpus(&graphs)?;
            let preds = stages::infer(&model, &graphs)?;
            write_jsonl(&out, PREDICTION_KIND, &preds)?;
            println!("{} predictions", preds.len());
            Ok(())
        }
        Command::Evaluate {
            predictions,
            out_dir,
            config,
        } => {
            let cfg = load_config(&config)?;
            let preds: Vec<PredictionRecord> = read_jsonl(&predictions, PREDICTION_KIND)?;
            let report = stages::evaluate_predictions(&preds, &cfg.explain.explain.prompts.payload_classes)?;
            write_file(&out_dir.join("evaluation.json"), serde_json::to_vec_pretty(&report)?)?;
            let md = report.to_markdown();
            write_file(&out_dir.join("evaluation.md"), &md)?;
            print!("{md}");
            Ok(())
        }
        Command::Explain {
            model,
            graphs,
            graph,
            steps,
            endpoint,
            llm_model,
            out,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.explain.explain.steps = s;
            }
            if endpoint.is_some() {
                cfg.endpoint.base_url = endpoint;
            }
            if let Some(m) = llm_model {
                cfg.endpoint.model = m;
            }
            let model = TrainedModel::load(&model)?;
            let g = read_corpus(&graphs)?
                .into_iter()
                .find(|g| g.id == graph)
                .ok_or_else(|| Error::InvalidArgument(format!("no graph with id {graph:?}")))?;
            let client = LlmClient::new(cfg.endpoint.clone())?;
            let e = explain_graph(&model, &g, &client, &cfg.explain.explain)?;
            let md = format!("{}\n{}", e.report.to_markdown(), e.attribution.to_markdown());
            match out {
                Some(dir) => {
                    let name = artifact_name(&g.id);
                    write_file(&dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&e)?)?;
                    write_file(&dir.join(format!("{name}.md")), &md)?;
                    println!("{}", dir.join(format!("{name}.md")).display());
                }
                None => print!("{md}"),
            }
            Ok(())
        }
        Command::Run { config, force, until } => {
            let cfg = PipelineConfig::load(&config)?;
            let summary = run_pipeline(&cfg, &RunOptions { force, until })?;
            for (stage, status) in &summary.stages {
                println!("{stage}: {status:?}");
            }
            let eval: PathBuf = hetnid::pipeline::run::Layout::new(&cfg.work_dir).eval_md();
            if eval.exists() && until.is_none() {
                println!("report: {}", eval.display());
            }
            Ok(())
        }
        Command::InitConfig => {
            print!("{}", PipelineConfig::default().to_toml()?);
            Ok(())
        }
    }
}
