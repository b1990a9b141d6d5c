//! Markdown summary of a run manifest.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::de::DeserializeOwned;
use vln_core::il_pipeline::TrainReport;
use vln_core::metrics::AggregateMetrics;

use crate::config::Stage;
use crate::pipeline::Manifest;
use crate::stages::{DaggerSummary, GraphSummary, SampleSummary};

pub const REFERENCE_LABEL: &str = "reference (not reproducible at desk scale)";

/// Published figures for the full-scale system, shown next to the numbers
/// of a run for orientation only.
pub mod reference {
    pub const GRAPH_F1: f64 = 0.70;
    pub const GRAPH_PRECISION: f64 = 0.695;
    pub const GRAPH_RECALL: f64 = 0.713;
    pub const MEAN_DEGREE: f64 = 4.15;
    pub const MEDIAN_DEGREE: f64 = 4.0;
    pub const MEAN_EDGE_M: f64 = 3.02;
    pub const MEDIAN_EDGE_M: f64 = 2.06;
    pub const PATHS: &str = "1.06M";
    pub const MEAN_STEPS: f64 = 7.1;
    pub const MEAN_LENGTH_M: f64 = 19.3;
    /// (split, NE, SR, NDTW, SDTW) of the DAGGER-finetuned agent on RxR.
    pub const EVAL: [(&str, f64, f64, f64, f64); 3] = [
        ("val_seen", 3.01, 75.9, 79.1, 68.8),
        ("val_unseen", 4.49, 64.8, 70.8, 57.5),
        ("test", 5.5, 60.7, 66.8, 53.5),
    ];
}

fn stats<T: DeserializeOwned>(manifest: &Manifest, stage: Stage) -> Option<T> {
    manifest.stage(stage).and_then(|r| serde_json::from_value(r.stats.clone()).ok())
}

pub fn render_report(manifest: &Manifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Run report\n");
    let _ = writeln!(out, "- seed: {}", manifest.seed);
    let names: Vec<&str> = manifest.stages.iter().map(|r| r.stage.name()).collect();
    let _ = writeln!(out, "- stages: {}", if names.is_empty() { "none".to_string() } else { names.join(", ") });

    if let Some(g) = stats::<GraphSummary>(manifest, Stage::Graphs) {
        let _ = writeln!(out, "\n## Navigation graphs\n");
        let _ = writeln!(
            out,
            "Rule weights: λ_d = {:.2}, λ_p = {:.2} (pair-rule F1 on training environments {:.3}).\n",
            g.fitted.lambda_d, g.fitted.lambda_p, g.fitted.f1
        );
        let _ = writeln!(out, "| metric | this run | {REFERENCE_LABEL} |");
        let _ = writeln!(out, "|---|---|---|");
        let rows = [
            ("edge F1", g.quality.f1, reference::GRAPH_F1),
            ("edge precision", g.quality.precision, reference::GRAPH_PRECISION),
            ("edge recall", g.quality.recall, reference::GRAPH_RECALL),
            ("mean degree", g.built.mean_degree, reference::MEAN_DEGREE),
            ("median degree", g.built.median_degree, reference::MEDIAN_DEGREE),
            ("mean edge length (m)", g.built.mean_edge_length, reference::MEAN_EDGE_M),
            ("median edge length (m)", g.built.median_edge_length, reference::MEDIAN_EDGE_M),
        ];
        for (name, ours, theirs) in rows {
            let _ = writeln!(out, "| {name} | {ours:.3} | {theirs} |");
        }
    }

    if let Some(s) = stats::<SampleSummary>(manifest, Stage::Sample) {
        let _ = writeln!(out, "\n## Trajectories\n");
        let _ = writeln!(out, "| set | paths | mean steps | mean length (m) |");
        let _ = writeln!(out, "|---|---|---|---|");
        for (name, st) in [("train", &s.train), ("eval", &s.eval)] {
            let _ = writeln!(out, "| {name} | {} | {:.2} | {:.2} |", st.count, st.mean_steps, st.mean_length_m);
        }
        let _ = writeln!(
            out,
            "| {REFERENCE_LABEL} | {} | {} | {} |",
            reference::PATHS,
            reference::MEAN_STEPS,
            reference::MEAN_LENGTH_M
        );
    }

    if let Some(counts) = stats::<BTreeMap<String, usize>>(manifest, Stage::Instructions) {
        let _ = writeln!(out, "\n## Episodes\n");
        for (split, n) in counts {
            let _ = writeln!(out, "- {split}: {n}");
        }
    }

    let train = stats::<TrainReport>(manifest, Stage::Train);
    let dagger = stats::<DaggerSummary>(manifest, Stage::Dagger);
    if train.is_some() || dagger.is_some() {
        let _ = writeln!(out, "\n## Training\n");
        if let Some(t) = train {
            let _ = writeln!(
                out,
                "- behavioral cloning: {} epochs, final loss {:.4}, training accuracy {:.3}",
                t.epoch_losses.len(),
                t.epoch_losses.last().copied().unwrap_or(f64::NAN),
                t.final_accuracy
            );
        }
        if let Some(d) = dagger {
            let added: Vec<String> = d.added.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(
                out,
                "- DAGGER: {} iteration(s), examples added {}, aggregate size {}",
                d.iterations,
                added.join(" + "),
                d.examples
            );
        }
    }

    if let Some(results) = stats::<BTreeMap<String, AggregateMetrics>>(manifest, Stage::Evaluate) {
        let _ = writeln!(out, "\n## Evaluation\n");
        let _ = writeln!(out, "| policy / split | episodes | NE (m) | SR (%) | SPL | NDTW | SDTW |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        for (name, m) in &results {
            let _ = writeln!(
                out,
                "| {name} | {} | {:.2} | {:.1} | {:.3} | {:.3} | {:.3} |",
                m.episodes, m.ne_m, m.sr, m.spl, m.ndtw, m.sdtw
            );
        }
        let _ = writeln!(out, "\n{REFERENCE_LABEL}, DAGGER agent:\n");
        let _ = writeln!(out, "| split | NE (m) | SR (%) | NDTW | SDTW |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for (split, ne, sr, ndtw, sdtw) in reference::EVAL {
            let _ = writeln!(out, "| {split} | {ne} | {sr} | {ndtw} | {sdtw} |");
        }

        let _ = writeln!(out, "\n### First error step\n");
        for (name, m) in &results {
            let steps: Vec<String> = m.first_error_histogram.iter().map(|(t, n)| format!("{t}:{n}")).collect();
            let _ = writeln!(out, "- {name}: no error {}; by step {}", m.no_error, steps.join(" "));
        }
    }
    out
}
