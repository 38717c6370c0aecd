//! Text and JSON output for reports and suite summaries.

use std::fmt::Write;

use super::{BenchReport, Growth, SuiteSummary, REFERENCE_GROWTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Json,
}

const HEADER: [&str; 11] = [
    "benchmark",
    "steps",
    "time_s",
    "nodes_static",
    "nodes_module",
    "edges_static",
    "edges_module",
    "funcs_static",
    "funcs_module",
    "objects_static",
    "objects_module",
];

fn row(r: &BenchReport) -> [String; 11] {
    let (a, b) = (&r.static_metrics, &r.module_metrics);
    [
        r.benchmark.clone(),
        r.steps.to_string(),
        format!("{:.2}", r.seconds),
        a.nodes.to_string(),
        b.nodes.to_string(),
        a.edges.to_string(),
        b.edges.to_string(),
        a.functions.to_string(),
        b.functions.to_string(),
        a.objects.to_string(),
        b.objects.to_string(),
    ]
}

fn table(rows: &[[String; 11]]) -> String {
    let mut widths = HEADER.map(str::len);
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(&HEADER.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn growth_line(label: &str, g: &Growth) -> String {
    format!(
        "{label}: nodes {:+.1}%  edges {:+.1}%  functions {:+.1}%\n",
        g.nodes, g.edges, g.functions
    )
}

/// The suite table, or the whole summary as JSON.
/// Counting conventions that differ from the reference figures.
const HEADER_NOTES: &str = "note: objects count real images only (static = 1), not the reference's 5 per static row\n\
note: 36 named interceptions modeled (35 tabled + __libc_dlopen_mode); the reference's total of 42 leaves 6 unnamed\n";

pub fn render(summary: &SuiteSummary, format: Format) -> String {
    if format == Format::Json {
        return serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    }
    let rows: Vec<_> = summary.benchmarks.iter().map(row).collect();
    let mut out = growth_line("reference growth (not reproduced)", &REFERENCE_GROWTH);
    out.push_str(HEADER_NOTES);
    out.push_str(&table(&rows));
    if rows.is_empty() {
        return out;
    }
    out.push('\n');
    let _ = writeln!(out, "precision: {:.3}", summary.precision);
    let _ = writeln!(out, "recall:    {:.3}", summary.recall);
    out.push_str(&growth_line("growth (mean)", &summary.growth_mean));
    out.push_str(&growth_line("growth (pooled)", &summary.growth_pooled));
    let failed: Vec<&str> = summary
        .benchmarks
        .iter()
        .filter(|r| r.validation == super::Validation::Fail)
        .map(|r| r.benchmark.as_str())
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "validation failed: {}", failed.join(", "));
    }
    out
}

/// One report: a single table row plus discoveries and findings.
pub fn render_report(report: &BenchReport, format: Format) -> String {
    if format == Format::Json {
        return serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    }
    let mut out = table(&[row(report)]);
    out.push('\n');
    for d in &report.discovered {
        let _ = writeln!(out, "discovered {} ({}) via {}", d.library, d.path, d.mechanism);
    }
    if report.discovered.is_empty() {
        out.push_str("no libraries discovered\n");
    }
    let _ = writeln!(out, "validation: {:?}", report.validation);
    for d in &report.dispatchers {
        let _ = writeln!(
            out,
            "dispatcher {:#x} in {}: {} successors on {}",
            d.block, d.image, d.successors, d.variable
        );
    }
    for s in &report.smc {
        let _ = writeln!(out, "smc {:?} at {:#x} -> {:#x}", s.class, s.site, s.target);
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
