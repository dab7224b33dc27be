//! Gains files: a line-oriented text format that survives write-then-read
//! bit-exactly. Values are printed with 17 significant digits, which is
//! lossless for binary64.
//!
//! ```text
//! formkit-gains v1
//! agents 4
//! edges 12
//! 1 2 <a> <b> <c>
//! 2 1 <a> <b> <c>
//! ...
//! ```
//!
//! One line per directed edge, 1-based agent ids, in the canonical order:
//! for each undirected edge (i < j), first (i, j), then (j, i).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use formkit_core::{GainBlock, GainSet, SensingGraph};

const MAGIC: &str = "formkit-gains v1";

pub fn format_gains(graph: &SensingGraph, gains: &GainSet) -> anyhow::Result<String> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("agents {}\n", graph.node_count()));
    let directed = graph.directed_edges();
    out.push_str(&format!("edges {}\n", directed.len()));
    for (i, j) in directed {
        let block = gains
            .block(i, j)
            .with_context(|| format!("gain set is missing directed edge ({i}, {j})"))?;
        out.push_str(&format!(
            "{} {} {:.16e} {:.16e} {:.16e}\n",
            i + 1,
            j + 1,
            block.a,
            block.b,
            block.c
        ));
    }
    Ok(out)
}

pub fn write_gains(path: &Path, graph: &SensingGraph, gains: &GainSet) -> anyhow::Result<()> {
    let text = format_gains(graph, gains)?;
    std::fs::write(path, text).with_context(|| format!("writing gains {}", path.display()))?;
    Ok(())
}

/// Parses a gains file. The directed edges define the sensing graph; the
/// result is validated against it (both directions present, ids in range).
pub fn parse_gains(text: &str) -> anyhow::Result<(SensingGraph, GainSet)> {
    let mut lines = text.lines().enumerate();

    let (_, magic) = lines.next().context("empty gains file")?;
    if magic.trim() != MAGIC {
        bail!(
            "line 1: expected header \"{MAGIC}\", got \"{}\"",
            magic.trim()
        );
    }
    let n = expect_count(lines.next(), "agents")?;
    let m = expect_count(lines.next(), "edges")?;
    if n < 2 {
        bail!("agents must be at least 2, got {n}");
    }

    let mut blocks = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            bail!(
                "line {}: expected \"i j a b c\", got {} fields",
                idx + 1,
                fields.len()
            );
        }
        let i: usize = fields[0]
            .parse()
            .with_context(|| format!("line {}: agent id \"{}\"", idx + 1, fields[0]))?;
        let j: usize = fields[1]
            .parse()
            .with_context(|| format!("line {}: agent id \"{}\"", idx + 1, fields[1]))?;
        if i == 0 || j == 0 || i > n || j > n {
            bail!(
                "line {}: agent ids must be 1..={n}, got ({i}, {j})",
                idx + 1
            );
        }
        let mut vals = [0.0f64; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = fields[2 + k]
                .parse()
                .with_context(|| format!("line {}: value \"{}\"", idx + 1, fields[2 + k]))?;
        }
        if blocks
            .insert((i - 1, j - 1), GainBlock::new(vals[0], vals[1], vals[2]))
            .is_some()
        {
            bail!("line {}: duplicate directed edge ({i}, {j})", idx + 1);
        }
        if i < j {
            pairs.push((i - 1, j - 1));
        }
        rows += 1;
    }
    if rows != m {
        bail!("header says {m} edges, file lists {rows}");
    }

    let graph = SensingGraph::new(n, pairs)?;
    let gains = GainSet::new(&graph, blocks).context("gains file is not a valid gain set")?;
    Ok((graph, gains))
}

fn expect_count(line: Option<(usize, &str)>, key: &str) -> anyhow::Result<usize> {
    let (idx, line) = line.with_context(|| format!("missing \"{key}\" line"))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v
            .parse()
            .with_context(|| format!("line {}: count \"{v}\"", idx + 1)),
        _ => bail!("line {}: expected \"{key} <count>\"", idx + 1),
    }
}

pub fn read_gains(path: &Path) -> anyhow::Result<(SensingGraph, GainSet)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading gains {}", path.display()))?;
    parse_gains(&text).with_context(|| format!("parsing gains {}", path.display()))
}
