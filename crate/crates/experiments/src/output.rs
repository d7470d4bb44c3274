//! CSV and SVG artifacts.
//!
//! Every record becomes `<scenario>.csv` with the header
//! `scenario,run,metric,value`; one row per run and metric, plus a
//! `failed` row with value 1 for each excluded run. Bulk records add one
//! bar chart per orbit (median bytes at each checkpoint, both modes, with
//! standard-deviation whiskers); webperf records add one chart per orbit
//! with the relative median aPLT difference per page and loss.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use smaq::netem::Orbit;
use smaq::sim::Mode;
use svg::node::element::{Group, Line, Rectangle, Text};
use svg::Document;

use crate::metrics::{MetricsRecord, APLT};
use crate::runner::relative_difference;
use crate::scenario::Experiment;
use crate::Error;

pub const CSV_HEADER: [&str; 4] = ["scenario", "run", "metric", "value"];

/// The CSV text of one record.
pub fn to_csv(record: &MetricsRecord) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    let mut rows: Vec<(u32, usize, String)> = Vec::new();
    for (i, s) in record.series.iter().enumerate() {
        for &(run, v) in &s.values {
            rows.push((run, i, format_value(v)));
        }
    }
    for &run in &record.failed_runs {
        rows.push((run, usize::MAX, "1".into()));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    for (run, i, value) in rows {
        let metric = record.series.get(i).map_or("failed", |s| s.metric.as_str());
        w.write_record([record.scenario.as_str(), &run.to_string(), metric, &value]).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_error(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Output(e.to_string())
}

/// Integers without a fraction, everything else in shortest round-trip form.
fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// File name and content of every artifact for `records`.
pub fn render(records: &[MetricsRecord]) -> Result<Vec<(String, String)>, Error> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut files = Vec::new();
    for r in records {
        files.push((format!("{}.csv", r.scenario), to_csv(r)?));
    }
    for orbit in Orbit::ALL {
        let bulk: Vec<&MetricsRecord> = records
            .iter()
            .filter(|r| r.config.experiment == Experiment::Bulk && r.config.orbit == orbit)
            .collect();
        if !bulk.is_empty() {
            files.push((format!("bulk-{orbit}.svg"), bulk_chart(orbit, &bulk)));
        }
        let pages = aplt_differences(records, orbit);
        if !pages.is_empty() {
            files.push((format!("webperf-{orbit}.svg"), webperf_chart(orbit, &pages)));
        }
    }
    Ok(files)
}

/// Renders everything first, then writes it; nothing is written on error.
pub fn emit_outputs(records: &[MetricsRecord], dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let files = render(records)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(dir.display().to_string(), e))?;
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::Io(path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}

/// One webperf comparison: page label, bytes per connection, loss and
/// relative median aPLT difference of smaq-pep against quic.
#[derive(Debug, Clone, PartialEq)]
pub struct PageDifference {
    pub page: String,
    pub connections: usize,
    pub bytes_per_connection: f64,
    pub loss: f64,
    pub difference: f64,
}

/// Pairs smaq-pep and quic webperf records of `orbit` by page and loss.
pub fn aplt_differences(records: &[MetricsRecord], orbit: Orbit) -> Vec<PageDifference> {
    let webperf = |mode: Mode| {
        records.iter().filter(move |r| {
            r.config.experiment == Experiment::Webperf && r.config.orbit == orbit && r.config.mode == mode
        })
    };
    let mut out = Vec::new();
    for smaq in webperf(Mode::SmaqPep) {
        let quic = webperf(Mode::Quic)
            .find(|q| q.config.loss == smaq.config.loss && q.config.manifest == smaq.config.manifest);
        let (Some(quic), Some(page)) = (quic, smaq.config.manifest.as_ref()) else { continue };
        let Some(difference) = relative_difference(smaq, quic, APLT) else { continue };
        let (connections, bpc) = crate::manifest::PageManifest::resolve(page)
            .map(|m| (m.connections(), m.bytes_per_connection()))
            .unwrap_or((0, 0.0));
        out.push(PageDifference {
            page: page.clone(),
            connections,
            bytes_per_connection: bpc,
            loss: smaq.config.loss,
            difference,
        });
    }
    out.sort_by(|a, b| a.bytes_per_connection.total_cmp(&b.bytes_per_connection).then(a.loss.total_cmp(&b.loss)));
    out
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;
const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn label(x: f64, y: f64, text: impl Into<String>, anchor: &str) -> Text {
    Text::new(text)
        .set("x", x)
        .set("y", y)
        .set("font-family", "sans-serif")
        .set("font-size", 11)
        .set("text-anchor", anchor)
}

fn frame(title: String) -> Document {
    Document::new()
        .set("viewBox", (0, 0, WIDTH, HEIGHT))
        .set("width", WIDTH)
        .set("height", HEIGHT)
        .add(Rectangle::new().set("width", WIDTH).set("height", HEIGHT).set("fill", "white"))
        .add(label(WIDTH / 2.0, 22.0, title, "middle").set("font-size", 14))
}

fn axis_line(x1: f64, y1: f64, x2: f64, y2: f64) -> Line {
    Line::new().set("x1", x1).set("y1", y1).set("x2", x2).set("y2", y2).set("stroke", "black")
}

/// Median bytes per checkpoint, grouped by loss then checkpoint, one bar per mode.
fn bulk_chart(orbit: Orbit, records: &[&MetricsRecord]) -> String {
    // (loss, checkpoint metric) -> mode -> (median, std-dev)
    let mut groups: BTreeMap<(u64, String), BTreeMap<Mode, (f64, f64)>> = BTreeMap::new();
    let mut order: Vec<(u64, String)> = Vec::new();
    for r in records {
        for s in &r.series {
            let key = (r.config.loss.to_bits(), s.metric.clone());
            if !order.contains(&key) {
                order.push(key.clone());
            }
            if let Some(sum) = s.summary {
                groups.entry(key).or_default().insert(r.config.mode, (sum.median, sum.std_dev));
            }
        }
    }
    order.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)));
    let max = groups.values().flat_map(|m| m.values()).map(|&(m, s)| m + s).fold(1.0, f64::max) / 1e6;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / order.len().max(1) as f64;
    let bar = slot * 0.35;
    let y_of = |mb: f64| TOP + plot_h * (1.0 - mb / max);
    let mut doc = frame(format!("Bulk download, {}: median MB received", orbit.as_str().to_uppercase()));
    let mut bars = Group::new();
    for (i, key) in order.iter().enumerate() {
        let x0 = LEFT + slot * i as f64 + slot * 0.15;
        for (j, mode) in Mode::ALL.iter().enumerate() {
            let Some(&(median, sd)) = groups.get(key).and_then(|m| m.get(mode)) else { continue };
            let (mb, sd) = (median / 1e6, sd / 1e6);
            let x = x0 + bar * j as f64;
            bars = bars
                .add(
                    Rectangle::new()
                        .set("x", x)
                        .set("y", y_of(mb))
                        .set("width", bar)
                        .set("height", (plot_h * mb / max).max(0.0))
                        .set("fill", COLORS[j]),
                )
                .add(axis_line(x + bar / 2.0, y_of(mb + sd), x + bar / 2.0, y_of((mb - sd).max(0.0))));
        }
        let loss_pct = f64::from_bits(key.0) * 100.0;
        let cx = LEFT + slot * (i as f64 + 0.5);
        bars = bars
            .add(label(cx, HEIGHT - BOTTOM + 16.0, key.1.trim_start_matches("bytes@"), "middle"))
            .add(label(cx, HEIGHT - BOTTOM + 30.0, format!("{loss_pct}% loss"), "middle"));
    }
    doc = doc.add(bars).add(axis_line(LEFT, TOP, LEFT, HEIGHT - BOTTOM)).add(axis_line(
        LEFT,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM,
    ));
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        doc = doc.add(label(LEFT - 6.0, y_of(v) + 4.0, format!("{v:.1}"), "end"));
    }
    legend(doc, &Mode::ALL.map(|m| m.as_str().to_string())).to_string()
}

fn legend(mut doc: Document, names: &[String]) -> Document {
    for (i, name) in names.iter().enumerate() {
        let x = LEFT + 140.0 * i as f64;
        let y = HEIGHT - 30.0;
        doc = doc
            .add(Rectangle::new().set("x", x).set("y", y - 9.0).set("width", 10).set("height", 10).set("fill", COLORS[i]))
            .add(label(x + 14.0, y, name.clone(), "start"));
    }
    doc
}

/// Relative aPLT difference per page, one bar per loss; negative is faster.
fn webperf_chart(orbit: Orbit, pages: &[PageDifference]) -> String {
    let mut names: Vec<&str> = Vec::new();
    let mut losses: Vec<u64> = Vec::new();
    for p in pages {
        if !names.contains(&p.page.as_str()) {
            names.push(&p.page);
        }
        if !losses.contains(&p.loss.to_bits()) {
            losses.push(p.loss.to_bits());
        }
    }
    losses.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    let span = pages.iter().map(|p| p.difference.abs()).fold(0.1, f64::max) * 100.0;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let zero = TOP + plot_h / 2.0;
    let y_of = |pct: f64| zero - pct / span * plot_h / 2.0;
    let slot = plot_w / names.len().max(1) as f64;
    let bar = slot * 0.7 / losses.len().max(1) as f64;
    let mut doc = frame(format!(
        "Relative median aPLT difference, smaq-pep vs quic, {}",
        orbit.as_str().to_uppercase()
    ));
    for (i, name) in names.iter().enumerate() {
        let x0 = LEFT + slot * i as f64 + slot * 0.15;
        for (j, loss) in losses.iter().enumerate() {
            let Some(p) = pages.iter().find(|p| p.page == *name && p.loss.to_bits() == *loss) else { continue };
            let pct = p.difference * 100.0;
            let y = y_of(pct.max(0.0));
            doc = doc.add(
                Rectangle::new()
                    .set("x", x0 + bar * j as f64)
                    .set("y", y)
                    .set("width", bar)
                    .set("height", (y_of(pct.min(0.0)) - y).abs())
                    .set("fill", COLORS[j % COLORS.len()]),
            );
        }
        let p = pages.iter().find(|p| p.page == *name).expect("name came from pages");
        let cx = LEFT + slot * (i as f64 + 0.5);
        doc = doc
            .add(label(cx, HEIGHT - BOTTOM + 16.0, format!("{} ({})", name, p.connections), "middle"))
            .add(label(cx, HEIGHT - BOTTOM + 30.0, format!("[{:.0} KB]", p.bytes_per_connection / 1e3), "middle"));
    }
    doc = doc.add(axis_line(LEFT, TOP, LEFT, HEIGHT - BOTTOM)).add(axis_line(LEFT, zero, WIDTH - RIGHT, zero));
    for k in -2..=2 {
        let v = span * k as f64 / 2.0;
        doc = doc.add(label(LEFT - 6.0, y_of(v) + 4.0, format!("{v:.0}%"), "end"));
    }
    let names: Vec<String> = losses.iter().map(|l| format!("{}% loss", f64::from_bits(*l) * 100.0)).collect();
    legend(doc, &names).to_string()
}
