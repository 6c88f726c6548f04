use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cvgan::Error;
use plotters::prelude::*;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A delimited table: one header and its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next()?.to_string();
        Some(Table { header, rows: lines.map(str::to_string).collect() })
    }

    pub fn render(&self) -> String {
        let mut s = self.header.clone();
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

struct RunInfo {
    dir: PathBuf,
    command: String,
    projector: Option<String>,
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })
}

fn run_info(dir: &Path) -> Result<RunInfo, Error> {
    let manifest: Value = serde_json::from_str(&read(&dir.join("manifest.json"))?)
        .map_err(|e| Error::Container(format!("{}: {e}", dir.join("manifest.json").display())))?;
    let command = manifest["command"]
        .as_str()
        .ok_or_else(|| Error::Container(format!("{}: manifest has no command", dir.display())))?
        .to_string();
    let projector = manifest["details"]["projector"].as_str().map(str::to_string);
    Ok(RunInfo { dir: dir.into(), command, projector })
}

/// Merge the tables of several run directories, grouped by command.
///
/// Evaluation runs are only merged when every run used the same projector.
pub fn merge(dirs: &[PathBuf]) -> Result<BTreeMap<String, Table>, CliError> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()).into());
    }
    let infos = dirs.iter().map(|d| run_info(d)).collect::<Result<Vec<_>, _>>()?;
    let mut first_projector: Option<&RunInfo> = None;
    for info in infos.iter().filter(|i| i.command == "evaluate") {
        match first_projector {
            None => first_projector = Some(info),
            Some(f) if f.projector != info.projector => {
                return Err(CliError::Provenance(format!(
                    "projector {} in {} differs from projector {} in {}",
                    f.projector.as_deref().unwrap_or("none"),
                    f.dir.display(),
                    info.projector.as_deref().unwrap_or("none"),
                    info.dir.display()
                )));
            }
            Some(_) => {}
        }
    }
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    for info in &infos {
        let path = info.dir.join("report.tsv");
        if !path.exists() {
            continue;
        }
        let Some(t) = Table::parse(&read(&path)?) else { continue };
        match tables.get_mut(&info.command) {
            None => {
                tables.insert(info.command.clone(), t);
            }
            Some(m) if m.header == t.header => m.rows.extend(t.rows),
            Some(_) => {
                return Err(Error::Container(format!("{}: report columns differ from earlier runs", path.display())).into());
            }
        }
    }
    Ok(tables)
}

fn numeric_columns(text: &str, x: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let Some(t) = Table::parse(text) else { return Vec::new() };
    let cols: Vec<&str> = t.header.split('\t').collect();
    let Some(xi) = cols.iter().position(|c| *c == x) else { return Vec::new() };
    let cells: Vec<Vec<&str>> = t.rows.iter().map(|r| r.split('\t').collect()).collect();
    cols.iter()
        .enumerate()
        .filter(|&(i, _)| i != xi)
        .filter_map(|(i, name)| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter_map(|r| Some((r.get(xi)?.parse().ok()?, r.get(i)?.parse().ok()?)))
                .filter(|(a, b): &(f64, f64)| a.is_finite() && b.is_finite())
                .collect();
            (!pts.is_empty()).then(|| (name.to_string(), pts))
        })
        .collect()
}

fn plot(path: &Path, title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<(), Error> {
    let draw = || -> Result<(), Box<dyn std::error::Error>> {
        let pts = series.iter().flat_map(|(_, p)| p.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-9);
        let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))?;
        chart.configure_mesh().x_desc(x_label).draw()?;
        for (i, (name, p)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(p.iter().copied(), color.stroke_width(2)))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| Error::Container(format!("plot {}: {e}", path.display())))
}

/// Loss-trace and RMS-profile figures for the runs that have them.
pub fn plots(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
        let trace = dir.join("loss_trace.tsv");
        if trace.exists() {
            let series = numeric_columns(&read(&trace)?, "epoch");
            let path = out.join(format!("{name}_loss.svg"));
            plot(&path, &format!("{name} losses"), "epoch", &series)?;
            written.push(path);
        }
        let rms = dir.join("rms_profile.tsv");
        if rms.exists() {
            let series: Vec<_> = numeric_columns(&read(&rms)?, "step")
                .into_iter()
                .filter(|(n, _)| n.starts_with("rms") || n == "hi")
                .collect();
            let path = out.join(format!("{name}_rms.svg"));
            plot(&path, &format!("{name} RMS profile"), "step", &series)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn report(dirs: &[PathBuf], out: &Path, with_plots: bool) -> Result<PathBuf, CliError> {
    let tables = merge(dirs)?;
    let mut h = Sha256::new();
    for d in dirs {
        h.update(read(&d.join("manifest.json"))?.as_bytes());
    }
    let dir = out.join("report").join(format!("merged-{}", hex::encode(&h.finalize()[..5])));
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    for (command, t) in &tables {
        let path = dir.join(format!("{command}.tsv"));
        fs::write(&path, t.render()).map_err(|source| Error::Io { path, source })?;
        println!("# {command}");
        print!("{}", t.render());
    }
    if with_plots {
        for p in plots(dirs, &dir)? {
            println!("plot: {}", p.display());
        }
    }
    println!("report directory: {}", dir.display());
    Ok(dir)
}
