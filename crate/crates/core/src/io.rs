//! Deterministic output writing: CSV tables with 17-significant-digit
//! floats and LF line endings, SVG plots, and a JSON manifest with content
//! digests written atomically last.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::experiments::{ExperimentRecord, Table};
use crate::{HjError, Result};

/// 17 significant digits: enough to round-trip any f64. NaN prints as
/// the literal `nan`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}

/// FNV-1a 64-bit content digest (stable across platforms and releases).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HjError + '_ {
    move |e| HjError::Io { path: path.display().to_string(), source: e }
}

/// Renders a table as CSV text (header + rows, LF endings).
pub fn csv_text(table: &Table) -> String {
    let mut out = String::new();
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<u64> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    Ok(fnv1a64(text.as_bytes()))
}

/// Scatter plot with an optional fitted line, on log-log axes when
/// requested. Minimal standalone SVG.
pub fn svg_scatter(
    points: &[(f64, f64)],
    fit: Option<(f64, f64)>,
    log_axes: bool,
    title: &str,
) -> String {
    let (w, h) = (480.0, 360.0);
    let pad = 48.0;
    let tx = |v: f64| if log_axes { v.max(1e-300).ln() } else { v };
    let xs: Vec<f64> = points.iter().map(|p| tx(p.0)).collect();
    let ys: Vec<f64> = points.iter().map(|p| tx(p.1)).collect();
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let sx = |v: f64| pad + (v - xmin) / (xmax - xmin + 1e-300) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - ymin) / (ymax - ymin + 1e-300) * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    s.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" font-size=\"13\">{}</text>\n",
        pad, title
    ));
    if let Some((slope, intercept)) = fit {
        let y0 = intercept + slope * xmin;
        let y1 = intercept + slope * xmax;
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888\" stroke-width=\"1\"/>\n",
            sx(xmin),
            sy(y0),
            sx(xmax),
            sy(y1)
        ));
    }
    for (x, y) in xs.iter().zip(&ys) {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#225\"/>\n",
            sx(*x),
            sy(*y)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Grayscale heatmap of a field table with columns (y0, y1, value).
pub fn svg_heatmap(table: &Table) -> String {
    let mut xs: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let mut ys: Vec<f64> = table.rows.iter().map(|r| r[1]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();
    let (vmin, vmax) = table
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[2]), b.max(r[2])));
    let cell = (600.0 / xs.len().max(1) as f64).max(1.0);
    let w = cell * xs.len() as f64;
    let hgt = cell * ys.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{hgt:.0}\" viewBox=\"0 0 {w:.0} {hgt:.0}\">\n"
    );
    for r in &table.rows {
        let i = xs.partition_point(|&x| x < r[0]);
        let j = ys.partition_point(|&y| y < r[1]);
        let t = ((r[2] - vmin) / (vmax - vmin + 1e-300) * 255.0) as u8;
        s.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({t},{t},{t})\"/>\n",
            i as f64 * cell,
            (ys.len() - 1 - j.min(ys.len() - 1)) as f64 * cell
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: u64,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub replica_seeds: Vec<u64>,
    pub files: Vec<(String, u64)>,
    pub warnings: Vec<String>,
}

fn json_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let files: Vec<String> = self
            .files
            .iter()
            .map(|(name, digest)| format!("    \"{}\": \"{digest:016x}\"", json_escape(name)))
            .collect();
        let seeds: Vec<String> = self.replica_seeds.iter().map(|s| s.to_string()).collect();
        let warnings: Vec<String> = self
            .warnings
            .iter()
            .map(|w| format!("    \"{}\"", json_escape(w)))
            .collect();
        format!(
            "{{\n  \"tool_version\": \"{}\",\n  \"config_hash\": \"{:016x}\",\n  \"seed\": {},\n  \"started_unix\": {},\n  \"finished_unix\": {},\n  \"replica_seeds\": [{}],\n  \"files\": {{\n{}\n  }},\n  \"warnings\": [\n{}\n  ]\n}}\n",
            json_escape(&self.tool_version),
            self.config_hash,
            self.seed,
            self.started_unix,
            self.finished_unix,
            seeds.join(", "),
            files.join(",\n"),
            warnings.join(",\n")
        )
    }
}

pub struct OutputOptions {
    pub force: bool,
    pub plot: bool,
    pub config_echo: String,
    pub seed: u64,
}

/// Writes every table as CSV (fixed column order, LF, 17 significant
/// digits), a summary CSV, optional SVG plots, and the manifest atomically
/// last. Refuses to overwrite an existing run without `force`.
pub fn write_outputs(record: &ExperimentRecord, dir: &Path, opts: &OutputOptions) -> Result<RunManifest> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() && !opts.force {
        return Err(HjError::Io {
            path: manifest_path.display().to_string(),
            source: std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "run directory already holds a manifest; pass --force to overwrite",
            ),
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let mut files = Vec::new();
    let cfg_digest = write_file(&dir.join("config.echo"), &opts.config_echo)?;
    files.push(("config.echo".to_string(), cfg_digest));

    for table in &record.tables {
        let name = format!("{}.csv", table.name);
        let digest = write_file(&dir.join(&name), &csv_text(table))?;
        files.push((name, digest));
    }

    let mut summary_text = String::from("name,value\n");
    for (name, value) in &record.summary {
        summary_text.push_str(&format!("{name},{}\n", format_float(*value)));
    }
    for (name, fit) in &record.fits {
        summary_text.push_str(&format!("fit_{name}_exponent,{}\n", format_float(fit.exponent)));
        summary_text.push_str(&format!("fit_{name}_ci_lo,{}\n", format_float(fit.ci_lo)));
        summary_text.push_str(&format!("fit_{name}_ci_hi,{}\n", format_float(fit.ci_hi)));
        summary_text.push_str(&format!("fit_{name}_n_used,{}\n", fit.n_used));
        summary_text.push_str(&format!("fit_{name}_n_filtered,{}\n", fit.n_filtered));
    }
    if let Some(pass) = record.pass {
        summary_text.push_str(&format!("all_pass,{}\n", if pass { 1 } else { 0 }));
    }
    let digest = write_file(&dir.join("summary.csv"), &summary_text)?;
    files.push(("summary.csv".to_string(), digest));

    if opts.plot {
        for (name, fit) in &record.fits {
            // scatter of the first two columns of the matching means table
            if let Some(table) = record.tables.iter().find(|t| t.rows.len() >= 3) {
                let pts: Vec<(f64, f64)> = table.rows.iter().map(|r| (r[0], r[r.len() - 1])).collect();
                let svg = svg_scatter(
                    &pts,
                    Some((fit.exponent, fit.intercept)),
                    true,
                    &format!("{name} (exponent {:.3})", fit.exponent),
                );
                let fname = format!("plot_{name}.svg");
                let digest = write_file(&dir.join(&fname), &svg)?;
                files.push((fname, digest));
            }
        }
        if let Some(field) = record.table("field") {
            let digest = write_file(&dir.join("field.svg"), &svg_heatmap(field))?;
            files.push(("field.svg".to_string(), digest));
        }
    }

    let finished = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: fnv1a64(opts.config_echo.as_bytes()),
        seed: opts.seed,
        started_unix: started,
        finished_unix: finished,
        replica_seeds: record.replica_seeds.clone(),
        files,
        warnings: record.warnings.clone(),
    };
    // atomic: write to a temp name, then rename into place
    let tmp = dir.join(".manifest.json.tmp");
    write_file(&tmp, &manifest.to_json())?;
    fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Digest of an on-disk file, for replay verification.
pub fn file_digest(path: &PathBuf) -> Result<u64> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(fnv1a64(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.0, 1.0, -1.5, std::f64::consts::PI, 1e-300, 2.2e300, 0.1 + 0.2] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn csv_has_lf_and_header() {
        let mut t = Table::new("x", &["a", "b"]);
        t.rows.push(vec![1.0, f64::NAN]);
        let text = csv_text(&t);
        assert!(text.starts_with("a,b\n"));
        assert!(text.contains("nan"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn empty_record_writes_header_only_csv_and_manifest() {
        let dir = std::env::temp_dir().join(format!("hjio_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let mut rec = crate::experiments::ExperimentRecord {
            kind: ExperimentKind::Metric,
            tables: vec![Table::new("rows", &["a", "b"])],
            summary: vec![],
            fits: vec![],
            replica_seeds: vec![1, 2],
            warnings: vec![],
            pass: None,
            wall_clock: 0.0,
        };
        rec.summary.push(("nan_value".into(), f64::NAN));
        let opts = OutputOptions {
            force: false,
            plot: false,
            config_echo: "[experiment]\nkind = metric\n".into(),
            seed: 3,
        };
        let manifest = write_outputs(&rec, &dir, &opts).unwrap();
        let rows = fs::read_to_string(dir.join("rows.csv")).unwrap();
        assert_eq!(rows, "a,b\n");
        let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert!(summary.contains("nan_value,nan"));
        // digests match written files
        for (name, digest) in &manifest.files {
            let got = file_digest(&dir.join(name)).unwrap();
            assert_eq!(got, *digest, "{name}");
        }
        // re-run refuses without force
        assert!(write_outputs(&rec, &dir, &opts).is_err());
        let opts_force = OutputOptions { force: true, ..opts };
        assert!(write_outputs(&rec, &dir, &opts_force).is_ok());
        let _ = fs::remove_dir_all(&dir);
    }
}
