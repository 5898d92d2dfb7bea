//! Report artifacts: CSV tables with a reproduction header, the run
//! manifest and the plain-text summary.
//!
//! Every CSV starts with `#key=value` lines carrying the canonical config,
//! seeds, κ, grid, generator and version. The manifest is the only file
//! with a timestamp, so repeated runs produce byte-identical tables.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest round-trip representation; identical on every platform.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:e}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File name inside the output directory.
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write(&self, header: &Header, mut out: impl Write) -> io::Result<()> {
        out.write_all(header.render().as_bytes())?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    pub fn skip(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skip,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Reproduction fields shared by every artifact of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Header {
    pub experiment: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub kappa: f64,
    /// `d`, half-width, nodes per axis, time steps.
    pub grid: String,
    pub generator: &'static str,
    pub version: &'static str,
}

impl Header {
    fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "#experiment={}", self.experiment);
        let _ = writeln!(s, "#version={}", self.version);
        let _ = writeln!(s, "#generator={}", self.generator);
        let _ = writeln!(s, "#seeds={}", seeds.join(";"));
        let _ = writeln!(s, "#kappa={}", num(self.kappa));
        let _ = writeln!(s, "#grid={}", self.grid);
        let _ = writeln!(s, "#config={}", self.config);
        s
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    header: &'a Header,
    created_unix: u64,
    artifacts: Vec<&'a str>,
    checks: &'a [Check],
    passed: bool,
}

pub fn summary(header: &Header, checks: &[Check], notes: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rspde {} ({})", header.experiment, header.version);
    let _ = writeln!(s, "grid {}, seeds {:?}, kappa {}", header.grid, header.seeds, num(header.kappa));
    for note in notes {
        let _ = writeln!(s, "{note}");
    }
    if !checks.is_empty() {
        let _ = writeln!(s);
    }
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        let _ = writeln!(s, "{} {:width$}  {}", c.status.label(), c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| c.status == Status::Fail).count();
    let _ = writeln!(s, "\n{} checks, {} failed", checks.len(), failed);
    s
}

/// Writes tables, `manifest.json` and `summary.txt` into `dir`.
pub fn write_all(dir: &Path, header: &Header, tables: &[Table], checks: &[Check], notes: &[String]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for table in tables {
        let file = fs::File::create(dir.join(&table.name))?;
        table.write(header, io::BufWriter::new(file))?;
    }
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        header,
        created_unix,
        artifacts: tables.iter().map(|t| t.name.as_str()).collect(),
        checks,
        passed: checks.iter().all(Check::passed),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    fs::write(dir.join("summary.txt"), summary(header, checks, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Header {
        Header {
            experiment: "baseline".into(),
            config: serde_json::json!({"a": 1}),
            seeds: vec![1, 2],
            kappa: 2.0,
            grid: "d=1 L=4 M=16 N=8".into(),
            generator: "test",
            version: VERSION,
        }
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, 1.0, -0.1, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(-0.0), "0");
    }

    #[test]
    fn table_carries_the_header_before_the_columns() {
        let mut t = Table::new("x.csv", &["n", "value"]);
        t.push(vec!["4".into(), num(0.25)]);
        let mut buf = Vec::new();
        t.write(&header(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[..7].iter().all(|l| l.starts_with('#')));
        assert!(text.contains("#seeds=1;2\n") && text.contains("#config={\"a\":1}\n"));
        assert_eq!(&lines[7..], ["n,value", "4,2.5e-1"]);
        assert_eq!(t.column("value").unwrap(), ["2.5e-1"]);
    }

    #[test]
    fn summary_counts_failures() {
        let checks = [Check::new("a", true, "ok"), Check::new("b", false, "bad"), Check::skip("c", "n/a")];
        let s = summary(&header(), &checks, &["note".into()]);
        assert!(s.contains("FAIL b") && s.contains("3 checks, 1 failed"), "{s}");
        assert!(checks[2].passed());
    }
}
