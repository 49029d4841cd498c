//! Output files. Numbers are written in their shortest round-trip form so
//! identical runs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use refprior::analysis::PosteriorSummary;
use refprior::DensityGrid;

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct EmitError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf, EmitError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| EmitError {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| EmitError {
        path: path.into(),
        source,
    })?;
    Ok(path.into())
}

/// A CSV table whose cells are already formatted.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// `density.csv`: σ, prior scaled to 1 at σ = 1, normalized posterior and its CDF.
pub fn density_table(prior: &DensityGrid, posterior: &DensityGrid) -> refprior::Result<Table> {
    let cdf = posterior.cdf_values()?;
    let mut t = Table::new(&["sigma", "prior_density", "posterior_density", "posterior_cdf"]);
    for (i, &s) in posterior.points().iter().enumerate() {
        t.push_numbers(&[s, prior.value_at(s), posterior.values()[i], cdf[i]]);
    }
    Ok(t)
}

/// `summary.txt`: one `key value...` line each.
pub fn summary_text(header: &[(&str, String)], summary: &PosteriorSummary) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "{k} {v}");
    }
    let _ = writeln!(s, "mean {}", fmt_f64(summary.mean));
    let _ = writeln!(s, "sd {}", fmt_f64(summary.sd));
    for (p, q) in summary.quantile_pairs() {
        let _ = writeln!(s, "quantile {} {}", fmt_f64(p), fmt_f64(q));
    }
    let _ = writeln!(s, "upper_limit_95 {}", fmt_f64(summary.upper_limit_95));
    let _ = writeln!(
        s,
        "central_68 {} {}",
        fmt_f64(summary.central_68.0),
        fmt_f64(summary.central_68.1)
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        for v in [0.1, 1.0, 1e-300, 2.5e17, 1.0 / 3.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn table_render() {
        let mut t = Table::new(&["a", "b"]);
        t.push_numbers(&[1.0, 0.5]);
        assert_eq!(t.render(), "a,b\n1.0,0.5\n");
    }
}
