//! CSV and run-summary emission.

use std::fs;
use std::path::Path;

use ht_core::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}

/// Write a CSV with a header row; fields are joined with commas verbatim.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Rows of `metric,mean,std,n`.
pub fn write_metric_csv(path: &Path, rows: &[(&str, f64, f64, usize)]) -> Result<()> {
    let rendered: Vec<Vec<String>> = rows
        .iter()
        .map(|(m, mean, std, n)| {
            vec![
                m.to_string(),
                format!("{mean:.6}"),
                format!("{std:.6}"),
                n.to_string(),
            ]
        })
        .collect();
    write_csv(path, "metric,mean,std,n", &rendered)
}

/// UTF-8 run summary, one line per entry.
pub fn write_summary(dir: &Path, lines: &[String]) -> Result<()> {
    let path = dir.join("run_summary.txt");
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}
