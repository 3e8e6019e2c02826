//! CSV reports with a provenance header line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use brar_exact::oc::SLICE_RTOL;
use brar_exact::posterior::{POLICY_TOL, STATISTIC_TOL};

/// `v` with 17 significant digits; plain notation for moderate exponents.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..17).contains(&exp) {
        let s = format!("{:.*}", (16 - exp).max(0) as usize, v);
        // Rounding can carry into a new leading digit.
        let digits = s.bytes().filter(u8::is_ascii_digit).skip_while(|&c| c == b'0').count();
        if digits > 17 && s.contains('.') {
            return format!("{:.*}", (15 - exp).max(0) as usize, v);
        }
        s
    } else {
        format!("{v:.16e}")
    }
}

/// Rows are buffered and the file is written by [`Report::finish`], so a
/// failed run leaves no partial report behind.
pub struct Report {
    path: PathBuf,
    header: String,
    rows: Vec<Vec<String>>,
}

impl Report {
    pub fn create(dir: &Path, name: &str, command: &str, config_hash: &str, columns: &[&str]) -> Result<Self> {
        Ok(Self {
            path: dir.join(name),
            header: header_line(command, config_hash),
            rows: vec![columns.iter().map(|c| c.to_string()).collect()],
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.rows.push(fields.to_vec());
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(&self.path).with_context(|| format!("creating {}", self.path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", self.header)?;
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        for r in &self.rows {
            writer.write_record(r)?;
        }
        writer.flush()?;
        Ok(self.path)
    }
}

pub fn header_line(command: &str, config_hash: &str) -> String {
    format!(
        "# brar-exact {} command={command} config={config_hash} policy_tol={} statistic_tol={} slice_rtol={}",
        env!("CARGO_PKG_VERSION"),
        fmt_float(POLICY_TOL),
        fmt_float(STATISTIC_TOL),
        fmt_float(SLICE_RTOL)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_float(0.978233355395697), "0.97823335539569700");
        assert_eq!(fmt_float(0.1), "0.10000000000000001");
        assert_eq!(fmt_float(60.0), "60.000000000000000");
        assert_eq!(fmt_float(1e-8), "1.0000000000000000e-8");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(fmt_float(0.0), "0");
        for v in [0.978233355395697, 0.1, 1.0 / 3.0, 9.999999999999999e-3, 123.456, 1e-8] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
