//! The output directory. Artifacts are addressed by bare file names, so
//! nothing can be written outside of it.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use voldiff::field::DensityVolume;
use voldiff::io::{TraceRow, save_ppm, save_volume, write_json, write_trace_csv};
use voldiff::renderer::ImageRGBA;
use voldiff::tasks::TaskReport;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let mut parts = Path::new(name).components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) => {}
            _ => return Err(CliError::Schema(format!("artifact name {name:?} must be a plain file name"))),
        }
        self.written.push(name.to_string());
        Ok(self.root.join(name))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        Ok(write_json(value, &self.path(name)?)?)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        Ok(fs::write(self.path(name)?, text)?)
    }

    pub fn trace(&mut self, name: &str, rows: &[TraceRow]) -> Result<(), CliError> {
        Ok(write_trace_csv(rows, &self.path(name)?)?)
    }

    pub fn ppm(&mut self, name: &str, img: &ImageRGBA) -> Result<(), CliError> {
        Ok(save_ppm(img, &self.path(name)?)?)
    }

    pub fn rgba(&mut self, name: &str, img: &ImageRGBA) -> Result<(), CliError> {
        Ok(voldiff::io::save_rgba(img, &self.path(name)?)?)
    }

    /// Writes `<stem>.raw` and its sidecar `<stem>.json`.
    pub fn volume(&mut self, stem: &str, v: &DensityVolume) -> Result<(), CliError> {
        let raw = self.path(&format!("{stem}.raw"))?;
        self.written.push(format!("{stem}.json"));
        Ok(save_volume(v, &raw)?)
    }

    /// `report.json`, `trace.csv` and `gradcheck.csv` of a task run.
    pub fn report(&mut self, report: &TaskReport) -> Result<(), CliError> {
        self.json("report.json", report)?;
        self.trace("trace.csv", &report.trace)?;
        let mut table = String::from("target,index,forward,adjoint,finite_difference,rel_error,passed\n");
        for c in &report.gradient_checks {
            table.push_str(&format!(
                "{},{},,{:?},{:?},{:?},{}\n",
                c.target, c.index, c.adjoint, c.finite_difference, c.rel_error, c.passed
            ));
        }
        self.text("gradcheck.csv", &table)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cannot_escape() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        for bad in ["../x.json", "/tmp/x.json", "a/b.json", "..", ""] {
            assert!(out.text(bad, "x").is_err(), "{bad}");
        }
        out.text("ok.txt", "x").unwrap();
        assert_eq!(out.written(), ["ok.txt"]);
    }
}
