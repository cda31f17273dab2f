//! CSV tables and the JSON manifest. Every file is written to a temporary
//! name in the output directory and renamed into place; if any write fails
//! the files already placed by this run are removed again.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::experiments::Table;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Writes files into one directory, all or nothing.
pub struct OutputSet {
    dir: PathBuf,
    placed: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            placed: Vec::new(),
        })
    }

    fn place(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let target = self.dir.join(name);
        let tmp = temp_name(&target);
        let r = write(&tmp).and_then(|_| fs::rename(&tmp, &target).map_err(io_err(&target)));
        if let Err(e) = r {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        self.placed.push(target.clone());
        Ok(target)
    }

    pub fn table(&mut self, table: &Table) -> Result<PathBuf> {
        self.place(&format!("{}.csv", table.name), |p| write_csv(p, table))
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.place(name, |p| write_bytes(p, bytes))
    }

    /// Removes everything this set has placed so far.
    pub fn discard(self) {
        for p in self.placed {
            let _ = fs::remove_file(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table {
            name: "t".into(),
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into(), "x,y".into()]],
        }
    }

    #[test]
    fn writes_quoted_csv_without_leftovers() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        let p = out.table(&table()).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,\"x,y\"\n");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn discard_removes_placed_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        out.table(&table()).unwrap();
        out.bytes("m.json", b"{}").unwrap();
        out.discard();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        // A directory in the way makes the rename fail.
        fs::create_dir(dir.path().join("t.csv")).unwrap();
        assert!(out.table(&table()).is_err());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("t.csv")]);
    }
}
