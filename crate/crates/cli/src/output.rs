//! Staged writes: a command writes into a scratch directory next to the
//! outputs and moves everything into place only when it succeeds. A failed
//! command also removes its previous outputs, so the directory never mixes
//! artifacts from different runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

pub struct Stage {
    out: PathBuf,
    dir: PathBuf,
    outputs: &'static [&'static str],
    committed: bool,
}

impl Stage {
    pub fn new(out: &Path, command: &str, outputs: &'static [&'static str]) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let dir = out.join(format!(".staging-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            outputs,
            committed: false,
        })
    }

    /// Path of `name` inside the staging directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Replaces each staged entry's counterpart in the output directory.
    pub fn commit(mut self) -> anyhow::Result<()> {
        let mut names: Vec<_> = fs::read_dir(&self.dir)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
        names.sort();
        for name in names {
            let target = self.out.join(&name);
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            } else if target.exists() {
                fs::remove_file(&target)?;
            }
            fs::rename(self.dir.join(&name), &target)
                .with_context(|| format!("moving output into {}", target.display()))?;
        }
        fs::remove_dir(&self.dir)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
            for name in self.outputs {
                let target = self.out.join(name);
                let _ = if target.is_dir() {
                    fs::remove_dir_all(&target)
                } else {
                    fs::remove_file(&target)
                };
            }
        }
    }
}
