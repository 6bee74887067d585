//! Artifact layout under the output directory, with prerequisite checks
//! that name the command producing each missing file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

pub struct Artifacts {
    out_dir: PathBuf,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Artifacts {
        Artifacts {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn articles(&self) -> PathBuf {
        self.out_dir.join("articles.jsonl")
    }

    pub fn partition(&self) -> PathBuf {
        self.out_dir.join("partition.json")
    }

    pub fn samples(&self, task: &str, split: &str) -> PathBuf {
        self.out_dir
            .join("samples")
            .join(format!("{task}.{split}.jsonl"))
    }

    pub fn vocab(&self) -> PathBuf {
        self.out_dir.join("vocab.json")
    }

    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.out_dir.join(format!("{stage}.ckpt"))
    }

    pub fn loss_csv(&self, stage: &str) -> PathBuf {
        self.out_dir.join(format!("{stage}_loss.csv"))
    }

    pub fn history(&self, stage: &str) -> PathBuf {
        self.out_dir.join(format!("{stage}_history.json"))
    }

    pub fn reports(&self, stage: &str) -> PathBuf {
        self.out_dir.join(format!("{stage}_reports.json"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.out_dir.join("metrics.json")
    }

    pub fn gradcheck(&self) -> PathBuf {
        self.out_dir.join("gradcheck.json")
    }

    pub fn stats(&self) -> PathBuf {
        self.out_dir.join("stats.json")
    }

    pub fn validation(&self) -> PathBuf {
        self.out_dir.join("validation.json")
    }

    /// Error naming the producing command when a prerequisite is missing.
    pub fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if !path.exists() {
            bail!("missing {}; run `turnwise {producer}` first", path.display());
        }
        Ok(())
    }
}
