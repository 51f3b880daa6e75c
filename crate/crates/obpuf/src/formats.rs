//! JSON records: APUF instances, pattern sets, devices, enrollments and
//! JSON-lines session transcripts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use obpuf_core::apuf::ApufInstance;
use obpuf_core::obfuscation::{ObPufDevice, ObPufParams, PatternSet};
use obpuf_core::protocol::SessionTranscript;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Everything needed to rebuild a simulated OB-PUF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub params: ObPufParams,
    pub puf_block: Vec<ApufInstance>,
    pub reconfig_block: Vec<ApufInstance>,
    pub patterns: PatternSet,
}

impl DeviceRecord {
    pub fn from_device(dev: &ObPufDevice) -> Self {
        Self {
            params: dev.params(),
            puf_block: dev.puf_block().to_vec(),
            reconfig_block: dev.reconfig_block().to_vec(),
            patterns: dev.patterns().clone(),
        }
    }

    pub fn into_device(self) -> obpuf_core::Result<ObPufDevice> {
        let dev = ObPufDevice::new(self.puf_block, self.reconfig_block, self.patterns)?;
        if dev.params() != self.params {
            return Err(obpuf_core::Error::InvalidParameter("device record parameters disagree with its blocks".into()));
        }
        Ok(dev)
    }
}

/// One transcript per line.
pub fn write_transcripts<'a, I>(path: &Path, transcripts: I) -> Result<()>
where
    I: IntoIterator<Item = &'a SessionTranscript>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for t in transcripts {
        serde_json::to_writer(&mut out, t)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_transcripts(path: &Path) -> Result<Vec<SessionTranscript>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}
