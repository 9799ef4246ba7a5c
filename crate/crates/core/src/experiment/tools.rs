use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::write_file;
use crate::error::{Error, Result};
use crate::events::{event_files, read_stream_file, synth_dataset, write_evt, SynthConfig};

/// Re-encodes one event file, or every event file below a directory, as
/// `.evt` containers under `out`. Directory layout is mirrored. Returns the
/// number of files written.
pub fn convert(input: &Path, out: &Path) -> Result<usize> {
    let meta = std::fs::metadata(input).map_err(|e| Error::io_at(input, e))?;
    let jobs: Vec<(PathBuf, PathBuf)> = if meta.is_dir() {
        event_files(input)?
            .into_iter()
            .map(|p| {
                let rel = p
                    .strip_prefix(input)
                    .expect("listed below input")
                    .with_extension("evt");
                (p, out.join(rel))
            })
            .collect()
    } else {
        let name = Path::new(input.file_name().unwrap_or_default()).with_extension("evt");
        vec![(input.to_path_buf(), out.join(name))]
    };
    if jobs.is_empty() {
        return Err(Error::config(format!("no event files under {}", input.display())));
    }
    jobs.par_iter()
        .map(|(src, dst)| write_file(dst, &write_evt(&read_stream_file(src)?)))
        .collect::<Result<Vec<()>>>()?;
    Ok(jobs.len())
}

/// Writes a synthetic dataset as `<out>/<label>/<index>.evt`. Returns the
/// number of files written.
pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    let streams = synth_dataset(cfg)?;
    for (i, s) in streams.iter().enumerate() {
        let path = out.join(s.label().to_string()).join(format!("{i:05}.evt"));
        write_file(&path, &write_evt(s))?;
    }
    Ok(streams.len())
}
