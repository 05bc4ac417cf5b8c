//! `ctpseg synth`: generate a synthetic perfusion dataset on disk.

use std::path::Path;

use ctpseg::data::{synth_generate, write_manifest, write_stack, ManifestEntry, SynthConfig};
use ctpseg::{Error, Result};

use super::scan_dir_name;

pub fn run(out: &Path, subjects: usize, seed: u64, size: (usize, usize)) -> Result<()> {
    if subjects == 0 {
        return Err(Error::ConfigInvalid("--subjects must be at least 1".into()));
    }
    let cfg = SynthConfig { n_subjects: subjects, size, seed, ..SynthConfig::default() };
    let scans = synth_generate(&cfg);

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(scans.len());
    for scan in &scans {
        let name = scan_dir_name(scan);
        write_stack(scan, out.join(&name))?;
        entries.push(ManifestEntry {
            subject_id: scan.subject_id.clone(),
            scan_id: scan.scan_id.clone(),
            path: name,
        });
    }
    write_manifest(&entries, out.join("manifest.csv"))?;
    println!(
        "wrote {} scans from {subjects} subjects ({}×{} slices) to {}",
        scans.len(),
        size.0,
        size.1,
        out.display()
    );
    Ok(())
}
