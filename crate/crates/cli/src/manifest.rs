use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Provenance written as `#` comment lines at the top of every output file.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Arguments after the program name, verbatim.
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, out_dir: &Path) -> Self {
        RunManifest {
            subcommand,
            inputs: Vec::new(),
            seed: None,
            out_dir: out_dir.to_path_buf(),
            args: std::env::args().skip(1).collect(),
        }
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool: dpscale {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# subcommand: {}", self.subcommand);
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        let _ = writeln!(s, "# inputs: {}", if inputs.is_empty() { "-".into() } else { inputs.join(" ") });
        let _ = writeln!(s, "# seed: {}", self.seed.map_or("-".into(), |v| v.to_string()));
        let _ = writeln!(s, "# out: {}", self.out_dir.display());
        let _ = writeln!(s, "# args: {}", self.args.join(" "));
        s
    }
}
