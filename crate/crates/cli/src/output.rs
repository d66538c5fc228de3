use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::{usage, Cli, Format};

/// What a command produced.
#[derive(Default)]
pub struct Output {
    pub json: Value,
    pub csv: Option<String>,
    /// Human-readable summary for `--format text`.
    pub text: Option<String>,
    pub prefer_text: bool,
    /// Extra files written under `--out` as `(name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Output {
    pub fn json(value: impl Serialize) -> anyhow::Result<Self> {
        Ok(Self { json: serde_json::to_value(value)?, ..Self::default() })
    }

    pub fn with_csv(mut self, csv: String) -> Self {
        self.csv = Some(csv);
        self
    }

    pub fn with_text(mut self, text: String) -> Self {
        self.text = Some(text);
        self
    }

    pub fn text_by_default(mut self) -> Self {
        self.prefer_text = true;
        self
    }

    pub fn with_file(mut self, name: &str, contents: impl Into<Vec<u8>>) -> Self {
        self.files.push((name.to_string(), contents.into()));
        self
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    config: &'a Cli,
    outputs: Vec<String>,
}

pub fn emit(cli: &Cli, out: Output) -> anyhow::Result<()> {
    let command = cli.command.name();
    let format = cli.global.format.unwrap_or(if out.prefer_text { Format::Text } else { Format::Json });
    let rendered = match format {
        Format::Json => serde_json::to_string_pretty(&out.json)? + "\n",
        Format::Csv => match &out.csv {
            Some(csv) => csv.clone(),
            None => return usage(format!("{command} has no CSV output")),
        },
        Format::Text => match &out.text {
            Some(text) => text.clone() + "\n",
            None => serde_json::to_string_pretty(&out.json)? + "\n",
        },
    };
    print!("{rendered}");

    let mut outputs = Vec::new();
    if let Some(dir) = &cli.global.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let stem = command.replace('-', "_");
        write(dir, &format!("{stem}.json"), (serde_json::to_string_pretty(&out.json)? + "\n").as_bytes(), &mut outputs)?;
        if let Some(csv) = &out.csv {
            write(dir, &format!("{stem}.csv"), csv.as_bytes(), &mut outputs)?;
        }
        for (name, contents) in &out.files {
            write(dir, name, contents, &mut outputs)?;
        }
    }
    let manifest = Manifest {
        tool: "labs",
        version: env!("CARGO_PKG_VERSION"),
        command,
        argv: std::env::args().collect(),
        config: cli,
        outputs: outputs.clone(),
    };
    let manifest = serde_json::to_string_pretty(&manifest)?;
    match &cli.global.out {
        Some(dir) => std::fs::write(dir.join("manifest.json"), manifest + "\n")?,
        None => log::info!("manifest: {manifest}"),
    }
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &[u8], outputs: &mut Vec<String>) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(())
}
