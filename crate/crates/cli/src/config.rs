//! Config files: flat `key = value` lines under `[defaults]` and `[cell]`
//! section headers. `#` and `;` start comments. A `[defaults]` section seeds
//! every cell and may also set the run-level keys `seed` and `out`; each
//! `[cell]` section (an optional label after the word is ignored) defines
//! one simulation cell.

use std::path::PathBuf;

use crate::cells::CellSettings;

/// A parsed config file: run-level settings plus the raw cell layers.
#[derive(Debug, Default)]
pub struct RunSpec {
    pub defaults: CellSettings,
    pub cells: Vec<CellSettings>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

enum Section {
    None,
    Defaults,
    Cell(usize),
}

pub fn parse_config(text: &str) -> Result<RunSpec, String> {
    let mut run = RunSpec::default();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }

        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| format!("line {lineno}: unterminated section header"))?
                .trim();
            section = match (name, name.split_whitespace().next()) {
                ("defaults", _) => Section::Defaults,
                (_, Some("cell")) => {
                    run.cells.push(CellSettings::default());
                    Section::Cell(run.cells.len() - 1)
                }
                _ => {
                    return Err(format!(
                        "line {lineno}: unknown section '[{name}]' (expected [defaults] or [cell])"
                    ));
                }
            };
            continue;
        }

        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {lineno}: expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());

        match &section {
            Section::None => {
                return Err(format!(
                    "line {lineno}: '{key}' appears before any section header"
                ));
            }
            Section::Defaults => match key {
                "seed" => {
                    run.seed = Some(
                        value
                            .parse()
                            .map_err(|_| format!("line {lineno}: bad seed '{value}'"))?,
                    );
                }
                "out" => run.out = Some(PathBuf::from(value)),
                _ => {
                    run.defaults
                        .set(key, value)
                        .map_err(|e| format!("line {lineno}: {e}"))?;
                }
            },
            Section::Cell(i) => {
                run.cells[*i]
                    .set(key, value)
                    .map_err(|e| format!("line {lineno}: {e}"))?;
            }
        }
    }

    Ok(run)
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(pos) => &line[..pos],
        None => line,
    }
}
