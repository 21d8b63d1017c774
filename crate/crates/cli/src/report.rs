//! Evaluation summaries: per-character opportunity percentages over games.

use std::path::Path;

use thespian::train::GameResult;
use thespian::world::WorldSpec;

use crate::CliError;

pub const REPORT_HEADER: &str = "prompt,character,mean_pct,std_pct,avg_steps,games";

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterStats {
    pub character: String,
    pub mean_pct: f64,
    pub std_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub prompt: String,
    pub characters: Vec<CharacterStats>,
    pub avg_steps: f64,
    pub games: usize,
}

/// Mean and population standard deviation, two passes.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Same statistics in one pass (Welford).
pub fn mean_std_streaming(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    if n == 0.0 {
        return (0.0, 0.0);
    }
    (mean, (m2 / n).sqrt())
}

impl EvalReport {
    pub fn from_results(prompt: &str, world: &WorldSpec, results: &[GameResult]) -> Self {
        let characters = world
            .characters
            .iter()
            .enumerate()
            .map(|(c, def)| {
                let pct: Vec<f64> = results
                    .iter()
                    .map(|r| f64::from(r.opportunity[c]) * 100.0)
                    .collect();
                let (mean_pct, std_pct) = mean_std(&pct);
                CharacterStats {
                    character: def.name.clone(),
                    mean_pct,
                    std_pct,
                }
            })
            .collect();
        let steps: Vec<f64> = results.iter().map(|r| r.steps as f64).collect();
        Self {
            prompt: prompt.to_string(),
            characters,
            avg_steps: mean_std(&steps).0,
            games: results.len(),
        }
    }

    pub fn mean_pct(&self, character: &str) -> Option<f64> {
        self.characters
            .iter()
            .find(|c| c.character == character)
            .map(|c| c.mean_pct)
    }

    /// CSV rows without the header.
    pub fn csv_rows(&self) -> String {
        self.characters
            .iter()
            .map(|c| {
                format!(
                    "{},{},{:.3},{:.3},{:.3},{}\n",
                    self.prompt, c.character, c.mean_pct, c.std_pct, self.avg_steps, self.games
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}", self.csv_rows())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "prompt {} over {} games, average {:.1} steps\n",
            self.prompt, self.games, self.avg_steps
        );
        for c in &self.characters {
            s += &format!(
                "  {:<12} {:6.1}% ± {:.1}\n",
                c.character, c.mean_pct, c.std_pct
            );
        }
        s
    }
}

/// Reads every report in a CSV file written by `to_csv`.
pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::MissingFile(path.to_path_buf())
        }
        _ => CliError::Config(format!("{}: {e}", path.display())),
    })?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
        return Err(CliError::Config(format!(
            "{}: not an evaluation report",
            path.display()
        )));
    }
    let mut out: Vec<EvalReport> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, CliError> {
            field(i).parse().map_err(|_| {
                CliError::Config(format!("{}: bad number {:?}", path.display(), field(i)))
            })
        };
        let stats = CharacterStats {
            character: field(1).to_string(),
            mean_pct: num(2)?,
            std_pct: num(3)?,
        };
        let games = num(5)? as usize;
        match out.last_mut() {
            Some(r) if r.prompt == field(0) => r.characters.push(stats),
            _ => out.push(EvalReport {
                prompt: field(0).to_string(),
                characters: vec![stats],
                avg_steps: num(4)?,
                games,
            }),
        }
    }
    Ok(out)
}

/// One row per prompt, one column per character, then average steps.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut chars: Vec<&str> = Vec::new();
    for r in reports {
        for c in &r.characters {
            if !chars.contains(&c.character.as_str()) {
                chars.push(&c.character);
            }
        }
    }
    let mut s = format!("{:<16}", "prompt");
    for c in &chars {
        s += &format!(" {:>16}", format!("{c} score %"));
    }
    s += &format!(" {:>16}\n", "avg. game steps");
    for r in reports {
        s += &format!("{:<16}", r.prompt);
        for c in &chars {
            match r.mean_pct(c) {
                Some(v) => s += &format!(" {v:>16.1}"),
                None => s += &format!(" {:>16}", "-"),
            }
        }
        s += &format!(" {:>16.1}\n", r.avg_steps);
    }
    s
}
