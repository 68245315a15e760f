//! Fine-tuning curricula over source (SRC) and augmented (DS) files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// SRC and DS shuffled together in one stage.
    Mixed,
    DsThenSrc,
    /// Source first, augmented data last: furthest from the test data to closest.
    SrcThenDs,
    DsOnly,
    SrcOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Mixed,
        Strategy::DsThenSrc,
        Strategy::SrcThenDs,
        Strategy::DsOnly,
        Strategy::SrcOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Mixed => "mixed",
            Strategy::DsThenSrc => "ds_then_src",
            Strategy::SrcThenDs => "src_then_ds",
            Strategy::DsOnly => "ds_only",
            Strategy::SrcOnly => "src_only",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.to_ascii_lowercase().replace([' ', '-'], "_");
        match normalized.as_str() {
            "mixed" | "src+ds" | "src_+_ds" => Ok(Strategy::Mixed),
            "ds_then_src" | "ds_>src" => Ok(Strategy::DsThenSrc),
            "src_then_ds" | "src_>ds" => Ok(Strategy::SrcThenDs),
            "ds_only" | "ds" => Ok(Strategy::DsOnly),
            "src_only" | "src" => Ok(Strategy::SrcOnly),
            _ => Err(format!(
                "unknown strategy `{s}` (expected one of mixed, ds_then_src, src_then_ds, ds_only, src_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub shuffle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub strategy: Strategy,
    pub stages: Vec<Stage>,
}

impl StageManifest {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

fn stage(name: &str, files: Vec<PathBuf>) -> Stage {
    Stage {
        name: name.to_string(),
        files,
        shuffle: true,
    }
}

/// Lays out the stages of `strategy`. Every stage is shuffled; a strategy
/// that uses a dataset requires at least one file for it, and file lists of
/// unused datasets are ignored.
pub fn build_stage_plan(
    strategy: Strategy,
    src_files: &[PathBuf],
    ds_files: &[PathBuf],
) -> Result<StageManifest, DsError> {
    let need = |files: &[PathBuf], dataset: &'static str| {
        if files.is_empty() {
            Err(DsError::MissingFiles { strategy, dataset })
        } else {
            Ok(files.to_vec())
        }
    };
    let stages = match strategy {
        Strategy::Mixed => {
            let mut files = need(src_files, "src")?;
            for f in need(ds_files, "ds")? {
                if !files.contains(&f) {
                    files.push(f);
                }
            }
            vec![stage("src+ds", files)]
        }
        Strategy::DsThenSrc => vec![stage("ds", need(ds_files, "ds")?), stage("src", need(src_files, "src")?)],
        Strategy::SrcThenDs => vec![stage("src", need(src_files, "src")?), stage("ds", need(ds_files, "ds")?)],
        Strategy::DsOnly => vec![stage("ds", need(ds_files, "ds")?)],
        Strategy::SrcOnly => vec![stage("src", need(src_files, "src")?)],
    };
    Ok(StageManifest { strategy, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PathBuf {
        PathBuf::from(s)
    }

    fn names(m: &StageManifest) -> Vec<&str> {
        m.stages.iter().map(|s| s.name.as_str()).collect()
    }

    #[test]
    fn orders() {
        let src = [p("s.jsonl")];
        let ds = [p("d.jsonl")];
        let m = build_stage_plan(Strategy::SrcThenDs, &src, &ds).unwrap();
        assert_eq!(names(&m), ["src", "ds"]);
        assert_eq!(m.stages[0].files, src);
        assert_eq!(m.stages[1].files, ds);

        let m = build_stage_plan(Strategy::DsThenSrc, &src, &ds).unwrap();
        assert_eq!(names(&m), ["ds", "src"]);

        let m = build_stage_plan(Strategy::Mixed, &src, &ds).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].files, [p("s.jsonl"), p("d.jsonl")]);

        let m = build_stage_plan(Strategy::DsOnly, &[], &ds).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].files, ds);

        for strategy in Strategy::ALL {
            let m = build_stage_plan(strategy, &src, &ds).unwrap();
            assert!(m.stages.iter().all(|s| s.shuffle));
        }
    }

    #[test]
    fn missing_files() {
        let ds = [p("d.jsonl")];
        assert!(matches!(
            build_stage_plan(Strategy::SrcThenDs, &[], &ds),
            Err(DsError::MissingFiles { dataset: "src", .. })
        ));
        assert!(build_stage_plan(Strategy::Mixed, &ds, &[]).is_err());
        assert!(build_stage_plan(Strategy::SrcOnly, &[], &ds).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>(), Ok(s));
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
        assert_eq!("SRC->DS".parse::<Strategy>(), Ok(Strategy::SrcThenDs));
        assert_eq!("src+ds".parse::<Strategy>(), Ok(Strategy::Mixed));
    }
}
