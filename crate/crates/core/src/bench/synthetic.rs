//! The bundled synthetic suite: two cases for each of twelve task groups,
//! built from the reference programs, with model scripts.
//!
//! Every script's first candidate misses the flow into the output node (one
//! repairable `TopologicalGap`). The two-stage script repairs it on the first
//! refinement. The single-stage script, which answers with the whole program
//! at once, repairs it only in even-numbered cases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, Oracle, TaskCase};
use crate::fixtures;
use crate::frontends::{emit, SyntaxStyle};
use crate::inference::{ScriptedLm, TaskSpec};
use crate::ir::{ParamValue, PortRef, Workflow};
use crate::testing::{fenced, staged_responses};

/// Task groups and the reference program each one is built from.
pub const GROUPS: [(&str, &str); 12] = [
    ("Inpaint", "inpaint"),
    ("Outpaint", "outpaint"),
    ("Img merge", "image_merge"),
    ("NVS", "novel_view"),
    ("Merge model", "merge_model"),
    ("I-2-3D", "image_to_3d"),
    ("T2I", "text_to_image"),
    ("T2A", "text_to_audio"),
    ("Multi-view img", "multiview"),
    ("I2V", "image_to_video"),
    ("T2M", "text_to_3d"),
    ("T2V", "text_to_video"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseScripts {
    pub two_stage: Vec<String>,
    pub single_stage: Vec<String>,
}

impl CaseScripts {
    pub fn lm(&self, two_stage: bool) -> ScriptedLm {
        ScriptedLm::new(if two_stage {
            self.two_stage.clone()
        } else {
            self.single_stage.clone()
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedCase {
    pub case: TaskCase,
    pub scripts: CaseScripts,
}

fn output_port(w: &Workflow) -> PortRef {
    let save = w
        .nodes()
        .find(|n| n.type_name == "SaveOutput")
        .expect("every reference saves its result");
    PortRef::new(save.id.clone(), "value")
}

/// Refinement responses after the first (broken) candidate.
const REPAIR_ROUNDS: usize = 3;

fn scripts(golden: &Workflow, style: SyntaxStyle, single_stage_repairs: bool) -> CaseScripts {
    let mut broken = golden.clone();
    broken.disconnect(&output_port(golden)).expect("output is fed");
    let (components, topology) = staged_responses(&broken, style);
    let fixed = fenced(&emit(golden, style).expect("printable"));
    let same = fenced(&emit(&broken, style).expect("printable"));
    let mut single_stage = vec![same.clone()];
    if single_stage_repairs {
        single_stage.push(fixed.clone());
    } else {
        single_stage.extend(std::iter::repeat_n(same, REPAIR_ROUNDS));
    }
    CaseScripts {
        two_stage: vec![components, topology, fixed],
        single_stage,
    }
}

pub fn synthetic_suite() -> Vec<ScriptedCase> {
    let mut out = Vec::new();
    for (g, (group, reference)) in GROUPS.iter().enumerate() {
        let reference = fixtures::reference(reference).expect("bundled reference");
        let golden = reference.workflow();
        let save = output_port(&golden).node_id;
        let prefix = match golden.node(&save).and_then(|n| n.params.get("prefix")) {
            Some(ParamValue::Str(p)) => p.clone(),
            _ => "out".to_string(),
        };
        let mut variant = golden.clone();
        let new_prefix = format!("{prefix}_v2");
        variant
            .set_param(&save, "prefix", ParamValue::Str(new_prefix.clone()))
            .expect("save node exists");
        let slug = reference.name.replace('_', "-");
        let cases = [
            (
                "a",
                reference.task.trim().to_string(),
                golden.clone(),
                Oracle::GoldenEquivalence(golden),
            ),
            (
                "b",
                format!(
                    "{} Save the result with the file prefix \"{new_prefix}\".",
                    reference.task.trim()
                ),
                variant.clone(),
                if g % 2 == 0 {
                    Oracle::ExecutesWithSim
                } else {
                    Oracle::ValidatesCleanly
                },
            ),
        ];
        for (k, (suffix, description, target, oracle)) in cases.into_iter().enumerate() {
            let index = 2 * g + k;
            let style = SyntaxStyle::ALL[index % 3];
            out.push(ScriptedCase {
                case: TaskCase {
                    id: format!("{:02}-{slug}-{suffix}", g + 1),
                    category: group.to_string(),
                    spec: TaskSpec::new(description, style),
                    oracle,
                },
                scripts: scripts(&target, style, index % 2 == 0),
            });
        }
    }
    out
}

pub fn script_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.script.json"))
}

/// Writes `<id>.json` and `<id>.script.json` for every case.
pub fn write_suite(dir: &Path, cases: &[ScriptedCase]) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    for c in cases {
        fs::write(dir.join(format!("{}.json", c.case.id)), c.case.to_json())?;
        let scripts = serde_json::to_string_pretty(&c.scripts).expect("scripts serialize") + "\n";
        fs::write(script_path(dir, &c.case.id), scripts)?;
    }
    Ok(())
}

pub fn load_scripts(dir: &Path, id: &str) -> Result<CaseScripts, String> {
    let path = script_path(dir, id);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
