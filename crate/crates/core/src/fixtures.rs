//! Bundled programs: the reference corpus used for retrieval and as golden
//! workflows in tests.

use crate::frontends::{parse, SyntaxStyle};
use crate::ir::Workflow;

#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub name: &'static str,
    pub task: &'static str,
    /// Declarative source.
    pub program: &'static str,
}

impl Reference {
    pub fn workflow(&self) -> Workflow {
        parse(self.program, SyntaxStyle::Declarative)
            .workflow
            .expect("bundled reference parses")
    }
}

pub const REFERENCES: &[Reference] = &[
    Reference {
        name: "blend_prompts",
        task: include_str!("../assets/references/blend_prompts.task.txt"),
        program: include_str!("../assets/references/blend_prompts.adl"),
    },
    Reference {
        name: "image_and_soundtrack",
        task: include_str!("../assets/references/image_and_soundtrack.task.txt"),
        program: include_str!("../assets/references/image_and_soundtrack.adl"),
    },
    Reference {
        name: "image_merge",
        task: include_str!("../assets/references/image_merge.task.txt"),
        program: include_str!("../assets/references/image_merge.adl"),
    },
    Reference {
        name: "image_to_3d",
        task: include_str!("../assets/references/image_to_3d.task.txt"),
        program: include_str!("../assets/references/image_to_3d.adl"),
    },
    Reference {
        name: "image_to_video",
        task: include_str!("../assets/references/image_to_video.task.txt"),
        program: include_str!("../assets/references/image_to_video.adl"),
    },
    Reference {
        name: "inpaint",
        task: include_str!("../assets/references/inpaint.task.txt"),
        program: include_str!("../assets/references/inpaint.adl"),
    },
    Reference {
        name: "merge_model",
        task: include_str!("../assets/references/merge_model.task.txt"),
        program: include_str!("../assets/references/merge_model.adl"),
    },
    Reference {
        name: "multiview",
        task: include_str!("../assets/references/multiview.task.txt"),
        program: include_str!("../assets/references/multiview.adl"),
    },
    Reference {
        name: "novel_view",
        task: include_str!("../assets/references/novel_view.task.txt"),
        program: include_str!("../assets/references/novel_view.adl"),
    },
    Reference {
        name: "outpaint",
        task: include_str!("../assets/references/outpaint.task.txt"),
        program: include_str!("../assets/references/outpaint.adl"),
    },
    Reference {
        name: "style_transfer",
        task: include_str!("../assets/references/style_transfer.task.txt"),
        program: include_str!("../assets/references/style_transfer.adl"),
    },
    Reference {
        name: "text_to_3d",
        task: include_str!("../assets/references/text_to_3d.task.txt"),
        program: include_str!("../assets/references/text_to_3d.adl"),
    },
    Reference {
        name: "text_to_audio",
        task: include_str!("../assets/references/text_to_audio.task.txt"),
        program: include_str!("../assets/references/text_to_audio.adl"),
    },
    Reference {
        name: "text_to_image",
        task: include_str!("../assets/references/text_to_image.task.txt"),
        program: include_str!("../assets/references/text_to_image.adl"),
    },
    Reference {
        name: "text_to_video",
        task: include_str!("../assets/references/text_to_video.task.txt"),
        program: include_str!("../assets/references/text_to_video.adl"),
    },
    Reference {
        name: "turntable_video",
        task: include_str!("../assets/references/turntable_video.task.txt"),
        program: include_str!("../assets/references/turntable_video.adl"),
    },
];

/// Two-node load/encode program used throughout the docs and tests.
pub const LOAD_ENCODE: &str = include_str!("../assets/golden/load_encode.adl");

pub fn reference(name: &str) -> Option<&'static Reference> {
    REFERENCES.iter().find(|r| r.name == name)
}

/// Every bundled reference program as a parsed workflow.
pub fn golden_workflows() -> Vec<(&'static str, Workflow)> {
    REFERENCES.iter().map(|r| (r.name, r.workflow())).collect()
}

/// The image-to-image pipeline with a dual-conditioning blend.
pub fn blend_pipeline() -> Workflow {
    reference("blend_prompts").expect("bundled").workflow()
}

/// The 13-node image merge pipeline.
pub fn image_merge() -> Workflow {
    reference("image_merge").expect("bundled").workflow()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use crate::validator::check;

    #[test]
    fn sixteen_references_all_validate_cleanly() {
        let r = Registry::test_catalog();
        assert_eq!(REFERENCES.len(), 16);
        for (name, w) in golden_workflows() {
            assert_eq!(check(&w, &r), vec![], "{name}");
        }
        assert_eq!(image_merge().node_count(), 13);
    }
}
