use std::collections::BTreeMap;

use super::{CriticError, CriticVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub text: &'static str,
}

const HOLISTIC_TEST_SOURCE: PromptTemplate = PromptTemplate {
    name: "holistic_test_source",
    text: include_str!("templates/holistic_test_source.txt"),
};
const ISOLATED_TEST_SOURCE: PromptTemplate = PromptTemplate {
    name: "isolated_test_source",
    text: include_str!("templates/isolated_test_source.txt"),
};
const ISOLATED_TEST_PATCH: PromptTemplate = PromptTemplate {
    name: "isolated_test_patch",
    text: include_str!("templates/isolated_test_patch.txt"),
};
const HOLISTIC_TEST_PATCH: PromptTemplate = PromptTemplate {
    name: "holistic_test_patch",
    text: include_str!("templates/holistic_test_patch.txt"),
};
const CHANGE_AWARE: PromptTemplate = PromptTemplate {
    name: "change_aware",
    text: include_str!("templates/change_aware.txt"),
};
const REFERENCE_FREE: PromptTemplate = PromptTemplate {
    name: "reference_free",
    text: include_str!("templates/reference_free.txt"),
};
const REFERENCE_FREE_HINTS: PromptTemplate = PromptTemplate {
    name: "reference_free_hints",
    text: include_str!("templates/reference_free_hints.txt"),
};

pub(super) fn template_for(variant: CriticVariant) -> &'static PromptTemplate {
    match variant {
        CriticVariant::IsolatedTestSource => &ISOLATED_TEST_SOURCE,
        CriticVariant::IsolatedTestPatch => &ISOLATED_TEST_PATCH,
        CriticVariant::HolisticTestSource => &HOLISTIC_TEST_SOURCE,
        CriticVariant::HolisticTestPatch => &HOLISTIC_TEST_PATCH,
        CriticVariant::ChangeAwareDefault | CriticVariant::ChangeAwareFunction => &CHANGE_AWARE,
        CriticVariant::ReferenceFree => &REFERENCE_FREE,
        CriticVariant::ReferenceFreeHints => &REFERENCE_FREE_HINTS,
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = &after[..close];
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
            out.push(Piece::Literal(&rest[..open + 2]));
            rest = after;
            continue;
        }
        out.push(Piece::Literal(&rest[..open]));
        out.push(Piece::Slot(name));
        rest = &after[close + 2..];
    }
    out.push(Piece::Literal(rest));
    out
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for piece in pieces(self.text) {
            if let Piece::Slot(name) = piece {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Substitutes every placeholder in one pass; values are inserted
    /// verbatim and never rescanned.
    pub fn render(&self, inputs: &BTreeMap<String, String>) -> Result<String, CriticError> {
        let declared = self.placeholders();
        if let Some(missing) = declared.iter().find(|n| !inputs.contains_key(**n)) {
            return Err(CriticError::MissingPlaceholder(missing.to_string()));
        }
        if let Some(extra) = inputs.keys().find(|k| !declared.contains(&k.as_str())) {
            return Err(CriticError::ExtraPlaceholder(extra.clone()));
        }
        let mut out = String::with_capacity(self.text.len() + inputs.values().map(String::len).sum::<usize>());
        for piece in pieces(self.text) {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => out.push_str(&inputs[name]),
            }
        }
        Ok(out)
    }
}

pub fn build_prompt(variant: CriticVariant, inputs: &BTreeMap<String, String>) -> Result<String, CriticError> {
    variant.template().render(inputs)
}
