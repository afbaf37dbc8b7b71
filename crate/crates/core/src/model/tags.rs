//! BIO tagging between character-offset entity spans and token positions.

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;

pub const OUTSIDE: &str = "O";

/// `["O", "B-a", "I-a", "B-b", "I-b", ...]` over entity types in sorted order.
pub fn bio_tagset<'a>(entity_types: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let mut tags = vec![OUTSIDE.to_string()];
    for e in entity_types {
        tags.push(format!("B-{e}"));
        tags.push(format!("I-{e}"));
    }
    tags
}

/// Tag index per token. A token overlapping a span is tagged with it; the
/// first such token gets `B-`, the rest `I-`. Unknown entity labels map to O.
pub fn spans_to_tags(spans: &[(usize, usize)], entities: &[EntitySpan], tagset: &[String]) -> Vec<usize> {
    let mut tags = vec![0; spans.len()];
    for e in entities {
        let (Some(b), Some(i)) = (
            tagset.iter().position(|t| *t == format!("B-{}", e.entity)),
            tagset.iter().position(|t| *t == format!("I-{}", e.entity)),
        ) else {
            continue;
        };
        let mut first = true;
        for (t, &(s, end)) in spans.iter().enumerate() {
            if s < e.end && end > e.start {
                tags[t] = if first { b } else { i };
                first = false;
            }
        }
    }
    tags
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub start: usize,
    pub end: usize,
    pub entity: String,
}

/// Groups BIO tags back into character spans. A stray `I-x` that does not
/// continue an `x` entity opens a new one.
pub fn tags_to_entities(tags: &[usize], spans: &[(usize, usize)], tagset: &[String]) -> Vec<PredictedEntity> {
    let mut out: Vec<PredictedEntity> = Vec::new();
    let mut open = false;
    for (&tag, &(s, e)) in tags.iter().zip(spans) {
        let name = tagset[tag].as_str();
        if let Some(ent) = name.strip_prefix("I-") {
            if open && out.last().is_some_and(|p| p.entity == ent) {
                out.last_mut().unwrap().end = e;
                continue;
            }
            out.push(PredictedEntity { start: s, end: e, entity: ent.to_string() });
            open = true;
        } else if let Some(ent) = name.strip_prefix("B-") {
            out.push(PredictedEntity { start: s, end: e, entity: ent.to_string() });
            open = true;
        } else {
            open = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize_with_offsets;

    #[test]
    fn roundtrip_through_tokens() {
        let text = "we need twenty five more flowers";
        let toks = tokenize_with_offsets(text);
        let spans: Vec<_> = toks.iter().map(|t| (t.start, t.end)).collect();
        let ents = vec![
            EntitySpan { start: 8, end: 19, entity: "number".into(), value: "twenty five".into() },
            EntitySpan { start: 25, end: 32, entity: "plant".into(), value: "flowers".into() },
        ];
        let tagset = bio_tagset(&["number".to_string(), "plant".to_string()]);
        let tags = spans_to_tags(&spans, &ents, &tagset);
        assert_eq!(tags, vec![0, 0, 1, 2, 0, 3]);
        let back = tags_to_entities(&tags, &spans, &tagset);
        assert_eq!(back.len(), 2);
        assert_eq!((back[0].start, back[0].end, back[0].entity.as_str()), (8, 19, "number"));
        assert_eq!((back[1].start, back[1].end, back[1].entity.as_str()), (25, 32, "plant"));
    }

    #[test]
    fn stray_inside_tag_opens_entity() {
        let tagset = bio_tagset(&["x".to_string()]);
        let spans = [(0, 1), (2, 3)];
        let ents = tags_to_entities(&[0, 2], &spans, &tagset);
        assert_eq!(ents, vec![PredictedEntity { start: 2, end: 3, entity: "x".into() }]);
    }
}
