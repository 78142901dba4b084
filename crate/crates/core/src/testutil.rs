use crate::corpus::{parse_jsonl, NliExample};

pub const FIG1: &str = r#"{"premise":"a dog swims","hypothesis":"a dog is sleeping","label":"contradiction","explanations":["A dog cannot be sleeping while it swims"],"premise_highlights":[2],"hypothesis_highlights":[3]}"#;

pub fn figure_one() -> NliExample {
    parse_jsonl(FIG1, "mem").unwrap().remove(0)
}
