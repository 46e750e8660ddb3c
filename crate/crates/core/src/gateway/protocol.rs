//! Line-delimited JSON wire format spoken with parser backends.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ParseOutcome;
use crate::derivation::{Derivation, Node, RootMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub text: String,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyStatus {
    Ok,
    NoParse,
    Resource,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: u64,
    pub status: ReplyStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivation: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexentries: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    /// Number of derivations found, when the backend reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readings: Option<u64>,
}

impl Reply {
    pub fn status(id: u64, status: ReplyStatus) -> Self {
        Self {
            id,
            status,
            derivation: None,
            lexentries: None,
            root: None,
            readings: None,
        }
    }
}

/// Outcome of a backend reply for a sentence of `tokens`.
///
/// An `ok` reply whose tree is malformed, whose root is unknown, whose
/// leaves do not reproduce the sentence, or whose lexical entries have the
/// wrong length counts as a parser error.
pub fn interpret(
    reply: Reply,
    tokens: &[String],
    roots: &RootMap,
) -> (ParseOutcome, Option<Derivation>, Option<Vec<String>>) {
    match reply.status {
        ReplyStatus::NoParse => (ParseOutcome::Exhausted, None, None),
        ReplyStatus::Resource => (ParseOutcome::ResourceLimit, None, None),
        ReplyStatus::Error => (ParseOutcome::ParserError, None, None),
        ReplyStatus::Ok => match accept(reply, tokens, roots) {
            Some((d, le)) => (ParseOutcome::Parseable, Some(d), Some(le)),
            None => (ParseOutcome::ParserError, None, None),
        },
    }
}

fn accept(reply: Reply, tokens: &[String], roots: &RootMap) -> Option<(Derivation, Vec<String>)> {
    let tree = Node::from_value(reply.derivation.as_ref()?).ok()?;
    let derivation = Derivation::new(reply.root?, tree, roots).ok()?;
    if derivation.tokens() != tokens {
        return None;
    }
    let lexentries = match reply.lexentries {
        Some(le) if le.len() == tokens.len() => le,
        Some(_) => return None,
        None => derivation.lexentries().into_iter().map(str::to_string).collect(),
    };
    Some((derivation, lexentries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ok_reply() -> Reply {
        Reply {
            id: 3,
            status: ReplyStatus::Ok,
            derivation: Some(json!(["np_frg", {"token": "cats", "le": "noun"}])),
            lexentries: Some(vec!["noun".into()]),
            root: Some("root_inffrag".into()),
            readings: None,
        }
    }

    #[test]
    fn request_wire_shape() {
        let r = Request {
            id: 7,
            text: "the cat".into(),
            timeout_ms: 60000,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":7,"text":"the cat","timeout_ms":60000}"#
        );
    }

    #[test]
    fn reply_statuses_map_to_outcomes() {
        let roots = RootMap::default();
        let t = toks("cats");
        assert_eq!(interpret(ok_reply(), &t, &roots).0, ParseOutcome::Parseable);
        for (s, o) in [
            (ReplyStatus::NoParse, ParseOutcome::Exhausted),
            (ReplyStatus::Resource, ParseOutcome::ResourceLimit),
            (ReplyStatus::Error, ParseOutcome::ParserError),
        ] {
            assert_eq!(interpret(Reply::status(1, s), &t, &roots).0, o);
        }
        let parsed: Reply = serde_json::from_str(r#"{"id":1,"status":"no_parse"}"#).unwrap();
        assert_eq!(parsed.status, ReplyStatus::NoParse);
        assert!(serde_json::from_str::<Reply>(r#"{"id":1,"status":"maybe"}"#).is_err());
    }

    #[test]
    fn inconsistent_ok_replies_are_parser_errors() {
        let roots = RootMap::default();
        let t = toks("cats");
        let mut r = ok_reply();
        r.root = None;
        assert_eq!(interpret(r, &t, &roots).0, ParseOutcome::ParserError);
        let mut r = ok_reply();
        r.root = Some("root_other".into());
        assert_eq!(interpret(r, &t, &roots).0, ParseOutcome::ParserError);
        let mut r = ok_reply();
        r.lexentries = Some(vec![]);
        assert_eq!(interpret(r, &t, &roots).0, ParseOutcome::ParserError);
        let mut r = ok_reply();
        r.derivation = Some(json!([]));
        assert_eq!(interpret(r, &t, &roots).0, ParseOutcome::ParserError);
        assert_eq!(
            interpret(ok_reply(), &toks("dogs"), &roots).0,
            ParseOutcome::ParserError
        );
    }

    #[test]
    fn lexentries_default_to_leaves() {
        let mut r = ok_reply();
        r.lexentries = None;
        let (_, _, le) = interpret(r, &toks("cats"), &RootMap::default());
        assert_eq!(le, Some(vec!["noun".to_string()]));
    }
}
