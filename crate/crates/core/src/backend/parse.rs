//! Turning free-text model transcripts into structured replies.
//!
//! Models are asked for `{"answer": ...}` but do not always comply, so every
//! parser falls back to reading the plain text.

use serde_json::Value;

use crate::catalog::Scene;

/// The `answer` field of the first JSON object in `text`, if any. Markdown
/// code fences are ignored.
pub fn extract_answer(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Object(mut map) => map.remove("answer"),
        _ => None,
    }
}

fn plain(text: &str) -> &str {
    let mut t = text.trim();
    for prefix in ["Answer:", "answer:", "ANSWER:"] {
        if let Some(rest) = t.strip_prefix(prefix) {
            t = rest.trim();
        }
    }
    t.trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '[' || c == ']' || c.is_whitespace())
        .trim_end_matches('.')
}

fn same_label(a: &str, b: &str) -> bool {
    let a = a.trim().trim_matches(|c| c == '"' || c == '\'' || c == '.');
    a.eq_ignore_ascii_case(b.trim())
}

/// Maps a raw label onto the offered option it names, or keeps it verbatim
/// (so the caller can reject it).
fn canonical(raw: &str, options: &[String]) -> String {
    options
        .iter()
        .find(|o| same_label(raw, o))
        .cloned()
        .unwrap_or_else(|| raw.trim().to_string())
}

/// Reads a multi-select reply. Some option labels contain commas, so plain
/// text is segmented greedily by the longest option label at each position
/// before falling back to comma splitting.
pub fn parse_selection(text: &str, options: &[String]) -> Result<Vec<String>, String> {
    match extract_answer(text) {
        Some(Value::Array(items)) => {
            return items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(canonical(s, options)),
                    other => Err(format!("non-text option {other}")),
                })
                .collect();
        }
        Some(Value::String(s)) => return Ok(segment(&s, options)),
        Some(other) => return Err(format!("answer has unexpected type: {other}")),
        None => {}
    }
    let body = plain(text);
    if body.is_empty() {
        return Err("empty reply".into());
    }
    Ok(segment(body, options))
}

fn segment(text: &str, options: &[String]) -> Vec<String> {
    let mut by_length: Vec<&String> = options.iter().collect();
    by_length.sort_by_key(|o| std::cmp::Reverse(o.len()));

    let mut out = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let hit = by_length.iter().find(|o| {
            rest.is_char_boundary(o.len()) && rest[..o.len()].eq_ignore_ascii_case(o) && {
                let tail = rest[o.len()..].trim_start();
                tail.is_empty() || tail.starts_with([',', ';', '/']) || tail.to_lowercase().starts_with("and ")
            }
        });
        let (label, consumed) = match hit {
            Some(o) => ((*o).clone(), o.len()),
            None => {
                let cut = rest.find([',', ';']).unwrap_or(rest.len());
                (canonical(&rest[..cut], options), cut)
            }
        };
        if !label.is_empty() {
            out.push(label);
        }
        rest = rest[consumed..].trim_start();
        rest = rest.trim_start_matches([',', ';', '/']).trim_start();
        if rest.to_lowercase().starts_with("and ") {
            rest = rest[4..].trim_start();
        }
    }
    out
}

pub fn parse_yes_no(text: &str) -> Result<bool, String> {
    let raw = match extract_answer(text) {
        Some(Value::Bool(b)) => return Ok(b),
        Some(Value::String(s)) => s,
        Some(other) => return Err(format!("answer has unexpected type: {other}")),
        None => plain(text).to_string(),
    };
    let word = raw
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match word.as_str() {
        "yes" | "true" | "visible" => Ok(true),
        "no" | "false" | "not" => Ok(false),
        _ => Err(format!("expected yes or no, got `{raw}`")),
    }
}

pub fn parse_scene(text: &str) -> Result<Scene, String> {
    let raw = match extract_answer(text) {
        Some(Value::String(s)) => s,
        Some(other) => return Err(format!("answer has unexpected type: {other}")),
        None => plain(text).to_string(),
    };
    let lower = raw.to_lowercase();
    match (lower.contains("indoor"), lower.contains("outdoor")) {
        (true, false) => Ok(Scene::Indoor),
        (false, true) => Ok(Scene::Outdoor),
        _ => Err(format!("expected indoor or outdoor, got `{raw}`")),
    }
}

/// The rating as written by the model; range checks belong to the caller.
pub fn parse_rating(text: &str) -> Result<u8, String> {
    let raw = match extract_answer(text) {
        Some(Value::Number(n)) => {
            return n
                .as_u64()
                .and_then(|v| u8::try_from(v).ok())
                .ok_or_else(|| format!("rating `{n}` is not a small integer"));
        }
        Some(Value::String(s)) => s,
        Some(other) => return Err(format!("answer has unexpected type: {other}")),
        None => plain(text).to_string(),
    };
    let digits: String = raw
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits
        .parse::<u8>()
        .map_err(|_| format!("no rating found in `{raw}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn plain_comma_list() {
        let o = opts(&["Walls", "Windows", "Doors", "None of the above"]);
        assert_eq!(parse_selection("Walls, Windows", &o).unwrap(), ["Walls", "Windows"]);
        assert_eq!(parse_selection("Answer: walls and doors.", &o).unwrap(), ["Walls", "Doors"]);
    }

    #[test]
    fn labels_containing_commas() {
        let o = opts(&["Tiles, marble, or stone", "Wood", "Carpet"]);
        assert_eq!(
            parse_selection("Tiles, marble, or stone, Wood", &o).unwrap(),
            ["Tiles, marble, or stone", "Wood"]
        );
    }

    #[test]
    fn json_answers() {
        let o = opts(&["sloped roof", "flat roof", "None of the above"]);
        let t = "```json\n{\"answer\": [\"Sloped roof\"]}\n```";
        assert_eq!(parse_selection(t, &o).unwrap(), ["sloped roof"]);
        let t = "{\"reasoning\": \"clear\", \"answer\": \"flat roof\"}";
        assert_eq!(parse_selection(t, &o).unwrap(), ["flat roof"]);
    }

    #[test]
    fn unknown_labels_survive_for_rejection() {
        let o = opts(&["A", "B"]);
        assert_eq!(parse_selection("A, Z", &o).unwrap(), ["A", "Z"]);
        assert!(parse_selection("  ", &o).is_err());
    }

    #[test]
    fn yes_no_and_scene() {
        assert_eq!(parse_yes_no("Yes, the roof is visible."), Ok(true));
        assert_eq!(parse_yes_no("{\"answer\": \"no\"}"), Ok(false));
        assert!(parse_yes_no("maybe").is_err());
        assert_eq!(parse_scene("This is an outdoor scene."), Ok(Scene::Outdoor));
        assert_eq!(parse_scene("{\"answer\": \"Indoor\"}"), Ok(Scene::Indoor));
        assert!(parse_scene("both indoor and outdoor").is_err());
    }

    #[test]
    fn ratings() {
        assert_eq!(parse_rating("{\"answer\": 4}"), Ok(4));
        assert_eq!(parse_rating("Score: 2 (Low)"), Ok(2));
        assert_eq!(parse_rating("7"), Ok(7));
        assert!(parse_rating("high").is_err());
    }
}
