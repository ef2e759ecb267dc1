//! Note text normalization: escape removal and mojibake repair.
//!
//! EHR exports arrive with two recurring defects. Free text carries literal
//! escape sequences and raw control characters left over from serialization,
//! and accented characters show up as UTF-8 byte pairs that were decoded as
//! Windows-1252 somewhere upstream ("coÃ¶rdinatie" for "coördinatie"). Both
//! are fixed here, in a fixed order: mojibake first, then escapes and
//! controls, then whitespace collapsing. Repair must run first because some
//! broken sequences contain C1 control characters that the control pass
//! would otherwise destroy.

use alloc::string::String;

/// Repair table: broken sequence as it appears in the data, and the
/// character it stands for. Keys are the UTF-8 bytes of the target decoded
/// as Windows-1252 (Latin-1 for the five code points 1252 leaves undefined),
/// which is the corruption the source systems actually produce. Unknown
/// sequences are left intact. The two-character keys written with `\u{..}`
/// escapes end in invisible characters (no-break space, soft hyphen).
pub const MOJIBAKE_REPAIRS: &[(&str, &str)] = &[
    ("Ã©", "é"),
    ("Ã¨", "è"),
    ("Ãª", "ê"),
    ("Ã«", "ë"),
    ("Ã¡", "á"),
    ("Ã\u{a0}", "à"),
    ("Ã¢", "â"),
    ("Ã¤", "ä"),
    ("Ã§", "ç"),
    ("Ã\u{ad}", "í"),
    ("Ã®", "î"),
    ("Ã¯", "ï"),
    ("Ã±", "ñ"),
    ("Ã³", "ó"),
    ("Ã´", "ô"),
    ("Ã¶", "ö"),
    ("Ãµ", "õ"),
    ("Ãº", "ú"),
    ("Ã»", "û"),
    ("Ã¼", "ü"),
    ("Ã‰", "É"),
    ("Ã€", "À"),
    ("Ã„", "Ä"),
    ("Ã–", "Ö"),
    ("Ãœ", "Ü"),
    ("Ã‡", "Ç"),
    ("Ãƒ", "Ã"),
    ("Ã‚", "Â"),
    ("Â©", "©"),
    ("Â°", "°"),
    ("Â±", "±"),
    ("Â²", "²"),
    ("Â³", "³"),
    ("Âµ", "µ"),
    ("Â½", "½"),
    ("Â§", "§"),
    ("â‚¬", "€"),
    ("â€“", "–"),
    ("â€”", "—"),
    ("â€˜", "‘"),
    ("â€™", "’"),
    ("â€œ", "“"),
    ("â€\u{9d}", "”"),
    ("â€¦", "…"),
];

/// Literal two-character escape sequences that count as line noise. A lone
/// backslash is left alone; so are `\\` and `\"`, which appear in genuine
/// prose (file paths, quotes) too often to rewrite safely.
const ESCAPE_DIGRAPHS: &[&str] = &["\\n", "\\r", "\\t", "\\f", "\\v", "\\0"];

/// Replace every known mojibake sequence, iterating until a full scan makes
/// no change. One pass is not enough: doubly mis-decoded text repairs into
/// singly mis-decoded text (for example "Âµ" inside "ÃÂµ" leaves "Ãµ",
/// itself a table key). Each replacement strictly shortens the string, so
/// the loop terminates.
pub fn repair_mojibake(raw: &str) -> String {
    let mut cur = String::from(raw);
    loop {
        let mut out = String::with_capacity(cur.len());
        let mut changed = false;
        let bytes = cur.as_bytes();
        let mut i = 0;
        'outer: while i < bytes.len() {
            for (broken, fixed) in MOJIBAKE_REPAIRS {
                if cur[i..].starts_with(broken) {
                    out.push_str(fixed);
                    i += broken.len();
                    changed = true;
                    continue 'outer;
                }
            }
            // advance one whole character
            let ch = cur[i..].chars().next().expect("i is a char boundary");
            out.push(ch);
            i += ch.len_utf8();
        }
        if !changed {
            return out;
        }
        cur = out;
    }
}

/// Full cleaning pass: mojibake repair, then escape digraphs and control
/// characters become spaces, then whitespace runs collapse to one space and
/// the ends are trimmed. Total and idempotent; cleaning already-clean text
/// returns it unchanged.
pub fn clean_text(raw: &str) -> String {
    let repaired = repair_mojibake(raw);

    let mut spaced = String::with_capacity(repaired.len());
    let bytes = repaired.as_bytes();
    let mut i = 0;
    'outer: while i < bytes.len() {
        for esc in ESCAPE_DIGRAPHS {
            if repaired[i..].starts_with(esc) {
                spaced.push(' ');
                i += esc.len();
                continue 'outer;
            }
        }
        let ch = repaired[i..].chars().next().expect("i is a char boundary");
        spaced.push(if ch.is_control() { ' ' } else { ch });
        i += ch.len_utf8();
    }

    let mut out = String::with_capacity(spaced.len());
    let mut pending_space = false;
    for ch in spaced.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Word count after cleaning; used by callers that need a quick token-ish
/// length without a tokenizer.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
