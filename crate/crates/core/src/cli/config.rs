use std::ffi::OsString;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses a `key = value` file. Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: (i + 1) as u64,
            msg: format!("line {}: expected key=value", i + 1),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (i + 1) as u64,
                msg: format!("line {}: empty key", i + 1),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices settings from `--config FILE` into `argv` right after the
/// subcommand, so flags given on the command line take precedence.
///
/// `true`/`false` values become a bare flag or nothing.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = it
                .next()
                .ok_or_else(|| Error::Config("--config needs a file".into()))?;
            config = Some(v);
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(OsString::from(v));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut injected = Vec::new();
    for (k, v) in parse_config(&text, path)? {
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{k}")));
                injected.push(OsString::from(v));
            }
        }
    }
    // Position of the subcommand: first argument after the program name
    // that is not an option.
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let kv = parse_config("# c\nbatch_size = 16\n\nlr=0.1 # tail\n", Path::new("x")).unwrap();
        assert_eq!(
            kv,
            vec![("batch-size".into(), "16".into()), ("lr".into(), "0.1".into())]
        );
        assert!(parse_config("novalue\n", Path::new("x")).is_err());
    }
}
