//! Flat per-command configuration: defaults, then a JSON file, then
//! `UNISCALE_<KEY>` environment variables, then flags. Flag names are the
//! kebab-case form of the snake_case file keys.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "UNISCALE_";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// Declares a command configuration with defaults and its flag mirror in
/// which every field is optional.
macro_rules! command_config {
    (
        $(#[$meta:meta])*
        $name:ident, $args:ident {
            $( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr $(=> [$($arg:tt)*])? ; )*
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        #[derive(Clone, Debug, Default, clap::Args, serde::Serialize)]
        pub struct $args {
            $(
                $(#[doc = $doc])*
                #[arg(long $(, $($arg)*)?)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}
pub(crate) use command_config;

fn object(v: Value, what: &str) -> CliResult<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::config(format!("{what} must be a JSON object"))),
    }
}

/// Reads an environment value as JSON, falling back to a string; a bare
/// comma list becomes an array.
fn env_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str(raw) {
        return v;
    }
    if raw.contains(',') {
        if let Ok(v) = serde_json::from_str(&format!("[{raw}]")) {
            return v;
        }
        return Value::Array(raw.split(',').map(|s| Value::String(s.trim().to_string())).collect());
    }
    Value::String(raw.to_string())
}

/// Merges the layers into a `C`, rejecting unknown keys.
pub fn resolve<C, A>(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>, flags: &A) -> CliResult<C>
where
    C: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let mut merged = object(serde_json::to_value(C::default())?, "defaults")?;
    let keys: Vec<String> = merged.keys().cloned().collect();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))?;
        for (k, v) in object(v, "config file")? {
            if !keys.contains(&k) {
                return Err(CliError::config(format!(
                    "unknown config key {k:?} in {}; known keys: {}",
                    path.display(),
                    keys.join(", ")
                )));
            }
            merged.insert(k, v);
        }
    }
    for k in &keys {
        if let Some(raw) = env(&format!("{ENV_PREFIX}{}", k.to_uppercase())) {
            merged.insert(k.clone(), env_value(&raw));
        }
    }
    for (k, v) in object(serde_json::to_value(flags)?, "flags")? {
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
}

pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

/// Writes the resolved configuration next to a command's outputs.
pub fn write_effective<C: Serialize>(dir: &Path, command: &str, cfg: &C) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let v = serde_json::json!({ "command": command, "config": cfg });
    std::fs::write(dir.join(EFFECTIVE_CONFIG_FILE), serde_json::to_string_pretty(&v)? + "\n")
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    command_config! {
        Demo, DemoArgs {
            /// Number of things.
            count: usize = 3;
            name: String = "a".into();
            list: Vec<usize> = vec![1] => [value_delimiter = ','];
        }
    }

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"count": 5, "name": "file"}"#).unwrap();
        let env = |k: &str| (k == "UNISCALE_NAME").then(|| "env".to_string());
        let flags = DemoArgs {
            count: Some(9),
            ..Default::default()
        };
        let c: Demo = resolve(Some(&file), &env, &flags).unwrap();
        assert_eq!(c, Demo { count: 9, name: "env".into(), list: vec![1] });
        let c: Demo = resolve(Some(&file), &no_env, &DemoArgs::default()).unwrap();
        assert_eq!(c.count, 5);
        assert_eq!(c.name, "file");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"cuont": 5}"#).unwrap();
        let e = resolve::<Demo, _>(Some(&file), &no_env, &DemoArgs::default()).unwrap_err();
        assert_eq!(e.code(), 2);
        assert!(e.message.contains("cuont"));
    }

    #[test]
    fn env_lists_and_numbers_parse() {
        let env = |k: &str| match k {
            "UNISCALE_LIST" => Some("2,3".to_string()),
            "UNISCALE_COUNT" => Some("7".to_string()),
            _ => None,
        };
        let c: Demo = resolve(None, &env, &DemoArgs::default()).unwrap();
        assert_eq!(c.list, vec![2, 3]);
        assert_eq!(c.count, 7);
    }
}
