//! Skill documents and their priority resolution.
//!
//! A skill is a markdown file with a `---` fenced YAML frontmatter. Skills
//! are looked up in three directories; on a name collision the project copy
//! wins over the user copy, which wins over the built-in one. Both
//! `<dir>/<name>.md` and `<dir>/<name>/SKILL.md` layouts are accepted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOrigin {
    Project,
    User,
    Builtin,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillMeta {
    pub name: Option<String>,
    pub description: String,
    pub scenarios: Vec<String>,
    pub constraints: Vec<String>,
    /// Parsed and kept, but no adapter switching happens on it.
    #[serde(alias = "model_preference")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub name: String,
    pub meta: SkillMeta,
    pub body: String,
    pub origin: SkillOrigin,
    pub path: PathBuf,
}

impl Skill {
    /// Text appended to the system prompt once the skill is loaded.
    pub fn prompt_segment(&self) -> String {
        let mut out = format!("<skill name=\"{}\">\n", self.name);
        if !self.meta.constraints.is_empty() {
            out.push_str("Constraints:\n");
            for c in &self.meta.constraints {
                out.push_str(&format!("- {c}\n"));
            }
        }
        out.push_str(self.body.trim());
        out.push_str("\n</skill>");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillWarning {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkillParseError {
    MissingFrontmatter,
    Yaml(String),
    EmptyName,
}

impl std::fmt::Display for SkillParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkillParseError::MissingFrontmatter => f.write_str("missing `---` frontmatter"),
            SkillParseError::Yaml(e) => write!(f, "bad frontmatter: {e}"),
            SkillParseError::EmptyName => f.write_str("skill name is empty"),
        }
    }
}

/// Splits a skill file into metadata and body. `default_name` is used when
/// the frontmatter has no `name`.
pub fn parse_skill(text: &str, default_name: &str) -> Result<(String, SkillMeta, String), SkillParseError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let rest = text
        .strip_prefix("---\n")
        .or_else(|| text.strip_prefix("---\r\n"))
        .ok_or(SkillParseError::MissingFrontmatter)?;
    let (yaml, body) = match rest.find("\n---") {
        Some(i) => {
            let after = &rest[i + 4..];
            let body = after.split_once('\n').map_or("", |(_, b)| b);
            (&rest[..i], body)
        }
        None => return Err(SkillParseError::MissingFrontmatter),
    };
    let meta: SkillMeta = if yaml.trim().is_empty() {
        SkillMeta::default()
    } else {
        serde_yaml::from_str(yaml).map_err(|e| SkillParseError::Yaml(e.to_string()))?
    };
    let name = meta.name.clone().unwrap_or_else(|| default_name.to_string());
    if name.trim().is_empty() {
        return Err(SkillParseError::EmptyName);
    }
    Ok((name, meta, body.to_string()))
}

fn skill_files(dir: &Path) -> Vec<(PathBuf, String)> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<(PathBuf, String)> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let path = e.path();
            if path.is_dir() {
                let file = path.join("SKILL.md");
                let stem = path.file_name()?.to_string_lossy().into_owned();
                file.is_file().then_some((file, stem))
            } else if path.extension().is_some_and(|x| x == "md") {
                let stem = path.file_stem()?.to_string_lossy().into_owned();
                Some((path, stem))
            } else {
                None
            }
        })
        .collect();
    out.sort();
    out
}

/// Immutable after load; reloading builds a new registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillRegistry {
    skills: BTreeMap<String, Skill>,
}

impl SkillRegistry {
    /// Loads all three directories. Missing directories are skipped; files
    /// that fail to parse are skipped and reported.
    pub fn load(
        project_dir: Option<&Path>,
        user_dir: Option<&Path>,
        builtin_dir: Option<&Path>,
    ) -> (Self, Vec<SkillWarning>) {
        let mut skills = BTreeMap::new();
        let mut warnings = Vec::new();
        // Lowest priority first, so later inserts override.
        let dirs = [
            (builtin_dir, SkillOrigin::Builtin),
            (user_dir, SkillOrigin::User),
            (project_dir, SkillOrigin::Project),
        ];
        for (dir, origin) in dirs {
            let Some(dir) = dir else { continue };
            for (path, stem) in skill_files(dir) {
                let parsed = std::fs::read_to_string(&path)
                    .map_err(|e| e.to_string())
                    .and_then(|t| parse_skill(&t, &stem).map_err(|e| e.to_string()));
                match parsed {
                    Ok((name, meta, body)) => {
                        skills.insert(
                            name.clone(),
                            Skill {
                                name,
                                meta,
                                body,
                                origin,
                                path,
                            },
                        );
                    }
                    Err(message) => warnings.push(SkillWarning { path, message }),
                }
            }
        }
        (Self { skills }, warnings)
    }

    pub fn get(&self, name: &str) -> Option<&Skill> {
        self.skills.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.skills.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// One line per skill for the system prompt.
    pub fn catalog(&self) -> String {
        self.skills
            .values()
            .map(|s| format!("- {}: {}", s.name, s.meta.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
