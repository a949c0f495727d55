use std::path::Path;

use thiserror::Error;

const STEP1: &str = include_str!("../../templates/step1.txt");
const STEP2: &str = include_str!("../../templates/step2.txt");
const CATEGORY_SUFFIX: &str = include_str!("../../templates/category_suffix.txt");
const CATEGORIZE: &str = include_str!("../../templates/categorize.txt");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template {name} is missing placeholder {placeholder}")]
    MissingPlaceholder {
        name: &'static str,
        placeholder: &'static str,
    },
}

/// Prompt texts with `<subject>`, `<concept>`, `<count>`,
/// `<design principles from Step 1>` and `<label>` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub step1: String,
    pub step2: String,
    /// Appended to step two to request `label | category` pairs. Empty
    /// disables the structured reply format.
    pub category_suffix: String,
    pub categorize: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            step1: strip_newline(STEP1),
            step2: strip_newline(STEP2),
            category_suffix: strip_newline(CATEGORY_SUFFIX),
            categorize: strip_newline(CATEGORIZE),
        }
    }
}

fn strip_newline(s: &str) -> String {
    s.strip_suffix('\n')
        .map(|t| t.strip_suffix('\r').unwrap_or(t))
        .unwrap_or(s)
        .to_string()
}

const SUBJECT: &str = "<subject>";
const CONCEPT: &str = "<concept>";
const COUNT: &str = "<count>";
const PRINCIPLES: &str = "<design principles from Step 1>";
const LABEL: &str = "<label>";

/// Single left-to-right pass, so substituted values are never re-expanded.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    'outer: while let Some(start) = rest.find('<') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        for (key, value) in values {
            if let Some(after) = tail.strip_prefix(key) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        out.push('<');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

impl PromptTemplates {
    /// Loads `step1.txt`, `step2.txt`, `category_suffix.txt` and
    /// `categorize.txt` from `dir`, keeping the built-in text for any file
    /// that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for (name, slot) in [
            ("step1.txt", &mut t.step1),
            ("step2.txt", &mut t.step2),
            ("category_suffix.txt", &mut t.category_suffix),
            ("categorize.txt", &mut t.categorize),
        ] {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(text) => *slot = strip_newline(&text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(TemplateError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let checks: [(&'static str, &str, &'static str); 5] = [
            ("step1", &self.step1, SUBJECT),
            ("step2", &self.step2, SUBJECT),
            ("step2", &self.step2, CONCEPT),
            ("step2", &self.step2, PRINCIPLES),
            ("categorize", &self.categorize, LABEL),
        ];
        for (name, text, placeholder) in checks {
            if !text.contains(placeholder) {
                return Err(TemplateError::MissingPlaceholder { name, placeholder });
            }
        }
        Ok(())
    }

    pub fn render_step1(&self, subject: &str) -> String {
        substitute(&self.step1, &[(SUBJECT, subject)])
    }

    /// Step two exactly as templated, without the structured-reply suffix.
    pub fn render_step2(
        &self,
        subject: &str,
        concept: &str,
        principles: &str,
        count: usize,
    ) -> String {
        let count = count.to_string();
        substitute(
            &self.step2,
            &[
                (SUBJECT, subject),
                (CONCEPT, concept),
                (PRINCIPLES, principles),
                (COUNT, &count),
            ],
        )
    }

    /// The step-two text actually sent to the model.
    pub fn render_step2_request(
        &self,
        subject: &str,
        concept: &str,
        principles: &str,
        count: usize,
    ) -> String {
        let base = self.render_step2(subject, concept, principles, count);
        if self.category_suffix.trim().is_empty() {
            base
        } else {
            format!("{base} {}", self.category_suffix)
        }
    }

    pub fn render_categorize(&self, label: &str) -> String {
        substitute(&self.categorize, &[(LABEL, label)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_is_single_pass() {
        let t = PromptTemplates::default();
        let out = t.render_step1("<concept> chair");
        assert_eq!(
            out,
            "Describe the key design principles in <concept> chair design in one short paragraph."
        );
    }

    #[test]
    fn unknown_angle_brackets_are_preserved() {
        assert_eq!(substitute("a <b> <subject>", &[(SUBJECT, "x")]), "a <b> x");
    }

    #[test]
    fn request_appends_category_suffix() {
        let t = PromptTemplates::default();
        let base = t.render_step2("car", "protective", "P.", 10);
        let req = t.render_step2_request("car", "protective", "P.", 10);
        assert!(req.starts_with(&base));
        assert!(req.ends_with(&t.category_suffix));
        let plain = PromptTemplates {
            category_suffix: String::new(),
            ..t
        };
        assert_eq!(
            plain.render_step2_request("car", "protective", "P.", 10),
            base
        );
    }

    #[test]
    fn templates_load_from_directory_with_fallback() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("step1.txt"), "Principles of <subject>?\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.render_step1("lamp"), "Principles of lamp?");
        assert_eq!(t.step2, PromptTemplates::default().step2);
    }

    #[test]
    fn missing_placeholder_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("step2.txt"), "no placeholders").unwrap();
        assert!(matches!(
            PromptTemplates::load_dir(dir.path()),
            Err(TemplateError::MissingPlaceholder { .. })
        ));
    }
}
