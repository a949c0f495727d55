use std::collections::HashMap;
use std::future::Future;
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use tokio::sync::OnceCell;

use super::parse::parse_reply;
use super::prompt::PromptTemplates;
use super::{
    AnalogyError, Category, DesignPrinciples, Inspiration, InspirationRequest, InspirationSet,
};
use crate::backends::LanguageModel;

/// Memoizes successful results. Concurrent callers for one key share a
/// single in-flight computation; failures are not cached.
struct Memo<K, V> {
    cells: Mutex<HashMap<K, Arc<OnceCell<V>>>>,
}

impl<K: Eq + Hash, V: Clone> Memo<K, V> {
    fn new() -> Self {
        Self {
            cells: Mutex::new(HashMap::new()),
        }
    }

    async fn get_or_try_init<E, F, Fut>(&self, key: K, init: F) -> Result<V, E>
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = Result<V, E>>,
    {
        let cell = {
            let mut cells = self.cells.lock().unwrap_or_else(|e| e.into_inner());
            cells.entry(key).or_default().clone()
        };
        cell.get_or_try_init(init).await.cloned()
    }
}

#[derive(PartialEq, Eq, Hash)]
struct SetKey {
    subject: String,
    concept: String,
    count: usize,
    parent: Option<String>,
    chain_seed: u64,
}

impl SetKey {
    fn new(request: &InspirationRequest, parent: Option<&str>) -> Self {
        Self {
            subject: request.subject.trim().to_lowercase(),
            concept: request.concept.trim().to_lowercase(),
            count: request.count,
            parent: parent.map(|p| p.trim().to_lowercase()),
            chain_seed: request.chain_seed,
        }
    }
}

pub struct AnalogyEngine {
    llm: Arc<dyn LanguageModel>,
    templates: PromptTemplates,
    principles: Memo<String, DesignPrinciples>,
    sets: Memo<SetKey, InspirationSet>,
    categories: Memo<String, Category>,
}

impl AnalogyEngine {
    pub fn new(llm: Arc<dyn LanguageModel>, templates: PromptTemplates) -> Self {
        Self {
            llm,
            templates,
            principles: Memo::new(),
            sets: Memo::new(),
            categories: Memo::new(),
        }
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    /// Step one. Cached per subject.
    pub async fn fetch_design_principles(
        &self,
        subject: &str,
    ) -> Result<DesignPrinciples, AnalogyError> {
        let subject = subject.trim();
        if subject.is_empty() {
            return Err(AnalogyError::InvalidRequest("subject is empty".into()));
        }
        self.principles
            .get_or_try_init(subject.to_lowercase(), || async {
                let reply = self
                    .llm
                    .complete(&self.templates.render_step1(subject))
                    .await?;
                let text = reply.trim();
                if text.is_empty() {
                    return Err(AnalogyError::EmptyReply("design principles"));
                }
                Ok(DesignPrinciples {
                    subject: subject.to_string(),
                    text: text.to_string(),
                })
            })
            .await
    }

    /// Step two for given principles. Not memoized.
    pub async fn generate_inspirations(
        &self,
        request: &InspirationRequest,
        principles: &DesignPrinciples,
    ) -> Result<InspirationSet, AnalogyError> {
        self.step_two(request, principles, None).await
    }

    /// Full chain, memoized on (subject, concept, count, chain seed).
    pub async fn inspirations(
        &self,
        request: &InspirationRequest,
    ) -> Result<InspirationSet, AnalogyError> {
        request.validate()?;
        self.sets
            .get_or_try_init(SetKey::new(request, None), || async {
                let principles = self.fetch_design_principles(&request.subject).await?;
                self.step_two(request, &principles, None).await
            })
            .await
    }

    /// Re-runs step two with `parent` standing in for the concept. Every
    /// result records `parent` as its origin.
    pub async fn branch(
        &self,
        parent: &str,
        request: &InspirationRequest,
    ) -> Result<InspirationSet, AnalogyError> {
        let parent = parent.trim();
        if parent.is_empty() {
            return Err(AnalogyError::InvalidRequest(
                "inspiration label is empty".into(),
            ));
        }
        let branched = InspirationRequest {
            concept: parent.to_string(),
            ..request.clone()
        };
        branched.validate()?;
        self.sets
            .get_or_try_init(SetKey::new(&branched, Some(parent)), || async {
                let principles = self.fetch_design_principles(&branched.subject).await?;
                self.step_two(&branched, &principles, Some(parent)).await
            })
            .await
    }

    /// Asks the model for the category of one label. Falls back to nature,
    /// returning the reason as a warning.
    pub async fn categorize(&self, label: &str) -> (Category, Option<String>) {
        let result = self
            .categories
            .get_or_try_init(label.trim().to_lowercase(), || async {
                let reply = self
                    .llm
                    .complete(&self.templates.render_categorize(label.trim()))
                    .await
                    .map_err(|e| e.to_string())?;
                Category::find_in(&reply)
                    .ok_or_else(|| format!("unrecognized category reply {reply:?}"))
            })
            .await;
        match result {
            Ok(c) => (c, None),
            Err(reason) => (
                Category::Nature,
                Some(format!("category fallback for {label:?}: {reason}")),
            ),
        }
    }

    async fn step_two(
        &self,
        request: &InspirationRequest,
        principles: &DesignPrinciples,
        parent: Option<&str>,
    ) -> Result<InspirationSet, AnalogyError> {
        request.validate()?;
        let prompt = self.templates.render_step2_request(
            &request.subject,
            &request.concept,
            principles.text.trim(),
            request.count,
        );
        let raw = self.llm.complete(&prompt).await?;
        let mut parsed = parse_reply(&raw);
        if parsed.is_empty() {
            return Err(AnalogyError::Unparseable { raw });
        }
        parsed.truncate(request.count);

        let lookups = parsed.iter().map(|item| async move {
            match item.category {
                Some(c) => (c, None),
                None => self.categorize(&item.label).await,
            }
        });
        let categories = futures::future::join_all(lookups).await;

        let mut warnings = Vec::new();
        let items: Vec<Inspiration> = parsed
            .into_iter()
            .zip(categories)
            .map(|(item, (category, warning))| {
                warnings.extend(warning);
                Inspiration {
                    label: item.label,
                    category,
                    parent: parent.map(str::to_string),
                }
            })
            .collect();
        let short = items.len() < request.count;
        if short {
            warnings.push(format!(
                "requested {} inspirations, received {}",
                request.count,
                items.len()
            ));
        }
        Ok(InspirationSet {
            subject: request.subject.clone(),
            concept: request.concept.clone(),
            parent: parent.map(str::to_string),
            items,
            requested: request.count,
            short,
            warnings,
        })
    }
}
