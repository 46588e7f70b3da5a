//! Prompt grammar: renders restoration instructions from label sets and
//! parses free-form instructions back into label sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::distortions::{Category, LabelSet};
use crate::imaging::SeededRng;
use crate::{Error, Result};

const BUILTIN_GRAMMAR: &str = include_str!("../assets/grammar.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Full,
    Partial,
    Negative,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Full, PromptMode::Partial, PromptMode::Negative];

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Full => "full",
            PromptMode::Partial => "partial",
            PromptMode::Negative => "negative",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// `remove the effects of a, b, and c` with canonical names.
    #[default]
    Fixed,
    /// Templates and synonyms drawn from the grammar.
    Varied,
}

impl FromStr for PromptStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(PromptStyle::Fixed),
            "varied" => Ok(PromptStyle::Varied),
            other => Err(Error::invalid(format!("unknown prompt style '{}'", other))),
        }
    }
}

/// What a prompt asks for, relative to the distortions actually applied.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestorationRequest {
    pub targets: LabelSet,
    pub mode: PromptMode,
    pub surface_text: String,
}

impl RestorationRequest {
    /// Parses free text with the builtin grammar into a request targeting
    /// every category it names.
    pub fn from_text(text: &str) -> Result<RestorationRequest> {
        let parsed = PromptGrammar::builtin().parse(text)?;
        Ok(RestorationRequest {
            targets: parsed.targets,
            mode: PromptMode::Full,
            surface_text: text.to_string(),
        })
    }

    /// Checks the mode invariants against the applied set.
    pub fn check(&self, applied: LabelSet) -> Result<()> {
        let ok = match self.mode {
            PromptMode::Full => self.targets == applied,
            PromptMode::Partial => {
                !self.targets.is_empty()
                    && self.targets.is_subset(applied)
                    && self.targets != applied
            }
            PromptMode::Negative => !self.targets.is_empty() && self.targets.is_disjoint(applied),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} request {} inconsistent with applied {}",
                self.mode, self.targets, applied
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedSpan {
    /// Token range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrompt {
    pub targets: LabelSet,
    pub matched_spans: Vec<MatchedSpan>,
    pub unmatched_tokens: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryForms {
    nouns: Vec<String>,
    fused: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    categories: BTreeMap<Category, CategoryForms>,
    verbs: Vec<String>,
    templates: Vec<String>,
    fused_templates: Vec<String>,
    stopwords: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PromptGrammar {
    nouns: BTreeMap<Category, Vec<String>>,
    fused: BTreeMap<Category, Vec<String>>,
    verbs: Vec<String>,
    templates: Vec<String>,
    fused_templates: Vec<String>,
    stopwords: HashSet<String>,
    lexicon: HashMap<Vec<String>, Category>,
    longest: usize,
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

impl PromptGrammar {
    /// The grammar shipped with the crate.
    pub fn builtin() -> &'static PromptGrammar {
        static G: OnceLock<PromptGrammar> = OnceLock::new();
        G.get_or_init(|| {
            PromptGrammar::from_json(BUILTIN_GRAMMAR).expect("builtin grammar is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<PromptGrammar> {
        let file: GrammarFile = serde_json::from_str(text)?;
        let mut lexicon = HashMap::new();
        let mut nouns = BTreeMap::new();
        let mut fused = BTreeMap::new();
        for c in Category::ALL {
            let forms = file
                .categories
                .get(&c)
                .ok_or_else(|| Error::invalid(format!("grammar lacks category {}", c)))?;
            // the canonical display name is always a surface form
            let mut ns = vec![c.display_name().to_string()];
            ns.extend(
                forms
                    .nouns
                    .iter()
                    .filter(|n| *n != c.display_name())
                    .cloned(),
            );
            let surface: Vec<&String> = ns.iter().chain(forms.fused.iter()).collect();
            if surface.len() < 3 {
                return Err(Error::invalid(format!(
                    "category {} has fewer than 3 surface forms",
                    c
                )));
            }
            for form in surface {
                let toks = tokenize(form);
                if toks.is_empty() {
                    return Err(Error::invalid(format!("empty surface form for {}", c)));
                }
                if let Some(prev) = lexicon.insert(toks, c) {
                    if prev != c {
                        return Err(Error::invalid(format!(
                            "surface form '{}' maps to both {} and {}",
                            form, prev, c
                        )));
                    }
                }
            }
            nouns.insert(c, ns);
            fused.insert(c, forms.fused.clone());
        }
        let stopwords: HashSet<String> = file.stopwords.iter().flat_map(|s| tokenize(s)).collect();
        for key in lexicon.keys() {
            if key.len() == 1 && stopwords.contains(&key[0]) {
                return Err(Error::invalid(format!(
                    "surface form '{}' is also a stopword",
                    key[0]
                )));
            }
        }
        if file.verbs.is_empty() || file.templates.is_empty() {
            return Err(Error::invalid("grammar needs verbs and templates"));
        }
        for t in file.templates.iter().chain(&file.fused_templates) {
            if !t.contains("{list}") {
                return Err(Error::invalid(format!("template '{}' lacks {{list}}", t)));
            }
        }
        let longest = lexicon.keys().map(Vec::len).max().unwrap_or(1);
        Ok(PromptGrammar {
            nouns,
            fused,
            verbs: file.verbs,
            templates: file.templates,
            fused_templates: file.fused_templates,
            stopwords,
            lexicon,
            longest,
        })
    }

    /// Every surface form of `category` (nouns then fused verbs).
    pub fn surface_forms(&self, category: Category) -> Vec<&str> {
        self.nouns[&category]
            .iter()
            .chain(&self.fused[&category])
            .map(String::as_str)
            .collect()
    }

    pub fn render(
        &self,
        targets: LabelSet,
        style: PromptStyle,
        rng: &mut SeededRng,
    ) -> Result<String> {
        if targets.is_empty() {
            return Err(Error::Empty("prompt targets".into()));
        }
        match style {
            PromptStyle::Fixed => {
                let names: Vec<String> = targets
                    .iter()
                    .map(|c| c.display_name().to_string())
                    .collect();
                Ok(format!("remove the effects of {}", join_list(&names)))
            }
            PromptStyle::Varied => {
                let mut cats = targets.to_vec();
                rng.shuffle(&mut cats);
                let all_fused = cats.iter().all(|c| !self.fused[c].is_empty());
                if all_fused && !self.fused_templates.is_empty() && rng.coin(0.35) {
                    let items: Vec<String> = cats
                        .iter()
                        .map(|c| rng.choose(&self.fused[c]).clone())
                        .collect();
                    let t = rng.choose(&self.fused_templates);
                    return Ok(t.replace("{list}", &join_list(&items)));
                }
                let items: Vec<String> = cats
                    .iter()
                    .map(|c| rng.choose(&self.nouns[c]).clone())
                    .collect();
                let verb = rng.choose(&self.verbs);
                let t = rng.choose(&self.templates);
                Ok(t.replace("{verb}", verb)
                    .replace("{list}", &join_list(&items)))
            }
        }
    }

    /// Number of distinct varied renderings of `targets`.
    pub fn varied_count(&self, targets: LabelSet) -> u128 {
        let n = targets.len() as u128;
        let perms: u128 = (1..=n).product();
        let noun_choices: u128 = targets
            .iter()
            .map(|c| self.nouns[&c].len() as u128)
            .product();
        let mut total = perms * noun_choices * (self.verbs.len() * self.templates.len()) as u128;
        if targets.iter().all(|c| !self.fused[&c].is_empty()) {
            let fused_choices: u128 = targets
                .iter()
                .map(|c| self.fused[&c].len() as u128)
                .product();
            total += perms * fused_choices * self.fused_templates.len() as u128;
        }
        total
    }

    pub fn parse(&self, text: &str) -> Result<ParsedPrompt> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Empty("prompt text".into()));
        }
        let mut spans = Vec::new();
        let mut unmatched = Vec::new();
        let mut targets = LabelSet::empty();
        let mut i = 0;
        while i < tokens.len() {
            let max = self.longest.min(tokens.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|n| self.lexicon.get(&tokens[i..i + n]).map(|&c| (n, c)));
            match hit {
                Some((n, c)) => {
                    spans.push(MatchedSpan {
                        start: i,
                        end: i + n,
                        category: c,
                    });
                    targets.insert(c);
                    i += n;
                }
                None => {
                    if !self.stopwords.contains(&tokens[i]) {
                        unmatched.push(tokens[i].clone());
                    }
                    i += 1;
                }
            }
        }
        if targets.is_empty() {
            return Err(Error::NoDistortionTerms { unmatched });
        }
        Ok(ParsedPrompt {
            targets,
            matched_spans: spans,
            unmatched_tokens: unmatched,
        })
    }

    pub fn request(
        &self,
        targets: LabelSet,
        mode: PromptMode,
        style: PromptStyle,
        rng: &mut SeededRng,
    ) -> Result<RestorationRequest> {
        Ok(RestorationRequest {
            targets,
            mode,
            surface_text: self.render(targets, style, rng)?,
        })
    }
}

/// Renders with the builtin grammar.
pub fn render_prompt(targets: LabelSet, style: PromptStyle, rng: &mut SeededRng) -> Result<String> {
    PromptGrammar::builtin().render(targets, style, rng)
}

/// Parses with the builtin grammar.
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt> {
    PromptGrammar::builtin().parse(text)
}

/// Uniform draw from the strict, non-empty subsets of `applied`.
pub fn partial_targets(applied: LabelSet, rng: &mut SeededRng) -> Result<LabelSet> {
    if applied.len() < 2 {
        return Err(Error::invalid(format!(
            "partial request needs at least 2 applied labels, got {}",
            applied
        )));
    }
    let members = applied.to_vec();
    let n = members.len() as u32;
    // masks 1 ..= 2^n - 2 are exactly the strict non-empty subsets
    let mask = 1 + rng.index((1usize << n) - 2) as u32;
    Ok(members
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, &c)| c)
        .collect())
}

/// Non-empty targets disjoint from `applied`: size uniform on
/// `1..=min(3, |absent|)`, then a uniform subset of that size.
pub fn negative_targets(applied: LabelSet, rng: &mut SeededRng) -> Result<LabelSet> {
    negative_targets_within(applied, LabelSet::full(), rng)
}

/// [`negative_targets`] restricted to a vocabulary `universe`.
pub fn negative_targets_within(
    applied: LabelSet,
    universe: LabelSet,
    rng: &mut SeededRng,
) -> Result<LabelSet> {
    let absent = universe.difference(applied).to_vec();
    if absent.is_empty() {
        return Err(Error::invalid(
            "every category is applied; no negative target exists",
        ));
    }
    let k = 1 + rng.index(absent.len().min(3));
    Ok(rng
        .sample_indices(absent.len(), k)
        .into_iter()
        .map(|i| absent[i])
        .collect())
}

pub fn make_partial(applied: LabelSet, rng: &mut SeededRng) -> Result<RestorationRequest> {
    let targets = partial_targets(applied, rng)?;
    PromptGrammar::builtin().request(targets, PromptMode::Partial, PromptStyle::Fixed, rng)
}

pub fn make_negative(applied: LabelSet, rng: &mut SeededRng) -> Result<RestorationRequest> {
    let targets = negative_targets(applied, rng)?;
    PromptGrammar::builtin().request(targets, PromptMode::Negative, PromptStyle::Fixed, rng)
}
