//! SEM graph structure: latents, indicators, and the anchoring that pins each
//! latent's scale and sign.
//!
//! Model-spec grammar (one declaration per line, `#` starts a comment):
//!
//! ```text
//! line      := decl? comment?
//! decl      := "latent" NAME ("parents:" NAMES)?
//!            | "indicator" NAME "parents:" NAMES "anchor"?
//!            | "options:" OPTION ("," OPTION)*
//! NAMES     := NAME ("," NAME)*
//! NAME      := [A-Za-z_][A-Za-z0-9_]*
//! OPTION    := "unanchored"
//! ```
//!
//! Names may be referenced before they are declared. An indicator marked
//! `anchor` has unit loading and zero intercept on its (sole) latent parent.

use std::collections::{HashMap, HashSet};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentSpec {
    pub name: String,
    pub parents: Vec<String>,
    pub exogenous: bool,
    pub anchor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorSpec {
    pub name: String,
    pub latent_parents: Vec<String>,
    pub anchored_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    pub latents: Vec<LatentSpec>,
    pub indicators: Vec<IndicatorSpec>,
    /// (parent latent, child latent)
    pub structural_edges: Vec<(String, String)>,
    /// (latent, indicator)
    pub measurement_edges: Vec<(String, String)>,
    /// Permits latents without an anchor indicator.
    pub unanchored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle(Vec<String>),
    UndefinedReference { from: String, name: String },
    ObservedParent { child: String, parent: String },
    LatentWithoutIndicator(String),
    IndicatorWithoutParent(String),
    MissingAnchor(String),
    InvalidAnchor { latent: String, indicator: String },
    ExogenousFlagMismatch(String),
    EdgeListMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(names) => write!(f, "cycle among latents {}", names.join(", ")),
            Violation::UndefinedReference { from, name } => {
                write!(f, "`{from}` references undefined name `{name}`")
            }
            Violation::ObservedParent { child, parent } => {
                write!(f, "observed variable `{parent}` is a parent of `{child}`")
            }
            Violation::LatentWithoutIndicator(l) => write!(f, "latent `{l}` has no indicator"),
            Violation::IndicatorWithoutParent(i) => {
                write!(f, "indicator `{i}` has no latent parent")
            }
            Violation::MissingAnchor(l) => write!(
                f,
                "latent `{l}` has no anchor indicator (set `options: unanchored` to allow)"
            ),
            Violation::InvalidAnchor { latent, indicator } => write!(
                f,
                "anchor `{indicator}` of `{latent}` must have `{latent}` as its sole parent"
            ),
            Violation::ExogenousFlagMismatch(l) => {
                write!(f, "latent `{l}`: exogenous flag disagrees with its parent list")
            }
            Violation::EdgeListMismatch => {
                write!(f, "edge lists disagree with the declared parent lists")
            }
        }
    }
}

/// Non-fatal finding: a latent with fewer than three indicators that have it
/// as their only parent, so the sufficient identifiability condition fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub latent: String,
    pub unique_indicators: usize,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "latent `{}` has {} unique indicator(s); three guarantee identifiability",
            self.latent, self.unique_indicators
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Index-based view of a validated graph, used by the sampler.
#[derive(Debug, Clone)]
pub struct Layout {
    pub latent_parents: Vec<Vec<usize>>,
    pub latent_children: Vec<Vec<usize>>,
    pub indicator_parents: Vec<Vec<usize>>,
    /// For each latent: (indicator index, position of the latent in that indicator's parent list).
    pub indicator_children: Vec<Vec<(usize, usize)>>,
    pub anchor: Vec<Option<usize>>,
    pub anchored: Vec<bool>,
    pub order: Vec<usize>,
}

impl ModelGraph {
    /// Builds a graph from declarations, deriving edge lists and exogenous flags.
    pub fn new(latents: Vec<LatentSpec>, indicators: Vec<IndicatorSpec>, unanchored: bool) -> Self {
        let mut latents = latents;
        for l in &mut latents {
            l.exogenous = l.parents.is_empty();
        }
        let structural_edges = latents
            .iter()
            .flat_map(|l| l.parents.iter().map(move |p| (p.clone(), l.name.clone())))
            .collect();
        let measurement_edges = indicators
            .iter()
            .flat_map(|i| i.latent_parents.iter().map(move |p| (p.clone(), i.name.clone())))
            .collect();
        ModelGraph {
            latents,
            indicators,
            structural_edges,
            measurement_edges,
            unanchored,
        }
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latents.iter().position(|l| l.name == name)
    }

    pub fn indicator_index(&self, name: &str) -> Option<usize> {
        self.indicators.iter().position(|i| i.name == name)
    }

    pub fn indicator_names(&self) -> Vec<String> {
        self.indicators.iter().map(|i| i.name.clone()).collect()
    }

    pub fn latent_names(&self) -> Vec<String> {
        self.latents.iter().map(|l| l.name.clone()).collect()
    }

    /// Canonical text form; `parse_model_spec(g.to_spec_string())` returns `g`.
    pub fn to_spec_string(&self) -> String {
        let mut out = String::new();
        for l in &self.latents {
            out.push_str("latent ");
            out.push_str(&l.name);
            if !l.parents.is_empty() {
                out.push_str(" parents: ");
                out.push_str(&l.parents.join(", "));
            }
            out.push('\n');
        }
        for i in &self.indicators {
            out.push_str("indicator ");
            out.push_str(&i.name);
            out.push_str(" parents: ");
            out.push_str(&i.latent_parents.join(", "));
            if i.anchored_to.is_some() {
                out.push_str(" anchor");
            }
            out.push('\n');
        }
        if self.unanchored {
            out.push_str("options: unanchored\n");
        }
        out
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_spec_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Index layout; fails unless the graph validates.
    pub fn layout(&self) -> Result<Layout> {
        let report = validate_graph(self);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidGraph(v.to_string()));
        }
        let lidx: HashMap<&str, usize> = self
            .latents
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let latent_parents: Vec<Vec<usize>> = self
            .latents
            .iter()
            .map(|l| l.parents.iter().map(|p| lidx[p.as_str()]).collect())
            .collect();
        let mut latent_children = vec![Vec::new(); self.latents.len()];
        for (c, ps) in latent_parents.iter().enumerate() {
            for &p in ps {
                latent_children[p].push(c);
            }
        }
        let indicator_parents: Vec<Vec<usize>> = self
            .indicators
            .iter()
            .map(|i| i.latent_parents.iter().map(|p| lidx[p.as_str()]).collect())
            .collect();
        let mut indicator_children = vec![Vec::new(); self.latents.len()];
        for (j, ps) in indicator_parents.iter().enumerate() {
            for (pos, &p) in ps.iter().enumerate() {
                indicator_children[p].push((j, pos));
            }
        }
        let anchor = self
            .latents
            .iter()
            .map(|l| l.anchor.as_ref().and_then(|a| self.indicator_index(a)))
            .collect();
        let anchored = self.indicators.iter().map(|i| i.anchored_to.is_some()).collect();
        let order = topological_order(self)?
            .iter()
            .map(|n| lidx[n.as_str()])
            .collect();
        Ok(Layout {
            latent_parents,
            latent_children,
            indicator_parents,
            indicator_children,
            anchor,
            anchored,
            order,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Colon,
    Comma,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<(Token, usize)>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == ':' {
            tokens.push((Token::Colon, i + 1));
            i += 1;
        } else if c == ',' {
            tokens.push((Token::Comma, i + 1));
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push((Token::Word(chars[start..i].iter().collect()), start + 1));
        } else {
            return Err(Error::Syntax {
                line: line_no,
                column: i + 1,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(tokens)
}

struct LineParser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    line: usize,
    end_column: usize,
}

impl LineParser {
    fn err(&self, message: impl Into<String>) -> Error {
        let column = self
            .tokens
            .get(self.pos)
            .map(|t| t.1)
            .unwrap_or(self.end_column);
        Error::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn name(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Token::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn keyword_with_colon(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Token::Word(w)) if w == kw => self.pos += 1,
            _ => return Err(self.err(format!("expected `{kw}:`"))),
        }
        match self.peek() {
            Some(Token::Colon) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err("expected `:`")),
        }
    }

    fn name_list(&mut self) -> Result<Vec<String>> {
        let mut names = vec![self.name("a name")?];
        while let Some(Token::Comma) = self.peek() {
            self.pos += 1;
            names.push(self.name("a name after `,`")?);
        }
        Ok(names)
    }

    fn finish(&self) -> Result<()> {
        if self.pos < self.tokens.len() {
            Err(self.err("unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

fn is_keyword(name: &str) -> bool {
    matches!(name, "latent" | "indicator" | "parents" | "anchor" | "options")
}

/// Parses a model-spec document into a graph with anchors resolved.
pub fn parse_model_spec(text: &str) -> Result<ModelGraph> {
    let mut latents: Vec<LatentSpec> = Vec::new();
    let mut indicators: Vec<(IndicatorSpec, bool, usize)> = Vec::new();
    let mut unanchored = false;
    let mut seen = HashSet::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let tokens = tokenize(raw, line)?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser {
            tokens,
            pos: 0,
            line,
            end_column: raw.chars().count() + 1,
        };
        let head = p.name("`latent`, `indicator` or `options:`")?;
        match head.as_str() {
            "latent" => {
                let name = p.name("a latent name")?;
                if is_keyword(&name) {
                    return Err(p.err(format!("`{name}` is a reserved word")));
                }
                let parents = if p.peek().is_some() {
                    p.keyword_with_colon("parents")?;
                    p.name_list()?
                } else {
                    Vec::new()
                };
                p.finish()?;
                if !seen.insert(name.clone()) {
                    return Err(Error::DuplicateName(name));
                }
                latents.push(LatentSpec {
                    exogenous: parents.is_empty(),
                    name,
                    parents,
                    anchor: None,
                });
            }
            "indicator" => {
                let name = p.name("an indicator name")?;
                if is_keyword(&name) {
                    return Err(p.err(format!("`{name}` is a reserved word")));
                }
                p.keyword_with_colon("parents")?;
                let parents = p.name_list()?;
                let anchor = match p.peek() {
                    Some(Token::Word(w)) if w == "anchor" => {
                        p.pos += 1;
                        true
                    }
                    _ => false,
                };
                p.finish()?;
                if !seen.insert(name.clone()) {
                    return Err(Error::DuplicateName(name));
                }
                indicators.push((
                    IndicatorSpec {
                        name,
                        latent_parents: parents,
                        anchored_to: None,
                    },
                    anchor,
                    line,
                ));
            }
            "options" => {
                match p.peek() {
                    Some(Token::Colon) => p.pos += 1,
                    _ => return Err(p.err("expected `:` after `options`")),
                }
                for opt in p.name_list()? {
                    match opt.as_str() {
                        "unanchored" => unanchored = true,
                        other => {
                            p.pos -= 1;
                            return Err(p.err(format!("unknown option `{other}`")));
                        }
                    }
                }
                p.finish()?;
            }
            other => {
                p.pos = 0;
                return Err(p.err(format!("unknown declaration `{other}`")));
            }
        }
    }

    if latents.is_empty() {
        return Err(Error::NoLatents);
    }

    let latent_names: HashSet<&str> = latents.iter().map(|l| l.name.as_str()).collect();
    let indicator_names: HashSet<&str> = indicators.iter().map(|i| i.0.name.as_str()).collect();
    let known = |n: &str| latent_names.contains(n) || indicator_names.contains(n);
    for l in &latents {
        if let Some(bad) = l.parents.iter().find(|p| !known(p)) {
            return Err(Error::UndefinedName(bad.clone()));
        }
    }
    for (i, _, _) in &indicators {
        if let Some(bad) = i.latent_parents.iter().find(|p| !known(p)) {
            return Err(Error::UndefinedName(bad.clone()));
        }
    }

    let mut out_indicators = Vec::with_capacity(indicators.len());
    for (mut spec, anchor, line) in indicators {
        if anchor {
            let target = spec.latent_parents[0].clone();
            if let Some(l) = latents.iter_mut().find(|l| l.name == target) {
                if let Some(prev) = &l.anchor {
                    return Err(Error::Syntax {
                        line,
                        column: 1,
                        message: format!("latent `{target}` already anchored by `{prev}`"),
                    });
                }
                l.anchor = Some(spec.name.clone());
            }
            spec.anchored_to = Some(target);
        }
        out_indicators.push(spec);
    }

    Ok(ModelGraph::new(latents, out_indicators, unanchored))
}

/// Checks every structural invariant; never fails, returns findings instead.
pub fn validate_graph(graph: &ModelGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let latent_set: HashSet<&str> = graph.latents.iter().map(|l| l.name.as_str()).collect();
    let indicator_set: HashSet<&str> = graph.indicators.iter().map(|i| i.name.as_str()).collect();

    let check_ref = |from: &str, name: &str, report: &mut ValidationReport| -> bool {
        if latent_set.contains(name) {
            true
        } else {
            if indicator_set.contains(name) {
                report.violations.push(Violation::ObservedParent {
                    child: from.to_string(),
                    parent: name.to_string(),
                });
            } else {
                report.violations.push(Violation::UndefinedReference {
                    from: from.to_string(),
                    name: name.to_string(),
                });
            }
            false
        }
    };

    for l in &graph.latents {
        for p in &l.parents {
            check_ref(&l.name, p, &mut report);
        }
        if l.exogenous != l.parents.is_empty() {
            report
                .violations
                .push(Violation::ExogenousFlagMismatch(l.name.clone()));
        }
    }
    for i in &graph.indicators {
        if i.latent_parents.is_empty() {
            report
                .violations
                .push(Violation::IndicatorWithoutParent(i.name.clone()));
        }
        for p in &i.latent_parents {
            check_ref(&i.name, p, &mut report);
        }
    }

    let derived = ModelGraph::new(graph.latents.clone(), graph.indicators.clone(), graph.unanchored);
    if derived.structural_edges != graph.structural_edges
        || derived.measurement_edges != graph.measurement_edges
    {
        report.violations.push(Violation::EdgeListMismatch);
    }

    if let Some(cycle) = find_cycle(graph) {
        report.violations.push(Violation::Cycle(cycle));
    }

    for l in &graph.latents {
        let children: Vec<&IndicatorSpec> = graph
            .indicators
            .iter()
            .filter(|i| i.latent_parents.contains(&l.name))
            .collect();
        if children.is_empty() {
            report
                .violations
                .push(Violation::LatentWithoutIndicator(l.name.clone()));
        }
        match &l.anchor {
            Some(a) => {
                let ok = graph.indicators.iter().any(|i| {
                    &i.name == a
                        && i.latent_parents.len() == 1
                        && i.latent_parents[0] == l.name
                        && i.anchored_to.as_deref() == Some(l.name.as_str())
                });
                if !ok {
                    report.violations.push(Violation::InvalidAnchor {
                        latent: l.name.clone(),
                        indicator: a.clone(),
                    });
                }
            }
            None if !graph.unanchored => {
                report.violations.push(Violation::MissingAnchor(l.name.clone()))
            }
            None => {}
        }
        let unique = children.iter().filter(|i| i.latent_parents.len() == 1).count();
        if unique < 3 {
            report.warnings.push(Warning {
                latent: l.name.clone(),
                unique_indicators: unique,
            });
        }
    }
    for i in &graph.indicators {
        if let Some(t) = &i.anchored_to {
            let consistent = i.latent_parents.len() == 1
                && &i.latent_parents[0] == t
                && graph
                    .latents
                    .iter()
                    .any(|l| &l.name == t && l.anchor.as_deref() == Some(i.name.as_str()));
            if !consistent {
                report.violations.push(Violation::InvalidAnchor {
                    latent: t.clone(),
                    indicator: i.name.clone(),
                });
            }
        }
    }
    report.violations.dedup();
    report
}

fn find_cycle(graph: &ModelGraph) -> Option<Vec<String>> {
    let n = graph.latents.len();
    let idx: HashMap<&str, usize> = graph
        .latents
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();
    let parents: Vec<Vec<usize>> = graph
        .latents
        .iter()
        .map(|l| l.parents.iter().filter_map(|p| idx.get(p.as_str()).copied()).collect())
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut mark = vec![0u8; n];
    let mut stack = Vec::new();
    fn visit(
        v: usize,
        parents: &[Vec<usize>],
        mark: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        mark[v] = 1;
        stack.push(v);
        for &p in &parents[v] {
            if mark[p] == 1 {
                let start = stack.iter().position(|&s| s == p).unwrap_or(0);
                return Some(stack[start..].to_vec());
            }
            if mark[p] == 0 {
                if let Some(c) = visit(p, parents, mark, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        mark[v] = 2;
        None
    }
    for v in 0..n {
        if mark[v] == 0 {
            if let Some(c) = visit(v, &parents, &mut mark, &mut stack) {
                return Some(c.into_iter().map(|i| graph.latents[i].name.clone()).collect());
            }
        }
    }
    None
}

/// Latent names with every latent after all of its parents; ties go to
/// declaration order.
pub fn topological_order(graph: &ModelGraph) -> Result<Vec<String>> {
    let n = graph.latents.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let placed_name = |placed: &[bool], name: &str| {
        graph
            .latents
            .iter()
            .position(|l| l.name == name)
            .map(|k| placed[k])
            // non-latent parents are validation errors, not ordering constraints
            .unwrap_or(true)
    };
    while order.len() < n {
        let next = (0..n).find(|&k| {
            !placed[k] && graph.latents[k].parents.iter().all(|p| placed_name(&placed, p))
        });
        match next {
            Some(k) => {
                placed[k] = true;
                order.push(graph.latents[k].name.clone());
            }
            None => {
                let rest: Vec<String> = (0..n)
                    .filter(|&k| !placed[k])
                    .map(|k| graph.latents[k].name.clone())
                    .collect();
                return Err(Error::Cycle(rest.join(", ")));
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DEMOCRACY: &str = "\
# industrialization and political democratization
latent IL
latent PDL parents: IL
indicator Y1 parents: IL anchor
indicator Y2 parents: IL
indicator Y3 parents: IL
indicator Y4 parents: PDL anchor
indicator Y5 parents: PDL
indicator Y6 parents: PDL
indicator Y7 parents: PDL
";

    #[test]
    fn parses_two_factor_model() {
        let g = parse_model_spec(DEMOCRACY).unwrap();
        assert_eq!(g.latents.len(), 2);
        assert_eq!(g.indicators.len(), 7);
        assert_eq!(g.structural_edges, vec![("IL".to_string(), "PDL".to_string())]);
        assert_eq!(g.latents[0].anchor.as_deref(), Some("Y1"));
        assert_eq!(g.latents[1].anchor.as_deref(), Some("Y4"));
        assert!(g.latents[0].exogenous);
        assert!(!g.latents[1].exogenous);
        let report = validate_graph(&g);
        assert!(report.violations.is_empty());
        assert!(report.warnings.is_empty());
        assert_eq!(topological_order(&g).unwrap(), vec!["IL", "PDL"]);
    }

    #[test]
    fn empty_document_has_no_latents() {
        assert!(matches!(parse_model_spec(""), Err(Error::NoLatents)));
        assert!(matches!(parse_model_spec("# nothing\n\n"), Err(Error::NoLatents)));
    }

    #[test]
    fn reports_syntax_position() {
        let err = parse_model_spec("latent A\nindicator Y parent: A\n").unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 13);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_model_spec("latent A $\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, column: 10, .. }));
    }

    #[test]
    fn undefined_and_duplicate_names() {
        let err = parse_model_spec("latent A parents: B\nindicator Y parents: A anchor\n").unwrap_err();
        assert!(matches!(err, Error::UndefinedName(n) if n == "B"));
        let err = parse_model_spec("latent A\nlatent A\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateName(n) if n == "A"));
        let err = parse_model_spec("latent A\nindicator A parents: A\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateName(_)));
    }

    #[test]
    fn cycle_is_a_violation() {
        let g = parse_model_spec(
            "latent A parents: B\nlatent B parents: A\n\
             indicator Y1 parents: A anchor\nindicator Y2 parents: B anchor\n",
        )
        .unwrap();
        let report = validate_graph(&g);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Cycle(_))));
        assert!(topological_order(&g).is_err());
    }

    #[test]
    fn two_indicator_latent_warns() {
        let g = parse_model_spec(
            "latent A\nlatent B parents: A\n\
             indicator Y1 parents: A anchor\nindicator Y2 parents: A\nindicator Y3 parents: A\n\
             indicator Y4 parents: B anchor\nindicator Y5 parents: B\n",
        )
        .unwrap();
        let report = validate_graph(&g);
        assert!(report.violations.is_empty());
        assert_eq!(
            report.warnings,
            vec![Warning {
                latent: "B".into(),
                unique_indicators: 2
            }]
        );
    }

    #[test]
    fn missing_anchor_requires_option() {
        let text = "latent A\nindicator Y1 parents: A\n";
        let g = parse_model_spec(text).unwrap();
        assert!(validate_graph(&g)
            .violations
            .contains(&Violation::MissingAnchor("A".into())));
        let g = parse_model_spec(&format!("{text}options: unanchored\n")).unwrap();
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn anchor_with_two_parents_is_invalid() {
        let g = parse_model_spec(
            "latent A\nlatent B\nindicator Y1 parents: A, B anchor\nindicator Y2 parents: B anchor\n",
        )
        .unwrap();
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::InvalidAnchor { indicator, .. } if indicator == "Y1")));
    }

    #[test]
    fn indicator_as_parent_is_a_violation() {
        let g = parse_model_spec(
            "latent A\nlatent B parents: Y1\nindicator Y1 parents: A anchor\nindicator Y2 parents: B anchor\n",
        )
        .unwrap();
        let report = validate_graph(&g);
        assert!(report.violations.contains(&Violation::ObservedParent {
            child: "B".into(),
            parent: "Y1".into()
        }));
    }

    #[test]
    fn tie_break_is_declaration_order() {
        let g = parse_model_spec(
            "latent X1\nlatent X2\nindicator Y1 parents: X1 anchor\nindicator Y2 parents: X2 anchor\n",
        )
        .unwrap();
        assert_eq!(topological_order(&g).unwrap(), vec!["X1", "X2"]);
        // children declared before parents still come out after them
        let g = parse_model_spec(
            "latent C parents: A, B\nlatent B parents: A\nlatent A\n\
             indicator Y1 parents: A anchor\nindicator Y2 parents: B anchor\nindicator Y3 parents: C anchor\n",
        )
        .unwrap();
        assert_eq!(topological_order(&g).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn canonical_round_trip() {
        let g = parse_model_spec(DEMOCRACY).unwrap();
        let text = g.to_spec_string();
        assert_eq!(parse_model_spec(&text).unwrap(), g);
        assert_eq!(parse_model_spec(&text).unwrap().to_spec_string(), text);
    }

    #[test]
    fn layout_indices() {
        let g = parse_model_spec(DEMOCRACY).unwrap();
        let lay = g.layout().unwrap();
        assert_eq!(lay.latent_parents, vec![vec![], vec![0]]);
        assert_eq!(lay.latent_children, vec![vec![1], vec![]]);
        assert_eq!(lay.anchor, vec![Some(0), Some(3)]);
        assert_eq!(lay.indicator_children[1].len(), 4);
        assert_eq!(lay.order, vec![0, 1]);
    }
}
