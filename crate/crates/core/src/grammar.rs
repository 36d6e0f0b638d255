//! Context-free scene grammar: symbols, rules and the rule-per-line text
//! format.
//!
//! A grammar derives scenes left to right: the root rule emits the room,
//! `SCENE` introduces anchor objects together with their non-terminals, and
//! each anchor non-terminal emits the objects it accounts for before closing
//! with `None`. Rule order is meaningful: it fixes the one-hot index space
//! and the category precedence used by the canonical parser.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scene::ROOM_CATEGORY;

/// Grammar-local terminal index. Index 0 is always the room terminal.
pub type TerminalId = usize;

/// Non-terminal symbols. Anchor non-terminals are written as the upper-case
/// name of their category (`BED` for `bed`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NonTerminal {
    Start,
    Scene,
    Anchor(TerminalId),
}

/// Right-hand-side symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Terminal(TerminalId),
    NoneToken,
    Nt(NonTerminal),
}

/// The four rule shapes the scene grammar uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// `S -> scene SCENE` — emits the room first.
    Root,
    /// `SCENE -> t T SCENE` — introduces an anchor object and its non-terminal.
    Intro,
    /// `T -> t [U] T` — an anchor non-terminal emits an object, optionally
    /// opening the object's own non-terminal.
    Emit,
    /// `T -> None` — closes a non-terminal.
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub kind: RuleKind,
    pub lhs: NonTerminal,
    pub rhs: Vec<Symbol>,
}

impl Rule {
    /// Terminal emitted by this rule, if any.
    pub fn emitted(&self) -> Option<TerminalId> {
        match self.rhs.first() {
            Some(Symbol::Terminal(t)) => Some(*t),
            _ => None,
        }
    }

    /// Non-terminals pushed by this rule, left to right.
    pub fn pushed(&self) -> impl Iterator<Item = NonTerminal> + '_ {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::Nt(n) => Some(*n),
            _ => None,
        })
    }

    /// The companion non-terminal of an emit rule (`BED -> sofa SOFA BED`).
    pub fn companion(&self) -> Option<NonTerminal> {
        if self.kind == RuleKind::Emit && self.rhs.len() == 3 {
            match self.rhs[1] {
                Symbol::Nt(n) => Some(n),
                _ => None,
            }
        } else {
            None
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("grammar has no root rule `S -> scene SCENE`")]
    MissingRoot,
    #[error("non-terminal `{0}` lacks a `None` rule")]
    MissingClose(String),
    #[error("non-terminal `{0}` has {1} `None` rules, expected exactly one")]
    DuplicateClose(String, usize),
    #[error("non-terminal `{0}` is not reachable from the start symbol")]
    Unreachable(String),
    #[error("rule {0} is malformed: {1}")]
    BadRule(usize, String),
}

/// A validated scene grammar. Construct through [`GrammarBuilder`] or
/// [`Grammar::from_text`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    terminals: Vec<String>,
    rules: Vec<Rule>,
}

impl Grammar {
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, idx: usize) -> &Rule {
        &self.rules[idx]
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    /// Index of the dummy rule used to pad sequences. It is the last index
    /// of the one-hot space and is not part of [`Grammar::rules`].
    pub fn padding_index(&self) -> usize {
        self.rules.len()
    }

    /// Width of the one-hot rule space (rules plus the padding rule).
    pub fn n_symbols(&self) -> usize {
        self.rules.len() + 1
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn terminal_id(&self, name: &str) -> Option<TerminalId> {
        self.terminals.iter().position(|t| t == name)
    }

    pub fn terminal_name(&self, id: TerminalId) -> &str {
        &self.terminals[id]
    }

    /// Whether the terminal owns a non-terminal (i.e. is an anchor).
    pub fn is_anchor(&self, t: TerminalId) -> bool {
        self.rules
            .iter()
            .any(|r| r.lhs == NonTerminal::Anchor(t))
    }

    pub fn anchors(&self) -> Vec<TerminalId> {
        let mut out: Vec<TerminalId> = (0..self.terminals.len())
            .filter(|&t| self.is_anchor(t))
            .collect();
        out.sort_unstable();
        out
    }

    /// Rule indices with the given left-hand side, in grammar order.
    pub fn rules_with_lhs(&self, lhs: NonTerminal) -> impl Iterator<Item = usize> + '_ {
        self.rules
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.lhs == lhs)
            .map(|(i, _)| i)
    }

    /// Rule indices that emit the given terminal, in grammar order. The
    /// first one defines the category's precedence.
    pub fn introducers(&self, t: TerminalId) -> Vec<usize> {
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.emitted() == Some(t))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn nonterminal_name(&self, nt: NonTerminal) -> String {
        match nt {
            NonTerminal::Start => "S".to_string(),
            NonTerminal::Scene => "SCENE".to_string(),
            NonTerminal::Anchor(t) => self.terminals[t].to_uppercase(),
        }
    }

    fn symbol_name(&self, s: &Symbol) -> String {
        match s {
            Symbol::Terminal(t) => self.terminals[*t].clone(),
            Symbol::NoneToken => "None".to_string(),
            Symbol::Nt(n) => self.nonterminal_name(*n),
        }
    }

    pub fn rule_text(&self, idx: usize) -> String {
        let r = &self.rules[idx];
        let rhs: Vec<String> = r.rhs.iter().map(|s| self.symbol_name(s)).collect();
        format!("{} -> {} ;", self.nonterminal_name(r.lhs), rhs.join(" "))
    }

    /// Canonical text serialization, one rule per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rules.len() {
            out.push_str(&self.rule_text(i));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text, in hex. Used to pin sequence dumps and
    /// checkpoints to the grammar that produced them.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{:02x}", b));
        }
        out
    }

    /// Parses the rule-per-line text format. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, GrammarError> {
        let mut b = GrammarBuilder::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let no_comment = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let body = no_comment.trim().trim_end_matches(';').trim();
            if body.is_empty() {
                continue;
            }
            let (lhs_raw, rhs_raw) = body.split_once("->").ok_or_else(|| GrammarError::Parse {
                line,
                msg: "expected `LHS -> sym sym ... ;`".to_string(),
            })?;
            let lhs = parse_nonterminal(lhs_raw.trim()).ok_or_else(|| GrammarError::Parse {
                line,
                msg: format!("`{}` is not a non-terminal", lhs_raw.trim()),
            })?;
            let tokens: Vec<&str> = rhs_raw.split_whitespace().collect();
            if tokens.is_empty() {
                return Err(GrammarError::Parse {
                    line,
                    msg: "empty right-hand side".to_string(),
                });
            }
            b.push_line(lhs, &tokens, line)?;
        }
        b.finish()
    }
}

fn parse_nonterminal(tok: &str) -> Option<RawNt> {
    if tok == "S" {
        return Some(RawNt::Start);
    }
    if tok == "SCENE" {
        return Some(RawNt::Scene);
    }
    if !tok.is_empty() && tok.chars().all(|c| c.is_uppercase() || c == '_' || c.is_numeric()) {
        return Some(RawNt::Anchor(tok.to_lowercase()));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum RawNt {
    Start,
    Scene,
    Anchor(String),
}

/// Incremental grammar construction with shape checking. Rules keep their
/// insertion order.
pub struct GrammarBuilder {
    terminals: Vec<String>,
    rules: Vec<Rule>,
}

impl Default for GrammarBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GrammarBuilder {
    pub fn new() -> Self {
        GrammarBuilder {
            terminals: alloc::vec![ROOM_CATEGORY.to_string()],
            rules: Vec::new(),
        }
    }

    pub fn terminal(&mut self, name: &str) -> TerminalId {
        match self.terminals.iter().position(|t| t == name) {
            Some(i) => i,
            None => {
                self.terminals.push(name.to_string());
                self.terminals.len() - 1
            }
        }
    }

    /// `S -> scene SCENE`.
    pub fn root(&mut self) {
        self.rules.push(Rule {
            kind: RuleKind::Root,
            lhs: NonTerminal::Start,
            rhs: alloc::vec![Symbol::Terminal(0), Symbol::Nt(NonTerminal::Scene)],
        });
    }

    /// `SCENE -> t T SCENE`.
    pub fn intro(&mut self, name: &str) -> TerminalId {
        let t = self.terminal(name);
        self.rules.push(Rule {
            kind: RuleKind::Intro,
            lhs: NonTerminal::Scene,
            rhs: alloc::vec![
                Symbol::Terminal(t),
                Symbol::Nt(NonTerminal::Anchor(t)),
                Symbol::Nt(NonTerminal::Scene),
            ],
        });
        t
    }

    /// `ANCHOR -> child ANCHOR`, or `ANCHOR -> child CHILD ANCHOR` when the
    /// child owns a non-terminal itself.
    pub fn emit(&mut self, anchor: &str, child: &str, child_has_nt: bool) {
        let a = self.terminal(anchor);
        let c = self.terminal(child);
        let mut rhs = alloc::vec![Symbol::Terminal(c)];
        if child_has_nt {
            rhs.push(Symbol::Nt(NonTerminal::Anchor(c)));
        }
        rhs.push(Symbol::Nt(NonTerminal::Anchor(a)));
        self.rules.push(Rule {
            kind: RuleKind::Emit,
            lhs: NonTerminal::Anchor(a),
            rhs,
        });
    }

    /// `NT -> None`.
    pub fn close(&mut self, nt: NonTerminal) {
        self.rules.push(Rule {
            kind: RuleKind::Close,
            lhs: nt,
            rhs: alloc::vec![Symbol::NoneToken],
        });
    }

    pub fn close_scene(&mut self) {
        self.close(NonTerminal::Scene);
    }

    pub fn close_anchor(&mut self, anchor: &str) {
        let a = self.terminal(anchor);
        self.close(NonTerminal::Anchor(a));
    }

    fn push_line(&mut self, lhs: RawNt, tokens: &[&str], line: usize) -> Result<(), GrammarError> {
        let err = |msg: String| GrammarError::Parse { line, msg };
        if tokens == ["None"] {
            let nt = match &lhs {
                RawNt::Start => {
                    return Err(err("start symbol cannot produce None".to_string()));
                }
                RawNt::Scene => NonTerminal::Scene,
                RawNt::Anchor(name) => NonTerminal::Anchor(self.terminal(name)),
            };
            self.rules.push(Rule {
                kind: RuleKind::Close,
                lhs: nt,
                rhs: alloc::vec![Symbol::NoneToken],
            });
            return Ok(());
        }
        match lhs {
            RawNt::Start => {
                if tokens != [ROOM_CATEGORY, "SCENE"] {
                    return Err(err("root rule must be `S -> scene SCENE`".to_string()));
                }
                self.root();
            }
            RawNt::Scene => {
                if tokens.len() != 3
                    || tokens[2] != "SCENE"
                    || tokens[1].to_lowercase() != tokens[0]
                    || parse_nonterminal(tokens[1]).is_none()
                    || !is_terminal_token(tokens[0])
                {
                    return Err(err(format!(
                        "SCENE rule must be `SCENE -> t T SCENE`, got `{}`",
                        tokens.join(" ")
                    )));
                }
                self.intro(tokens[0]);
            }
            RawNt::Anchor(anchor) => {
                let ok = match tokens.len() {
                    2 => {
                        is_terminal_token(tokens[0]) && tokens[1].to_lowercase() == anchor
                    }
                    3 => {
                        is_terminal_token(tokens[0])
                            && tokens[1].to_lowercase() == tokens[0]
                            && tokens[2].to_lowercase() == anchor
                    }
                    _ => false,
                };
                if !ok {
                    return Err(err(format!(
                        "emit rule must be `{0} -> t {0}` or `{0} -> t T {0}`, got `{1}`",
                        anchor.to_uppercase(),
                        tokens.join(" ")
                    )));
                }
                self.emit(&anchor, tokens[0], tokens.len() == 3);
            }
        }
        Ok(())
    }

    /// Validates rule shapes, `None` rules and reachability.
    pub fn finish(self) -> Result<Grammar, GrammarError> {
        let g = Grammar {
            terminals: self.terminals,
            rules: self.rules,
        };
        g.validate()?;
        Ok(g)
    }
}

fn is_terminal_token(tok: &str) -> bool {
    !tok.is_empty()
        && tok != "None"
        && tok
            .chars()
            .all(|c| c.is_lowercase() || c == '_' || c.is_numeric())
}

impl Grammar {
    fn validate(&self) -> Result<(), GrammarError> {
        if self
            .rules
            .iter()
            .filter(|r| r.kind == RuleKind::Root)
            .count()
            != 1
        {
            return Err(GrammarError::MissingRoot);
        }
        // Collect every non-terminal that appears anywhere.
        let mut nts: Vec<NonTerminal> = alloc::vec![NonTerminal::Scene];
        for r in &self.rules {
            if r.lhs != NonTerminal::Start && !nts.contains(&r.lhs) {
                nts.push(r.lhs);
            }
            for n in r.pushed() {
                if n != NonTerminal::Start && !nts.contains(&n) {
                    nts.push(n);
                }
            }
        }
        for nt in &nts {
            let closes = self
                .rules
                .iter()
                .filter(|r| r.kind == RuleKind::Close && r.lhs == *nt)
                .count();
            match closes {
                1 => {}
                0 => return Err(GrammarError::MissingClose(self.nonterminal_name(*nt))),
                n => {
                    return Err(GrammarError::DuplicateClose(
                        self.nonterminal_name(*nt),
                        n,
                    ))
                }
            }
        }
        // Reachability from S over pushed non-terminals.
        let mut reached = alloc::vec![NonTerminal::Start];
        let mut frontier = alloc::vec![NonTerminal::Start];
        while let Some(nt) = frontier.pop() {
            for r in self.rules.iter().filter(|r| r.lhs == nt) {
                for n in r.pushed() {
                    if !reached.contains(&n) {
                        reached.push(n);
                        frontier.push(n);
                    }
                }
            }
        }
        for nt in &nts {
            if !reached.contains(nt) {
                return Err(GrammarError::Unreachable(self.nonterminal_name(*nt)));
            }
        }
        // Shape sanity for each rule.
        for (i, r) in self.rules.iter().enumerate() {
            let bad = |msg: &str| GrammarError::BadRule(i, msg.to_string());
            match r.kind {
                RuleKind::Root => {
                    if r.lhs != NonTerminal::Start
                        || r.rhs
                            != alloc::vec![Symbol::Terminal(0), Symbol::Nt(NonTerminal::Scene)]
                    {
                        return Err(bad("root rule must be `S -> scene SCENE`"));
                    }
                }
                RuleKind::Intro => {
                    let ok = r.lhs == NonTerminal::Scene
                        && r.rhs.len() == 3
                        && matches!(
                            (&r.rhs[0], &r.rhs[1], &r.rhs[2]),
                            (
                                Symbol::Terminal(t),
                                Symbol::Nt(NonTerminal::Anchor(a)),
                                Symbol::Nt(NonTerminal::Scene)
                            ) if t == a
                        );
                    if !ok {
                        return Err(bad("intro rule must be `SCENE -> t T SCENE`"));
                    }
                }
                RuleKind::Emit => {
                    let anchor = match r.lhs {
                        NonTerminal::Anchor(a) => a,
                        _ => return Err(bad("emit rule must start from an anchor")),
                    };
                    let tail_ok = matches!(
                        r.rhs.last(),
                        Some(Symbol::Nt(NonTerminal::Anchor(a))) if *a == anchor
                    );
                    let head_ok = matches!(r.rhs.first(), Some(Symbol::Terminal(_)));
                    let mid_ok = match r.rhs.len() {
                        2 => true,
                        3 => matches!(
                            (&r.rhs[0], &r.rhs[1]),
                            (Symbol::Terminal(t), Symbol::Nt(NonTerminal::Anchor(a))) if t == a
                        ),
                        _ => false,
                    };
                    if !(tail_ok && head_ok && mid_ok) {
                        return Err(bad("emit rule must be `T -> t T` or `T -> t U T`"));
                    }
                }
                RuleKind::Close => {
                    if r.rhs != alloc::vec![Symbol::NoneToken] || r.lhs == NonTerminal::Start {
                        return Err(bad("close rule must be `T -> None`"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bedroom() -> Grammar {
        let mut b = GrammarBuilder::new();
        b.root();
        b.intro("bed");
        b.emit("bed", "bed", false);
        b.emit("bed", "dresser", false);
        b.close_anchor("bed");
        b.close_scene();
        b.finish().unwrap()
    }

    #[test]
    fn builder_produces_expected_text() {
        let g = bedroom();
        let expect = "S -> scene SCENE ;\n\
                      SCENE -> bed BED SCENE ;\n\
                      BED -> bed BED ;\n\
                      BED -> dresser BED ;\n\
                      BED -> None ;\n\
                      SCENE -> None ;\n";
        assert_eq!(g.to_text(), expect);
        assert_eq!(g.n_rules(), 6);
        assert_eq!(g.padding_index(), 6);
        assert_eq!(g.n_symbols(), 7);
        assert!(g.is_anchor(g.terminal_id("bed").unwrap()));
        assert!(!g.is_anchor(g.terminal_id("dresser").unwrap()));
    }

    #[test]
    fn text_roundtrip_preserves_rules_and_order() {
        let g = bedroom();
        let parsed = Grammar::from_text(&g.to_text()).unwrap();
        assert_eq!(g, parsed);
        assert_eq!(g.fingerprint(), parsed.fingerprint());
    }

    #[test]
    fn parses_published_style_snippet() {
        let text = "
            # bedroom fragment
            S -> scene SCENE ;
            SCENE -> bed  BED SCENE ;
            BED -> bed  BED ;
            BED -> lamp  BED ;
            BED -> sofa  SOFA  BED ;
            BED -> pillow  PILLOW  BED ;
            BED -> night_stand  BED ;
            BED -> dresser  BED ;
            BED -> None ;
            SCENE -> sofa SOFA SCENE ;
            SOFA -> sofa  SOFA ;
            SOFA -> pillow PILLOW  SOFA ;
            SOFA -> None ;
            SCENE -> pillow PILLOW SCENE ;
            PILLOW -> pillow PILLOW ;
            PILLOW -> None ;
            SCENE -> None ;
        ";
        let g = Grammar::from_text(text).unwrap();
        assert_eq!(g.n_rules(), 17);
        let dresser = g.terminal_id("dresser").unwrap();
        let intro = g.introducers(dresser);
        assert_eq!(intro.len(), 1);
        let r = g.rule(intro[0]);
        assert_eq!(r.kind, RuleKind::Emit);
        assert_eq!(r.lhs, NonTerminal::Anchor(g.terminal_id("bed").unwrap()));
        // Round trip modulo whitespace.
        let again = Grammar::from_text(&g.to_text()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "S -> scene SCENE ;\nSCENE -> None ;\nbed -> dresser BED ;";
        match Grammar::from_text(text) {
            Err(GrammarError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other),
        }
        // Emit under a non-matching tail non-terminal.
        let text = "S -> scene SCENE ;\nSCENE -> bed BED SCENE ;\nBED -> lamp SOFA ;\nBED -> None ;\nSCENE -> None ;";
        match Grammar::from_text(text) {
            Err(GrammarError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other),
        }
    }

    #[test]
    fn validation_catches_missing_close() {
        let text = "S -> scene SCENE ;\nSCENE -> bed BED SCENE ;\nBED -> bed BED ;\nSCENE -> None ;";
        assert_eq!(
            Grammar::from_text(text).unwrap_err(),
            GrammarError::MissingClose("BED".into())
        );
    }

    #[test]
    fn validation_catches_unreachable() {
        // SOFA only ever appears as its own lhs, never pushed.
        let text = "S -> scene SCENE ;\nSOFA -> sofa SOFA ;\nSOFA -> None ;\nSCENE -> None ;";
        assert_eq!(
            Grammar::from_text(text).unwrap_err(),
            GrammarError::Unreachable("SOFA".into())
        );
    }

    #[test]
    fn fingerprint_tracks_rule_order() {
        let g = bedroom();
        let mut b = GrammarBuilder::new();
        b.root();
        b.intro("bed");
        b.emit("bed", "dresser", false); // swapped with the self-repeat rule
        b.emit("bed", "bed", false);
        b.close_anchor("bed");
        b.close_scene();
        let g2 = b.finish().unwrap();
        assert_ne!(g.fingerprint(), g2.fingerprint());
    }
}
