//! Code-token vocabularies, prompt templates and prefix tries.
//!
//! Code tokens are named `<CeID_l,w>` / `<SeID_l,w>` with 1-based level `l`;
//! level `L+1` carries the collision disambiguator. Token ids are assigned in
//! `(index type, level, word)` order, so comparing token-id paths of one index
//! type is the same as comparing code tuples.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::rqvae::{IndexType, ItemCodeTable};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Code {
        index_type: IndexType,
        level: usize,
        word: u32,
    },
    Indicator(IndexType),
}

impl TokenKind {
    pub fn name(&self) -> &'static str {
        match self {
            TokenKind::Code { .. } => "code",
            TokenKind::Indicator(_) => "indicator",
        }
    }
}

pub fn code_token_name(index_type: IndexType, level: usize, word: u32) -> String {
    format!("<{}_{level},{word}>", index_type.token_prefix())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    by_name: HashMap<String, TokenId>,
    by_code: HashMap<(IndexType, usize, u32), TokenId>,
}

/// One token for every `(type, level, word)` used by the tables, followed by
/// the indicator token of each type present.
pub fn build_vocabulary(tables: &[&ItemCodeTable]) -> Result<TokenVocab> {
    if tables.is_empty() {
        return Err(Error::Empty("code tables"));
    }
    let mut used: BTreeSet<(IndexType, usize, u32)> = BTreeSet::new();
    let mut types = BTreeSet::new();
    for table in tables {
        if !types.insert(table.index_type()) {
            return Err(Error::Duplicate(format!("{} code table", table.index_type())));
        }
        for (_, tuple) in table.iter() {
            for (l, &w) in tuple.iter().enumerate() {
                used.insert((table.index_type(), l + 1, w));
            }
        }
    }
    let mut vocab = TokenVocab {
        tokens: Vec::new(),
        kinds: Vec::new(),
        by_name: HashMap::new(),
        by_code: HashMap::new(),
    };
    for (index_type, level, word) in used {
        let id = vocab.push(code_token_name(index_type, level, word), TokenKind::Code { index_type, level, word });
        vocab.by_code.insert((index_type, level, word), id);
    }
    for t in types {
        vocab.push(t.indicator().to_string(), TokenKind::Indicator(t));
    }
    Ok(vocab)
}

impl TokenVocab {
    fn push(&mut self, name: String, kind: TokenKind) -> TokenId {
        let id = self.tokens.len() as TokenId;
        self.by_name.insert(name.clone(), id);
        self.tokens.push(name);
        self.kinds.push(kind);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        self.kinds.get(id as usize).copied()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.by_name.get(token).copied()
    }

    pub fn code_token(&self, index_type: IndexType, level: usize, word: u32) -> Option<TokenId> {
        self.by_code.get(&(index_type, level, word)).copied()
    }

    pub fn indicator(&self, index_type: IndexType) -> Option<TokenId> {
        self.id(index_type.indicator())
    }

    /// All code-token ids of one index type, ascending.
    pub fn code_tokens(&self, index_type: IndexType) -> Vec<TokenId> {
        (0..self.len() as TokenId)
            .filter(|&id| matches!(self.kinds[id as usize], TokenKind::Code { index_type: t, .. } if t == index_type))
            .collect()
    }

    /// The `code_len_total` token ids of one item.
    pub fn item_tokens(&self, table: &ItemCodeTable, item: &str) -> Result<Vec<TokenId>> {
        let tuple = table
            .get(item)
            .ok_or_else(|| Error::UnknownItem(item.to_string()))?;
        tuple
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                self.code_token(table.index_type(), l + 1, w)
                    .ok_or_else(|| Error::UnknownItem(format!("{item} (code not in vocabulary)")))
            })
            .collect()
    }

    /// Flat token stream of a history, items in order.
    pub fn history_tokens<S: AsRef<str>>(&self, table: &ItemCodeTable, history: &[S]) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(history.len() * table.code_len_total());
        for item in history {
            out.extend(self.item_tokens(table, item.as_ref())?);
        }
        Ok(out)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (name, kind) in self.tokens.iter().zip(&self.kinds) {
            writeln!(out, "{name}\t{}", kind.name())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub const TEMPLATES_RESOURCE: &str = include_str!("../resources/templates.txt");
pub const NUM_TEMPLATES: usize = 10;
const SLOT: &str = "{ }";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: usize,
    pub text: String,
}

static TEMPLATES: LazyLock<Vec<Template>> =
    LazyLock::new(|| parse_templates(TEMPLATES_RESOURCE).expect("bundled templates are well formed"));

pub fn parse_templates(text: &str) -> Result<Vec<Template>> {
    let here = Path::new("templates.txt");
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(here, n + 1, "expected `id<TAB>text`"))?;
        let id: usize = id.parse().map_err(|_| Error::format(here, n + 1, "bad template id"))?;
        if body.matches(SLOT).count() != 2 {
            return Err(Error::format(here, n + 1, "template needs exactly two `{ }` slots"));
        }
        out.push(Template { id, text: body.to_string() });
    }
    Ok(out)
}

pub fn templates() -> &'static [Template] {
    &TEMPLATES
}

pub fn template(id: usize) -> Result<&'static Template> {
    templates()
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::InvalidConfig(format!("template id {id} not in 1..={NUM_TEMPLATES}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Fills a template with the user id and the `item_<X><tokens>` history, then
/// appends the index-type instruction. The returned token stream holds only
/// code tokens, which is all a scorer consumes.
pub fn render_prompt<S: AsRef<str>>(
    user: &str,
    history: &[S],
    table: &ItemCodeTable,
    vocab: &TokenVocab,
    template_id: usize,
) -> Result<Prompt> {
    let template = template(template_id)?;
    let indicator = table.index_type().indicator();
    let mut items = Vec::with_capacity(history.len());
    let mut tokens = Vec::with_capacity(history.len() * table.code_len_total());
    for item in history {
        let ids = vocab.item_tokens(table, item.as_ref())?;
        let names: String = ids.iter().map(|&t| vocab.token(t).expect("own id")).collect();
        items.push(format!("item_{indicator}{names}"));
        tokens.extend(ids);
    }
    let history_text = items.join(" , ");

    let mut text = String::new();
    let mut rest = template.text.as_str();
    while let Some(at) = rest.find(SLOT) {
        let before = &rest[..at];
        text.push_str(before);
        let is_user_slot = before.len() >= 5 && before[before.len() - 5..].eq_ignore_ascii_case("user_");
        text.push_str(if is_user_slot { user } else { &history_text });
        rest = &rest[at + SLOT.len()..];
    }
    text.push_str(rest);
    text.push_str(&format!(" Given {indicator}, predict {indicator}."));
    Ok(Prompt { text, tokens })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    item: Option<String>,
}

/// Index of a node inside a [`PrefixTrie`].
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTrie {
    nodes: Vec<TrieNode>,
    depth: usize,
    terminals: usize,
}

pub fn build_prefix_trie(table: &ItemCodeTable, vocab: &TokenVocab) -> Result<PrefixTrie> {
    if table.is_empty() {
        return Err(Error::Empty("code table"));
    }
    let mut trie = PrefixTrie {
        nodes: vec![TrieNode::default()],
        depth: table.code_len_total(),
        terminals: 0,
    };
    for (item, tuple) in table.iter() {
        let mut node = 0;
        for tok in vocab.item_tokens(table, item)? {
            node = match trie.nodes[node].children.get(&tok) {
                Some(&next) => next,
                None => {
                    trie.nodes.push(TrieNode::default());
                    let next = trie.nodes.len() - 1;
                    trie.nodes[node].children.insert(tok, next);
                    next
                }
            };
        }
        if let Some(first) = &trie.nodes[node].item {
            return Err(Error::DuplicateCode {
                codes: tuple.to_vec(),
                first: first.clone(),
                second: item.to_string(),
            });
        }
        trie.nodes[node].item = Some(item.to_string());
        trie.terminals += 1;
    }
    Ok(trie)
}

impl PrefixTrie {
    pub const ROOT: NodeId = 0;

    /// Edges on every root-to-terminal path.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_terminals(&self) -> usize {
        self.terminals
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = (TokenId, NodeId)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        self.nodes[node].children.get(&token).copied()
    }

    pub fn item(&self, node: NodeId) -> Option<&str> {
        self.nodes[node].item.as_deref()
    }

    pub fn walk(&self, prefix: &[TokenId]) -> Result<NodeId> {
        prefix
            .iter()
            .try_fold(Self::ROOT, |node, &t| self.child(node, t).ok_or(Error::InvalidPrefix))
    }

    /// Tokens that extend `prefix`, ascending; empty at a terminal.
    pub fn allowed_next(&self, prefix: &[TokenId]) -> Result<Vec<TokenId>> {
        let node = self.walk(prefix)?;
        Ok(self.nodes[node].children.keys().copied().collect())
    }

    pub fn terminal(&self, path: &[TokenId]) -> Option<&str> {
        self.walk(path).ok().and_then(|n| self.item(n))
    }

    /// Every `(token path, item)` pair, in lexicographic path order.
    pub fn paths(&self) -> Vec<(Vec<TokenId>, &str)> {
        let mut out = Vec::with_capacity(self.terminals);
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(item) = self.item(node) {
                out.push((path.clone(), item));
            }
            for (t, child) in self.children(node).collect::<Vec<_>>().into_iter().rev() {
                let mut next = path.clone();
                next.push(t);
                stack.push((child, next));
            }
        }
        out
    }
}
