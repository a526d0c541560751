//! Route configuration: XML route files, a fluent route builder, and the
//! scheme alias table that maps literal schemes onto registered components.
//!
//! Route file shape:
//!
//! ```xml
//! <routes>
//!   <aliases>
//!     <alias scheme="telegram" component="chatstub"/>
//!   </aliases>
//!   <route id="customer">
//!     <from uri="jason:DummyCustomerAgent"/>
//!     <setHeader headerName="channel"><constant>telegram</constant></setHeader>
//!     <transform ref="upper"/>
//!     <to uri="telegram:bots/sometoken?chatId=-364531"/>
//!   </route>
//! </routes>
//! ```
//!
//! A lone `<route>` element is also accepted as the document root.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::route::{ProcessorSpec, RouteDefinition};
use crate::term::Term;
use crate::uri::{is_valid_scheme, parse_uri, EndpointUri, UriError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: malformed XML: {message}")]
    XmlSyntax {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("line {line}, column {column}: route '{route}' has no <from>")]
    MissingFrom {
        route: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: route '{route}' has more than one <from>")]
    DuplicateFrom {
        route: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: route '{route}' has no <to>")]
    MissingTo {
        route: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: <{element}> is out of order; expected from, processors, then to")]
    OutOfOrder {
        element: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: unknown element <{name}>")]
    UnknownElement {
        name: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: <{element}> requires attribute '{attribute}'")]
    MissingAttribute {
        element: String,
        attribute: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: unexpected text {text:?}")]
    UnexpectedText {
        text: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: bad uri '{uri}': {source}")]
    BadUri {
        uri: String,
        line: u32,
        column: u32,
        source: UriError,
    },
    #[error("line {line}, column {column}: duplicate route id '{route}'")]
    DuplicateRouteId {
        route: String,
        line: u32,
        column: u32,
    },
    #[error("line {line}, column {column}: bad alias '{scheme}': {reason}")]
    BadAlias {
        scheme: String,
        reason: String,
        line: u32,
        column: u32,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn location(&self) -> Option<(u32, u32)> {
        use ConfigError::*;
        match self {
            XmlSyntax { line, column, .. }
            | MissingFrom { line, column, .. }
            | DuplicateFrom { line, column, .. }
            | MissingTo { line, column, .. }
            | OutOfOrder { line, column, .. }
            | UnknownElement { line, column, .. }
            | MissingAttribute { line, column, .. }
            | UnexpectedText { line, column, .. }
            | BadUri { line, column, .. }
            | DuplicateRouteId { line, column, .. }
            | BadAlias { line, column, .. } => Some((*line, *column)),
            Io { .. } => None,
        }
    }
}

/// Maps literal schemes (e.g. `mqtt`) onto the scheme of a registered
/// component (e.g. `mqttlite`). Unlisted schemes map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AliasError {
    #[error("'{0}' is not a valid scheme name")]
    InvalidScheme(String),
    #[error("scheme '{0}' is already aliased")]
    Duplicate(String),
}

impl AliasTable {
    pub fn new() -> AliasTable {
        AliasTable::default()
    }

    pub fn insert(&mut self, scheme: &str, component: &str) -> Result<(), AliasError> {
        for s in [scheme, component] {
            if !is_valid_scheme(s) {
                return Err(AliasError::InvalidScheme(s.to_string()));
            }
        }
        if self.entries.contains_key(scheme) {
            return Err(AliasError::Duplicate(scheme.to_string()));
        }
        self.entries
            .insert(scheme.to_string(), component.to_string());
        Ok(())
    }

    /// Adds every entry of `other`; entries already present here win.
    pub fn merge(&mut self, other: &AliasTable) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    pub fn resolve<'a>(&'a self, scheme: &'a str) -> &'a str {
        self.entries.get(scheme).map_or(scheme, String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rewrites every endpoint of the route to its component scheme.
    pub fn apply(&self, def: RouteDefinition) -> RouteDefinition {
        def.map_endpoints(|uri| {
            let target = self.resolve(uri.scheme());
            if target == uri.scheme() {
                Ok::<_, UriError>(uri)
            } else {
                uri.with_scheme(target)
            }
        })
        .expect("alias targets are valid schemes")
    }
}

/// Routes of one configuration source, in document order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RouteFile {
    pub routes: Vec<RouteDefinition>,
    pub aliases: AliasTable,
    pub source: Option<PathBuf>,
}

impl RouteFile {
    /// The routes with aliases applied, ready for the bus.
    pub fn resolved_routes(&self) -> Vec<RouteDefinition> {
        self.routes
            .iter()
            .cloned()
            .map(|d| self.aliases.apply(d))
            .collect()
    }

    /// `(route id, literal scheme)` for every endpoint whose scheme resolves
    /// to nothing in `known`.
    pub fn unresolved_schemes(&self, known: &[String]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for def in &self.routes {
            for uri in def.endpoints() {
                let target = self.aliases.resolve(uri.scheme());
                if !known.iter().any(|k| k == target) {
                    let entry = (def.route_id().to_string(), uri.scheme().to_string());
                    if !out.contains(&entry) {
                        out.push(entry);
                    }
                }
            }
        }
        out
    }
}

pub fn load_route_file(path: &Path) -> Result<RouteFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut file = parse_route_file(&text)?;
    file.source = Some(path.to_path_buf());
    Ok(file)
}

pub fn parse_routes_xml(text: &str) -> Result<Vec<RouteDefinition>, ConfigError> {
    parse_route_file(text).map(|f| f.routes)
}

pub fn parse_route_file(text: &str) -> Result<RouteFile, ConfigError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        ConfigError::XmlSyntax {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let parser = XmlParser { doc: &doc };
    let root = doc.root_element();
    let mut file = RouteFile::default();
    match root.tag_name().name() {
        "routes" => {
            for child in parser.children(root)? {
                match child.tag_name().name() {
                    "route" => {
                        let index = file.routes.len() + 1;
                        let def = parser.route(child, index)?;
                        if file.routes.iter().any(|r| r.route_id() == def.route_id()) {
                            let (line, column) = parser.pos(child);
                            return Err(ConfigError::DuplicateRouteId {
                                route: def.route_id().to_string(),
                                line,
                                column,
                            });
                        }
                        file.routes.push(def);
                    }
                    "aliases" => parser.aliases(child, &mut file.aliases)?,
                    _ => return Err(parser.unknown(child)),
                }
            }
        }
        "route" => file.routes.push(parser.route(root, 1)?),
        _ => return Err(parser.unknown(root)),
    }
    Ok(file)
}

struct XmlParser<'a, 'input> {
    doc: &'a roxmltree::Document<'input>,
}

type Node<'a, 'input> = roxmltree::Node<'a, 'input>;

impl<'a, 'input> XmlParser<'a, 'input> {
    fn pos(&self, node: Node<'_, '_>) -> (u32, u32) {
        let p = self.doc.text_pos_at(node.range().start);
        (p.row, p.col)
    }

    fn unknown(&self, node: Node<'_, '_>) -> ConfigError {
        let (line, column) = self.pos(node);
        ConfigError::UnknownElement {
            name: node.tag_name().name().to_string(),
            line,
            column,
        }
    }

    /// Element children; non-blank text is an error, comments are skipped.
    fn children(&self, node: Node<'a, 'input>) -> Result<Vec<Node<'a, 'input>>, ConfigError> {
        let mut out = Vec::new();
        for child in node.children() {
            if child.is_element() {
                out.push(child);
            } else if child.is_text() {
                let text = child.text().unwrap_or("");
                if !text.trim().is_empty() {
                    let (line, column) = self.pos(child);
                    return Err(ConfigError::UnexpectedText {
                        text: text.trim().to_string(),
                        line,
                        column,
                    });
                }
            }
        }
        Ok(out)
    }

    fn attribute(&self, node: Node<'a, 'input>, name: &str) -> Result<&'a str, ConfigError> {
        node.attribute(name).ok_or_else(|| {
            let (line, column) = self.pos(node);
            ConfigError::MissingAttribute {
                element: node.tag_name().name().to_string(),
                attribute: name.to_string(),
                line,
                column,
            }
        })
    }

    fn uri(&self, node: Node<'a, 'input>) -> Result<EndpointUri, ConfigError> {
        let text = self.attribute(node, "uri")?;
        self.leaf(node)?;
        parse_uri(text).map_err(|source| {
            let (line, column) = self.pos(node);
            ConfigError::BadUri {
                uri: text.to_string(),
                line,
                column,
                source,
            }
        })
    }

    fn leaf(&self, node: Node<'a, 'input>) -> Result<(), ConfigError> {
        match self.children(node)?.first() {
            Some(child) => Err(self.unknown(*child)),
            None => Ok(()),
        }
    }

    fn aliases(&self, node: Node<'a, 'input>, table: &mut AliasTable) -> Result<(), ConfigError> {
        for child in self.children(node)? {
            if child.tag_name().name() != "alias" {
                return Err(self.unknown(child));
            }
            let scheme = self.attribute(child, "scheme")?;
            let component = self.attribute(child, "component")?;
            self.leaf(child)?;
            table.insert(scheme, component).map_err(|e| {
                let (line, column) = self.pos(child);
                ConfigError::BadAlias {
                    scheme: scheme.to_string(),
                    reason: e.to_string(),
                    line,
                    column,
                }
            })?;
        }
        Ok(())
    }

    fn route(&self, node: Node<'a, 'input>, index: usize) -> Result<RouteDefinition, ConfigError> {
        let id = node
            .attribute("id")
            .filter(|s| !s.is_empty())
            .map_or_else(|| format!("route-{index}"), str::to_string);
        let mut from = None;
        let mut processors = Vec::new();
        let mut to = Vec::new();
        for child in self.children(node)? {
            let name = child.tag_name().name();
            let out_of_order = match name {
                "from" => from.is_some() || !processors.is_empty() || !to.is_empty(),
                "setHeader" | "transform" => from.is_none() || !to.is_empty(),
                "to" => from.is_none(),
                _ => return Err(self.unknown(child)),
            };
            if out_of_order {
                let (line, column) = self.pos(child);
                if name == "from" && from.is_some() {
                    return Err(ConfigError::DuplicateFrom {
                        route: id,
                        line,
                        column,
                    });
                }
                if from.is_none() {
                    return Err(ConfigError::MissingFrom {
                        route: id,
                        line,
                        column,
                    });
                }
                return Err(ConfigError::OutOfOrder {
                    element: name.to_string(),
                    line,
                    column,
                });
            }
            match name {
                "from" => from = Some(self.uri(child)?),
                "to" => to.push(self.uri(child)?),
                "transform" => {
                    let r = self.attribute(child, "ref")?;
                    self.leaf(child)?;
                    processors.push(ProcessorSpec::Transform {
                        name: r.to_string(),
                    });
                }
                _ => processors.push(self.set_header(child)?),
            }
        }
        let (line, column) = self.pos(node);
        let from = from.ok_or_else(|| ConfigError::MissingFrom {
            route: id.clone(),
            line,
            column,
        })?;
        if to.is_empty() {
            return Err(ConfigError::MissingTo {
                route: id,
                line,
                column,
            });
        }
        Ok(RouteDefinition::new(id, from, processors, to).expect("id and to checked above"))
    }

    fn set_header(&self, node: Node<'a, 'input>) -> Result<ProcessorSpec, ConfigError> {
        let name = self.attribute(node, "headerName")?;
        let children = self.children(node)?;
        let constant = match children.as_slice() {
            [c] if c.tag_name().name() == "constant" => *c,
            [c, ..] if c.tag_name().name() != "constant" => return Err(self.unknown(*c)),
            [_, extra, ..] => return Err(self.unknown(*extra)),
            [c] => return Err(self.unknown(*c)),
            [] => {
                let (line, column) = self.pos(node);
                return Err(ConfigError::MissingAttribute {
                    element: "setHeader".into(),
                    attribute: "constant".into(),
                    line,
                    column,
                });
            }
        };
        let mut text = String::new();
        for child in constant.children() {
            if child.is_element() {
                return Err(self.unknown(child));
            }
            if let Some(t) = child.text() {
                text.push_str(t);
            }
        }
        Ok(ProcessorSpec::SetHeader {
            name: name.to_string(),
            value: constant_value(&text),
        })
    }
}

/// Interprets constant text: a valid term stays a term, anything else
/// becomes a string.
pub fn constant_value(text: &str) -> Term {
    Term::parse_or_string(text)
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders routes (and aliases, if any) as a route file that
/// [`parse_route_file`] reads back to the same definitions.
pub fn render_routes_xml(routes: &[RouteDefinition], aliases: &AliasTable) -> String {
    let mut out = String::from("<routes>\n");
    if !aliases.is_empty() {
        out.push_str("  <aliases>\n");
        for (scheme, component) in aliases.entries() {
            let _ = writeln!(
                out,
                "    <alias scheme=\"{}\" component=\"{}\"/>",
                escape_xml(scheme),
                escape_xml(component)
            );
        }
        out.push_str("  </aliases>\n");
    }
    for def in routes {
        let _ = writeln!(out, "  <route id=\"{}\">", escape_xml(def.route_id()));
        let _ = writeln!(
            out,
            "    <from uri=\"{}\"/>",
            escape_xml(&def.from().to_string())
        );
        for p in def.processors() {
            match p {
                ProcessorSpec::SetHeader { name, value } => {
                    let _ = writeln!(
                        out,
                        "    <setHeader headerName=\"{}\"><constant>{}</constant></setHeader>",
                        escape_xml(name),
                        escape_xml(&value.render())
                    );
                }
                ProcessorSpec::Transform { name } => {
                    let _ = writeln!(out, "    <transform ref=\"{}\"/>", escape_xml(name));
                }
            }
        }
        for uri in def.to() {
            let _ = writeln!(out, "    <to uri=\"{}\"/>", escape_xml(&uri.to_string()));
        }
        out.push_str("  </route>\n");
    }
    out.push_str("</routes>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuilderError {
    #[error("{0}")]
    OrderViolation(String),
    #[error("route '{route}' is incomplete: {missing}")]
    Incomplete { route: String, missing: String },
    #[error("bad uri '{uri}': {source}")]
    BadUri { uri: String, source: UriError },
    #[error("route id must not be empty")]
    EmptyId,
}

/// Fluent route construction: `from`, then any number of `set_header` and
/// `transform`, then one or more `to`. The first mistake is kept and
/// reported by [`RouteBuilder::build`].
#[derive(Debug, Clone)]
pub struct RouteBuilder {
    id: String,
    from: Option<EndpointUri>,
    processors: Vec<ProcessorSpec>,
    to: Vec<EndpointUri>,
    error: Option<BuilderError>,
}

impl RouteBuilder {
    pub fn new(id: impl Into<String>) -> RouteBuilder {
        RouteBuilder {
            id: id.into(),
            from: None,
            processors: Vec::new(),
            to: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, e: BuilderError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn parse(&mut self, uri: &str) -> Option<EndpointUri> {
        match parse_uri(uri) {
            Ok(u) => Some(u),
            Err(source) => {
                self.fail(BuilderError::BadUri {
                    uri: uri.to_string(),
                    source,
                });
                None
            }
        }
    }

    pub fn from(mut self, uri: &str) -> RouteBuilder {
        if self.from.is_some() || !self.processors.is_empty() || !self.to.is_empty() {
            self.fail(BuilderError::OrderViolation(
                "from() must come first and only once".into(),
            ));
        } else if let Some(u) = self.parse(uri) {
            self.from = Some(u);
        }
        self
    }

    fn processor(mut self, p: ProcessorSpec) -> RouteBuilder {
        if self.from.is_none() {
            self.fail(BuilderError::OrderViolation(
                "processor before from()".into(),
            ));
        } else if !self.to.is_empty() {
            self.fail(BuilderError::OrderViolation("processor after to()".into()));
        } else {
            self.processors.push(p);
        }
        self
    }

    pub fn set_header(self, name: impl Into<String>, value: Term) -> RouteBuilder {
        self.processor(ProcessorSpec::SetHeader {
            name: name.into(),
            value,
        })
    }

    pub fn transform(self, name: impl Into<String>) -> RouteBuilder {
        self.processor(ProcessorSpec::Transform { name: name.into() })
    }

    pub fn to(mut self, uri: &str) -> RouteBuilder {
        if self.from.is_none() {
            self.fail(BuilderError::OrderViolation("to() before from()".into()));
        } else if let Some(u) = self.parse(uri) {
            self.to.push(u);
        }
        self
    }

    pub fn build(self) -> Result<RouteDefinition, BuilderError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.id.is_empty() {
            return Err(BuilderError::EmptyId);
        }
        let from = self.from.ok_or_else(|| BuilderError::Incomplete {
            route: self.id.clone(),
            missing: "from".into(),
        })?;
        if self.to.is_empty() {
            return Err(BuilderError::Incomplete {
                route: self.id,
                missing: "to".into(),
            });
        }
        Ok(RouteDefinition::new(self.id, from, self.processors, self.to).expect("checked above"))
    }
}

/// Shorthand for [`constant_value`], reading like the builder DSL.
pub fn constant(text: &str) -> Term {
    constant_value(text)
}
