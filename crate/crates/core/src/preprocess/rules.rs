//! Missing-value rules on layer attribute tables: derived imputations
//! (arithmetic formulas over other attributes) followed by guarded
//! fill rules. Only missing cells are ever written.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layer::{AttributeTable, SpatialLayer};

/// Rule set shipped for the Dutch neighbourhood, population-core and
/// energy-consumption attribute catalogues.
pub const REFERENCE_RULES: &str = include_str!("../../rules/reference.toml");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default)]
    pub derived: Vec<DerivedRule>,
    #[serde(default)]
    pub zero: Vec<ZeroRule>,
}

/// `target := formula` where the target is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRule {
    #[serde(default)]
    pub layer: Option<String>,
    pub target: String,
    pub formula: String,
}

/// If `guard` holds, set missing `targets` to `fill`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroRule {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub layer: Option<String>,
    pub guard: Guard,
    pub targets: Vec<String>,
    #[serde(default)]
    pub fill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub expr: String,
    pub op: GuardOp,
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuardOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "missing")]
    Missing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RuleReport {
    /// (layer, rule label, cells filled)
    pub applied: Vec<(String, String, usize)>,
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        let rs: RuleSet = toml::from_str(text).map_err(|e| Error::Config(format!("rule set: {e}")))?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn reference() -> Self {
        RuleSet::from_toml(REFERENCE_RULES).expect("shipped rule set is valid")
    }

    /// Parses every formula and rejects targets with conflicting fills.
    pub fn validate(&self) -> Result<()> {
        let mut fills: BTreeMap<(Option<&str>, &str), (String, Option<f64>)> = BTreeMap::new();
        for d in &self.derived {
            Expr::parse(&d.formula)?;
            let key = (d.layer.as_deref(), d.target.as_str());
            if let Some((prev, _)) = fills.insert(key, (format!("formula {}", d.formula), None)) {
                return Err(Error::Config(format!("target {} imputed by two formulas ({prev})", d.target)));
            }
        }
        for z in &self.zero {
            Expr::parse(&z.guard.expr)?;
            for t in &z.targets {
                let key = (z.layer.as_deref(), t.as_str());
                match fills.get(&key) {
                    Some((_, Some(f))) if *f == z.fill => {}
                    Some((what, _)) => {
                        return Err(Error::Config(format!("target {t} has conflicting fills ({what} vs {})", z.fill)))
                    }
                    None => {
                        fills.insert(key, (format!("fill {}", z.fill), Some(z.fill)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Applies the rules to every layer they address. Rules naming a layer
/// must find it; unscoped rules apply to each layer holding their target.
pub fn apply_missing_rules(layers: &mut [SpatialLayer], rules: &RuleSet) -> Result<RuleReport> {
    rules.validate()?;
    let mut report = RuleReport::default();
    for d in &rules.derived {
        let expr = Expr::parse(&d.formula)?;
        for layer in target_layers(layers, d.layer.as_deref(), std::slice::from_ref(&d.target))? {
            let n = apply_derived(&mut layer.attributes, &d.target, &expr)
                .map_err(|e| Error::Config(format!("layer {}: {e}", layer.name)))?;
            report.applied.push((layer.name.clone(), format!("{} = {}", d.target, d.formula), n));
        }
    }
    for (r, z) in rules.zero.iter().enumerate() {
        let guard = Expr::parse(&z.guard.expr)?;
        let label = z.name.clone().unwrap_or_else(|| format!("zero rule {}", r + 1));
        for layer in target_layers(layers, z.layer.as_deref(), &z.targets)? {
            let n = apply_zero(&mut layer.attributes, z, &guard)
                .map_err(|e| Error::Config(format!("layer {}, {label}: {e}", layer.name)))?;
            report.applied.push((layer.name.clone(), label.clone(), n));
        }
    }
    Ok(report)
}

fn target_layers<'a>(layers: &'a mut [SpatialLayer], scope: Option<&str>, targets: &[String]) -> Result<Vec<&'a mut SpatialLayer>> {
    let picked: Vec<&mut SpatialLayer> = match scope {
        Some(name) => {
            let v: Vec<_> = layers.iter_mut().filter(|l| l.name == name).collect();
            if v.is_empty() {
                return Err(Error::Config(format!("rule refers to unknown layer {name}")));
            }
            v
        }
        None => layers.iter_mut().filter(|l| targets.iter().any(|t| l.attributes.contains(t))).collect(),
    };
    if picked.is_empty() {
        return Err(Error::Config(format!("no layer holds rule target(s) {}", targets.join(", "))));
    }
    Ok(picked)
}

fn check_vars(table: &AttributeTable, expr: &Expr) -> Result<()> {
    for v in expr.variables() {
        table.numeric(&v).map_err(|_| Error::Config(format!("formula references absent numeric attribute {v}")))?;
    }
    Ok(())
}

fn eval_row(table: &AttributeTable, expr: &Expr, row: usize) -> Option<f64> {
    expr.eval(&|name| table.numeric(name).ok().and_then(|c| c[row]))
}

pub fn apply_derived(table: &mut AttributeTable, target: &str, expr: &Expr) -> Result<usize> {
    check_vars(table, expr)?;
    if !table.contains(target) {
        table.insert_numeric(target, vec![None; table.n_rows()])?;
    }
    table.numeric(target).map_err(|_| Error::Config(format!("target {target} is not numeric")))?;
    let values: Vec<Option<f64>> = (0..table.n_rows()).map(|i| eval_row(table, expr, i)).collect();
    let col = table.numeric_mut(target)?;
    let mut filled = 0;
    for (cell, v) in col.iter_mut().zip(values) {
        if cell.is_none() && v.is_some() {
            *cell = v;
            filled += 1;
        }
    }
    Ok(filled)
}

fn apply_zero(table: &mut AttributeTable, rule: &ZeroRule, guard: &Expr) -> Result<usize> {
    check_vars(table, guard)?;
    for t in &rule.targets {
        table.numeric(t).map_err(|_| Error::Config(format!("target {t} absent or not numeric")))?;
    }
    let holds: Vec<bool> = (0..table.n_rows())
        .map(|i| {
            let v = eval_row(table, guard, i);
            let x = rule.guard.value;
            match (rule.guard.op, v) {
                (GuardOp::Missing, v) => v.is_none(),
                (_, None) => false,
                (GuardOp::Eq, Some(v)) => v == x,
                (GuardOp::Le, Some(v)) => v <= x,
                (GuardOp::Lt, Some(v)) => v < x,
                (GuardOp::Ge, Some(v)) => v >= x,
                (GuardOp::Gt, Some(v)) => v > x,
            }
        })
        .collect();
    let mut filled = 0;
    for t in &rule.targets {
        let col = table.numeric_mut(t)?;
        for (cell, h) in col.iter_mut().zip(&holds) {
            if *h && cell.is_none() {
                *cell = Some(rule.fill);
                filled += 1;
            }
        }
    }
    Ok(filled)
}

/// Arithmetic over attribute names: `+ - * /`, unary minus, parentheses,
/// numeric literals.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { t: &tokens, i: 0, src };
        let e = p.expr()?;
        if p.i != tokens.len() {
            return Err(Error::Config(format!("unexpected trailing input in formula {src:?}")));
        }
        Ok(e)
    }

    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone())
                }
            }
            Expr::Neg(e) => e.collect(out),
            Expr::Bin(_, a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// `None` if a variable is missing or the result is not finite.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Option<f64> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(name) => lookup(name)?,
            Expr::Neg(e) => -e.eval(lookup)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(lookup)?, b.eval(lookup)?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    _ => a / b,
                }
            }
        };
        v.is_finite().then_some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "+-*/()".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| Error::Config(format!("bad number {s:?} in formula {src:?}")))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(Error::Config(format!("unexpected character {c:?} in formula {src:?}")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    t: &'a [Tok],
    i: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek_sym(&self) -> Option<char> {
        match self.t.get(self.i) {
            Some(Tok::Sym(c)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_sym() {
            self.i += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek_sym() {
            self.i += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        let tok = self.t.get(self.i).cloned();
        self.i += 1;
        match tok {
            Some(Tok::Num(x)) => Ok(Expr::Num(x)),
            Some(Tok::Ident(s)) => Ok(Expr::Var(s)),
            Some(Tok::Sym('-')) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Tok::Sym('(')) => {
                let e = self.expr()?;
                if self.peek_sym() != Some(')') {
                    return Err(Error::Config(format!("unbalanced parenthesis in formula {:?}", self.src)));
                }
                self.i += 1;
                Ok(e)
            }
            _ => Err(Error::Config(format!("malformed formula {:?}", self.src))),
        }
    }
}
