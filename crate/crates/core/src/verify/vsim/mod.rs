//! A small interpreter for combinational Verilog.
//!
//! Designs may use ANSI or non-ANSI port lists, `wire` declarations,
//! parameters and continuous `assign` statements. Testbenches may declare
//! `reg`/`wire` signals, instantiate one design module with named or
//! positional connections, and run a single `initial` block made of
//! blocking assignments, `#` delays, `if`/`else`, `$display` and `$finish`.
//! Anything sequential (`always`, `reg` outputs, sub-instances) is reported
//! as [`SimError::Unsupported`] rather than as a code defect.

mod expr;
mod lexer;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use expr::{BinaryOp, Decls, Env, Expr, Signal, UnaryOp};
use lexer::{lex, Tok, Token};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unsupported construct: {msg}")]
    Unsupported { line: usize, msg: String },
    #[error("elaboration: {0}")]
    Elaboration(String),
}

impl SimError {
    pub fn syntax(line: usize, msg: impl Into<String>) -> Self {
        SimError::Syntax { line, msg: msg.into() }
    }

    pub fn unsupported(line: usize, msg: impl Into<String>) -> Self {
        SimError::Unsupported { line, msg: msg.into() }
    }

    /// Code defects (as opposed to limits of this interpreter).
    pub fn is_code_error(&self) -> bool {
        !matches!(self, SimError::Unsupported { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Port {
    pub name: String,
    pub dir: Direction,
}

#[derive(Clone, Debug, PartialEq)]
struct Assign {
    target: String,
    expr: Expr,
}

/// An elaborated combinational module.
#[derive(Clone, Debug, PartialEq)]
pub struct Module {
    pub name: String,
    pub ports: Vec<Port>,
    decls: Decls,
    /// Assigns in dependency order.
    assigns: Vec<Assign>,
}

/// Gate-count estimate for the built-in synthesis proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellEstimate {
    pub cells: u64,
    pub depth: u32,
}

impl Module {
    pub fn signal(&self, name: &str) -> Option<Signal> {
        self.decls.get(name).copied()
    }

    /// Evaluates every net from the given input values.
    pub fn eval(&self, inputs: &Env) -> Env {
        let mut env = Env::new();
        for p in self.ports.iter().filter(|p| p.dir == Direction::Input) {
            let w = self.decls[&p.name].width;
            env.insert(p.name.clone(), inputs.get(&p.name).copied().unwrap_or(0) & expr::mask(w));
        }
        for a in &self.assigns {
            let w = self.decls[&a.target].width;
            let ctx = w.max(a.expr.width(&self.decls));
            let v = a.expr.eval(ctx, &env, &self.decls) & expr::mask(w);
            env.insert(a.target.clone(), v);
        }
        env
    }

    pub fn estimate(&self) -> CellEstimate {
        let mut arrival: BTreeMap<&str, u32> = BTreeMap::new();
        let mut cells = 0;
        for a in &self.assigns {
            let (c, d) = a.expr.cost(&self.decls);
            cells += c;
            let mut reads = Vec::new();
            a.expr.reads(&mut reads);
            let input_arrival = reads
                .iter()
                .map(|r| arrival.get(r.as_str()).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            arrival.insert(&a.target, input_arrival + d);
        }
        let depth = self
            .ports
            .iter()
            .filter(|p| p.dir == Direction::Output)
            .map(|p| arrival.get(p.name.as_str()).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        CellEstimate { cells, depth }
    }
}

/// Parses and elaborates every module in `src`.
pub fn parse_design(src: &str) -> Result<Vec<Module>, SimError> {
    let mut p = Parser::new(lex(src)?);
    let mut modules = Vec::new();
    while !p.at_end() {
        let raw = p.module(false)?;
        modules.push(elaborate(raw)?);
    }
    if modules.is_empty() {
        return Err(SimError::syntax(1, "no module found"));
    }
    let mut names = BTreeSet::new();
    for m in &modules {
        if !names.insert(m.name.clone()) {
            return Err(SimError::Elaboration(format!("module {} defined twice", m.name)));
        }
    }
    Ok(modules)
}

/// Result of running a testbench to completion or `$finish`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimRun {
    pub lines: Vec<String>,
    pub finished: bool,
}

/// Runs `testbench` against the modules in `design`.
pub fn simulate(design: &str, testbench: &str) -> Result<SimRun, SimError> {
    let modules = parse_design(design)?;
    let mut p = Parser::new(lex(testbench)?);
    let tb = p.module(true)?;
    if !p.at_end() {
        return Err(SimError::unsupported(p.line(), "more than one testbench module"));
    }
    Bench::new(tb, &modules)?.run()
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Default)]
struct RawModule {
    name: String,
    line: usize,
    ports: Vec<(String, Option<Direction>)>,
    decls: BTreeMap<String, (Signal, Option<Direction>, bool)>,
    assigns: Vec<(String, Expr, usize)>,
    instances: Vec<Instance>,
    initial: Vec<Stmt>,
}

#[derive(Debug)]
struct Instance {
    module: String,
    line: usize,
    named: Vec<(String, Option<Expr>)>,
    positional: Vec<Expr>,
}

#[derive(Clone, Debug)]
enum Stmt {
    Assign(String, Expr, usize),
    Delay,
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Display(String, Vec<Expr>),
    Finish,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    params: BTreeMap<String, u64>,
}

const RESERVED: [&str; 14] = [
    "always", "always_comb", "always_ff", "initial", "integer", "genvar", "generate", "function",
    "task", "case", "for", "while", "inout", "real",
];

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser { toks, pos: 0, params: BTreeMap::new() }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == w)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        let hit = self.is_punct(p);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn eat_word(&mut self, w: &str) -> bool {
        let hit = self.is_word(w);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn err(&self, msg: impl Into<String>) -> SimError {
        SimError::syntax(self.line(), msg)
    }

    fn expect(&mut self, p: &str) -> Result<(), SimError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{p}', found {}", self.describe())))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of file".into(),
            Some(Tok::Ident(s)) => format!("'{s}'"),
            Some(Tok::System(s)) => format!("'${s}'"),
            Some(Tok::Number { value, .. }) => format!("number {value}"),
            Some(Tok::Str(_)) => "string".into(),
            Some(Tok::Punct(p)) => format!("'{p}'"),
        }
    }

    fn ident(&mut self) -> Result<String, SimError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected identifier, found {}", self.describe()))),
        }
    }

    fn module(&mut self, testbench: bool) -> Result<RawModule, SimError> {
        if !self.eat_word("module") {
            return Err(self.err(format!("expected 'module', found {}", self.describe())));
        }
        let line = self.line();
        self.params.clear();
        let mut m = RawModule { name: self.ident()?, line, ..RawModule::default() };
        if self.eat_punct("#") {
            self.expect("(")?;
            loop {
                self.eat_word("parameter");
                self.param_assignment()?;
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect(")")?;
        }
        if self.eat_punct("(") && !self.eat_punct(")") {
            self.port_list(&mut m)?;
        }
        self.expect(";")?;
        loop {
            if self.at_end() {
                return Err(self.err("missing 'endmodule'"));
            }
            if self.eat_word("endmodule") {
                break;
            }
            self.item(&mut m, testbench)?;
        }
        Ok(m)
    }

    fn port_list(&mut self, m: &mut RawModule) -> Result<(), SimError> {
        let mut current: Option<(Direction, Signal)> = None;
        loop {
            let line = self.line();
            if let Some(dir) = self.direction()? {
                self.net_kind(line, true)?;
                current = Some((dir, self.range()?));
            }
            let name = self.ident()?;
            match current {
                Some((dir, sig)) => {
                    declare(m, &name, sig, Some(dir), line)?;
                    m.ports.push((name, Some(dir)));
                }
                None => m.ports.push((name, None)),
            }
            if self.eat_punct(")") {
                return Ok(());
            }
            self.expect(",")?;
        }
    }

    fn direction(&mut self) -> Result<Option<Direction>, SimError> {
        if self.eat_word("input") {
            Ok(Some(Direction::Input))
        } else if self.eat_word("output") {
            Ok(Some(Direction::Output))
        } else if self.is_word("inout") {
            Err(SimError::unsupported(self.line(), "inout ports"))
        } else {
            Ok(None)
        }
    }

    /// Optional `wire`/`logic`/`reg` and `signed` after a direction.
    fn net_kind(&mut self, line: usize, port: bool) -> Result<(), SimError> {
        if self.eat_word("reg") && port {
            return Err(SimError::unsupported(line, "reg outputs"));
        }
        let _ = self.eat_word("wire") || self.eat_word("logic");
        if self.eat_word("signed") {
            return Err(SimError::unsupported(line, "signed arithmetic"));
        }
        Ok(())
    }

    fn range(&mut self) -> Result<Signal, SimError> {
        if !self.eat_punct("[") {
            return Ok(Signal { width: 1, lsb: 0 });
        }
        let line = self.line();
        let hi = self.const_expr()?;
        self.expect(":")?;
        let lo = self.const_expr()?;
        self.expect("]")?;
        if hi < lo {
            return Err(SimError::unsupported(line, "ascending ranges"));
        }
        let width = hi - lo + 1;
        if width > 64 {
            return Err(SimError::unsupported(line, format!("{width}-bit signals")));
        }
        Ok(Signal { width: width as u32, lsb: lo as u32 })
    }

    fn const_expr(&mut self) -> Result<u64, SimError> {
        let line = self.line();
        let e = self.expr()?;
        let mut reads = Vec::new();
        e.reads(&mut reads);
        if let Some(r) = reads.first() {
            return Err(SimError::syntax(line, format!("'{r}' is not a constant")));
        }
        Ok(e.eval(64, &Env::new(), &Decls::new()))
    }

    fn param_assignment(&mut self) -> Result<(), SimError> {
        let _ = self.range()?;
        let name = self.ident()?;
        self.expect("=")?;
        let v = self.const_expr()?;
        self.params.insert(name, v);
        Ok(())
    }

    fn item(&mut self, m: &mut RawModule, testbench: bool) -> Result<(), SimError> {
        let line = self.line();
        let word = match self.peek() {
            Some(Tok::Ident(w)) => w.clone(),
            Some(Tok::Punct(";")) => {
                self.pos += 1;
                return Ok(());
            }
            _ => return Err(self.err(format!("unexpected {}", self.describe()))),
        };
        match word.as_str() {
            "input" | "output" | "inout" => {
                let dir = self.direction()?.expect("checked word");
                self.net_kind(line, true)?;
                let sig = self.range()?;
                loop {
                    let name = self.ident()?;
                    declare(m, &name, sig, Some(dir), line)?;
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect(";")
            }
            "wire" | "logic" | "reg" => {
                self.pos += 1;
                if word == "reg" && !testbench {
                    return Err(SimError::unsupported(line, "reg variables in a design"));
                }
                if self.eat_word("signed") {
                    return Err(SimError::unsupported(line, "signed arithmetic"));
                }
                let sig = self.range()?;
                loop {
                    let name = self.ident()?;
                    declare(m, &name, sig, None, line)?;
                    if self.eat_punct("=") {
                        let e = self.expr()?;
                        if testbench {
                            return Err(SimError::unsupported(line, "declaration initializers"));
                        }
                        m.assigns.push((name, e, line));
                    }
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect(";")
            }
            "assign" => {
                self.pos += 1;
                loop {
                    let line = self.line();
                    let target = self.ident()?;
                    if self.is_punct("[") {
                        return Err(SimError::unsupported(line, "assignment to a bit select"));
                    }
                    self.expect("=")?;
                    let e = self.expr()?;
                    m.assigns.push((target, e, line));
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect(";")
            }
            "parameter" | "localparam" => {
                self.pos += 1;
                loop {
                    self.param_assignment()?;
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect(";")
            }
            "initial" if testbench => {
                self.pos += 1;
                if !m.initial.is_empty() {
                    return Err(SimError::unsupported(line, "multiple initial blocks"));
                }
                m.initial = self.stmt()?;
                Ok(())
            }
            w if RESERVED.contains(&w) => Err(SimError::unsupported(line, format!("'{w}'"))),
            _ if matches!(self.peek_at(1), Some(Tok::Ident(_)) | Some(Tok::Punct("#"))) => {
                let inst = self.instance()?;
                m.instances.push(inst);
                Ok(())
            }
            w => Err(self.err(format!("unexpected '{w}'"))),
        }
    }

    fn instance(&mut self) -> Result<Instance, SimError> {
        let line = self.line();
        let module = self.ident()?;
        if self.is_punct("#") {
            return Err(SimError::unsupported(line, "parameter overrides"));
        }
        let _instance_name = self.ident()?;
        self.expect("(")?;
        let mut inst = Instance { module, line, named: Vec::new(), positional: Vec::new() };
        if !self.eat_punct(")") {
            loop {
                if self.eat_punct(".") {
                    let port = self.ident()?;
                    self.expect("(")?;
                    let e = if self.is_punct(")") { None } else { Some(self.expr()?) };
                    self.expect(")")?;
                    inst.named.push((port, e));
                } else {
                    inst.positional.push(self.expr()?);
                }
                if self.eat_punct(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        if !inst.named.is_empty() && !inst.positional.is_empty() {
            return Err(SimError::syntax(line, "mixed named and positional connections"));
        }
        self.expect(";")?;
        Ok(inst)
    }

    fn stmt(&mut self) -> Result<Vec<Stmt>, SimError> {
        let line = self.line();
        if self.eat_word("begin") {
            if self.eat_punct(":") {
                self.ident()?;
            }
            let mut body = Vec::new();
            while !self.eat_word("end") {
                if self.at_end() {
                    return Err(self.err("missing 'end'"));
                }
                body.extend(self.stmt()?);
            }
            return Ok(body);
        }
        if self.eat_punct(";") {
            return Ok(Vec::new());
        }
        if self.eat_punct("#") {
            match self.peek() {
                Some(Tok::Number { .. }) => self.pos += 1,
                Some(Tok::Ident(_)) => {
                    self.ident()?;
                }
                _ => return Err(self.err("expected delay value")),
            }
            let mut out = vec![Stmt::Delay];
            out.extend(self.stmt()?);
            return Ok(out);
        }
        if self.eat_word("if") {
            self.expect("(")?;
            let cond = self.expr()?;
            self.expect(")")?;
            let then = self.stmt()?;
            let other = if self.eat_word("else") { self.stmt()? } else { Vec::new() };
            return Ok(vec![Stmt::If(cond, then, other)]);
        }
        if let Some(Tok::System(name)) = self.peek() {
            let name = name.clone();
            self.pos += 1;
            let mut fmt = String::new();
            let mut args = Vec::new();
            if self.eat_punct("(") && !self.eat_punct(")") {
                loop {
                    if let Some(Tok::Str(s)) = self.peek() {
                        if fmt.is_empty() && args.is_empty() {
                            fmt = s.clone();
                            self.pos += 1;
                        } else {
                            return Err(self.err("unexpected string argument"));
                        }
                    } else {
                        args.push(self.expr()?);
                    }
                    if self.eat_punct(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            self.expect(";")?;
            return Ok(match name.as_str() {
                "display" | "displayh" | "write" => vec![Stmt::Display(fmt, args)],
                "finish" | "stop" => vec![Stmt::Finish],
                "dumpfile" | "dumpvars" | "monitor" | "timeformat" => Vec::new(),
                other => return Err(SimError::unsupported(line, format!("${other}"))),
            });
        }
        if let Some(Tok::Ident(w)) = self.peek() {
            if RESERVED.contains(&w.as_str()) || w == "repeat" || w == "forever" {
                return Err(SimError::unsupported(line, format!("'{w}'")));
            }
            let target = self.ident()?;
            if !self.eat_punct("=") && !self.eat_punct("<=") {
                return Err(self.err(format!("expected '=', found {}", self.describe())));
            }
            let e = self.expr()?;
            self.expect(";")?;
            return Ok(vec![Stmt::Assign(target, e, line)]);
        }
        Err(self.err(format!("unexpected {}", self.describe())))
    }

    // expressions, lowest precedence first

    fn expr(&mut self) -> Result<Expr, SimError> {
        let cond = self.binary(0)?;
        if self.eat_punct("?") {
            let t = self.expr()?;
            self.expect(":")?;
            let e = self.expr()?;
            return Ok(Expr::Ternary(Box::new(cond), Box::new(t), Box::new(e)));
        }
        Ok(cond)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, SimError> {
        const LEVELS: [&[(&str, BinaryOp)]; 10] = [
            &[("||", BinaryOp::LogicalOr)],
            &[("&&", BinaryOp::LogicalAnd)],
            &[("|", BinaryOp::Or)],
            &[("^", BinaryOp::Xor), ("~^", BinaryOp::Xnor)],
            &[("&", BinaryOp::And)],
            &[
                ("==", BinaryOp::Eq),
                ("!=", BinaryOp::Ne),
                ("===", BinaryOp::Eq),
                ("!==", BinaryOp::Ne),
            ],
            &[("<", BinaryOp::Lt), ("<=", BinaryOp::Le), (">", BinaryOp::Gt), (">=", BinaryOp::Ge)],
            &[("<<", BinaryOp::Shl), (">>", BinaryOp::Shr), ("<<<", BinaryOp::Shl), (">>>", BinaryOp::Shr)],
            &[("+", BinaryOp::Add), ("-", BinaryOp::Sub)],
            &[("*", BinaryOp::Mul)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (p, op) in LEVELS[level] {
                if self.eat_punct(p) {
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, SimError> {
        const OPS: [(&str, Option<UnaryOp>); 10] = [
            ("+", None),
            ("-", Some(UnaryOp::Neg)),
            ("!", Some(UnaryOp::LogicalNot)),
            ("~&", Some(UnaryOp::ReduceNand)),
            ("~|", Some(UnaryOp::ReduceNor)),
            ("~^", Some(UnaryOp::ReduceXnor)),
            ("~", Some(UnaryOp::Not)),
            ("&", Some(UnaryOp::ReduceAnd)),
            ("|", Some(UnaryOp::ReduceOr)),
            ("^", Some(UnaryOp::ReduceXor)),
        ];
        for (p, op) in OPS {
            if self.eat_punct(p) {
                let inner = self.unary()?;
                return Ok(match op {
                    Some(op) => Expr::Unary(op, Box::new(inner)),
                    None => inner,
                });
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SimError> {
        let line = self.line();
        match self.peek().cloned() {
            Some(Tok::Number { width, value }) => {
                self.pos += 1;
                if let Some(w) = width {
                    if value > expr::mask(w) {
                        return Err(SimError::syntax(line, "literal does not fit its width"));
                    }
                }
                Ok(Expr::Lit { value, width })
            }
            Some(Tok::Punct("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Punct("{")) => {
                self.pos += 1;
                let first = self.expr()?;
                if self.eat_punct("{") {
                    let n = match first {
                        Expr::Lit { value, .. } if value > 0 && value <= 64 => value as u32,
                        _ => return Err(SimError::syntax(line, "bad replication count")),
                    };
                    let inner = self.concat_tail()?;
                    self.expect("}")?;
                    return Ok(Expr::Replicate(n, Box::new(inner)));
                }
                let mut parts = vec![first];
                while self.eat_punct(",") {
                    parts.push(self.expr()?);
                }
                self.expect("}")?;
                Ok(Expr::Concat(parts))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(v) = self.params.get(&name) {
                    return Ok(Expr::Lit { value: *v, width: None });
                }
                if self.eat_punct("[") {
                    let hi = self.const_expr()?;
                    let e = if self.eat_punct(":") {
                        let lo = self.const_expr()?;
                        if hi < lo || hi - lo >= 64 {
                            return Err(SimError::unsupported(line, "part select shape"));
                        }
                        Expr::Slice(name, hi as u32, lo as u32)
                    } else {
                        Expr::Index(name, hi as u32)
                    };
                    self.expect("]")?;
                    return Ok(e);
                }
                Ok(Expr::Ident(name))
            }
            Some(Tok::System(name)) => Err(SimError::unsupported(line, format!("${name} in an expression"))),
            _ => Err(self.err(format!("unexpected {} in expression", self.describe()))),
        }
    }

    /// Inner list of a replication `{n{a, b}}`, up to the inner `}`.
    fn concat_tail(&mut self) -> Result<Expr, SimError> {
        let mut parts = vec![self.expr()?];
        while self.eat_punct(",") {
            parts.push(self.expr()?);
        }
        self.expect("}")?;
        Ok(if parts.len() == 1 { parts.pop().expect("one part") } else { Expr::Concat(parts) })
    }
}

fn declare(
    m: &mut RawModule,
    name: &str,
    sig: Signal,
    dir: Option<Direction>,
    line: usize,
) -> Result<(), SimError> {
    match m.decls.get_mut(name) {
        // `output y; wire y;` style redeclaration
        Some((existing, d, _)) if dir.is_none() && d.is_some() && *existing == sig => Ok(()),
        Some((existing, d @ None, _)) if dir.is_some() && *existing == sig => {
            *d = dir;
            Ok(())
        }
        Some(_) => Err(SimError::syntax(line, format!("'{name}' declared twice"))),
        None => {
            m.decls.insert(name.to_string(), (sig, dir, false));
            Ok(())
        }
    }
}

fn check_reads(e: &Expr, decls: &Decls, line: usize) -> Result<(), SimError> {
    let mut reads = Vec::new();
    e.reads(&mut reads);
    for r in reads {
        if !decls.contains_key(&r) {
            return Err(SimError::syntax(line, format!("'{r}' is not declared")));
        }
    }
    Ok(())
}

fn elaborate(raw: RawModule) -> Result<Module, SimError> {
    if let Some(inst) = raw.instances.first() {
        return Err(SimError::unsupported(inst.line, format!("instance of '{}'", inst.module)));
    }
    if !raw.initial.is_empty() {
        return Err(SimError::unsupported(raw.line, "initial blocks in a design"));
    }
    let mut ports = Vec::new();
    for (name, _) in &raw.ports {
        match raw.decls.get(name) {
            Some((_, Some(dir), _)) => ports.push(Port { name: name.clone(), dir: *dir }),
            _ => return Err(SimError::syntax(raw.line, format!("port '{name}' has no direction"))),
        }
    }
    for (name, (_, dir, _)) in &raw.decls {
        if dir.is_some() && !raw.ports.iter().any(|(p, _)| p == name) {
            return Err(SimError::syntax(raw.line, format!("'{name}' is not in the port list")));
        }
    }
    let decls: Decls = raw.decls.iter().map(|(n, (s, _, _))| (n.clone(), *s)).collect();
    let mut drivers: BTreeMap<String, usize> = BTreeMap::new();
    for (i, (target, e, line)) in raw.assigns.iter().enumerate() {
        match raw.decls.get(target) {
            None => return Err(SimError::syntax(*line, format!("'{target}' is not declared"))),
            Some((_, Some(Direction::Input), _)) => {
                return Err(SimError::syntax(*line, format!("input '{target}' is assigned")))
            }
            _ => {}
        }
        check_reads(e, &decls, *line)?;
        if drivers.insert(target.clone(), i).is_some() {
            return Err(SimError::Elaboration(format!("'{target}' has multiple drivers")));
        }
    }
    for p in ports.iter().filter(|p| p.dir == Direction::Output) {
        if !drivers.contains_key(&p.name) {
            return Err(SimError::Elaboration(format!("output '{}' is never driven", p.name)));
        }
    }

    // dependency order (Kahn); leftover assigns form a combinational loop
    let deps: Vec<Vec<usize>> = raw
        .assigns
        .iter()
        .map(|(_, e, _)| {
            let mut reads = Vec::new();
            e.reads(&mut reads);
            let mut d: Vec<usize> = reads.iter().filter_map(|r| drivers.get(r).copied()).collect();
            d.sort_unstable();
            d.dedup();
            d
        })
        .collect();
    let mut done = vec![false; raw.assigns.len()];
    let mut order = Vec::with_capacity(raw.assigns.len());
    while order.len() < raw.assigns.len() {
        let next = (0..raw.assigns.len()).find(|&i| !done[i] && deps[i].iter().all(|&d| done[d]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => {
                let i = (0..raw.assigns.len()).find(|&i| !done[i]).expect("pending assign");
                return Err(SimError::Elaboration(format!(
                    "combinational loop through '{}'",
                    raw.assigns[i].0
                )));
            }
        }
    }
    let assigns = order
        .into_iter()
        .map(|i| Assign { target: raw.assigns[i].0.clone(), expr: raw.assigns[i].1.clone() })
        .collect();
    Ok(Module { name: raw.name, ports, decls, assigns })
}

// ---------------------------------------------------------------------------
// testbench execution

struct Bench<'a> {
    decls: Decls,
    env: Env,
    dut: &'a Module,
    /// (DUT port, testbench expression or target)
    inputs: Vec<(String, Expr)>,
    outputs: Vec<(String, String)>,
    body: Vec<Stmt>,
}

impl<'a> Bench<'a> {
    fn new(tb: RawModule, modules: &'a [Module]) -> Result<Self, SimError> {
        if !tb.ports.is_empty() {
            return Err(SimError::syntax(tb.line, "testbench module must not have ports"));
        }
        if tb.instances.len() != 1 {
            return Err(SimError::unsupported(
                tb.line,
                format!("{} design instances in the testbench", tb.instances.len()),
            ));
        }
        let inst = &tb.instances[0];
        let dut = modules
            .iter()
            .find(|m| m.name == inst.module)
            .ok_or_else(|| SimError::Elaboration(format!("unknown module '{}'", inst.module)))?;
        let decls: Decls = tb.decls.iter().map(|(n, (s, _, _))| (n.clone(), *s)).collect();
        let connections: Vec<(String, Option<Expr>)> = if inst.positional.is_empty() {
            inst.named.clone()
        } else {
            if inst.positional.len() > dut.ports.len() {
                return Err(SimError::Elaboration("too many port connections".into()));
            }
            dut.ports.iter().map(|p| p.name.clone()).zip(inst.positional.iter().cloned().map(Some)).collect()
        };
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (port, e) in connections {
            let p = dut
                .ports
                .iter()
                .find(|p| p.name == port)
                .ok_or_else(|| SimError::Elaboration(format!("'{}' has no port '{port}'", dut.name)))?;
            let Some(e) = e else { continue };
            check_reads(&e, &decls, inst.line)?;
            match p.dir {
                Direction::Input => inputs.push((port, e)),
                Direction::Output => match e {
                    Expr::Ident(n) => outputs.push((port, n)),
                    _ => return Err(SimError::unsupported(inst.line, "output connected to an expression")),
                },
            }
        }
        for stmt in &tb.initial {
            check_stmt(stmt, &decls)?;
        }
        Ok(Bench { decls, env: Env::new(), dut, inputs, outputs, body: tb.initial })
    }

    fn settle(&mut self) {
        let mut port_values = Env::new();
        for (port, e) in &self.inputs {
            let w = self.dut.signal(port).map_or(1, |s| s.width).max(e.width(&self.decls));
            port_values.insert(port.clone(), e.eval(w, &self.env, &self.decls));
        }
        let values = self.dut.eval(&port_values);
        for (port, net) in &self.outputs {
            let w = self.decls[net].width;
            self.env.insert(net.clone(), values.get(port).copied().unwrap_or(0) & expr::mask(w));
        }
    }

    fn run(mut self) -> Result<SimRun, SimError> {
        let mut run = SimRun::default();
        self.settle();
        let body = std::mem::take(&mut self.body);
        self.exec(&body, &mut run);
        Ok(run)
    }

    fn exec(&mut self, stmts: &[Stmt], run: &mut SimRun) {
        for s in stmts {
            if run.finished {
                return;
            }
            match s {
                Stmt::Assign(target, e, _) => {
                    let w = self.decls[target].width;
                    let v = e.eval(w.max(e.width(&self.decls)), &self.env, &self.decls);
                    self.env.insert(target.clone(), v & expr::mask(w));
                }
                Stmt::Delay => self.settle(),
                Stmt::If(c, t, e) => {
                    let taken = c.eval(c.width(&self.decls), &self.env, &self.decls) != 0;
                    self.exec(if taken { t } else { e }, run);
                }
                Stmt::Display(fmt, args) => run.lines.push(self.format(fmt, args)),
                Stmt::Finish => run.finished = true,
            }
        }
    }

    fn format(&self, fmt: &str, args: &[Expr]) -> String {
        let mut out = String::new();
        let mut args = args.iter();
        let mut chars = fmt.chars().peekable();
        while let Some(c) = chars.next() {
            if c != '%' {
                out.push(c);
                continue;
            }
            while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                chars.next();
            }
            let Some(spec) = chars.next() else { break };
            if spec == '%' {
                out.push('%');
                continue;
            }
            let v = args.next().map_or(0, |e| e.eval(e.width(&self.decls), &self.env, &self.decls));
            match spec.to_ascii_lowercase() {
                'h' | 'x' => out.push_str(&format!("{v:x}")),
                'b' => out.push_str(&format!("{v:b}")),
                _ => out.push_str(&v.to_string()),
            }
        }
        out
    }
}

fn check_stmt(s: &Stmt, decls: &Decls) -> Result<(), SimError> {
    match s {
        Stmt::Assign(target, e, line) => {
            if !decls.contains_key(target) {
                return Err(SimError::syntax(*line, format!("'{target}' is not declared")));
            }
            check_reads(e, decls, *line)
        }
        Stmt::If(c, t, e) => {
            check_reads(c, decls, 0)?;
            t.iter().chain(e).try_for_each(|s| check_stmt(s, decls))
        }
        Stmt::Display(_, args) => args.iter().try_for_each(|a| check_reads(a, decls, 0)),
        Stmt::Delay | Stmt::Finish => Ok(()),
    }
}
