use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
    LogicalNot,
    ReduceAnd,
    ReduceOr,
    ReduceXor,
    ReduceNand,
    ReduceNor,
    ReduceXnor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Xnor,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LogicalAnd,
    LogicalOr,
    Shl,
    Shr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Ident(String),
    Lit { value: u64, width: Option<u32> },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Concat(Vec<Expr>),
    Replicate(u32, Box<Expr>),
    Index(String, u32),
    Slice(String, u32, u32),
}

/// A declared signal: width in bits and the index of its least significant bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signal {
    pub width: u32,
    pub lsb: u32,
}

pub type Env = BTreeMap<String, u64>;
pub type Decls = BTreeMap<String, Signal>;

pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

impl Expr {
    /// Self-determined width.
    pub fn width(&self, decls: &Decls) -> u32 {
        match self {
            Expr::Ident(n) => decls.get(n).map_or(32, |s| s.width),
            Expr::Lit { width, .. } => width.unwrap_or(32),
            Expr::Unary(UnaryOp::Neg | UnaryOp::Not, e) => e.width(decls),
            Expr::Unary(_, _) => 1,
            Expr::Binary(op, a, b) => match op {
                BinaryOp::Add
                | BinaryOp::Sub
                | BinaryOp::Mul
                | BinaryOp::And
                | BinaryOp::Or
                | BinaryOp::Xor
                | BinaryOp::Xnor => a.width(decls).max(b.width(decls)),
                BinaryOp::Shl | BinaryOp::Shr => a.width(decls),
                _ => 1,
            },
            Expr::Ternary(_, t, e) => t.width(decls).max(e.width(decls)),
            Expr::Concat(parts) => parts.iter().map(|p| p.width(decls)).sum::<u32>().min(64),
            Expr::Replicate(n, e) => (n * e.width(decls)).min(64),
            Expr::Index(..) => 1,
            Expr::Slice(_, hi, lo) => hi - lo + 1,
        }
    }

    /// Evaluates in a context of `width` bits (at least the self width).
    pub fn eval(&self, width: u32, env: &Env, decls: &Decls) -> u64 {
        let m = mask(width);
        let own = |e: &Expr| e.eval(e.width(decls), env, decls);
        match self {
            Expr::Ident(n) => env.get(n).copied().unwrap_or(0) & m,
            Expr::Lit { value, .. } => value & m,
            Expr::Unary(op, e) => match op {
                UnaryOp::Neg => e.eval(width, env, decls).wrapping_neg() & m,
                UnaryOp::Not => !e.eval(width, env, decls) & m,
                UnaryOp::LogicalNot => (own(e) == 0) as u64,
                _ => {
                    let w = e.width(decls);
                    let v = own(e);
                    let all = v == mask(w);
                    let any = v != 0;
                    let parity = v.count_ones() % 2 == 1;
                    let bit = match op {
                        UnaryOp::ReduceAnd => all,
                        UnaryOp::ReduceOr => any,
                        UnaryOp::ReduceXor => parity,
                        UnaryOp::ReduceNand => !all,
                        UnaryOp::ReduceNor => !any,
                        _ => !parity,
                    };
                    bit as u64
                }
            },
            Expr::Binary(op, a, b) => {
                let ctx = |x: &Expr| x.eval(width, env, decls);
                let cmp = || {
                    let w = a.width(decls).max(b.width(decls));
                    (a.eval(w, env, decls), b.eval(w, env, decls))
                };
                match op {
                    BinaryOp::Add => ctx(a).wrapping_add(ctx(b)) & m,
                    BinaryOp::Sub => ctx(a).wrapping_sub(ctx(b)) & m,
                    BinaryOp::Mul => ctx(a).wrapping_mul(ctx(b)) & m,
                    BinaryOp::And => ctx(a) & ctx(b),
                    BinaryOp::Or => ctx(a) | ctx(b),
                    BinaryOp::Xor => ctx(a) ^ ctx(b),
                    BinaryOp::Xnor => !(ctx(a) ^ ctx(b)) & m,
                    BinaryOp::Shl => {
                        let s = own(b);
                        if s >= 64 { 0 } else { (ctx(a) << s) & m }
                    }
                    BinaryOp::Shr => {
                        let s = own(b);
                        if s >= 64 { 0 } else { ctx(a) >> s }
                    }
                    BinaryOp::Eq => { let (x, y) = cmp(); (x == y) as u64 }
                    BinaryOp::Ne => { let (x, y) = cmp(); (x != y) as u64 }
                    BinaryOp::Lt => { let (x, y) = cmp(); (x < y) as u64 }
                    BinaryOp::Le => { let (x, y) = cmp(); (x <= y) as u64 }
                    BinaryOp::Gt => { let (x, y) = cmp(); (x > y) as u64 }
                    BinaryOp::Ge => { let (x, y) = cmp(); (x >= y) as u64 }
                    BinaryOp::LogicalAnd => (own(a) != 0 && own(b) != 0) as u64,
                    BinaryOp::LogicalOr => (own(a) != 0 || own(b) != 0) as u64,
                }
            }
            Expr::Ternary(c, t, e) => {
                if own(c) != 0 {
                    t.eval(width, env, decls)
                } else {
                    e.eval(width, env, decls)
                }
            }
            Expr::Concat(parts) => {
                let mut v = 0u64;
                for p in parts {
                    let w = p.width(decls);
                    v = if w >= 64 { 0 } else { v << w } | own(p);
                }
                v & m
            }
            Expr::Replicate(n, e) => {
                let w = e.width(decls);
                let x = own(e);
                let mut v = 0u64;
                for _ in 0..*n {
                    v = if w >= 64 { 0 } else { v << w } | x;
                }
                v & m
            }
            Expr::Index(n, i) => {
                let lsb = decls.get(n).map_or(0, |s| s.lsb);
                let v = env.get(n).copied().unwrap_or(0);
                i.checked_sub(lsb).map_or(0, |k| if k >= 64 { 0 } else { (v >> k) & 1 })
            }
            Expr::Slice(n, hi, lo) => {
                let lsb = decls.get(n).map_or(0, |s| s.lsb);
                let v = env.get(n).copied().unwrap_or(0);
                let k = lo.saturating_sub(lsb);
                if k >= 64 { 0 } else { (v >> k) & mask(hi - lo + 1) & m }
            }
        }
    }

    /// Identifiers read by this expression.
    pub fn reads(&self, out: &mut Vec<String>) {
        match self {
            Expr::Ident(n) | Expr::Index(n, _) | Expr::Slice(n, _, _) => out.push(n.clone()),
            Expr::Lit { .. } => {}
            Expr::Unary(_, e) | Expr::Replicate(_, e) => e.reads(out),
            Expr::Binary(_, a, b) => {
                a.reads(out);
                b.reads(out);
            }
            Expr::Ternary(c, t, e) => {
                c.reads(out);
                t.reads(out);
                e.reads(out);
            }
            Expr::Concat(parts) => parts.iter().for_each(|p| p.reads(out)),
        }
    }

    /// Rough gate-level cost: cells and logic depth, used by the built-in
    /// area and timing proxies.
    pub fn cost(&self, decls: &Decls) -> (u64, u32) {
        match self {
            Expr::Ident(_) | Expr::Lit { .. } | Expr::Index(..) | Expr::Slice(..) => (0, 0),
            Expr::Concat(parts) => parts
                .iter()
                .map(|p| p.cost(decls))
                .fold((0, 0), |(c, d), (pc, pd)| (c + pc, d.max(pd))),
            Expr::Replicate(_, e) => e.cost(decls),
            Expr::Unary(_, e) => {
                let (c, d) = e.cost(decls);
                (c + self.width(decls).max(e.width(decls)) as u64, d + 1)
            }
            Expr::Binary(op, a, b) => {
                let (ca, da) = a.cost(decls);
                let (cb, db) = b.cost(decls);
                let w = a.width(decls).max(b.width(decls)) as u64;
                let cells = match op {
                    BinaryOp::Mul => w * w,
                    BinaryOp::Add | BinaryOp::Sub => 2 * w,
                    _ => w,
                };
                let depth = match op {
                    BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul => w as u32,
                    _ => 1,
                };
                (ca + cb + cells, da.max(db) + depth)
            }
            Expr::Ternary(c, t, e) => {
                let (cc, dc) = c.cost(decls);
                let (ct, dt) = t.cost(decls);
                let (ce, de) = e.cost(decls);
                let w = t.width(decls).max(e.width(decls)) as u64;
                (cc + ct + ce + w, dc.max(dt).max(de) + 1)
            }
        }
    }
}
