//! Expression trees over layer statistics.
//!
//! A metric is a tree whose leaves are the layer tensors `W` (weights) and
//! `G` (accumulated gradients), both `rows x cols` matrices, plus `X`, the
//! row vector of column-wise l2 norms of the calibration activations. The
//! 17-operation vocabulary is split into 13 unary and 4 binary operations;
//! `pow` is unary with a fixed exponent of 2 and behaves exactly like `sqr`.
//!
//! The string grammar is fully parenthesized and whitespace separated:
//!
//! ```text
//! Expr    := Operand OpToken "(" Arg ")" | LeafTok
//! Operand := "(" Expr ")"
//! Arg     := Expr | "#"
//! ```
//!
//! Unary operations take `#` as their printed second operand, so `abs(W)`
//! reads `(W) abs (#)` and `mul(G, W)` reads `((G) mul (W))`. The parser is
//! lenient about redundant grouping parentheses and accepts any run of
//! whitespace between tokens; [`format_expr`] emits the canonical spelling.

pub mod eval;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Leaf tensors an expression can reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Leaf {
    /// Weight matrix, `rows x cols`.
    W,
    /// Accumulated gradient matrix, `rows x cols`.
    G,
    /// Column-wise l2 norm of the calibration activations, length `cols`.
    X,
}

impl Leaf {
    pub const ALL: [Leaf; 3] = [Leaf::W, Leaf::G, Leaf::X];

    pub fn token(self) -> &'static str {
        match self {
            Leaf::W => "W",
            Leaf::G => "G",
            Leaf::X => "X",
        }
    }

    pub fn from_token(tok: &str) -> Option<Leaf> {
        match tok {
            "W" => Some(Leaf::W),
            "G" => Some(Leaf::G),
            "X" => Some(Leaf::X),
            _ => None,
        }
    }
}

/// The operation vocabulary, in fixed order: 13 unary then 4 binary.
///
/// This declaration order is load-bearing: histograms, correlation columns,
/// and random draws all index it via [`OpKind::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    /// Element-wise square.
    Sqr,
    /// Element-wise negation.
    Neg,
    /// Element-wise absolute value.
    Abs,
    /// Safe logarithm: `ln(|x| + eps)`.
    Log,
    /// Element-wise exponential.
    Exp,
    /// Safe square root: `sqrt(|x|)`.
    Sqrt,
    /// Hyperbolic tangent.
    Tanh,
    /// Power with fixed exponent 2; an alias of `sqr` numerically.
    Pow,
    /// Skip: the identity.
    Skp,
    /// Min-max scaling to `[0, 1]` over the whole tensor.
    Mms,
    /// Z-score normalization over the whole tensor.
    Zsn,
    /// Column-wise l2 norm; maps a matrix to a row vector.
    Norm2,
    /// Column-wise l1 norm; maps a matrix to a row vector.
    Norm1,
    Add,
    Sub,
    Mul,
    Div,
}

impl OpKind {
    pub const ALL: [OpKind; 17] = [
        OpKind::Sqr,
        OpKind::Neg,
        OpKind::Abs,
        OpKind::Log,
        OpKind::Exp,
        OpKind::Sqrt,
        OpKind::Tanh,
        OpKind::Pow,
        OpKind::Skp,
        OpKind::Mms,
        OpKind::Zsn,
        OpKind::Norm2,
        OpKind::Norm1,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
    ];

    pub fn token(self) -> &'static str {
        match self {
            OpKind::Sqr => "sqr",
            OpKind::Neg => "neg",
            OpKind::Abs => "abs",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Sqrt => "sqrt",
            OpKind::Tanh => "tanh",
            OpKind::Pow => "pow",
            OpKind::Skp => "skp",
            OpKind::Mms => "mms",
            OpKind::Zsn => "zsn",
            OpKind::Norm2 => "norm2",
            OpKind::Norm1 => "norm1",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
        }
    }

    pub fn from_token(tok: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|op| op.token() == tok)
    }

    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            _ => 1,
        }
    }

    /// Index into [`OpKind::ALL`]; the column order used by analysis.
    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|&op| op == self).unwrap()
    }
}

/// Shape of an evaluated subexpression.
///
/// Broadcasting is deliberately narrow: a row vector combined with a matrix
/// is replicated across rows, nothing else. The norm operations are the only
/// ones that change class (matrix -> row vector).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    /// `rows x cols`, same shape as `W` and `G`.
    Matrix,
    /// Length `cols`, same shape as `X`.
    RowVector,
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeClass::Matrix => write!(f, "matrix"),
            ShapeClass::RowVector => write!(f, "row-vector"),
        }
    }
}

/// An expression tree. The root of a usable metric must evaluate to a
/// matrix; see [`shape_check`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExprTree {
    Leaf(Leaf),
    Unary(OpKind, Box<ExprTree>),
    Binary(OpKind, Box<ExprTree>, Box<ExprTree>),
}

impl ExprTree {
    pub fn leaf(leaf: Leaf) -> ExprTree {
        ExprTree::Leaf(leaf)
    }

    /// Panics if `op` is not unary; arity errors in parsed input surface as
    /// [`ParseError::ArityMismatch`] instead.
    pub fn unary(op: OpKind, child: ExprTree) -> ExprTree {
        assert_eq!(op.arity(), 1, "{} is not a unary operation", op.token());
        ExprTree::Unary(op, Box::new(child))
    }

    /// Panics if `op` is not binary.
    pub fn binary(op: OpKind, lhs: ExprTree, rhs: ExprTree) -> ExprTree {
        assert_eq!(op.arity(), 2, "{} is not a binary operation", op.token());
        ExprTree::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Total number of nodes, leaves included. A bare leaf counts 1.
    pub fn node_count(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 1,
            ExprTree::Unary(_, c) => 1 + c.node_count(),
            ExprTree::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Longest root-to-leaf path in nodes; a bare leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 1,
            ExprTree::Unary(_, c) => 1 + c.depth(),
            ExprTree::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Counts operation nodes per kind; leaves are not counted.
    pub fn op_histogram(&self) -> BTreeMap<OpKind, usize> {
        fn walk(t: &ExprTree, h: &mut BTreeMap<OpKind, usize>) {
            match t {
                ExprTree::Leaf(_) => {}
                ExprTree::Unary(op, c) => {
                    *h.entry(*op).or_insert(0) += 1;
                    walk(c, h);
                }
                ExprTree::Binary(op, l, r) => {
                    *h.entry(*op).or_insert(0) += 1;
                    walk(l, h);
                    walk(r, h);
                }
            }
        }
        let mut h = BTreeMap::new();
        walk(self, &mut h);
        h
    }

    /// Returns the subtree at `index` in depth-first preorder (root is 0).
    pub fn subtree(&self, index: usize) -> Option<&ExprTree> {
        fn walk<'a>(t: &'a ExprTree, index: usize, next: &mut usize) -> Option<&'a ExprTree> {
            if *next == index {
                return Some(t);
            }
            *next += 1;
            match t {
                ExprTree::Leaf(_) => None,
                ExprTree::Unary(_, c) => walk(c, index, next),
                ExprTree::Binary(_, l, r) => {
                    walk(l, index, next).or_else(|| walk(r, index, next))
                }
            }
        }
        let mut next = 0;
        walk(self, index, &mut next)
    }

    /// Returns a copy of `self` with the preorder-`index` subtree replaced.
    /// `None` if the index is out of range.
    pub fn with_replaced(&self, index: usize, replacement: &ExprTree) -> Option<ExprTree> {
        fn walk(t: &ExprTree, index: usize, next: &mut usize, rep: &ExprTree) -> Option<ExprTree> {
            if *next == index {
                return Some(rep.clone());
            }
            *next += 1;
            match t {
                ExprTree::Leaf(_) => None,
                ExprTree::Unary(op, c) => {
                    walk(c, index, next, rep).map(|c| ExprTree::Unary(*op, Box::new(c)))
                }
                ExprTree::Binary(op, l, r) => {
                    if let Some(nl) = walk(l, index, next, rep) {
                        return Some(ExprTree::Binary(*op, Box::new(nl), r.clone()));
                    }
                    walk(r, index, next, rep)
                        .map(|nr| ExprTree::Binary(*op, l.clone(), Box::new(nr)))
                }
            }
        }
        let mut next = 0;
        walk(self, index, &mut next, replacement)
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_expr(self))
    }
}

/// Path from the root to a node, as child indices. Displays as
/// `root`, `root.0`, `root.1.0`, ...
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePath(pub Vec<usize>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "root")?;
        for step in &self.0 {
            write!(f, ".{}", step)?;
        }
        Ok(())
    }
}

/// The root of a metric did not come out as a matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeError {
    /// The node that forced the root into row-vector shape: the nearest
    /// norm operation or `X` leaf reachable from the root through
    /// shape-preserving operations.
    pub path: NodePath,
    pub found: ShapeClass,
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "expression root is a {} (must be a matrix); caused at {}",
            self.found, self.path
        )
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ShapeError {}

fn shape_of(tree: &ExprTree) -> ShapeClass {
    match tree {
        ExprTree::Leaf(Leaf::W) | ExprTree::Leaf(Leaf::G) => ShapeClass::Matrix,
        ExprTree::Leaf(Leaf::X) => ShapeClass::RowVector,
        ExprTree::Unary(OpKind::Norm1, _) | ExprTree::Unary(OpKind::Norm2, _) => {
            ShapeClass::RowVector
        }
        ExprTree::Unary(_, c) => shape_of(c),
        ExprTree::Binary(_, l, r) => {
            if shape_of(l) == ShapeClass::Matrix || shape_of(r) == ShapeClass::Matrix {
                ShapeClass::Matrix
            } else {
                ShapeClass::RowVector
            }
        }
    }
}

/// Finds the node responsible for a row-vector shape: descends through
/// shape-preserving operations until it hits a norm node or an `X` leaf
/// (leftmost branch first when both sides of a binary are row vectors).
fn row_vector_witness(tree: &ExprTree, path: &mut Vec<usize>) {
    match tree {
        ExprTree::Leaf(_) => {}
        ExprTree::Unary(OpKind::Norm1, _) | ExprTree::Unary(OpKind::Norm2, _) => {}
        ExprTree::Unary(_, c) => {
            path.push(0);
            row_vector_witness(c, path);
        }
        ExprTree::Binary(_, l, _) => {
            // Both operands must be row vectors here, otherwise the result
            // would have been a matrix. Blame the left one.
            path.push(0);
            row_vector_witness(l, path);
        }
    }
}

/// Checks that every node is well-shaped and the root evaluates to a matrix.
///
/// Interior combinations are all legal under the broadcasting rules, so the
/// only possible failure is a row-vector root; the error names the node that
/// caused it.
pub fn shape_check(tree: &ExprTree) -> Result<ShapeClass, ShapeError> {
    match shape_of(tree) {
        ShapeClass::Matrix => Ok(ShapeClass::Matrix),
        ShapeClass::RowVector => {
            let mut path = Vec::new();
            row_vector_witness(tree, &mut path);
            Err(ShapeError {
                path: NodePath(path),
                found: ShapeClass::RowVector,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse failure with the byte offset of the offending token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseError {
    /// A word that is neither an operation, a leaf, `(`, `)`, nor `#`.
    UnknownToken { offset: usize, token: String },
    /// Structurally valid token in a place the grammar does not allow.
    Unexpected {
        offset: usize,
        found: String,
        expected: &'static str,
    },
    /// Input ended while more tokens were required.
    UnexpectedEnd { offset: usize },
    /// A unary operation given an expression argument, or a binary
    /// operation given `#`.
    ArityMismatch { offset: usize, op: OpKind },
    /// Extra tokens after a complete expression.
    TrailingInput { offset: usize },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::UnknownToken { offset, token } => {
                write!(f, "unknown token `{}` at byte {}", token, offset)
            }
            ParseError::Unexpected {
                offset,
                found,
                expected,
            } => write!(f, "unexpected `{}` at byte {}, expected {}", found, offset, expected),
            ParseError::UnexpectedEnd { offset } => {
                write!(f, "unexpected end of input at byte {}", offset)
            }
            ParseError::ArityMismatch { offset, op } => {
                if op.arity() == 1 {
                    write!(
                        f,
                        "unary operation `{}` at byte {} takes `(#)` as its second operand",
                        op.token(),
                        offset
                    )
                } else {
                    write!(
                        f,
                        "binary operation `{}` at byte {} needs an expression operand, not `#`",
                        op.token(),
                        offset
                    )
                }
            }
            ParseError::TrailingInput { offset } => {
                write!(f, "trailing input at byte {}", offset)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Hash,
    Op(OpKind),
    Leaf(Leaf),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LParen => String::from("("),
            Tok::RParen => String::from(")"),
            Tok::Hash => String::from("#"),
            Tok::Op(op) => String::from(op.token()),
            Tok::Leaf(l) => String::from(l.token()),
        }
    }
}

fn tokenize(input: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'#' => {
                toks.push((Tok::Hash, i));
                i += 1;
            }
            _ if b.is_ascii_alphanumeric() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let word = &input[start..i];
                let tok = if let Some(leaf) = Leaf::from_token(word) {
                    Tok::Leaf(leaf)
                } else if let Some(op) = OpKind::from_token(word) {
                    Tok::Op(op)
                } else {
                    return Err(ParseError::UnknownToken {
                        offset: start,
                        token: String::from(word),
                    });
                };
                toks.push((tok, start));
            }
            _ => {
                return Err(ParseError::UnknownToken {
                    offset: i,
                    token: input[i..].chars().take(1).collect(),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    input_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        match self.toks.get(self.pos) {
            Some((t, off)) => {
                self.pos += 1;
                Ok((t.clone(), *off))
            }
            None => Err(ParseError::UnexpectedEnd {
                offset: self.input_len,
            }),
        }
    }

    fn expect(&mut self, want: Tok, expected: &'static str) -> Result<usize, ParseError> {
        let (tok, off) = self.next()?;
        if tok == want {
            Ok(off)
        } else {
            Err(ParseError::Unexpected {
                offset: off,
                found: tok.describe(),
                expected,
            })
        }
    }

    /// A parenthesized expression or a bare leaf.
    fn unit(&mut self) -> Result<ExprTree, ParseError> {
        let (tok, off) = self.next()?;
        match tok {
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Leaf(l) => Ok(ExprTree::Leaf(l)),
            other => Err(ParseError::Unexpected {
                offset: off,
                found: other.describe(),
                expected: "`(` or a leaf",
            }),
        }
    }

    /// `unit (op "(" arg ")")*` — each following operation takes the tree
    /// parsed so far as its left operand.
    fn expr(&mut self) -> Result<ExprTree, ParseError> {
        let mut node = self.unit()?;
        while let Some(Tok::Op(_)) = self.peek() {
            let (tok, op_off) = self.next()?;
            let op = match tok {
                Tok::Op(op) => op,
                _ => unreachable!(),
            };
            self.expect(Tok::LParen, "`(`")?;
            let arg = if self.peek() == Some(&Tok::Hash) {
                self.next()?;
                None
            } else {
                Some(self.expr()?)
            };
            self.expect(Tok::RParen, "`)`")?;
            node = match (op.arity(), arg) {
                (1, None) => ExprTree::Unary(op, Box::new(node)),
                (2, Some(rhs)) => ExprTree::Binary(op, Box::new(node), Box::new(rhs)),
                _ => return Err(ParseError::ArityMismatch { offset: op_off, op }),
            };
        }
        Ok(node)
    }
}

/// Parses the canonical string form into the unique tree it denotes.
pub fn parse_expr(input: &str) -> Result<ExprTree, ParseError> {
    let toks = tokenize(input)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        input_len: input.len(),
    };
    let tree = p.expr()?;
    if let Some((_, off)) = p.toks.get(p.pos) {
        return Err(ParseError::TrailingInput { offset: *off });
    }
    Ok(tree)
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

fn fmt_operand(tree: &ExprTree, out: &mut String) {
    out.push('(');
    fmt_inner(tree, out);
    out.push(')');
}

fn fmt_inner(tree: &ExprTree, out: &mut String) {
    match tree {
        ExprTree::Leaf(l) => out.push_str(l.token()),
        ExprTree::Unary(op, c) => {
            fmt_operand(c, out);
            out.push(' ');
            out.push_str(op.token());
            out.push_str(" (#)");
        }
        ExprTree::Binary(op, l, r) => {
            fmt_operand(l, out);
            out.push(' ');
            out.push_str(op.token());
            out.push(' ');
            fmt_operand(r, out);
        }
    }
}

/// Canonical string form: single spaces, every operand parenthesized, unary
/// second operands printed as `(#)`. A binary root is wrapped in one outer
/// pair of parentheses, a unary or leaf root is not; `parse_expr` inverts
/// this exactly.
pub fn format_expr(tree: &ExprTree) -> String {
    let mut out = String::new();
    match tree {
        ExprTree::Binary(..) => fmt_operand(tree, &mut out),
        _ => fmt_inner(tree, &mut out),
    }
    out
}
