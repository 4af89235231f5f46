//! External fitness: hand each candidate expression to a user-supplied
//! command and read one float back.
//!
//! Protocol: the command template is split on whitespace into argv (no
//! shell is ever involved), every `{expr}` occurrence is replaced by the
//! candidate's expression string, and the expression plus a newline is
//! also written to the child's stdin for scripts that prefer reading it
//! there. The child must print exactly one decimal float on stdout and
//! exit 0. Anything else — bad exit status, unparseable output, timeout —
//! scores as the unscorable sentinel, with a warning on stderr; a flaky
//! scorer degrades the search instead of aborting it.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use pruner_zero_core::expr::{format_expr, ExprTree};
use pruner_zero_core::fitness::{
    parse_external_output, split_command_template, FitnessEval, FitnessScore,
};

pub const DEFAULT_TIMEOUT_S: u64 = 600;

pub struct ExternalEval {
    template: String,
    timeout: Duration,
}

impl ExternalEval {
    pub fn new(template: String, timeout: Duration) -> ExternalEval {
        ExternalEval { template, timeout }
    }

    fn run_once(&self, expr: &str) -> Result<f64, String> {
        let argv = split_command_template(&self.template, expr);
        if argv.is_empty() {
            return Err("command template is empty".to_string());
        }
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("failed to spawn '{}': {}", argv[0], e))?;
        if let Some(mut stdin) = child.stdin.take() {
            // The child may exit without reading; a broken pipe is fine.
            let _ = stdin.write_all(expr.as_bytes());
            let _ = stdin.write_all(b"\n");
        }
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(format!(
                            "timed out after {} seconds",
                            self.timeout.as_secs()
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(format!("waiting on child failed: {}", e)),
            }
        };
        let mut stdout = String::new();
        if let Some(mut out) = child.stdout.take() {
            let _ = out.read_to_string(&mut stdout);
        }
        if !status.success() {
            return Err(format!("exited with status {}", status));
        }
        match parse_external_output(&stdout) {
            Some(v) => Ok(v),
            None => Err(format!(
                "output {:?} is not a single float",
                stdout.trim()
            )),
        }
    }
}

impl FitnessEval for ExternalEval {
    fn score(&mut self, tree: &ExprTree) -> FitnessScore {
        let expr = format_expr(tree);
        match self.run_once(&expr) {
            Ok(v) => FitnessScore::from_value(v),
            Err(why) => {
                eprintln!("warning: external evaluator failed for {}: {}", expr, why);
                FitnessScore::sentinel()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pruner_zero_core::expr::parse_expr;

    fn tree() -> ExprTree {
        parse_expr("(W) abs (#)").unwrap()
    }

    #[test]
    fn happy_path_scores_the_printed_float() {
        // `true` with args is awkward; use a shell-free trick: /bin/echo.
        let mut eval = ExternalEval::new(
            "/bin/echo 0.125".to_string(),
            Duration::from_secs(DEFAULT_TIMEOUT_S),
        );
        let s = eval.score(&tree());
        assert_eq!(s.value, 0.125);
        assert!(s.finite);
    }

    #[test]
    fn placeholder_is_one_argv_word() {
        // `echo {expr}` echoes the expression: not a float -> sentinel.
        let mut eval = ExternalEval::new("/bin/echo {expr}".to_string(), Duration::from_secs(5));
        assert!(eval.score(&tree()).is_sentinel());
    }

    #[test]
    fn missing_binary_is_sentinel_not_panic() {
        let mut eval = ExternalEval::new(
            "/definitely/not/here --x {expr}".to_string(),
            Duration::from_secs(5),
        );
        assert!(eval.score(&tree()).is_sentinel());
    }

    #[test]
    fn nonzero_exit_is_sentinel() {
        let mut eval = ExternalEval::new("/bin/false".to_string(), Duration::from_secs(5));
        assert!(eval.score(&tree()).is_sentinel());
    }

    #[test]
    fn timeout_kills_and_sentinels() {
        let start = Instant::now();
        let mut eval = ExternalEval::new("/bin/sleep 30".to_string(), Duration::from_millis(200));
        assert!(eval.score(&tree()).is_sentinel());
        assert!(start.elapsed() < Duration::from_secs(5), "kill was not prompt");
    }

    #[test]
    fn reads_expression_from_stdin() {
        // `cat` echoes stdin: the expression itself, not a float -> sentinel;
        // but `head -c 0` ignores it and prints nothing -> also sentinel.
        // Positive case: a script that prints a fixed float after draining
        // stdin would pass; covered end-to-end in the CLI tests.
        let mut eval = ExternalEval::new("/bin/cat".to_string(), Duration::from_secs(5));
        assert!(eval.score(&tree()).is_sentinel());
    }
}
