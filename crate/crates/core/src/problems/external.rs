//! Line protocol to an evaluator process:
//! request `EVAL <run_id> <index> <p1> ... <pN>`, response `OK <index> <cost>`
//! or `ERR <index> <message>`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Candidate, Objective};
use crate::error::{Error, EvalError, Result};
use crate::space::ParameterSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    /// Seconds to wait for one response.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    /// Extra attempts after a timeout or a dead process.
    #[serde(default)]
    pub retries: usize,
    /// Evaluator processes kept alive; more than one allows concurrent evaluation.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub space: ParameterSpace,
}

fn default_run_id() -> String {
    "run".into()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_workers() -> usize {
    1
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>, space: ParameterSpace) -> Self {
        Self {
            command: command.into(),
            args: Vec::new(),
            run_id: default_run_id(),
            timeout: default_timeout(),
            retries: 0,
            workers: default_workers(),
            space,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() {
            return Err(Error::InvalidConfig("external evaluator command is empty".into()));
        }
        if !(self.timeout > 0.0) || self.workers == 0 {
            return Err(Error::InvalidConfig("external timeout and workers must be positive".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(char::is_whitespace) {
            return Err(Error::InvalidConfig("external run_id must be a single non-empty token".into()));
        }
        Ok(())
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(config: &ExternalConfig) -> Result<Self, EvalError> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Process(format!("cannot start `{}`: {e}", config.command)))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Failure {
    /// The worker is unusable and the request may be retried.
    Retry(EvalError),
    /// The worker is unusable and the error is final.
    Fatal(EvalError),
    /// The worker stays usable and the error is final.
    Reply(EvalError),
}

/// Pool of evaluator processes speaking the line protocol.
pub struct ExternalEvaluator {
    config: ExternalConfig,
    idle: Mutex<Pool>,
    freed: Condvar,
}

struct Pool {
    workers: Vec<Worker>,
    running: usize,
}

impl ExternalEvaluator {
    pub fn new(config: ExternalConfig) -> Self {
        Self {
            config,
            idle: Mutex::new(Pool {
                workers: Vec::new(),
                running: 0,
            }),
            freed: Condvar::new(),
        }
    }

    pub fn request_line(&self, index: u64, params: &[f64]) -> String {
        let mut line = format!("EVAL {} {index}", self.config.run_id);
        for p in params {
            line.push_str(&format!(" {p:e}"));
        }
        line
    }

    fn checkout(&self) -> Result<Worker, EvalError> {
        let mut pool = self.idle.lock().expect("pool lock");
        loop {
            if let Some(w) = pool.workers.pop() {
                return Ok(w);
            }
            if pool.running < self.config.workers {
                pool.running += 1;
                drop(pool);
                return Worker::spawn(&self.config).inspect_err(|_| self.retire());
            }
            pool = self.freed.wait(pool).expect("pool lock");
        }
    }

    fn checkin(&self, worker: Worker) {
        self.idle.lock().expect("pool lock").workers.push(worker);
        self.freed.notify_one();
    }

    fn retire(&self) {
        self.idle.lock().expect("pool lock").running -= 1;
        self.freed.notify_one();
    }

    fn exchange(&self, worker: &mut Worker, index: u64, request: &str) -> Result<f64, Failure> {
        writeln!(worker.stdin, "{request}")
            .and_then(|_| worker.stdin.flush())
            .map_err(|e| Failure::Retry(EvalError::Process(format!("write failed: {e}"))))?;
        let timeout = Duration::from_secs_f64(self.config.timeout);
        let line = match worker.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Failure::Retry(EvalError::Process(format!("read failed: {e}")))),
            Err(RecvTimeoutError::Timeout) => return Err(Failure::Retry(EvalError::Timeout(self.config.timeout))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = worker.child.try_wait().ok().flatten();
                let what = status.map_or("closed its output".to_string(), |s| format!("exited with {s}"));
                return Err(Failure::Retry(EvalError::Process(format!("evaluator {what}"))));
            }
        };
        parse_response(&line, index)
    }
}

fn parse_response(line: &str, index: u64) -> Result<f64, Failure> {
    let malformed = || Failure::Fatal(EvalError::Malformed(line.to_string()));
    let mut parts = line.trim().splitn(3, char::is_whitespace);
    let tag = parts.next().unwrap_or("");
    let got: u64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(malformed)?;
    let rest = parts.next().map(str::trim).unwrap_or("");
    match tag {
        "OK" | "ERR" if got != index => Err(Failure::Fatal(EvalError::IndexMismatch { expected: index, got })),
        "OK" => match rest.parse::<f64>() {
            Ok(cost) if !cost.is_nan() => Ok(cost),
            _ => Err(malformed()),
        },
        "ERR" => Err(Failure::Reply(EvalError::Reported {
            index,
            message: rest.to_string(),
        })),
        _ => Err(malformed()),
    }
}

impl Objective for ExternalEvaluator {
    fn evaluate(&self, candidate: Candidate<'_>, index: u64) -> Result<f64, EvalError> {
        let Candidate::Params(params) = candidate else {
            return Err(EvalError::Rejected("the external evaluator scores parameter vectors".into()));
        };
        let request = self.request_line(index, params);
        let mut attempt = 0;
        loop {
            let mut worker = self.checkout()?;
            match self.exchange(&mut worker, index, &request) {
                Ok(cost) => {
                    self.checkin(worker);
                    return Ok(cost);
                }
                Err(Failure::Reply(e)) => {
                    self.checkin(worker);
                    return Err(e);
                }
                Err(Failure::Fatal(e)) => {
                    worker.kill();
                    self.retire();
                    return Err(e);
                }
                Err(Failure::Retry(e)) => {
                    worker.kill();
                    self.retire();
                    if attempt >= self.config.retries {
                        return Err(e);
                    }
                    attempt += 1;
                    log::warn!("evaluation {index}: {e}; retry {attempt}/{}", self.config.retries);
                }
            }
        }
    }

    fn concurrent(&self) -> bool {
        self.config.workers > 1
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Ok(pool) = self.idle.get_mut() {
            for w in pool.workers.drain(..) {
                w.kill();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(script: &str) -> ExternalConfig {
        let mut config = ExternalConfig::new("sh", ParameterSpace::uniform(3, -5.0, 5.0, 12).unwrap());
        config.args = vec!["-c".into(), script.into()];
        config.timeout = 5.0;
        config
    }

    const ECHO_SUM: &str = r#"while read tag run idx rest; do
        awk -v i="$idx" -v r="$rest" 'BEGIN { n = split(r, p, " "); s = 0; for (k = 1; k <= n; k++) s += p[k]; printf "OK %s %.17g\n", i, s }'
    done"#;

    #[test]
    fn request_uses_scientific_notation() {
        let eval = ExternalEvaluator::new(stub("cat"));
        assert_eq!(eval.request_line(7, &[0.5, -1.25e-8]), "EVAL run 7 5e-1 -1.25e-8");
        let back: f64 = "-1.25e-8".parse().unwrap();
        assert_eq!(back, -1.25e-8);
    }

    #[test]
    fn echo_sum_stub() {
        let eval = ExternalEvaluator::new(stub(ECHO_SUM));
        for (i, p) in [[1.0, 2.0, 3.5], [-0.25, 0.0, 0.125]].iter().enumerate() {
            let cost = eval.evaluate(Candidate::Params(p), i as u64).unwrap();
            assert_eq!(cost, p.iter().sum::<f64>());
        }
    }

    #[test]
    fn garbage_is_malformed() {
        let eval = ExternalEvaluator::new(stub("while read l; do echo 'hello world'; done"));
        let err = eval.evaluate(Candidate::Params(&[1.0, 2.0, 3.0]), 0).unwrap_err();
        assert!(matches!(err, EvalError::Malformed(_)), "{err:?}");
        let eval = ExternalEvaluator::new(stub("while read l; do echo 'OK 0 abc'; done"));
        let err = eval.evaluate(Candidate::Params(&[1.0, 2.0, 3.0]), 0).unwrap_err();
        assert!(matches!(err, EvalError::Malformed(_)), "{err:?}");
    }

    #[test]
    fn index_mismatch_is_detected() {
        let eval = ExternalEvaluator::new(stub("while read l; do echo 'OK 41 1.0'; done"));
        let err = eval.evaluate(Candidate::Params(&[1.0, 2.0, 3.0]), 3).unwrap_err();
        assert_eq!(err, EvalError::IndexMismatch { expected: 3, got: 41 });
    }

    #[test]
    fn reported_errors_keep_the_worker() {
        let eval = ExternalEvaluator::new(stub(
            r#"while read tag run idx rest; do if [ "$idx" = 0 ]; then echo "ERR $idx diverged"; else echo "OK $idx 2"; fi; done"#,
        ));
        let err = eval.evaluate(Candidate::Params(&[0.0; 3]), 0).unwrap_err();
        assert_eq!(
            err,
            EvalError::Reported {
                index: 0,
                message: "diverged".into()
            }
        );
        assert_eq!(eval.evaluate(Candidate::Params(&[0.0; 3]), 1).unwrap(), 2.0);
    }

    #[test]
    fn timeout_is_retried_then_reported() {
        let dir = tempfile::tempdir().unwrap();
        let counter = dir.path().join("starts");
        let script = format!("echo x >> {}; sleep 5", counter.display());
        let mut config = stub(&script);
        config.timeout = 0.2;
        config.retries = 2;
        let eval = ExternalEvaluator::new(config);
        let err = eval.evaluate(Candidate::Params(&[0.0; 3]), 0).unwrap_err();
        assert_eq!(err, EvalError::Timeout(0.2));
        let starts = std::fs::read_to_string(&counter).unwrap().lines().count();
        assert_eq!(starts, 3);
    }

    #[test]
    fn retry_recovers_from_a_slow_first_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("seen");
        let script = format!(
            "read tag run idx rest; if [ ! -e {m} ]; then touch {m}; sleep 5; fi; echo \"OK $idx 1.5\"",
            m = marker.display()
        );
        let mut config = stub(&script);
        config.timeout = 0.5;
        config.retries = 1;
        let eval = ExternalEvaluator::new(config);
        assert_eq!(eval.evaluate(Candidate::Params(&[0.0; 3]), 9).unwrap(), 1.5);
    }

    #[test]
    fn dead_process_is_a_process_error() {
        let eval = ExternalEvaluator::new(stub("exit 3"));
        let err = eval.evaluate(Candidate::Params(&[0.0; 3]), 0).unwrap_err();
        assert!(matches!(err, EvalError::Process(_)), "{err:?}");
    }

    #[test]
    fn workers_evaluate_concurrently() {
        let mut config = stub(ECHO_SUM);
        config.workers = 3;
        let eval = ExternalEvaluator::new(config);
        assert!(eval.concurrent());
        thread::scope(|s| {
            for t in 0..6u64 {
                let eval = &eval;
                s.spawn(move || {
                    let p = [t as f64, 1.0, 0.5];
                    assert_eq!(eval.evaluate(Candidate::Params(&p), t).unwrap(), t as f64 + 1.5);
                });
            }
        });
        assert!(eval.idle.lock().unwrap().running <= 3);
    }
}
