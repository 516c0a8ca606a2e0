//! Linear genetic programming: programs are instruction lists executed
//! top-to-bottom over a bank of registers.
//!
//! Register bank order (used for the flat "matrix" form): outputs, memory,
//! inputs (sensors then time functions), constants. Outputs and memory are
//! writable; inputs and constants are read-only.

mod variation;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use variation::{combine_programs, lgp_crossover, lgp_mutate, random_instruction, random_program, LgpConfig};

/// Magnitude bound applied to every instruction result.
pub const VALUE_LIMIT: f64 = 1e15;
const DIV_EPS: f64 = 1e-12;
const EXP_LIMIT: f64 = 1e6;
const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterLayout {
    pub outputs: usize,
    pub memory: usize,
    pub sensors: usize,
    #[serde(default)]
    pub time_functions: usize,
    pub constants: usize,
}

impl RegisterLayout {
    pub fn inputs(&self) -> usize {
        self.sensors + self.time_functions
    }

    pub fn variable_count(&self) -> usize {
        self.outputs + self.memory
    }

    pub fn readable_count(&self) -> usize {
        self.outputs + self.memory + self.inputs() + self.constants
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs == 0 {
            return Err(Error::InvalidConfig("LGP layout needs at least one output register".into()));
        }
        Ok(())
    }

    /// Register for a flat bank index.
    pub fn register(&self, flat: usize) -> Option<Register> {
        let mut i = flat;
        if i < self.outputs {
            return Some(Register::Out(i as u16));
        }
        i -= self.outputs;
        if i < self.memory {
            return Some(Register::Mem(i as u16));
        }
        i -= self.memory;
        if i < self.inputs() {
            return Some(Register::Input(i as u16));
        }
        i -= self.inputs();
        (i < self.constants).then_some(Register::Const(i as u16))
    }

    pub fn flat(&self, reg: Register) -> usize {
        match reg {
            Register::Out(i) => i as usize,
            Register::Mem(i) => self.outputs + i as usize,
            Register::Input(i) => self.variable_count() + i as usize,
            Register::Const(i) => self.variable_count() + self.inputs() + i as usize,
        }
    }

    pub fn contains(&self, reg: Register) -> bool {
        match reg {
            Register::Out(i) => (i as usize) < self.outputs,
            Register::Mem(i) => (i as usize) < self.memory,
            Register::Input(i) => (i as usize) < self.inputs(),
            Register::Const(i) => (i as usize) < self.constants,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Register {
    Out(u16),
    Mem(u16),
    Input(u16),
    Const(u16),
}

impl Register {
    pub fn is_writable(self) -> bool {
        matches!(self, Register::Out(_) | Register::Mem(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Tanh,
    Exp,
    Log,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Sin,
        Operator::Cos,
        Operator::Tanh,
        Operator::Exp,
        Operator::Log,
    ];

    pub fn is_unary(self) -> bool {
        matches!(
            self,
            Operator::Sin | Operator::Cos | Operator::Tanh | Operator::Exp | Operator::Log
        )
    }

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&o| o == self).unwrap_or(0)
    }

    /// Protected evaluation: total on finite inputs.
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let r = match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            Operator::Div => {
                if b.abs() < DIV_EPS {
                    a
                } else {
                    a / b
                }
            }
            Operator::Sin => a.sin(),
            Operator::Cos => a.cos(),
            Operator::Tanh => a.tanh(),
            Operator::Exp => a.exp().clamp(-EXP_LIMIT, EXP_LIMIT),
            Operator::Log => (a.abs() + LOG_EPS).ln(),
        };
        if r.is_nan() {
            0.0
        } else {
            r.clamp(-VALUE_LIMIT, VALUE_LIMIT)
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Div => "/",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
            Operator::Tanh => "tanh",
            Operator::Exp => "exp",
            Operator::Log => "log",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub arg1: Register,
    pub arg2: Register,
    pub op: Operator,
    pub dest: Register,
}

impl Instruction {
    pub fn reads(&self) -> impl Iterator<Item = Register> {
        let second = (!self.op.is_unary()).then_some(self.arg2);
        std::iter::once(self.arg1).chain(second)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgpProgram {
    pub layout: RegisterLayout,
    pub instructions: Vec<Instruction>,
    /// Initial values of the memory registers, fixed at creation.
    pub memory_init: Vec<f64>,
    /// Values of the constant registers, fixed at creation.
    pub constants: Vec<f64>,
}

impl LgpProgram {
    pub fn new(
        layout: RegisterLayout,
        instructions: Vec<Instruction>,
        memory_init: Vec<f64>,
        constants: Vec<f64>,
    ) -> Result<Self> {
        let program = Self {
            layout,
            instructions,
            memory_init,
            constants,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.memory_init.len() != self.layout.memory || self.constants.len() != self.layout.constants {
            return Err(Error::Contract("register values do not match layout".into()));
        }
        for (row, ins) in self.instructions.iter().enumerate() {
            let in_layout = self.layout.contains(ins.arg1)
                && self.layout.contains(ins.arg2)
                && self.layout.contains(ins.dest);
            if !in_layout || !ins.dest.is_writable() {
                return Err(Error::Contract(format!("instruction {row} references an invalid register")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Runs the program on the given sensor and time-function values and
    /// returns the output registers.
    pub fn eval(&self, sensors: &[f64], times: &[f64]) -> Vec<f64> {
        let mut bank = Vec::new();
        self.eval_with(sensors, times, &mut bank);
        bank.truncate(self.layout.outputs);
        bank
    }

    /// Like [`eval`](Self::eval) but reuses `bank` as register storage; the
    /// outputs are `bank[..layout.outputs]` afterwards.
    pub fn eval_with(&self, sensors: &[f64], times: &[f64], bank: &mut Vec<f64>) {
        debug_assert_eq!(sensors.len(), self.layout.sensors);
        debug_assert_eq!(times.len(), self.layout.time_functions);
        bank.clear();
        bank.resize(self.layout.outputs, 0.0);
        bank.extend_from_slice(&self.memory_init);
        bank.extend_from_slice(sensors);
        bank.extend_from_slice(times);
        bank.extend_from_slice(&self.constants);
        let layout = &self.layout;
        for ins in &self.instructions {
            let a = bank[layout.flat(ins.arg1)];
            let b = bank[layout.flat(ins.arg2)];
            bank[layout.flat(ins.dest)] = ins.op.apply(a, b);
        }
    }

    /// Indices of instructions whose result can reach an output register.
    pub fn effective_rows(&self) -> Vec<usize> {
        let mut live: HashSet<Register> = (0..self.layout.outputs as u16).map(Register::Out).collect();
        let mut keep = Vec::new();
        for (row, ins) in self.instructions.iter().enumerate().rev() {
            if live.remove(&ins.dest) {
                keep.push(row);
                live.extend(ins.reads());
            }
        }
        keep.reverse();
        keep
    }

    pub fn effective_len(&self) -> usize {
        self.effective_rows().len()
    }

    /// Program with every intron removed; outputs are unchanged on all inputs.
    pub fn remove_introns(&self) -> LgpProgram {
        let instructions = self
            .effective_rows()
            .into_iter()
            .map(|row| self.instructions[row])
            .collect();
        LgpProgram {
            instructions,
            ..self.clone()
        }
    }

    /// Duplicate-detection key: effective instructions plus register values.
    pub fn key(&self) -> Vec<u64> {
        let layout = &self.layout;
        let mut key = vec![
            layout.outputs as u64,
            layout.memory as u64,
            layout.inputs() as u64,
            layout.constants as u64,
        ];
        for row in self.effective_rows() {
            let ins = &self.instructions[row];
            key.push(
                (layout.flat(ins.arg1) as u64) << 48
                    | (layout.flat(ins.arg2) as u64) << 32
                    | (ins.op.id() as u64) << 16
                    | layout.flat(ins.dest) as u64,
            );
        }
        key.extend(self.memory_init.iter().chain(&self.constants).map(|v| v.to_bits()));
        key
    }

    /// `N x 4` matrix form: flat argument indices, operator id, flat destination.
    pub fn to_matrix(&self) -> Vec<[usize; 4]> {
        self.instructions
            .iter()
            .map(|ins| {
                [
                    self.layout.flat(ins.arg1),
                    self.layout.flat(ins.arg2),
                    ins.op.id(),
                    self.layout.flat(ins.dest),
                ]
            })
            .collect()
    }

    pub fn from_matrix(
        layout: RegisterLayout,
        matrix: &[[usize; 4]],
        memory_init: Vec<f64>,
        constants: Vec<f64>,
    ) -> Result<Self> {
        let reg = |flat: usize| {
            layout
                .register(flat)
                .ok_or_else(|| Error::Contract(format!("register index {flat} outside layout")))
        };
        let instructions = matrix
            .iter()
            .map(|row| {
                Ok(Instruction {
                    arg1: reg(row[0])?,
                    arg2: reg(row[1])?,
                    op: *Operator::ALL
                        .get(row[2])
                        .ok_or_else(|| Error::Contract(format!("unknown operator id {}", row[2])))?,
                    dest: reg(row[3])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, instructions, memory_init, constants)
    }

    fn register_name(&self, reg: Register) -> String {
        match reg {
            Register::Out(i) => format!("out{i}"),
            Register::Mem(i) => format!("m{i}"),
            Register::Input(i) if (i as usize) < self.layout.sensors => format!("s{}", i + 1),
            Register::Input(i) => format!("h{}", i as usize - self.layout.sensors + 1),
            Register::Const(i) => format!("c{i}"),
        }
    }

    /// One line per effective instruction, e.g. `out0 = s1 * c0`.
    pub fn listing(&self) -> String {
        self.effective_rows()
            .into_iter()
            .map(|row| {
                let ins = &self.instructions[row];
                let dest = self.register_name(ins.dest);
                let a = self.register_name(ins.arg1);
                if ins.op.is_unary() {
                    format!("{dest} = {}({a})", ins.op.symbol())
                } else {
                    format!("{dest} = {a} {} {}", ins.op.symbol(), self.register_name(ins.arg2))
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Closed-form expression of each output in terms of the sensors
    /// (`s1`, `s2`, ...) and time functions (`h1`, ...), with register
    /// constants inlined. Falls back to the instruction listing when the
    /// expansion becomes unreasonably long.
    pub fn expressions(&self) -> Vec<String> {
        const MAX_LEN: usize = 4096;
        let layout = &self.layout;
        let mut regs: Vec<String> = Vec::with_capacity(layout.readable_count());
        regs.extend((0..layout.outputs).map(|_| "0".to_string()));
        regs.extend(self.memory_init.iter().map(|v| format_const(*v)));
        regs.extend((0..layout.inputs()).map(|i| self.register_name(Register::Input(i as u16))));
        regs.extend(self.constants.iter().map(|v| format_const(*v)));
        for row in self.effective_rows() {
            let ins = &self.instructions[row];
            let a = &regs[layout.flat(ins.arg1)];
            let expr = if ins.op.is_unary() {
                format!("{}({a})", ins.op.symbol())
            } else {
                format!("({a} {} {})", ins.op.symbol(), regs[layout.flat(ins.arg2)])
            };
            if expr.len() > MAX_LEN {
                return vec![self.listing()];
            }
            regs[layout.flat(ins.dest)] = expr;
        }
        regs.truncate(layout.outputs);
        regs
    }
}

fn format_const(v: f64) -> String {
    let s = format!("{v:.4}");
    if v < 0.0 {
        format!("({s})")
    } else {
        s
    }
}

impl fmt::Display for LgpProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let exprs = self.expressions();
        if exprs.len() == 1 {
            return f.write_str(&exprs[0]);
        }
        for (i, e) in exprs.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "out{i} = {e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn layout() -> RegisterLayout {
        RegisterLayout {
            outputs: 1,
            memory: 1,
            sensors: 2,
            time_functions: 0,
            constants: 1,
        }
    }

    fn ins(arg1: Register, arg2: Register, op: Operator, dest: Register) -> Instruction {
        Instruction { arg1, arg2, op, dest }
    }

    use Register::*;

    #[test]
    fn sum_of_sensors() {
        let p = LgpProgram::new(layout(), vec![ins(Input(0), Input(1), Operator::Add, Out(0))], vec![0.0], vec![0.5])
            .unwrap();
        assert_eq!(p.eval(&[0.3, 0.5], &[]), vec![0.8]);
    }

    #[test]
    fn no_output_write_gives_zero() {
        let p = LgpProgram::new(layout(), vec![ins(Input(0), Input(1), Operator::Add, Mem(0))], vec![0.7], vec![0.5])
            .unwrap();
        assert_eq!(p.eval(&[0.3, 0.5], &[]), vec![0.0]);
    }

    #[test]
    fn two_instruction_trace() {
        let p = LgpProgram::new(
            layout(),
            vec![
                ins(Input(0), Const(0), Operator::Mul, Mem(0)),
                ins(Mem(0), Mem(0), Operator::Sin, Out(0)),
            ],
            vec![0.0],
            vec![0.5],
        )
        .unwrap();
        let out = p.eval(&[PI, 0.0], &[])[0];
        assert!((out - 1.0).abs() < 1e-15);
    }

    #[test]
    fn introns_removed() {
        let p = LgpProgram::new(
            layout(),
            vec![
                ins(Input(0), Input(1), Operator::Add, Mem(0)),
                ins(Input(0), Input(0), Operator::Sin, Out(0)),
            ],
            vec![0.0],
            vec![0.5],
        )
        .unwrap();
        let stripped = p.remove_introns();
        assert_eq!(stripped.instructions, vec![p.instructions[1]]);
        assert_eq!(stripped.remove_introns(), stripped);
    }

    #[test]
    fn overwritten_output_is_dead() {
        let p = LgpProgram::new(
            layout(),
            vec![
                ins(Input(0), Input(1), Operator::Add, Out(0)),
                ins(Input(0), Const(0), Operator::Mul, Out(0)),
            ],
            vec![0.0],
            vec![0.5],
        )
        .unwrap();
        assert_eq!(p.effective_rows(), vec![1]);
    }

    #[test]
    fn protected_operators() {
        assert_eq!(Operator::Div.apply(3.0, 0.0), 3.0);
        assert_eq!(Operator::Div.apply(3.0, 1e-13), 3.0);
        assert_eq!(Operator::Exp.apply(1e3, 0.0), 1e6);
        assert!(Operator::Log.apply(0.0, 0.0).is_finite());
        assert_eq!(Operator::Mul.apply(1e15, 1e15), VALUE_LIMIT);
        assert_eq!(Operator::Sub.apply(-1e15, 1e15), -VALUE_LIMIT);
    }

    #[test]
    fn matrix_round_trip_and_invalid_register() {
        let p = LgpProgram::new(
            layout(),
            vec![ins(Input(1), Const(0), Operator::Div, Out(0)), ins(Out(0), Mem(0), Operator::Sub, Mem(0))],
            vec![0.25],
            vec![0.5],
        )
        .unwrap();
        let m = p.to_matrix();
        assert_eq!(m[0], [3, 4, 3, 0]);
        let back = LgpProgram::from_matrix(layout(), &m, vec![0.25], vec![0.5]).unwrap();
        assert_eq!(back, p);
        assert!(LgpProgram::from_matrix(layout(), &[[9, 0, 0, 0]], vec![0.25], vec![0.5]).is_err());
        assert!(LgpProgram::new(layout(), vec![ins(Input(0), Input(0), Operator::Add, Input(1))], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn expression_rendering() {
        let p = LgpProgram::new(
            layout(),
            vec![
                ins(Input(0), Const(0), Operator::Mul, Mem(0)),
                ins(Mem(0), Mem(0), Operator::Sin, Out(0)),
            ],
            vec![0.0],
            vec![0.5],
        )
        .unwrap();
        assert_eq!(p.to_string(), "sin((s1 * 0.5000))");
        assert_eq!(p.listing(), "m0 = s1 * c0\nout0 = sin(m0)");
    }
}
