use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Instruction, LgpProgram, Operator, Register, RegisterLayout};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgpConfig {
    pub layout: RegisterLayout,
    pub operators: Vec<Operator>,
    /// Maximum program length `N_it`.
    pub max_instructions: usize,
    /// Minimum length of programs produced by crossover.
    pub min_instructions: usize,
    /// Effective (post-intron) length range of initial programs.
    pub init_length: [usize; 2],
    pub instruction_mutation_prob: f64,
    pub constant_mutation_prob: f64,
    pub constant_range: [f64; 2],
    pub memory_range: [f64; 2],
    pub max_init_attempts: usize,
}

impl Default for LgpConfig {
    fn default() -> Self {
        Self {
            layout: RegisterLayout {
                outputs: 1,
                memory: 1,
                sensors: 2,
                time_functions: 0,
                constants: 2,
            },
            operators: Operator::ALL.to_vec(),
            max_instructions: 50,
            min_instructions: 2,
            init_length: [5, 35],
            instruction_mutation_prob: 0.2,
            constant_mutation_prob: 0.1,
            constant_range: [0.0, 1.0],
            memory_range: [0.0, 1.0],
            max_init_attempts: 1000,
        }
    }
}

impl LgpConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.operators.is_empty() {
            return Err(Error::InvalidConfig("LGP operator set is empty".into()));
        }
        if self.min_instructions == 0 || self.min_instructions > self.max_instructions {
            return Err(Error::InvalidConfig(format!(
                "LGP length bounds [{}, {}] are invalid",
                self.min_instructions, self.max_instructions
            )));
        }
        for p in [self.instruction_mutation_prob, self.constant_mutation_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
            }
        }
        for [lo, hi] in [self.constant_range, self.memory_range] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("register range [{lo}, {hi}] is invalid")));
            }
        }
        check_length_range(self, self.init_length)
    }
}

fn check_length_range(config: &LgpConfig, [lo, hi]: [usize; 2]) -> Result<()> {
    if lo == 0 || lo > hi || hi > config.max_instructions {
        return Err(Error::InvalidConfig(format!(
            "length range [{lo}, {hi}] is impossible with at most {} instructions",
            config.max_instructions
        )));
    }
    Ok(())
}

fn random_register<R: Rng + ?Sized>(layout: &RegisterLayout, rng: &mut R) -> Register {
    let flat = rng.gen_range(0..layout.readable_count());
    layout.register(flat).expect("index drawn inside layout")
}

fn random_destination<R: Rng + ?Sized>(layout: &RegisterLayout, rng: &mut R) -> Register {
    let flat = rng.gen_range(0..layout.variable_count());
    layout.register(flat).expect("index drawn inside layout")
}

pub fn random_instruction<R: Rng + ?Sized>(layout: &RegisterLayout, operators: &[Operator], rng: &mut R) -> Instruction {
    Instruction {
        arg1: random_register(layout, rng),
        arg2: random_register(layout, rng),
        op: operators[rng.gen_range(0..operators.len())],
        dest: random_destination(layout, rng),
    }
}

fn uniform<R: Rng + ?Sized>([lo, hi]: [f64; 2], rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Random program whose effective length lies in `length_range` (inclusive).
/// After `max_init_attempts` draws the candidate closest to the range is returned.
pub fn random_program<R: Rng + ?Sized>(config: &LgpConfig, length_range: [usize; 2], rng: &mut R) -> Result<LgpProgram> {
    config.layout.validate()?;
    check_length_range(config, length_range)?;
    let [lo, hi] = length_range;
    let raw_max = config.max_instructions.min(2 * hi).max(lo);
    let layout = config.layout;
    let mut closest: Option<(usize, LgpProgram)> = None;
    for _ in 0..config.max_init_attempts.max(1) {
        let len = rng.gen_range(lo..=raw_max);
        let instructions = (0..len)
            .map(|_| random_instruction(&layout, &config.operators, rng))
            .collect();
        let program = LgpProgram {
            layout,
            instructions,
            memory_init: (0..layout.memory).map(|_| uniform(config.memory_range, rng)).collect(),
            constants: (0..layout.constants).map(|_| uniform(config.constant_range, rng)).collect(),
        };
        let effective = program.effective_len();
        let distance = if effective < lo {
            lo - effective
        } else {
            effective.saturating_sub(hi)
        };
        if distance == 0 {
            return Ok(program);
        }
        if closest.as_ref().is_none_or(|(d, _)| distance < *d) {
            closest = Some((distance, program));
        }
    }
    Ok(closest.expect("at least one attempt").1)
}

fn remap(reg: Register, layout: &RegisterLayout) -> Register {
    let wrap = |i: u16, n: usize| (i as usize % n) as u16;
    match reg {
        Register::Out(i) => Register::Out(wrap(i, layout.outputs)),
        Register::Mem(i) if layout.memory > 0 => Register::Mem(wrap(i, layout.memory)),
        Register::Input(i) if layout.inputs() > 0 => Register::Input(wrap(i, layout.inputs())),
        Register::Const(i) if layout.constants > 0 => Register::Const(wrap(i, layout.constants)),
        Register::Mem(i) | Register::Input(i) | Register::Const(i) => Register::Out(wrap(i, layout.outputs)),
    }
}

fn transplant<'a>(block: &'a [Instruction], host: &RegisterLayout) -> impl Iterator<Item = Instruction> + 'a {
    let host = *host;
    block.iter().map(move |ins| Instruction {
        arg1: remap(ins.arg1, &host),
        arg2: remap(ins.arg2, &host),
        op: ins.op,
        dest: remap(ins.dest, &host),
    })
}

/// Exchanges `a[start_a..start_a + len_a]` with `b[start_b..start_b + len_b]`.
/// Children keep their host's register values; imported instructions are
/// remapped into the host layout when the layouts differ.
pub fn swap_blocks(
    a: &LgpProgram,
    b: &LgpProgram,
    (start_a, len_a): (usize, usize),
    (start_b, len_b): (usize, usize),
) -> (LgpProgram, LgpProgram) {
    let block_a = &a.instructions[start_a..start_a + len_a];
    let block_b = &b.instructions[start_b..start_b + len_b];
    let build = |host: &LgpProgram, start: usize, len: usize, incoming: &[Instruction]| {
        let mut instructions = host.instructions[..start].to_vec();
        instructions.extend(transplant(incoming, &host.layout));
        instructions.extend_from_slice(&host.instructions[start + len..]);
        LgpProgram {
            instructions,
            ..host.clone()
        }
    };
    (build(a, start_a, len_a, block_b), build(b, start_b, len_b, block_a))
}

fn random_block<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    let block = rng.gen_range(1..=len);
    (rng.gen_range(0..=len - block), block)
}

/// Single-block crossover. Children longer than `max_instructions` are
/// truncated; draws producing a child shorter than `min_instructions` are
/// repeated.
pub fn lgp_crossover<R: Rng + ?Sized>(
    a: &LgpProgram,
    b: &LgpProgram,
    config: &LgpConfig,
    rng: &mut R,
) -> Result<(LgpProgram, LgpProgram)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("crossover parents must be non-empty".into()));
    }
    let mut last = None;
    for _ in 0..100 {
        let (mut ca, mut cb) = swap_blocks(a, b, random_block(a.len(), rng), random_block(b.len(), rng));
        ca.instructions.truncate(config.max_instructions);
        cb.instructions.truncate(config.max_instructions);
        if ca.len() >= config.min_instructions && cb.len() >= config.min_instructions {
            return Ok((ca, cb));
        }
        last = Some((ca, cb));
    }
    Ok(last.expect("loop ran"))
}

/// Replaces each instruction with a fresh random one with probability
/// `instruction_mutation_prob`; if none was selected, one instruction is
/// forced to change. With probability `constant_mutation_prob` one constant
/// register is also redrawn.
pub fn lgp_mutate<R: Rng + ?Sized>(parent: &LgpProgram, config: &LgpConfig, rng: &mut R) -> LgpProgram {
    let layout = parent.layout;
    let ops = &config.operators;
    let mut child = parent.clone();
    if child.instructions.is_empty() {
        child.instructions.push(random_instruction(&layout, ops, rng));
        return child;
    }
    let mut selected = false;
    for ins in child.instructions.iter_mut() {
        if rng.gen_bool(config.instruction_mutation_prob) {
            *ins = random_instruction(&layout, ops, rng);
            selected = true;
        }
    }
    if !selected {
        let row = rng.gen_range(0..child.instructions.len());
        let original = child.instructions[row];
        for _ in 0..100 {
            let fresh = random_instruction(&layout, ops, rng);
            if fresh != original {
                child.instructions[row] = fresh;
                break;
            }
        }
    }
    if layout.constants > 0 && rng.gen_bool(config.constant_mutation_prob) {
        let j = rng.gen_range(0..layout.constants);
        child.constants[j] = uniform(config.constant_range, rng);
    }
    child
}

/// Materialises `sum_k weights[k] * programs[k]` as a single program.
///
/// Every source program gets a private block of memory registers for its
/// outputs and memory, and private constants; the weights become additional
/// constants and the outputs accumulate the scaled results.
pub fn combine_programs(programs: &[&LgpProgram], weights: &[f64]) -> Result<LgpProgram> {
    let first = programs
        .first()
        .ok_or_else(|| Error::Contract("no programs to combine".into()))?;
    if programs.len() != weights.len() {
        return Err(Error::Contract("one weight per program is required".into()));
    }
    let outputs = first.layout.outputs;
    let (sensors, time_functions) = (first.layout.sensors, first.layout.time_functions);
    if programs
        .iter()
        .any(|p| p.layout.outputs != outputs || p.layout.sensors != sensors || p.layout.time_functions != time_functions)
    {
        return Err(Error::Contract("combined programs must share outputs and inputs".into()));
    }

    let mut memory_init = Vec::new();
    let mut constants = Vec::new();
    let mut instructions = Vec::new();
    let mut output_blocks = Vec::with_capacity(programs.len());
    for program in programs {
        let stripped = program.remove_introns();
        let mem_base = memory_init.len() as u16;
        let const_base = constants.len() as u16;
        let out_count = outputs as u16;
        memory_init.extend(std::iter::repeat_n(0.0, outputs));
        memory_init.extend_from_slice(&stripped.memory_init);
        constants.extend_from_slice(&stripped.constants);
        let relocate = |reg: Register| match reg {
            Register::Out(i) => Register::Mem(mem_base + i),
            Register::Mem(i) => Register::Mem(mem_base + out_count + i),
            Register::Const(i) => Register::Const(const_base + i),
            input @ Register::Input(_) => input,
        };
        instructions.extend(stripped.instructions.iter().map(|ins| Instruction {
            arg1: relocate(ins.arg1),
            arg2: relocate(ins.arg2),
            op: ins.op,
            dest: relocate(ins.dest),
        }));
        output_blocks.push(mem_base);
    }
    let temp = Register::Mem(memory_init.len() as u16);
    memory_init.push(0.0);
    let weight_base = constants.len() as u16;
    constants.extend_from_slice(weights);
    for (k, &mem_base) in output_blocks.iter().enumerate() {
        for o in 0..outputs as u16 {
            instructions.push(Instruction {
                arg1: Register::Const(weight_base + k as u16),
                arg2: Register::Mem(mem_base + o),
                op: Operator::Mul,
                dest: temp,
            });
            instructions.push(Instruction {
                arg1: Register::Out(o),
                arg2: temp,
                op: Operator::Add,
                dest: Register::Out(o),
            });
        }
    }
    let layout = RegisterLayout {
        outputs,
        memory: memory_init.len(),
        sensors,
        time_functions,
        constants: constants.len(),
    };
    LgpProgram::new(layout, instructions, memory_init, constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> LgpConfig {
        LgpConfig::default()
    }

    #[test]
    fn single_instruction_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_program(&config(), [1, 1], &mut rng).unwrap();
            let stripped = p.remove_introns();
            assert_eq!(stripped.len(), 1);
            assert!(matches!(stripped.instructions[0].dest, Register::Out(_)));
        }
    }

    #[test]
    fn registers_stay_in_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = random_program(&config(), [5, 35], &mut rng).unwrap();
            p.validate().unwrap();
        }
    }

    #[test]
    fn effective_length_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = random_program(&config(), [5, 35], &mut rng).unwrap().effective_len();
            assert!((5..=35).contains(&n), "{n}");
        }
    }

    #[test]
    fn impossible_ranges_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(random_program(&config(), [0, 3], &mut rng).is_err());
        assert!(random_program(&config(), [6, 3], &mut rng).is_err());
        assert!(random_program(&config(), [5, 51], &mut rng).is_err());
    }

    fn distinct_program(len: usize, seed: u64) -> LgpProgram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_program(&config(), [1, 1], &mut rng).unwrap();
        p.instructions = (0..len)
            .map(|_| random_instruction(&p.layout, &config().operators, &mut rng))
            .collect();
        p
    }

    #[test]
    fn whole_program_swap_exchanges_parents() {
        let a = distinct_program(4, 1);
        let b = distinct_program(6, 2);
        let (ca, cb) = swap_blocks(&a, &b, (0, 4), (0, 6));
        assert_eq!(ca.instructions, b.instructions);
        assert_eq!(cb.instructions, a.instructions);
        assert_eq!(ca.constants, a.constants);
    }

    #[test]
    fn swap_preserves_total_length_exhaustively() {
        let a = distinct_program(4, 5);
        let b = distinct_program(3, 6);
        for la in 1..=4 {
            for sa in 0..=4 - la {
                for lb in 1..=3 {
                    for sb in 0..=3 - lb {
                        let (ca, cb) = swap_blocks(&a, &b, (sa, la), (sb, lb));
                        assert_eq!(ca.len() + cb.len(), 7);
                        assert_eq!(ca.len(), 4 - la + lb);
                    }
                }
            }
        }
    }

    #[test]
    fn crossover_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = LgpConfig {
            max_instructions: 10,
            min_instructions: 2,
            ..config()
        };
        for _ in 0..500 {
            let a = distinct_program(rng.gen_range(1..=10), rng.gen());
            let b = distinct_program(rng.gen_range(1..=10), rng.gen());
            let (ca, cb) = lgp_crossover(&a, &b, &cfg, &mut rng).unwrap();
            for c in [&ca, &cb] {
                assert!(c.len() <= 10);
                c.validate().unwrap();
            }
        }
        let empty = LgpProgram {
            instructions: vec![],
            ..distinct_program(1, 0)
        };
        assert!(lgp_crossover(&empty, &distinct_program(3, 1), &cfg, &mut rng).is_err());
    }

    #[test]
    fn crossover_between_different_layouts_remaps() {
        let a = distinct_program(5, 10);
        let combined = combine_programs(&[&a, &distinct_program(5, 11)], &[0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let (x, y) = lgp_crossover(&a, &combined, &config(), &mut rng).unwrap();
            x.validate().unwrap();
            y.validate().unwrap();
        }
    }

    #[test]
    fn mutation_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let parent = distinct_program(12, 14);
        let none = LgpConfig {
            instruction_mutation_prob: 0.0,
            ..config()
        };
        for _ in 0..200 {
            let child = lgp_mutate(&parent, &none, &mut rng);
            let diff = child
                .instructions
                .iter()
                .zip(&parent.instructions)
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(diff, 1);
        }
        let all = LgpConfig {
            instruction_mutation_prob: 1.0,
            ..config()
        };
        let child = lgp_mutate(&parent, &all, &mut rng);
        assert_eq!(child.len(), parent.len());
        let same = child
            .instructions
            .iter()
            .zip(&parent.instructions)
            .filter(|(a, b)| a == b)
            .count();
        assert!(same <= 1);
    }

    #[test]
    fn mutants_stay_in_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut p = distinct_program(8, 16);
        for _ in 0..10_000 {
            p = lgp_mutate(&p, &config(), &mut rng);
            p.validate().unwrap();
        }
    }

    #[test]
    fn unit_weight_combination_matches_source() {
        let a = distinct_program(8, 20);
        let b = distinct_program(8, 21);
        let combo = combine_programs(&[&a, &b], &[1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let s = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            assert_eq!(combo.eval(&s, &[]), a.eval(&s, &[]));
        }
        let zero = combine_programs(&[&a, &b], &[0.0, 0.0]).unwrap();
        assert_eq!(zero.eval(&[0.3, -0.7], &[])[0], 0.0);
        let mixed = combine_programs(&[&a, &b], &[0.5, -2.0]).unwrap();
        let s = [0.4, 0.9];
        let expected = 0.5 * a.eval(&s, &[])[0] + -2.0 * b.eval(&s, &[])[0];
        assert!((mixed.eval(&s, &[])[0] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}
