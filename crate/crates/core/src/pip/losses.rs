use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Leading extent, used as the batch divisor.
fn batch_of<S: Scalar>(v: &Var<S>) -> f64 {
    v.shape().first().copied().unwrap_or(1).max(1) as f64
}

fn sum_all<S: Scalar>(tape: &Tape<S>, terms: Vec<Var<S>>) -> Result<Var<S>> {
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty loss sum".into()))?;
    it.try_fold(first, |acc, t| tape.add(&acc, &t))
}

/// Mean of the teacher's deltas in each consecutive window of `r` steps.
pub fn block_aggregate<S: Scalar>(tape: &Tape<S>, deltas: &[Var<S>], r: usize) -> Result<Vec<Var<S>>> {
    if r == 0 || deltas.is_empty() || deltas.len() % r != 0 {
        return Err(Error::Schedule(format!(
            "{} teacher steps cannot be split into windows of {r}",
            deltas.len()
        )));
    }
    deltas
        .chunks(r)
        .map(|w| {
            let s = sum_all(tape, w.to_vec())?;
            Ok(tape.scale(&s, S::of(1.0 / r as f64)))
        })
        .collect()
}

/// `Σ_s ‖Σ_{k≤s} student_k − Σ_{k≤s} block_k‖²`.
pub fn loss_cum<S: Scalar>(tape: &Tape<S>, student: &[Var<S>], blocks: &[Var<S>]) -> Result<Var<S>> {
    if student.len() != blocks.len() || student.is_empty() {
        return Err(Error::Schedule(format!(
            "student has {} deltas, teacher {} blocks",
            student.len(),
            blocks.len()
        )));
    }
    let mut terms = Vec::with_capacity(student.len());
    let (mut ps, mut pt) = (student[0].clone(), blocks[0].clone());
    for s in 0..student.len() {
        if s > 0 {
            ps = tape.add(&ps, &student[s])?;
            pt = tape.add(&pt, &blocks[s])?;
        }
        terms.push(tape.sq_dist(&ps, &pt, batch_of(&ps))?);
    }
    sum_all(tape, terms)
}

/// `‖student − target‖²`.
pub fn loss_final<S: Scalar>(tape: &Tape<S>, student: &Var<S>, target: &Var<S>) -> Result<Var<S>> {
    tape.sq_dist(student, target, batch_of(student))
}

/// `Σ_s ‖z_s − z^T_{rs}‖²` for student hiddens `z_1..z_S` against teacher
/// hiddens `z_0..z_T`.
pub fn loss_hid<S: Scalar>(tape: &Tape<S>, student: &[Var<S>], teacher: &[Var<S>], r: usize) -> Result<Var<S>> {
    if student.is_empty() {
        return Err(Error::InvalidArgument("no student hidden states".into()));
    }
    let last = r * student.len();
    if r == 0 || last >= teacher.len() {
        return Err(Error::Schedule(format!(
            "teacher has hidden states 0..{}, need index {last}",
            teacher.len().saturating_sub(1)
        )));
    }
    let terms = student
        .iter()
        .enumerate()
        .map(|(i, z)| tape.sq_dist(z, &teacher[r * (i + 1)], batch_of(z)))
        .collect::<Result<Vec<_>>>()?;
    sum_all(tape, terms)
}
