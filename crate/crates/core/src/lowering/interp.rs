use std::collections::BTreeMap;

use crate::model_ir::{SparseMatrix, Tensor};
use crate::primitives::{apply_row_shuffle, kernels, psvm, spdmm, spdmm_columns, ddmm};

use super::{
    apply_dm_transform, apply_epilogue, shifted_add, Constant, LowerError, MatrixProgram, OpKind,
    Storage, ValueId,
};

/// Flat values of every program value (edge scores in pattern order).
#[derive(Clone, Debug, PartialEq)]
pub struct Values(pub Vec<Option<Vec<f32>>>);

impl Values {
    pub fn get(&self, id: ValueId) -> Option<&[f32]> {
        self.0.get(id).and_then(|v| v.as_deref())
    }

    /// Graph outputs in their logical shapes.
    pub fn outputs(&self, prog: &MatrixProgram) -> BTreeMap<String, Tensor> {
        prog.outputs
            .iter()
            .filter_map(|(name, id, shape)| {
                let v = self.get(*id)?.to_vec();
                Tensor::new(shape.dims(), v).ok().map(|t| (name.clone(), t))
            })
            .collect()
    }
}

fn sparse_operand(prog: &MatrixProgram, vals: &Values, id: ValueId) -> Result<SparseMatrix, LowerError> {
    match (&prog.value(id).storage, prog.constants.get(&id)) {
        (_, Some(Constant::Sparse(s))) => Ok(s.clone()),
        (Storage::Scores { pattern }, None) => {
            let Some(Constant::Sparse(p)) = prog.constants.get(pattern) else {
                return Err(LowerError::Program(format!("%{id} pattern is not sparse")));
            };
            Ok(p.with_values(vals.get(id).expect("scores computed")))
        }
        _ => Err(LowerError::Program(format!("%{id} is not a sparse operand"))),
    }
}

fn dense(prog: &MatrixProgram, vals: &Values, id: ValueId) -> Result<Tensor, LowerError> {
    let v = prog.value(id);
    let data = match prog.constants.get(&id) {
        Some(Constant::Dense(t)) => t.values().to_vec(),
        Some(Constant::Vector(x)) => x.clone(),
        Some(Constant::Sparse(s)) => s.to_dense().into_values(),
        None => vals
            .get(id)
            .ok_or_else(|| LowerError::Program(format!("%{id} read before it is computed")))?
            .to_vec(),
    };
    Ok(Tensor::new(vec![v.rows, v.cols], data)?)
}

/// Executes the untiled program with the primitives.
pub fn interpret(prog: &MatrixProgram) -> Result<Values, LowerError> {
    let mut vals = Values(vec![None; prog.values.len()]);
    for (_, id, t) in &prog.inputs {
        vals.0[*id] = Some(t.values().to_vec());
    }
    for op in &prog.ops {
        let out = prog.value(op.out);
        let (rows, cols) = (out.rows, out.cols);
        let mut keys = None;
        let mut result: Vec<f32> = match &op.kind {
            OpKind::MatMul { lhs, rhs, .. } => ddmm(&dense(prog, &vals, *lhs)?, &dense(prog, &vals, *rhs)?, None)?.into_values(),
            OpKind::SparseMatMul {
                adj,
                rhs,
                reduction,
                transposed,
            } => {
                let a = sparse_operand(prog, &vals, *adj)?;
                let d = dense(prog, &vals, *rhs)?;
                if *transposed {
                    spdmm_columns(&d, &a, *reduction)?.into_values()
                } else {
                    spdmm(&a, &d, *reduction, None)?.into_values()
                }
            }
            OpKind::SampledMatMul { pattern, lhs, rhs } => {
                let Some(Constant::Sparse(p)) = prog.constants.get(pattern) else {
                    return Err(LowerError::Program("SampledMatMul pattern must be constant".into()));
                };
                let x = dense(prog, &vals, *lhs)?;
                let y = dense(prog, &vals, *rhs)?;
                let (s1, s2) = x.matrix_dims()?;
                let s3 = y.matrix_dims()?.0;
                let samples: Vec<(usize, usize)> = p
                    .triples()
                    .iter()
                    .map(|t| (t.dst as usize, t.src as usize))
                    .collect();
                let mut acc = vec![0.0f32; samples.len()];
                kernels::sddmm_acc(
                    &mut acc,
                    &samples,
                    kernels::MatRef::new(x.values(), s1, s2),
                    kernels::MatRef::new(y.values(), s3, s2),
                );
                keys = Some(p.triples().iter().map(|t| t.dst).collect::<Vec<u32>>());
                acc.into_iter().map(crate::primitives::fp16_round).collect()
            }
            OpKind::ScaleRows { scale, rhs } => {
                let s = dense(prog, &vals, *scale)?;
                psvm(s.values(), &dense(prog, &vals, *rhs)?)?.into_values()
            }
            OpKind::Add { lhs, rhs, shifts } => {
                let a = dense(prog, &vals, *lhs)?;
                let b = dense(prog, &vals, *rhs)?;
                let (ac, bc) = (prog.value(*lhs).cols, prog.value(*rhs).cols);
                let mut z = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    shifted_add(
                        &a.values()[r * ac..(r + 1) * ac],
                        shifts[0].as_ref(),
                        &b.values()[r * bc..(r + 1) * bc],
                        shifts[1].as_ref(),
                        &mut z[r * cols..(r + 1) * cols],
                    );
                }
                z
            }
            OpKind::Transpose { input, dm, in_hw } => {
                let x = dense(prog, &vals, *input)?;
                let iv = prog.value(*input);
                apply_dm_transform(x.values(), iv.rows, iv.cols, dm, *in_hw)
            }
        };
        apply_epilogue(&mut result, cols, 0, 0, &op.epilogue, keys.as_deref());
        if keys.is_none() {
            result = apply_row_shuffle(result, rows, cols, op.output_shuffle.as_deref())?;
        }
        vals.0[op.out] = Some(result);
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowering::{lower_conv, lower_linear, lower_mp, lower_pool, lower_vip};
    use crate::model_ir::{ConvParams, PoolKind, Reduction, Triple};

    fn run(prog: &MatrixProgram) -> Tensor {
        let vals = interpret(prog).unwrap();
        vals.outputs(prog).into_values().next().unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let p = ConvParams {
            c_in: 2,
            c_out: 2,
            k1: 3,
            k2: 3,
            stride: 1,
            padding: 1,
            weight: "w".into(),
        };
        let mut w = vec![0.0; 2 * 2 * 9];
        w[4] = 1.0;
        w[3 * 9 + 4] = 1.0;
        let w = Tensor::new(vec![2, 2, 3, 3], w).unwrap();
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f32 * 0.25).collect()).unwrap();
        let out = run(&lower_conv(&p, &w, &x).unwrap());
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn message_passing_examples() {
        let a = SparseMatrix::new(
            3,
            3,
            vec![
                Triple::new(0, 1, 1.0),
                Triple::new(2, 1, 1.0),
                Triple::new(1, 0, 1.0),
                Triple::new(1, 2, 1.0),
            ],
        )
        .unwrap();
        let h = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let sum = run(&lower_mp(&a, Reduction::Sum, &h).unwrap());
        assert_eq!(sum.values(), &[2.0, 4.0, 2.0]);
        let max = run(&lower_mp(&a, Reduction::Max, &h).unwrap());
        assert_eq!(max.values(), &[2.0, 3.0, 2.0]);
        let id = run(&lower_mp(&SparseMatrix::identity(3), Reduction::Sum, &h).unwrap());
        assert_eq!(id, h);
    }

    #[test]
    fn linear_and_vip_examples() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(run(&lower_linear(&Tensor::identity(2), &x).unwrap()), x);
        let h = Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        // e_01: src 1, dst 0
        let p = SparseMatrix::new(2, 2, vec![Triple::new(1, 0, 1.0)]).unwrap();
        let s = run(&lower_vip(&p, false, &h).unwrap());
        assert_eq!(s.values(), &[1.0]);
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(run(&lower_pool(PoolKind::Max, 2, 2, &x).unwrap()).values(), &[4.0]);
        let c = Tensor::new(vec![2, 4, 4], vec![1.5; 32]).unwrap();
        let out = run(&lower_pool(PoolKind::Avg, 2, 2, &c).unwrap());
        assert!(out.values().iter().all(|v| *v == 1.5));
        assert_eq!(out.dims(), &[2, 2, 2]);
    }
}
