use std::time::Instant;

use rayon::prelude::*;

use super::cost::{CostReport, LayerCost};
use super::program::{compile, PiProgram, Step, StepOp};
use crate::error::{Error, Result};
use crate::hesim::{
    batch_pack, batch_unpack, memory_snapshot, HeBackend, OpCounters, OpKind, PackedKind,
    PackedVec, PackingConfig, SimBackend,
};
use crate::nncore::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Result of running a program: output ciphertexts and per-layer counters.
#[derive(Clone, Debug)]
pub struct Execution<T = f64> {
    pub outputs: Vec<PackedVec<T>>,
    /// Merged over layers.
    pub counters: OpCounters,
    pub per_layer: Vec<OpCounters>,
}

/// Runs `program` on the simulated backend with `workers` threads.
pub fn execute<T: Scalar>(
    program: &PiProgram<T>,
    input: &[PackedVec<T>],
    workers: usize,
) -> Result<Execution<T>> {
    execute_with(
        &SimBackend::new(program.cfg.clone()),
        program,
        input,
        workers,
    )
}

pub fn execute_with<T: Scalar, B: HeBackend<T>>(
    backend: &B,
    program: &PiProgram<T>,
    input: &[PackedVec<T>],
    workers: usize,
) -> Result<Execution<T>> {
    if workers == 0 {
        return Err(Error::config("workers must be at least 1"));
    }
    if input.len() != program.input_len() {
        return Err(Error::Operand(format!(
            "program expects {} input ciphertexts, got {}",
            program.input_len(),
            input.len()
        )));
    }
    if let Some(bad) = input.iter().find(|v| v.kind() != PackedKind::Ciphertext) {
        return Err(Error::Operand(format!("input {} is a plaintext", bad.id())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    let mut current = input.to_vec();
    let mut per_layer = Vec::with_capacity(program.steps.len());
    let mut counters = OpCounters::default();
    // the caller's encrypted batch stays resident until inference returns
    let input_bytes = memory_snapshot(input, backend.config());
    for (i, step) in program.steps.iter().enumerate() {
        let resident = if i == 0 { 0 } else { input_bytes };
        let (next, c) = pool.install(|| run_step(backend, step, &current, resident))?;
        counters += c;
        per_layer.push(c);
        current = next;
    }
    Ok(Execution {
        outputs: current,
        counters,
        per_layer,
    })
}

fn with_context(step: &Step<impl Scalar>, e: Error) -> Error {
    match e {
        Error::DepthExhausted { context, level } => Error::DepthExhausted {
            context: format!("layer {} ({}) {context}", step.layer, step.kind),
            level,
        },
        other => other,
    }
}

/// Output vector, counters and plaintext bytes of one task.
type TaskResult<T> = Result<(PackedVec<T>, OpCounters, u64)>;

fn run_step<T: Scalar, B: HeBackend<T>>(
    backend: &B,
    step: &Step<T>,
    input: &[PackedVec<T>],
    resident: u64,
) -> Result<(Vec<PackedVec<T>>, OpCounters)> {
    let cfg = backend.config();
    if let StepOp::Flatten = step.op {
        let mut c = OpCounters::default();
        c.observe_live_bytes(resident + memory_snapshot(input, cfg));
        return Ok((input.to_vec(), c));
    }
    let results: Vec<(PackedVec<T>, OpCounters, u64)> = (0..step.out_len)
        .into_par_iter()
        .map(|t| run_task(backend, step, input, t).map_err(|e| with_context(step, e)))
        .collect::<Result<_>>()?;
    let mut counters = OpCounters::default();
    let mut widest = 0;
    let mut outputs = Vec::with_capacity(results.len());
    for (v, c, pt_bytes) in results {
        counters += c;
        widest = widest.max(pt_bytes);
        outputs.push(v);
    }
    counters.observe_live_bytes(
        resident + memory_snapshot(input, cfg) + memory_snapshot(&outputs, cfg) + widest,
    );
    Ok((outputs, counters))
}

fn run_task<T: Scalar, B: HeBackend<T>>(
    backend: &B,
    step: &Step<T>,
    input: &[PackedVec<T>],
    t: usize,
) -> TaskResult<T> {
    let mut c = OpCounters::default();
    let cfg = backend.config();
    let mut pt_bytes = 0u64;
    let mut encode = |w: T, level: u32| {
        pt_bytes += cfg.plaintext_bytes(level);
        backend.encode_scalar(w, level)
    };
    let out = match &step.op {
        StepOp::Linear {
            geometry,
            rows,
            columns,
        } => {
            let cols = columns.len();
            let (pos, f) = (t / cols, t % cols);
            let column = &columns[f];
            let level = input.first().map_or(step.in_level, PackedVec::level);
            let zero = backend.zero(level);
            let mut acc: Option<PackedVec<T>> = None;
            for &(m, w) in &column.terms {
                let x = match geometry {
                    None => Some(&input[m]),
                    Some(g) => g.source(pos / g.out_w, pos % g.out_w, m).map(|i| &input[i]),
                };
                let prod = backend.op(
                    OpKind::CtPtMul,
                    x.unwrap_or(&zero),
                    &encode(w, level),
                    &mut c,
                )?;
                acc = Some(match acc {
                    None => prod,
                    Some(a) => backend.op(OpKind::CtAdd, &a, &prod, &mut c)?,
                });
            }
            let k = column.terms.len() as u64;
            let m = *rows as u64;
            c.skipped_mul += m - k;
            c.skipped_add += (m - 1) - k.saturating_sub(1);
            let acc = match acc {
                Some(a) => a,
                None => backend.zero(level.saturating_sub(1)),
            };
            let bias = encode(column.bias, acc.level());
            backend.op(OpKind::CtPtAdd, &acc, &bias, &mut c)?
        }
        StepOp::AvgPool { geometry: g } => {
            let (pos, ch) = (t / g.channels, t % g.channels);
            let (u, v) = (pos / g.out_w, pos % g.out_w);
            let window = g.kernel_h * g.kernel_w;
            let mut acc: Option<PackedVec<T>> = None;
            for cell in 0..window {
                let src = g
                    .source(u, v, cell * g.channels + ch)
                    .expect("valid pooling window");
                acc = Some(match acc {
                    None => input[src].clone(),
                    Some(a) => backend.op(OpKind::CtAdd, &a, &input[src], &mut c)?,
                });
            }
            let acc = acc.expect("non-empty window");
            let scale = encode(T::one() / T::of_usize(window), acc.level());
            backend.op(OpKind::CtPtMul, &acc, &scale, &mut c)?
        }
        StepOp::Square => backend.op(OpKind::CtCtMul, &input[t], &input[t], &mut c)?,
        StepOp::Poly { coeffs } => {
            let d = coeffs.len() - 1;
            // powers[k] = x^k; index 0 is a placeholder
            let mut powers: Vec<PackedVec<T>> = vec![input[t].clone(), input[t].clone()];
            for k in 2..=d {
                let p = backend.op(
                    OpKind::CtCtMul,
                    &powers[k.div_ceil(2)],
                    &powers[k / 2],
                    &mut c,
                )?;
                powers.push(p);
            }
            let mut acc: Option<PackedVec<T>> = None;
            for (k, power) in powers.iter().enumerate().skip(1) {
                let term = backend.op(
                    OpKind::CtPtMul,
                    power,
                    &encode(coeffs[k], power.level()),
                    &mut c,
                )?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => backend.op(OpKind::CtAdd, &a, &term, &mut c)?,
                });
            }
            let acc = acc.expect("degree at least one");
            let c0 = encode(coeffs[0], acc.level());
            backend.op(OpKind::CtPtAdd, &acc, &c0, &mut c)?
        }
        StepOp::Flatten => unreachable!("handled per layer"),
    };
    Ok((out, c, pt_bytes))
}

/// Packs `batch` in chunks of at most `slots` instances, runs the compiled model and
/// unpacks the predictions. The report carries the measured counters summed over chunks.
pub fn infer<T: Scalar>(
    model: &Model<T>,
    batch: &Tensor<T>,
    cfg: &PackingConfig,
    workers: usize,
) -> Result<(Tensor<T>, CostReport)> {
    model.check_batch(batch)?;
    let program = compile(model, cfg)?;
    let start = Instant::now();
    let n = batch.rows();
    let mut per_layer = vec![OpCounters::default(); program.steps.len()];
    let mut rows = Vec::with_capacity(n * program.output_len());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(cfg.slots.max(1)) {
        let packed = batch_pack(&batch.select_rows(chunk), cfg)?;
        let run = execute(&program, &packed, workers)?;
        for (acc, c) in per_layer.iter_mut().zip(&run.per_layer) {
            *acc += *c;
        }
        rows.extend_from_slice(batch_unpack(&run.outputs, chunk.len()).data());
    }
    let wall = start.elapsed().as_secs_f64();
    let mut shape = vec![n];
    shape.extend_from_slice(&program.output_shape);
    let predictions = Tensor::new(shape, rows)?;
    let layers = program
        .steps
        .iter()
        .zip(per_layer)
        .map(|(step, c)| LayerCost {
            layer: step.layer,
            kind: step.kind.into(),
            units: step.units(),
            total: c.executed() + c.skipped(),
            executed: c.executed(),
            live_bytes: c.peak_live_bytes,
            output_level: step.out_level,
            counters: c,
        })
        .collect();
    Ok((
        predictions,
        CostReport::assemble(layers, program.static_depth, cfg, Some(wall)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{Layer, LayerKind, ModelBuilder, Padding};
    use crate::pi::analyze_cost;

    fn cfg() -> PackingConfig {
        PackingConfig::default().with_slots(8).unwrap()
    }

    fn small_cnn() -> Model<f64> {
        ModelBuilder::new(&[6, 6, 2])
            .conv(3, 3, 2, Padding::Same)
            .poly(2)
            .avg_pool(1)
            .flatten()
            .dense(5)
            .square()
            .dense(3)
            .poly_init(0.3)
            .build(5)
            .unwrap()
    }

    fn batch(n: usize, len: usize) -> Tensor<f64> {
        Tensor::from_f64(
            &[n, 6, 6, 2],
            &(0..n * len)
                .map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.4)
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_returns_inputs() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let layer = Layer::with_params(
            LayerKind::Dense { units: 3 },
            &[3],
            vec![w, Tensor::zeros(&[3])],
        )
        .unwrap();
        let m = Model::from_layers(&[3], vec![layer]).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[1., -2., 3., 0.5, 0.25, -8.]).unwrap();
        let (y, report) = infer(&m, &x, &cfg(), 1).unwrap();
        assert_eq!(y, x);
        assert_eq!(report.executed_ops, 3 * 2);
        assert_eq!(report.skipped_ops, 3 * (2 + 2));
    }

    #[test]
    fn matches_plaintext_forward_and_static_counts() {
        let m = small_cnn();
        let x = batch(5, 72);
        let plain = m.forward(&x).unwrap();
        let (he, report) = infer(&m, &x, &cfg(), 2).unwrap();
        assert!(
            he.max_abs_diff(&plain) <= 1e-12,
            "{}",
            he.max_abs_diff(&plain)
        );
        let stat = analyze_cost(&m, &cfg()).unwrap();
        assert_eq!(report.totals, stat.totals);
        assert_eq!(report.per_layer, stat.per_layer);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = small_cnn();
        let program = compile(&m, &cfg()).unwrap();
        let packed = batch_pack(&batch(8, 72).reshape(&[8, 72]).unwrap(), &cfg()).unwrap();
        let one = execute(&program, &packed, 1).unwrap();
        let many = execute(&program, &packed, 8).unwrap();
        assert_eq!(one.counters, many.counters);
        for (a, b) in one.outputs.iter().zip(&many.outputs) {
            assert_eq!(a.slots(), b.slots());
        }
    }

    #[test]
    fn chunks_batches_larger_than_slot_count() {
        let m = small_cnn();
        let x = batch(19, 72);
        let (he, report) = infer(&m, &x, &cfg(), 1).unwrap();
        assert!(he.max_abs_diff(&m.forward(&x).unwrap()) <= 1e-12);
        let stat = analyze_cost(&m, &cfg()).unwrap();
        assert_eq!(report.executed_ops, 3 * stat.executed_ops);
    }

    #[test]
    fn exhausted_levels_name_the_layer() {
        let m: Model<f64> = ModelBuilder::new(&[2])
            .dense(2)
            .square()
            .dense(1)
            .build(0)
            .unwrap();
        let c = cfg();
        let program = compile(&m, &c).unwrap();
        let low = vec![PackedVec::encrypt(&[1.0], c.slots, 2).unwrap(); 2];
        match execute(&program, &low, 1) {
            Err(Error::DepthExhausted { context, level: 0 }) => {
                assert!(context.starts_with("layer 2 (Dense)"), "{context}")
            }
            other => panic!("{other:?}"),
        }
        assert!(execute(&program, &low[..1], 1).is_err());
        assert!(execute(&program, &low, 0).is_err());
    }
}
