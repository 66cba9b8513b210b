"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --batch 16 --hidden 64 --repeat 50
"""
import argparse
import statistics
import time

import numpy as np

from multireward.policy import PolicyModel, loss_and_grad, reference_logprobs, snapshot_reference
from multireward.policy import model as model_module


def make_batch(rng, vocab, batch, controls, question, target, eos):
    out = []
    for _ in range(batch):
        out.append((
            list(rng.integers(vocab - controls, vocab, size=4)),
            list(rng.integers(0, vocab - controls - 4, size=question)),
            list(rng.integers(0, vocab - controls - 4, size=target)) + [eos],
        ))
    return out


def timed(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=55)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--question", type=int, default=6)
    ap.add_argument("--target", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = ["python"]
    if model_module.BACKEND == "cython":
        backends.append("cython")
    else:
        print("compiled kernels not available; timing the numpy fallback only")

    rng = np.random.default_rng(args.seed)
    bos, eos = args.vocab - 26, args.vocab - 25
    model = PolicyModel.initialize(args.vocab, args.hidden, bos, eos, seed=args.seed)
    reference = snapshot_reference(model)
    batch = make_batch(rng, args.vocab, args.batch, 22, args.question, args.target, eos)
    ref = reference_logprobs(reference, batch)

    print(f"V={args.vocab} H={args.hidden} batch={args.batch} "
          f"tokens/example={args.question + args.target + 6}, median of {args.repeat}")
    print(f"{'kernel':<12}{'backend':<10}{'ms':>10}")
    results = {}
    for backend in backends:
        fwd = timed(lambda: reference_logprobs(reference, batch, backend), args.repeat)
        grad = timed(lambda: loss_and_grad(model, batch, 0.05, 0.05, ref, backend=backend), args.repeat)
        results[backend] = (fwd, grad)
        print(f"{'forward':<12}{backend:<10}{fwd * 1e3:>10.3f}")
        print(f"{'loss+grad':<12}{backend:<10}{grad * 1e3:>10.3f}")
    if len(results) == 2:
        (pf, pg), (cf, cg) = results["python"], results["cython"]
        print(f"speedup: forward {pf / cf:.1f}x, loss+grad {pg / cg:.1f}x")
        _, g_py = loss_and_grad(model, batch, 0.05, 0.05, ref, backend="python")
        _, g_cy = loss_and_grad(model, batch, 0.05, 0.05, ref, backend="cython")
        print(f"max |grad difference|: {np.abs(g_py - g_cy).max():.2e}")


if __name__ == "__main__":
    main()
