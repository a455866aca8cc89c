"""Compiled vs numpy kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each row reports the best-of-N wall time per call for both backends and the
speedup of the compiled one. The last row times a full rollout batch through
the generator and discriminator, which is where the kernels matter.
"""
import argparse
import json
import timeit

import numpy as np

from acgan_re import _pykernels, kernels
from acgan_re.adversarial import RolloutConfig, rollout_rewards
from acgan_re.discriminator import Discriminator, DiscriminatorConfig
from acgan_re.generator import Generator, GeneratorConfig


def kernel_cases(rng):
    B, L, F, H = 64, 40, 128, 120
    feat = rng.normal(size=(B, L, F))
    lengths = rng.integers(10, L + 1, size=B)
    e1 = np.array([rng.integers(0, n - 1) for n in lengths])
    e2 = np.array([rng.integers(a + 1, n) for a, n in zip(e1, lengths)])
    pos = (feat, e1, e2, lengths)
    _, arg = _pykernels.pool_forward(*pos)
    dpool = rng.normal(size=(B, 3, F))
    gates, c = rng.normal(size=(B * 6, 4 * H)), rng.normal(size=(B * 6, H))
    acts, tc2 = _pykernels.lstm_pointwise(gates, c)[2:4]
    dh, dc = rng.normal(size=c.shape), rng.normal(size=c.shape)
    probs = rng.dirichlet(np.ones(800), size=B * 6)
    u = rng.random(B * 6)
    return {
        "pool_forward": lambda m: m.pool_forward(*pos),
        "pool_backward": lambda m: m.pool_backward(dpool, arg, L),
        "lstm_pointwise": lambda m: m.lstm_pointwise(gates, c),
        "lstm_pointwise_backward": lambda m: m.lstm_pointwise_backward(dh, dc, c, acts, tc2),
        "sample_categorical": lambda m: m.sample_categorical(probs, u),
    }


def rollout_case():
    gen = Generator(GeneratorConfig(800, 6, max_len=30), seed=0)
    disc = Discriminator(DiscriminatorConfig(800, 6), seed=1)
    samples = gen.draw(np.arange(1, 17) % 5 + 1, np.random.default_rng(0))
    cfg = RolloutConfig(n_rollouts=6)

    def run(_):
        rollout_rewards(gen, disc, samples, cfg, np.random.default_rng(1))

    return run


def best(fn, arg, repeat, number):
    return min(timeit.repeat(lambda: fn(arg), repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", metavar="PATH", help="also write the results as JSON")
    args = ap.parse_args(argv)

    if "compiled" not in kernels.available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    import acgan_re._ckernels as compiled

    rows = []
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        t_py = best(fn, _pykernels, args.repeat, 20)
        t_c = best(fn, compiled, args.repeat, 20)
        rows.append({"case": name, "python_s": t_py, "compiled_s": t_c, "speedup": t_py / t_c})

    run = rollout_case()
    times = {}
    for backend in ("python", "compiled"):
        kernels.use(backend)
        times[backend] = best(run, None, max(1, args.repeat // 2), 1)
    kernels.use("auto")
    rows.append({
        "case": "rollout (16 x 6 completions)", "python_s": times["python"], "compiled_s": times["compiled"],
        "speedup": times["python"] / times["compiled"],
    })

    print(f"{'case':<30} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for r in rows:
        print(f"{r['case']:<30} {1e3 * r['python_s']:>10.3f} {1e3 * r['compiled_s']:>12.3f} {r['speedup']:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
