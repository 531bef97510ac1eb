"""Smoke test for the melseq_py extension.

Build first with `cargo build --release -p melseq-py`, then run
`python3 python/smoke_test.py`. Set MELSEQ_PY_LIB to point at a specific
shared library instead of the default release build.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module(tmp):
    lib = os.environ.get("MELSEQ_PY_LIB")
    if lib is None:
        name = {"darwin": "libmelseq_py.dylib", "win32": "melseq_py.dll"}.get(
            sys.platform, "libmelseq_py.so"
        )
        lib = ROOT / "target" / "release" / name
    lib = Path(lib)
    if not lib.exists():
        sys.exit(f"{lib} not found; run `cargo build --release -p melseq-py`")
    target = Path(tmp) / ("melseq_py.pyd" if sys.platform == "win32" else "melseq_py.so")
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("melseq_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def check(label, cond, detail=""):
    print(f"{'ok  ' if cond else 'FAIL'} {label} {detail}".rstrip())
    if not cond:
        raise SystemExit(1)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        m = load_module(tmp)
        tmp = Path(tmp)

        check("normalize_text", m.normalize_text("Dr.  Smith, 1!") == "dr. smith, 1!",
              repr(m.normalize_text("Dr.  Smith, 1!")))
        try:
            m.normalize_text("   ")
            check("empty text rejected", False)
        except ValueError:
            check("empty text rejected", True)

        w = m.guided_mask(3, 4, 0.2)
        expect = 1 - math.exp(-((0 / 3 - 3 / 4) ** 2) / (2 * 0.2**2))
        check("guided_mask", abs(w[0][3] - expect) < 1e-12 and w[0][0] == 0.0)

        sr = 22050
        x = [0.5 * math.sin(2 * math.pi * 440 * i / sr) for i in range(sr)]
        mags = m.stft_magnitudes(x, sr)
        check("stft shape", (len(mags), len(mags[0])) == (513, 1 + sr // 256))
        y = m.griffin_lim(mags, 60, sr)
        n = min(len(x), len(y))
        rebuilt = m.stft_magnitudes(y[:n], sr)
        num = sum((a - b) ** 2 for ra, rb in zip(rebuilt, mags) for a, b in zip(ra, rb))
        den = sum(b * b for rb in mags for b in rb)
        check("griffin_lim convergence", math.sqrt(num / den) < 0.2,
              f"sc={math.sqrt(num / den):.3f}")

        worst = max(e for _, e in m.gradcheck(0))
        check("gradcheck", worst < 1e-4, f"worst={worst:.2e}")

        ratings = ROOT / "crates" / "core" / "tests" / "fixtures" / "ratings_table.csv"
        mean, half, count = m.mos_stats(ratings)
        check("mos_stats", f"{mean:.3f} ± {half:.3f}" == "3.500 ± 0.642", f"n={count}")

        corpus = tmp / "corpus"
        m.make_synthetic_corpus(corpus, 12, 0)
        config = m.synthetic_config()
        log = m.train(corpus, tmp / "run", config=config, max_steps=4)
        check("train", [r["step"] for r in log] == [1, 2, 3, 4] and
              all(math.isfinite(r["mel"]) for r in log), f"last={log[-1]}")

        ckpt = tmp / "run" / "final.msqk"
        synth = m.Synthesizer(ckpt)
        out = synth.synthesize("abc", max_steps=20, seed=3, griffin_lim_iters=2)
        again = synth.synthesize("abc", max_steps=20, seed=3, griffin_lim_iters=2)
        check("synthesize deterministic", out.waveform == again.waveform, repr(out))
        cols = list(zip(*out.alignment))
        check("alignment columns sum to one",
              len(out.alignment) == 4 and all(abs(sum(c) - 1) < 1e-9 for c in cols))
        batch = synth.synthesize_batch(["abc", "ba"], max_steps=20, seed=3)
        check("batch matches single", batch[0].mel == synth.synthesize(
            "abc", max_steps=20, seed=3).mel)
        paths = out.write(tmp / "out", "abc")
        check("outputs written", all(Path(p).exists() for p in paths))

        data = bytearray(ckpt.read_bytes())
        data[len(data) // 2] ^= 0xFF
        bad = tmp / "bad.msqk"
        bad.write_bytes(bytes(data))
        try:
            m.Synthesizer(bad)
            check("corrupt checkpoint rejected", False)
        except m.CheckpointError as e:
            check("corrupt checkpoint rejected", True, str(e))

    print("smoke test passed")


if __name__ == "__main__":
    main()
