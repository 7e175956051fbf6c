"""Smoke test for the compiled extension.

Build first with `cargo build -p poincare-music-py --release` and put
target/release/libpoincare_music.so on the path as poincare_music.so,
or install with `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math
import pathlib
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import poincare_music as pm  # noqa: E402

FIXTURES = HERE.parent / "crates" / "core" / "tests" / "fixtures"


def main():
    d = pm.poincare_distance([0.3, 0.0], [0.0, 0.4])
    assert abs(d - 1.0891371665366823) < 1e-12, d

    assert abs(pm.beta_quantile(2.0, 1.0, 0.5) - math.sqrt(0.5)) < 1e-10
    assert abs(pm.gamma_quantile(1.0, 2.0, 0.05) + math.log(0.95) / 2) < 1e-10

    a, b = pm.fit_beta_prior([20, 30, 40, 50, 60], [3, 9, 8, 20, 12])
    assert a > 0 and b > 0
    shape, rate = pm.fit_gamma_prior([4, 10, 2, 30, 7], [10, 20, 5, 60, 30])
    assert shape > 0 and rate > 0

    diff, p = pm.permutation_test([10.0] * 3, [0.0] * 3, permutations=2000, seed=1)
    assert diff == 10.0 and 0.03 < p < 0.07, p

    with tempfile.TemporaryDirectory() as out:
        config = pathlib.Path(out) / "config.json"
        config.write_text(json.dumps({
            "spins": str(FIXTURES / "spins.jsonl"),
            "completions": str(FIXTURES / "completions.jsonl"),
            "dims": str(FIXTURES / "dims.jsonl"),
            "output_dir": out,
            "min_links": 3,
            "train": {"rank": 4, "epochs": 20, "rng_seed": 2},
        }))
        manifest = pm.run_pipeline(str(config))
        assert manifest["links"]["links"] > 0

        table = pm.EmbeddingTable.load(str(pathlib.Path(out) / "embeddings.tsv"))
        assert table.rank == 4 and len(table) == manifest["train"]["entities"]
        assert all(table.norm(e) < 1 for e in table.ids())

        artist = next(e for e in table.ids() if e.startswith("artist:"))
        recs = table.recommend([artist], kind="track", k=3)
        assert 0 < len(recs) <= 3
        assert [r[1] for r in recs] == sorted(r[1] for r in recs)
        assert abs(table.distance(artist, recs[0][0]) - recs[0][1]) < 1e-12

        report = table.evaluate(str(pathlib.Path(out) / "links.tsv"))
        assert report["model"] == "hyperbolic" and report["mean_rank"] >= 1

        retrained, losses = pm.train(str(pathlib.Path(out) / "links.tsv"), rank=3, epochs=5, seed=1)
        assert retrained.rank == 3 and len(losses) == 5

    try:
        pm.poincare_distance([0.1], [0.1, 0.2])
    except pm.PoincareMusicError:
        pass
    else:
        raise AssertionError("rank mismatch not reported")

    print("python smoke test: ok", table)


if __name__ == "__main__":
    main()
