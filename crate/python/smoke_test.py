"""Smoke test for the entforge Python extension.

Build the module first:

    cargo build -p entforge-py --release --features extension-module

then run `python3 python/smoke_test.py`. If `entforge` is not importable the
script loads the freshly built library from target/.
"""

import importlib.util
import json
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_entforge():
    try:
        import entforge

        return entforge
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libentforge.so", "libentforge.dylib", "entforge.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                dest = pathlib.Path(tempfile.mkdtemp()) / "entforge.so"
                shutil.copy(lib, dest)
                spec = importlib.util.spec_from_file_location("entforge", dest)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("entforge extension not found; build crates/py with --features extension-module")


def main():
    ef = load_entforge()
    work = pathlib.Path(tempfile.mkdtemp())
    db, cfg = ef.create_fixture(str(work / "fixture"))

    adapter = ef.Adapter(db)
    tables = dict(adapter.list_nonempty_tables())
    assert tables == {"account": 4, "contact": 6, "note": 3, "opportunity": 5, "ticket": 5}, tables
    before = adapter.snapshot_digest()
    out = adapter.execute_rollback("DELETE FROM ticket WHERE status = ?", ["closed"])
    assert out["affected_rows"] == 2, out
    assert adapter.snapshot_digest() == before
    rows = adapter.execute("SELECT name FROM account WHERE id = ?", [1])["rows"]
    assert rows == [["Acme"]], rows

    assert ef.cache_key(["Contact", "account"]) == "092efa38816ead1b9600f1c9782e0d82"
    feats = ef.extract_features("SELECT COUNT(*) FROM ticket WHERE status = ? AND priority = ?")
    assert feats["n_aggregates"] == 1 and feats["n_where_predicates"] == 2, feats
    s = ef.score("SELECT name FROM account WHERE industry = ?", 3, 1)
    assert abs(s["total"] - 0.79) < 1e-12 and s["level"] == "easy", s
    assert ef.bucket(1.0) == "medium"

    summary = ef.run_all([cfg], str(work / "out"), [f"cache_dir={work / 'cache'}", "seed=7"])
    assert summary["exported"] > 0 and summary["digest_before"] == summary["digest_after"]
    tasks_path = summary["tasks_path"]
    tasks = json.loads(pathlib.Path(tasks_path).read_text())
    verdicts = ef.evaluate(tasks_path, db, self_check=True)
    assert len(verdicts) == len(tasks) and all(v["success"] for v in verdicts)
    first = tasks[0]
    wrong = ef.evaluate(tasks_path, db, answers={first["task_id"]: "definitely wrong"})
    assert not wrong[0]["success"]

    try:
        ef.Adapter(db, engine="oracle")
    except ef.EntforgeError as e:
        assert "unsupported" in str(e)
    else:
        raise AssertionError("unknown engine accepted")

    print(ef.stats(tasks_path), end="")
    print(f"smoke test ok: {summary['exported']} tasks, {len(verdicts)} verdicts")


if __name__ == "__main__":
    main()
