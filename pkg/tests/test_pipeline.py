import json

import numpy as np
import pytest

from lpfdr.io import RAW, ManifestEntry, ingest_partition, read_manifest, write_manifest, write_numbers
from lpfdr.pipeline import PipelineError, RunConfig, load_report, parse_report, pool_size, run_pipeline
from lpfdr.simulate import example2, mixture, write_partitions

ARTIFACTS = ("model.json", "summaries.jsonl", "report.json", "hchart.csv", "infomap.csv", "hchart.svg", "infomap.svg")
ALL_METHODS = ("smooth-bh", "local-fdr", "hc", "weighted-bh")


@pytest.fixture(scope="module")
def example2_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("ex2")
    manifest = write_partitions(example2(1), root / "data")
    cfg = RunConfig(manifest=str(manifest), methods=ALL_METHODS, output_dir=str(root / "out"), seed=0)
    return root, run_pipeline(cfg)


def _write_split(values, cuts, out_dir):
    """Write ``values`` cut at ``cuts`` into files under ``out_dir``; return the manifest."""
    out_dir.mkdir(parents=True)
    entries = []
    for i, chunk in enumerate(np.split(values, cuts)):
        path = out_dir / f"shard{i:03d}.csv"
        write_numbers(path, chunk)
        entries.append(ManifestEntry(str(path), RAW))
    write_manifest(out_dir / "manifest.json", entries)
    return out_dir / "manifest.json"


def _rejected_values(manifest, report):
    """Multiset of rejected p-values, independent of how the data were split."""
    out = []
    for e in read_manifest(manifest):
        p = ingest_partition(e.path, e.kind)
        out.extend(p.values[list(report.per_partition[p.id].rejected_indices)])
    return sorted(out)


class TestNullInput:
    def test_uniform_no_rejections(self, tmp_path):
        manifest = write_partitions(mixture(4000, 1.0, ("beta", 0.1, 1.0), k=5, seed=3), tmp_path / "d")
        res = run_pipeline(RunConfig(manifest=str(manifest), alpha=0.05, output_dir=str(tmp_path / "o")))
        for rep in res.reports.values():
            assert rep.total_rejected == 0
        raw = json.loads((tmp_path / "o" / "report.json").read_text())
        assert all(m["total_rejected"] == 0 for m in raw["methods"].values())


class TestExample2:
    def test_artifacts(self, example2_run):
        root, _ = example2_run
        for name in ARTIFACTS:
            assert (root / "out" / name).is_file(), name
        assert not list((root / "out").glob(".staging-*"))

    def test_hchart_rows(self, example2_run):
        root, _ = example2_run
        lines = (root / "out" / "hchart.csv").read_text().splitlines()
        assert lines[0] == "id,H" and len(lines) == 201

    def test_hchart_flags_first_eight(self, example2_run):
        _, res = example2_run
        chart = res.diagnostics["h_chart"]
        ref = res.diagnostics["h_reference"]["value"]
        top = sorted(chart, key=lambda r: -r["H"])[:8]
        assert sorted(r["id"] for r in top) == [f"part-{i:03d}" for i in range(1, 9)]
        assert all(r["H"] > ref for r in top)

    @pytest.mark.parametrize("method", ["hc", "weighted-bh"])
    def test_rejects_injected_signals(self, example2_run, method):
        root, res = example2_run
        truth = json.loads((root / "data" / "truth.json").read_text())
        hits = sum(len(set(d.rejected_indices) & set(truth[pid]))
                   for pid, d in res.reports[method].per_partition.items())
        assert hits >= 100

    def test_report_schema_roundtrip(self, example2_run):
        root, _ = example2_run
        text = (root / "out" / "report.json").read_text()
        rf = load_report(root / "out" / "report.json")
        assert rf.to_json() == text
        assert set(rf.reports) == set(ALL_METHODS)

    def test_schema_rejects_garbage(self, example2_run):
        import jsonschema

        root, _ = example2_run
        data = json.loads((root / "out" / "report.json").read_text())
        data["methods"]["smooth-bh"]["total_rejected"] = -1
        with pytest.raises(jsonschema.ValidationError):
            parse_report(data)


class TestPartitionInvariance:
    def test_two_manifests(self, tmp_path):
        rng = np.random.default_rng(8)
        u = rng.random(6000)
        sig = rng.random(6000) < 0.1
        u[sig] = rng.beta(0.1, 1.0, sig.sum())
        m1 = _write_split(u, [1000, 3000, 3100], tmp_path / "a")
        m2 = _write_split(rng.permutation(u), np.sort(rng.choice(np.arange(1, 6000), 40, replace=False)),
                          tmp_path / "b")
        r1 = run_pipeline(RunConfig(manifest=str(m1), output_dir=str(tmp_path / "oa")))
        r2 = run_pipeline(RunConfig(manifest=str(m2), output_dir=str(tmp_path / "ob")))
        assert (tmp_path / "oa" / "model.json").read_bytes() == (tmp_path / "ob" / "model.json").read_bytes()
        for method in ("smooth-bh", "local-fdr"):
            a = _rejected_values(m1, r1.reports[method])
            b = _rejected_values(m2, r2.reports[method])
            assert a == b
            assert len(a) > 0, method


class TestModes:
    def test_workers_byte_identical(self, tmp_path):
        manifest = write_partitions(mixture(3000, 0.9, ("beta", 0.2, 1.0), k=7, seed=5), tmp_path / "d")
        for mode in ("inprocess", "workers"):
            run_pipeline(RunConfig(manifest=str(manifest), methods=ALL_METHODS, mode=mode, workers=3,
                                   output_dir=str(tmp_path / mode)))
        for name in ARTIFACTS:
            assert (tmp_path / "inprocess" / name).read_bytes() == (tmp_path / "workers" / name).read_bytes(), name

    def test_pool_size_independent(self, tmp_path):
        manifest = write_partitions(mixture(2000, 0.9, ("normal", 2.5), k=6, seed=2), tmp_path / "d")
        outs = []
        for w in (1, 4):
            run_pipeline(RunConfig(manifest=str(manifest), workers=w, output_dir=str(tmp_path / f"w{w}")))
            outs.append((tmp_path / f"w{w}" / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_env_pool_size(self, monkeypatch):
        monkeypatch.setenv("LPFDR_THREADS", "3")
        assert pool_size() == 3
        assert pool_size(5) == 5
        monkeypatch.delenv("LPFDR_THREADS")
        assert 1 <= pool_size() <= 8


class TestFailures:
    def test_stage_tag_and_no_report(self, tmp_path):
        out = tmp_path / "o"
        out.mkdir()
        (out / "report.json").write_text("stale")
        bad = tmp_path / "bad.csv"
        bad.write_text("0.5\n1.5\n")
        with pytest.raises(PipelineError) as err:
            run_pipeline(RunConfig(input=[str(bad)], output_dir=str(out)))
        assert err.value.stage == "assign"
        assert "outside" in str(err.value)
        assert not (out / "report.json").exists()

    def test_worker_failure_in_subprocess(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("0.5\nabc\n")
        with pytest.raises(PipelineError, match="line|:2:"):
            run_pipeline(RunConfig(input=[str(bad)], mode="workers", output_dir=str(tmp_path / "o")))
        assert not (tmp_path / "o" / "report.json").exists()

    def test_missing_input(self):
        with pytest.raises(PipelineError) as err:
            run_pipeline(RunConfig())
        assert err.value.stage == "ingest"

    def test_duplicate_ids(self, tmp_path):
        for sub in ("x", "y"):
            (tmp_path / sub).mkdir()
            (tmp_path / sub / "same.csv").write_text("0.5\n0.25\n")
        with pytest.raises(PipelineError, match="twice|duplicate"):
            run_pipeline(RunConfig(input=[str(tmp_path / "x" / "same.csv"), str(tmp_path / "y" / "same.csv")],
                                   workers=1))

    def test_emit_failure_leaves_no_report(self, tmp_path, monkeypatch):
        import lpfdr.pipeline as pl

        manifest = write_partitions(mixture(500, 0.9, ("normal", 2.0), k=2, seed=1), tmp_path / "d")
        monkeypatch.setattr(pl, "infomap_csv", lambda pts: (_ for _ in ()).throw(OSError("disk full")))
        with pytest.raises(PipelineError) as err:
            run_pipeline(RunConfig(manifest=str(manifest), output_dir=str(tmp_path / "o")))
        assert err.value.stage == "emit"
        assert not (tmp_path / "o" / "report.json").exists()
        assert not list((tmp_path / "o").glob(".staging-*"))

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha0": 1.0}, {"m": 0}, {"eta": 0.0},
                                    {"methods": ("classical-bh",)}, {"mode": "cloud"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            RunConfig(input=["a.csv"], **kw)


class TestDeterminism:
    def test_repeat_runs(self, tmp_path):
        manifest = write_partitions(mixture(1500, 0.8, ("beta", 0.3, 1.0), k=4, seed=9), tmp_path / "d")
        for tag in ("a", "b"):
            run_pipeline(RunConfig(manifest=str(manifest), methods=ALL_METHODS, seed=4,
                                   output_dir=str(tmp_path / tag)))
        for name in ARTIFACTS:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_eta_override_recorded(self, tmp_path):
        manifest = write_partitions(mixture(1500, 0.8, ("beta", 0.3, 1.0), k=2, seed=9), tmp_path / "d")
        res = run_pipeline(RunConfig(manifest=str(manifest), eta=1.0), emit=False)
        assert res.report_dict()["eta_source"] == "override"
        assert res.model.eta == 1.0
