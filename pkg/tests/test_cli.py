import numpy as np
import pytest

from deepbow import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_memstats_reference_numbers(capsys):
    code, out, _ = run(["memstats", "--images", "1000000", "--keypoints", "500"], capsys)
    assert code == 0
    lines = out.splitlines()
    table = {row.split(",")[0]: row.split(",")[1:] for row in lines if "," in row}
    assert float(table["total"][0]) == 22.25
    assert abs(float(table["total"][1]) / 1024 - 12.13) <= 0.01
    assert abs(float(table["img_id"][2]) - 1.87) <= 0.05
    assert abs(float(table["local"][2]) - 7.48) <= 0.05
    kb_line = [l for l in lines if "per-image total" in l][0]
    assert abs(float(kb_line.split(":")[1].split()[0]) - 12.13) <= 0.01


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    paths = {
        "dataset": str(root / "ds.demb"),
        "truth": str(root / "gt.txt"),
        "vocab": str(root / "v.dvoc"),
        "lsh": str(root / "l.dlsh"),
        "index": str(root / "i.didx"),
    }
    small = [
        "-D", "groups=4", "-D", "keypoints=6", "-D", "d_ctx=8",
        "-D", "distractors=6", "-D", "k=12", "-D", "kmeans_iters=10",
    ]
    assert cli.main(["gen-synthetic", "--out", paths["dataset"],
                     "--truth-out", paths["truth"]] + small) == 0
    assert cli.main(["build-vocab", "--dataset", paths["dataset"],
                     "--vocab-out", paths["vocab"], "--lsh-out", paths["lsh"]] + small) == 0
    assert cli.main(["build-index", "--dataset", paths["dataset"],
                     "--vocab", paths["vocab"], "--lsh", paths["lsh"],
                     "--index-out", paths["index"]] + small) == 0
    paths["small"] = small
    return paths


def test_query_command_output(pipeline, capsys):
    code, out, _ = run(
        ["query", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
         "--lsh", pipeline["lsh"], "--index", pipeline["index"],
         "--query-id", "0", "-D", "top_k=5"],
        capsys,
    )
    assert code == 0
    rows = [line.split() for line in out.splitlines()]
    assert rows[0][0] == "1" and rows[0][1] == "0"  # self match first
    assert len(rows) <= 5
    scores = [float(r[2]) for r in rows]
    assert scores == sorted(scores, reverse=True)


def test_query_csv_format(pipeline, capsys):
    code, out, _ = run(
        ["query", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
         "--lsh", pipeline["lsh"], "--index", pipeline["index"],
         "--query-id", "1", "--format", "csv"],
        capsys,
    )
    assert code == 0
    assert out.splitlines()[0] == "rank,img_id,score"


def test_evaluate_reports_mean_ns(pipeline, capsys):
    code, out, _ = run(
        ["evaluate", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
         "--lsh", pipeline["lsh"], "--index", pipeline["index"],
         "--truth", pipeline["truth"]],
        capsys,
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "query_id,value"
    assert lines[-1].startswith("mean,")
    assert len(lines) == 1 + 16 + 1  # 16 queries
    mean = float(lines[-1].split(",")[1])
    assert 0.0 <= mean <= 4.0


def test_evaluate_map_metric(pipeline, capsys):
    code, out, _ = run(
        ["evaluate", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
         "--lsh", pipeline["lsh"], "--index", pipeline["index"],
         "--truth", pipeline["truth"], "-D", "metric=map"],
        capsys,
    )
    assert code == 0
    mean = float(out.splitlines()[-1].split(",")[1])
    assert 0.0 <= mean <= 1.0


def test_evaluate_thread_count_does_not_change_output(pipeline, capsys):
    outputs = []
    for threads in ("1", "4"):
        code, out, _ = run(
            ["evaluate", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
             "--lsh", pipeline["lsh"], "--index", pipeline["index"],
             "--truth", pipeline["truth"], "-D", f"threads={threads}"],
            capsys,
        )
        assert code == 0
        outputs.append(out)
    assert outputs[0] == outputs[1]


def test_evaluate_sweep_levels_grid(pipeline, capsys):
    code, out, _ = run(
        ["evaluate", "--dataset", pipeline["dataset"], "--vocab", pipeline["vocab"],
         "--lsh", pipeline["lsh"], "--index", pipeline["index"],
         "--truth", pipeline["truth"], "--sweep-levels"],
        capsys,
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "levels,mean_ns"
    assert len(lines) == 9
    assert lines[1].startswith("none,")
    assert any(l.startswith("global+local+regional,") for l in lines)


def test_pipeline_outputs_are_byte_identical_across_runs(tmp_path, pipeline):
    first, second = tmp_path / "a", tmp_path / "b"
    for d in (first, second):
        d.mkdir()
        assert cli.main(["gen-synthetic", "--out", str(d / "ds.demb"),
                         "--truth-out", str(d / "gt.txt")] + pipeline["small"]) == 0
        assert cli.main(["build-vocab", "--dataset", str(d / "ds.demb"),
                         "--vocab-out", str(d / "v.dvoc"),
                         "--lsh-out", str(d / "l.dlsh")] + pipeline["small"]) == 0
        assert cli.main(["build-index", "--dataset", str(d / "ds.demb"),
                         "--vocab", str(d / "v.dvoc"), "--lsh", str(d / "l.dlsh"),
                         "--index-out", str(d / "i.didx")] + pipeline["small"]) == 0
    for name in ("ds.demb", "gt.txt", "v.dvoc", "l.dlsh", "i.didx"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_zero_noise_pipeline_reaches_perfect_ns(tmp_path, capsys):
    flags = ["-D", "groups=3", "-D", "keypoints=6", "-D", "d_ctx=8",
             "-D", "distractors=4", "-D", "k=10", "-D", "kmeans_iters=10",
             "-D", "desc_noise=0", "-D", "ctx_noise=0"]
    ds, gt = str(tmp_path / "ds.demb"), str(tmp_path / "gt.txt")
    v, l, i = str(tmp_path / "v.dvoc"), str(tmp_path / "l.dlsh"), str(tmp_path / "i.didx")
    assert cli.main(["gen-synthetic", "--out", ds, "--truth-out", gt] + flags) == 0
    assert cli.main(["build-vocab", "--dataset", ds, "--vocab-out", v, "--lsh-out", l] + flags) == 0
    assert cli.main(["build-index", "--dataset", ds, "--vocab", v, "--lsh", l,
                     "--index-out", i] + flags) == 0
    code, out, _ = run(
        ["evaluate", "--dataset", ds, "--vocab", v, "--lsh", l, "--index", i,
         "--truth", gt] + flags, capsys)
    assert code == 0
    assert out.splitlines()[-1] == "mean,4"


def test_fit_curves_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    d = np.linspace(0.1, 1.5, 400)
    probs = np.exp(-((d / 0.8) ** 3))
    labels = (rng.random(400) < probs).astype(int)
    samples = tmp_path / "samples.csv"
    samples.write_text("".join(f"{x:.6f},{y}\n" for x, y in zip(d, labels)))
    code, out, _ = run(
        ["fit-curves", "--samples", str(samples), "-D", "exponent=3", "-D", "bins=10"],
        capsys,
    )
    assert code == 0
    assert out.splitlines()[0].startswith("# fitted: p=3 c=")
    assert out.splitlines()[1] == "bin_center,probability"


def test_unknown_config_key_is_usage_error(capsys):
    code, _, err = run(
        ["memstats", "--images", "10", "--keypoints", "5", "-D", "sigmaa=3"], capsys
    )
    assert code == 2
    assert "unknown config key" in err


def test_data_error_exit_code_and_name(tmp_path, capsys):
    bogus = tmp_path / "bogus.demb"
    bogus.write_bytes(b"not a dataset")
    code, _, err = run(
        ["build-vocab", "--dataset", str(bogus), "--vocab-out",
         str(tmp_path / "v"), "--lsh-out", str(tmp_path / "l")],
        capsys,
    )
    assert code == 1
    assert "BadMagic" in err


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["memstats", "--images", "10"])
    assert exc.value.code == 2


def test_config_precedence(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("ma=1\nsigma=10\n")
    cfg = cli.load_run_config(str(config), [], env={})
    assert cfg.ma == 1 and cfg.sigma == 10.0
    cfg = cli.load_run_config(str(config), [], env={"DEEPBOW_MA": "2"})
    assert cfg.ma == 2
    cfg = cli.load_run_config(str(config), ["ma=3"], env={"DEEPBOW_MA": "2"})
    assert cfg.ma == 3


def test_config_rejects_unknown_key_and_bad_value(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("zeta=1\n")
    with pytest.raises(cli.UsageError):
        cli.load_run_config(str(config), [], env={})
    config.write_text("ma=one\n")
    with pytest.raises(cli.UsageError):
        cli.load_run_config(str(config), [], env={})
    with pytest.raises(cli.UsageError):
        cli.load_run_config(None, ["burstiness=maybe"], env={})


def test_dump_srn_emits_plot_data(pipeline, capsys):
    code, out, _ = run(
        ["dump-srn", "--dataset", pipeline["dataset"], "--img-id", "2", "--slot", "0"],
        capsys,
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[1] == "component,raw,normalized"
    assert len(lines) == 2 + 8  # d_ctx=8 in the pipeline fixture
    normalized = np.array([float(l.split(",")[2]) for l in lines[2:]])
    assert abs(np.linalg.norm(normalized) - 1.0) < 1e-6
