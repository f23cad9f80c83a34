import pytest

from jumptame.cli import main, parse_config, run
from jumptame.schemes import Scheme


def test_parse_full_example():
    cfg = parse_config(
        "--problem cubic --mode converge --levels 16,32,64,128,256,512 --ref 8192 "
        "--paths 1000 --p 2 --seed 42 --out report.csv".split()
    )
    assert cfg.problem_key == "cubic" and cfg.mode == "converge"
    assert cfg.levels == [16, 32, 64, 128, 256, 512]
    assert (cfg.ref_steps, cfg.n_paths, cfg.p, cfg.seed) == (8192, 1000, 2.0, 42)
    assert cfg.output_path == "report.csv"
    assert cfg.schemes == [Scheme.NCTS, Scheme.STS, Scheme.CTS]


def test_missing_problem_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        parse_config(["--mode", "converge"])
    assert exc.value.code == 2


def test_bad_ladder_names_level_and_ref(capsys):
    with pytest.raises(SystemExit) as exc:
        parse_config("--problem cubic --levels 16,48 --ref 8192".split())
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "48" in err and "8192" in err


@pytest.mark.parametrize(
    "argv",
    [
        "--problem cubic --bogus 1",
        "--problem cubic --levels 32,16",
        "--problem cubic --paths 0",
        "--problem cubic --scheme RK4",
        "--problem cubic --mode sideways",
    ],
)
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        parse_config(argv.split())
    assert exc.value.code == 2


def test_config_file_and_precedence(tmp_path, monkeypatch):
    conf = tmp_path / "exp.conf"
    conf.write_text("# experiment\nproblem = cubic\nmode=moments\nlevels=4,8\nref=64\nseed=5  # inline\n")
    cfg = parse_config(["--config", str(conf), "--seed", "6"])
    assert (cfg.mode, cfg.levels, cfg.ref_steps, cfg.seed) == ("moments", [4, 8], 64, 6)
    monkeypatch.setenv("JUMPTAME_SEED", "77")
    assert parse_config(["--problem", "cubic"]).seed == 77
    assert parse_config(["--config", str(conf)]).seed == 5
    bad = tmp_path / "bad.conf"
    bad.write_text("colour=blue\n")
    with pytest.raises(SystemExit):
        parse_config(["--config", str(bad)])


def test_repeatable_scheme_flag():
    cfg = parse_config("--problem cubic --scheme cts --scheme EM".split())
    assert cfg.schemes == [Scheme.CTS, Scheme.EM]


def test_diverge_noise_free(tmp_path, capsys):
    out = tmp_path / "div.csv"
    code = main(
        f"--problem cubic --mode diverge --levels 32 --horizon 16 --noise-free --paths 2 --out {out}".split()
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scheme,dt,steps,threshold,n_paths,fraction"
    assert "EM,0.5,32,1000000,2,1" in lines
    assert "NCTS,0.5,32,1000000,2,0" in lines
    assert "EM:" in capsys.readouterr().out


def test_moments_zero_problem(tmp_path):
    out = tmp_path / "m.csv"
    assert main(f"--problem zero --mode moments --scheme CTS --levels 8 --ref 64 --paths 4 --out {out}".split()) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scheme,steps,n,q,moment"
    assert len(lines) == 10
    assert {ln.split(",")[-1] for ln in lines[1:]} == {"1"}


def test_converge_csv_contract(tmp_path, capsys):
    out = tmp_path / "c.csv"
    argv = f"--problem cubic --levels 8,16,32 --ref 256 --paths 30 --seed 3 --out {out}".split()
    assert main(argv) == 0
    text = out.read_text()
    lines = text.splitlines()
    assert lines[0] == "scheme,level_steps,dt,p,error,std_err,n_paths,excluded"
    assert len(lines) == 1 + 3 * 3
    err = lines[1].split(",")[4]
    assert len(err.replace(".", "").replace("e-", "").lstrip("0")) >= 15
    summary = capsys.readouterr().out
    assert summary.count("fitted_order=") == 3
    out2 = tmp_path / "c2.csv"
    assert main(argv[:-1] + [str(out2), "--threads", "3"]) == 0
    assert out2.read_bytes() == out.read_bytes()


def test_unwritable_output(tmp_path):
    cfg = parse_config(f"--problem cubic --levels 8 --ref 64 --paths 2 --out {tmp_path}/no/such/file.csv".split())
    assert run(cfg) == 1
