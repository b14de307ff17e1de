import subprocess
import sys

import pytest

from kwspot.cli import DEFAULTS, main

SMALL = ["--set", "classes=4", "--set", "utterances=4", "--set", "clips=4",
         "--set", "train_utterances=2", "--set", "train_clips=2"]


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(root / "c"), "--seed", "3", *SMALL]) == 0
    assert main(["train", "--out", str(root / "c"), "--seed", "3", *SMALL, "--set", "steps=30"]) == 0
    return root


class TestGen:
    def test_byte_identical(self, workdir, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "again"), "--seed", "3", *SMALL]) == 0
        assert main(["gen", "--out", str(tmp_path / "twice"), "--seed", "3", *SMALL]) == 0
        fresh = tree(tmp_path / "again")
        assert fresh == tree(tmp_path / "twice")
        # the training run later overwrote config.resolved in the shared directory
        existing = {k: v for k, v in tree(workdir / "c").items() if k in fresh and k != "config.resolved"}
        assert existing == {k: v for k, v in fresh.items() if k != "config.resolved"}

    def test_manifest_counts(self, workdir):
        import json
        m = json.loads((workdir / "c" / "manifest.json").read_text())
        assert len(m["clips"]) == len(list((workdir / "c" / "clips").rglob("*.emb"))) == 16
        assert len(m["utterances"]) == 16

    def test_reload_matches_generation(self, workdir):
        from kwspot.embeddings import SyntheticCorpusSpec, dumps_embedding, generate_corpus, load_corpus
        mem = generate_corpus(SyntheticCorpusSpec(n_classes=4, utterances_per_class=4, clips_per_class=4, seed=3))
        disk = load_corpus(workdir / "c")
        assert disk.classes == mem.classes
        for uid, u in mem.utterances.items():
            assert dumps_embedding(disk.utterances[uid]) == dumps_embedding(u)

    def test_resolved_config(self, workdir):
        text = (workdir / "c" / "config.resolved").read_text()
        assert "seed=3\n" in text and "steps=30\n" in text
        assert len(text.splitlines()) == len(DEFAULTS)


class TestTrain:
    def test_loss_rows(self, workdir):
        lines = (workdir / "c" / "siamese_loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss" and len(lines) == 31

    def test_one_step_changes_weights(self, workdir, tmp_path):
        from kwspot.agents import AgentParams, load_agent
        assert main(["train", "--out", str(tmp_path), "--set", f"corpus={workdir / 'c'}", "--seed", "3",
                     *SMALL, "--set", "steps=1"]) == 0
        trained, _ = load_agent(tmp_path / "siamese.msp")
        init = AgentParams.init("siamese", 16, seed=3)
        assert trained.steps == 1
        assert any((t.data != init.named()[k].data).any() for k, t in trained.named().items())

    def test_resume_zero_steps_identical(self, workdir, tmp_path):
        ck = workdir / "c" / "siamese.msp"
        assert main(["train", "--out", str(tmp_path), "--set", f"corpus={workdir / 'c'}", "--seed", "3", *SMALL,
                     "--set", "steps=0", "--set", f"checkpoint={ck}"]) == 0
        assert (tmp_path / "siamese.msp").read_bytes() == ck.read_bytes()
        assert (tmp_path / "siamese_loss.csv").read_text() == "step,loss\n"

    def test_resume_continues_step_count(self, workdir, tmp_path):
        ck = workdir / "c" / "siamese.msp"
        assert main(["train", "--out", str(tmp_path), "--set", f"corpus={workdir / 'c'}", "--seed", "3", *SMALL,
                     "--set", "steps=2", "--set", f"checkpoint={ck}"]) == 0
        lines = (tmp_path / "siamese_loss.csv").read_text().splitlines()
        assert [l.split(",")[0] for l in lines[1:]] == ["31", "32"]

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "nothing"), "--set", "steps=1"]) == 2
        assert "manifest" in capsys.readouterr().err
        assert not (tmp_path / "nothing").exists()


class TestSpot:
    def _args(self, workdir, out, *extra):
        c = workdir / "c"
        return ["spot", "--out", str(out), "--set", f"checkpoint={c / 'siamese.msp'}",
                "--set", f"utterance={sorted((c / 'utterances').glob('*.emb'))[0]}",
                "--set", f"supports={c / 'clips'}", *extra]

    def test_trace_rows(self, workdir, tmp_path):
        from kwspot.embeddings import load_embedding, window_offsets, WindowSpec
        assert main(self._args(workdir, tmp_path)) == 0
        utt = load_embedding(sorted((workdir / "c" / "utterances").glob("*.emb"))[0])
        n_windows = len(window_offsets(len(utt), WindowSpec()))
        rows = (tmp_path / "trace.csv").read_text().splitlines()
        assert rows[0] == "window_offset,class_id,support_idx,score"
        assert len(rows) - 1 == n_windows * 4 * 4

    def test_threshold_above_one(self, workdir, tmp_path, capsys):
        assert main(self._args(workdir, tmp_path, "--set", "threshold=1.1")) == 0
        assert capsys.readouterr().out == ""

    def test_planted_keyword_found(self, tmp_path, capsys):
        c = tmp_path / "clean"
        assert main(["gen", "--out", str(c), "--set", "noise=0", *SMALL]) == 0
        assert main(["train", "--out", str(c), *SMALL, "--set", "noise=0", "--set", "steps=3000"]) == 0
        capsys.readouterr()
        utt = sorted((c / "utterances").glob("*.emb"))[0]
        assert main(["spot", "--out", str(tmp_path / "s"), "--set", f"checkpoint={c / 'siamese.msp'}",
                     "--set", f"utterance={utt}", "--set", f"supports={c / 'clips'}",
                     "--set", "threshold=0.8"]) == 0
        spotted = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
        assert utt.name.split("-u")[0] in spotted

    def test_dim_mismatch(self, workdir, tmp_path, capsys):
        other = tmp_path / "d8"
        assert main(["gen", "--out", str(other), "--set", "dim=8", "--set", "classes=2"]) == 0
        utt = sorted((other / "utterances").glob("*.emb"))[0]
        code = main(["spot", "--out", str(tmp_path / "s"), "--set", f"checkpoint={workdir / 'c' / 'siamese.msp'}",
                     "--set", f"utterance={utt}", "--set", f"supports={workdir / 'c' / 'clips'}"])
        err = capsys.readouterr().err
        assert code == 2 and "dim=8" in err and "dim=16" in err
        assert not (tmp_path / "s").exists()


class TestEvalRerank:
    def test_eval_outputs(self, workdir, tmp_path):
        args = ["eval", "--out", str(tmp_path), "--set", f"corpus={workdir / 'c'}", *SMALL,
                "--set", f"checkpoints={workdir / 'c' / 'siamese.msp'}", "--set", "N=1,2", "--set", "k=1,2",
                "--set", "runs=2"]
        assert main(args) == 0
        runs = (tmp_path / "eval_runs.csv").read_text().splitlines()
        assert runs[0] == "agent,N,k,run,precision,recall,f1" and len(runs) == 1 + 2 * 2 * 2
        assert (tmp_path / "random_baseline.csv").read_text().startswith("N,f1\n1,0.5\n")
        first = tree(tmp_path)
        assert main(args) == 0
        assert tree(tmp_path) == first

    def test_rerank_outputs(self, workdir, tmp_path):
        assert main(["rerank", "--out", str(tmp_path), "--set", f"corpus={workdir / 'c'}", *SMALL,
                     "--set", f"checkpoints={workdir / 'c' / 'siamese.msp'}", "--set", "N=2",
                     "--set", "k=1", "--set", "runs=2"]) == 0
        lines = (tmp_path / "wer.csv").read_text().splitlines()
        assert lines[0] == "agent,N,k,keyword_wer"
        assert [l.split(",")[0] for l in lines[1:]] == ["vanilla", "siamese"]

    def test_grid_defaults(self):
        assert DEFAULTS["runs"] == 10
        assert DEFAULTS["N"] == "1,5,10,15,20,25,30" and DEFAULTS["k"] == "1,4"


class TestUsage:
    def test_unknown_key(self, tmp_path, capsys):
        assert main(["gen", "--out", str(tmp_path / "x"), "--set", "colour=blue"]) == 1
        err = capsys.readouterr().err
        assert "usage" in err and "colour" in err
        assert not (tmp_path / "x").exists()

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--out", str(tmp_path / "x"), "--colour"])
        assert exc.value.code == 1
        assert not (tmp_path / "x").exists()

    def test_bad_value(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "x"), "--set", "classes=many"]) == 1

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# small corpus\nclasses = 2\nutterances=1  # one each\nclips=1\n")
        assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert len(list((tmp_path / "o" / "utterances").glob("*.emb"))) == 2

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("classes\n")
        assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_unknown_agent(self, tmp_path):
        assert main(["train", "--out", str(tmp_path), "--set", "agent=cnn"]) == 1

    def test_console_entry(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "kwspot.cli", "gen", "--out", str(tmp_path / "e"),
                              "--set", "classes=2"], capture_output=True, text=True)
        assert res.returncode == 0 and "2 classes" in res.stdout
