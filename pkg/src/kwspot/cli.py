"""Command-line front end: ``kwspot {gen,train,spot,eval,rerank}``.

Settings come from an optional ``key=value`` config file, then ``--seed``
and repeated ``--set key=value`` overrides.  Every run writes the resolved
settings to ``<out>/config.resolved``.  Exit codes: 0 success, 1 usage or
config error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .agents import SupportSet, load_agent, spot, write_trace_csv
from .embeddings import (EmbeddingFormatError, SyntheticCorpusSpec, WindowSpec, generate_corpus,
                         load_corpus, load_embedding, save_corpus)
from .evaluation import random_baseline_exact, run_grid
from .rerank import load_hypotheses, make_hypothesis_corpus, save_hypotheses, wer_grid, write_wer_csv
from .training import TrainConfig, state_arrays, state_from_arrays, train

log = logging.getLogger("kwspot")

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "agent": "siamese",
    "steps": 800_000,
    "margin": 5.0,
    "lr": 0.001,
    "rho": 0.9,
    "checkpoint_interval": 0,
    "dim": 16,
    "window": 16,
    "hop": 4,
    "classes": 30,
    "utterances": 8,
    "clips": 8,
    "train_utterances": 4,
    "train_clips": 4,
    "template_min": 12,
    "template_max": 16,
    "background_min": 4,
    "background_max": 16,
    "noise": 0.1,
    "stretch": 0.0,
    "background_sigma": "",
    "beam": 4,
    "hidden_rate": 0.5,
    "confusable_rate": 0.5,
    "trap_rate": 0.5,
    "corpus": "",
    "checkpoint": "",
    "checkpoints": "",
    "threshold": "",
    "utterance": "",
    "supports": "",
    "hypotheses": "",
    "N": "1,5,10,15,20,25,30",
    "k": "1,4",
    "runs": 10,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def resolve(raw: dict[str, str]) -> dict[str, object]:
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    for key, value in raw.items():
        kind = type(DEFAULTS[key])
        try:
            cfg[key] = kind(value)
        except ValueError:
            raise UsageError(f"config key {key}: cannot parse {value!r} as {kind.__name__}") from None
    return cfg


def int_list(value: str, key: str) -> list[int]:
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"config key {key}: expected comma-separated integers, got {value!r}") from None


def write_resolved(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    text = "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))
    (out / "config.resolved").write_text(text, encoding="utf-8")


def window_spec(cfg) -> WindowSpec:
    try:
        return WindowSpec(int(cfg["window"]), int(cfg["hop"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def corpus_dir(cfg, out: Path) -> Path:
    path = Path(cfg["corpus"]) if cfg["corpus"] else out
    if not (path / "manifest.json").is_file():
        raise DataError(f"no corpus manifest at {path / 'manifest.json'}; run 'kwspot gen' first")
    return path


def corpus_spec(cfg) -> SyntheticCorpusSpec:
    try:
        return SyntheticCorpusSpec(
            n_classes=cfg["classes"], dim=cfg["dim"],
            template_len=(cfg["template_min"], cfg["template_max"]),
            background_len=(cfg["background_min"], cfg["background_max"]),
            noise_sigma=cfg["noise"], stretch=cfg["stretch"],
            background_sigma=float(cfg["background_sigma"]) if cfg["background_sigma"] != "" else None,
            utterances_per_class=cfg["utterances"], clips_per_class=cfg["clips"], seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def split(corpus, cfg):
    return corpus.split(cfg["train_utterances"], cfg["train_clips"])


def load_agents(cfg):
    paths = [p for p in str(cfg["checkpoints"] or cfg["checkpoint"]).split(",") if p]
    if not paths:
        raise UsageError("set checkpoints=<path>[,<path>...]")
    agents = {}
    for p in paths:
        try:
            params, _ = load_agent(p)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load checkpoint {p}: {exc}") from None
        name = params.kind
        while name in agents:
            name += "'"
        agents[name] = params
    return agents


def threshold(cfg):
    return float(cfg["threshold"]) if cfg["threshold"] != "" else None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(cfg, out: Path):
    spec = corpus_spec(cfg)
    write_resolved(cfg, out)
    corpus = generate_corpus(spec)
    manifest = save_corpus(corpus, out)
    labels = {uid: u.label for uid, u in corpus.utterances.items()}
    hyps = make_hypothesis_corpus(labels, corpus.classes, seed=cfg["seed"], beam=cfg["beam"],
                                  hidden_rate=cfg["hidden_rate"], confusable_rate=cfg["confusable_rate"],
                                  trap_rate=cfg["trap_rate"])
    save_hypotheses(hyps, out / "hypotheses.txt")
    print(f"wrote {len(manifest['clips'])} clips, {len(manifest['utterances'])} utterances "
          f"for {len(corpus.classes)} classes to {out}")


def cmd_train(cfg, out: Path):
    spec = window_spec(cfg)
    tc = TrainConfig(steps=cfg["steps"], seed=cfg["seed"], margin=cfg["margin"], lr=cfg["lr"], rho=cfg["rho"],
                     checkpoint_interval=cfg["checkpoint_interval"])
    root = corpus_dir(cfg, out)
    init = state = None
    if cfg["checkpoint"]:
        try:
            init, extra = load_agent(cfg["checkpoint"])
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load checkpoint {cfg['checkpoint']}: {exc}") from None
        if init.kind != cfg["agent"]:
            raise DataError(f"checkpoint is a {init.kind} agent, agent={cfg['agent']}")
        state = state_from_arrays(extra, tc)
    write_resolved(cfg, out)
    train_part, _ = split(load_corpus(root), cfg)
    ckpt = out / f"{cfg['agent']}.msp"
    tc.checkpoint_path = str(ckpt)
    first = init.steps if init is not None else 0
    result = train(cfg["agent"], train_part, tc, spec, init=init, state=state)
    result.params.save(ckpt, state_arrays(result.state))
    with open(out / f"{cfg['agent']}_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(result.losses):
            w.writerow([first + i + 1, repr(loss)])
    print(f"trained {cfg['agent']} to step {result.params.steps}; checkpoint {ckpt}")


def cmd_spot(cfg, out: Path):
    if not cfg["utterance"] or not cfg["supports"]:
        raise UsageError("spot needs utterance=<file.emb> and supports=<dir of labelled .emb clips>")
    if not cfg["checkpoint"]:
        raise UsageError("spot needs checkpoint=<agent.msp>")
    try:
        params, _ = load_agent(cfg["checkpoint"])
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {cfg['checkpoint']}: {exc}") from None
    # the encoder was trained on windows of this width
    spec = WindowSpec(params.window, min(int(cfg["hop"]), params.window))
    try:
        utt = load_embedding(cfg["utterance"])
        clips: dict[str, list] = {}
        for path in sorted(Path(cfg["supports"]).rglob("*.emb")):
            seq = load_embedding(path)
            if seq.label is None:
                raise DataError(f"support clip {path} has no label")
            clips.setdefault(seq.label, []).append(seq.frames)
    except (OSError, EmbeddingFormatError) as exc:
        raise DataError(str(exc)) from None
    if not clips:
        raise DataError(f"no .emb support clips in {cfg['supports']}")
    supports = SupportSet.from_clips(clips, spec)
    if utt.dim != supports.dim or utt.dim != params.dim:
        raise DataError(f"dimension mismatch: utterance dim={utt.dim}, supports dim={supports.dim}, "
                        f"agent dim={params.dim}")
    write_resolved(cfg, out)
    result = spot(utt, supports, spec, params, threshold(cfg))
    write_trace_csv(result, out / "trace.csv")
    for s in result.keywords.spotted:
        print(f"{s.class_id}\t{s.score:.6f}\twindow_offset={result.offsets[s.window]}")


def cmd_eval(cfg, out: Path):
    spec = window_spec(cfg)
    N_list, k_list = int_list(cfg["N"], "N"), int_list(cfg["k"], "k")
    agents = load_agents(cfg)
    _, held_out = split(load_corpus(corpus_dir(cfg, out)), cfg)
    write_resolved(cfg, out)
    thresholds = {name: threshold(cfg) for name in agents}
    try:
        report = run_grid(held_out, agents, N_list, k_list, cfg["runs"], cfg["seed"], thresholds, spec)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report.write_csv(out / "eval_runs.csv")
    report.write_summary_csv(out / "eval_summary.csv")
    with open(out / "random_baseline.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "f1"])
        for N in N_list:
            w.writerow([N, repr(random_baseline_exact(N))])
    for s in report.summary():
        print(f"{s['agent']:<10} N={s['N']:<3} k={s['k']}  P={s['precision']:.3f} "
              f"R={s['recall']:.3f} F1={s['f1']:.3f}")


def cmd_rerank(cfg, out: Path):
    spec = window_spec(cfg)
    N_list, k_list = int_list(cfg["N"], "N"), int_list(cfg["k"], "k")
    agents = load_agents(cfg)
    root = corpus_dir(cfg, out)
    hyp_path = Path(cfg["hypotheses"]) if cfg["hypotheses"] else root / "hypotheses.txt"
    try:
        hyps = load_hypotheses(hyp_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read hypotheses {hyp_path}: {exc}") from None
    _, held_out = split(load_corpus(root), cfg)
    write_resolved(cfg, out)
    thresholds = {name: threshold(cfg) for name in agents}
    try:
        rows = wer_grid(hyps, held_out, agents, N_list, k_list, cfg["runs"], cfg["seed"], thresholds, spec)
    except (KeyError, ValueError) as exc:
        raise DataError(f"reranking failed: {exc}") from None
    write_wer_csv(rows, out / "wer.csv")
    for r in rows:
        print(f"{r.agent:<10} N={r.N:<3} k={r.k}  keyword WER={100 * r.keyword_wer:.1f}%")


HELP = {
    "gen": "generate a synthetic corpus and hypothesis beams",
    "train": "train one agent on the corpus training split",
    "spot": "spot keywords in one utterance against a directory of support clips",
    "eval": "episodic N-way k-shot evaluation on the held-out split",
    "rerank": "keyword WER of n-best reranking driven by each agent",
}

COMMANDS = {"gen": cmd_gen, "train": cmd_train, "spot": cmd_spot, "eval": cmd_eval, "rerank": cmd_rerank}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kwspot", description="Few-shot keyword spotting with metric-space agents.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        raw = {}
        if args.config:
            try:
                raw.update(parse_config_text(Path(args.config).read_text(encoding="utf-8"), args.config))
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
        raw.update(parse_config_text("\n".join(args.overrides), "--set"))
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = resolve(raw)
        if cfg["agent"] not in ("siamese", "relation", "proto", "matching"):
            raise UsageError(f"unknown agent {cfg['agent']!r}")
        COMMANDS[args.command](cfg, Path(args.out))
    except OSError as exc:
        print(f"kwspot: data error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kwspot: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"kwspot: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
