"""Command-line entry point: ingest, reduce, train, reconstruct, evaluate."""

from __future__ import annotations

import argparse
import datetime
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import __version__

# exit codes, one per error category
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PATH = 3
EXIT_CHECKPOINT = 4
EXIT_VALIDATION = 5
EXIT_TRAINING = 6
EXIT_GRADCHECK = 7
EXIT_INTERNAL = 70

CATEGORIES = {
    "usage": EXIT_USAGE,
    "path": EXIT_PATH,
    "checkpoint": EXIT_CHECKPOINT,
    "validation": EXIT_VALIDATION,
    "training": EXIT_TRAINING,
    "gradcheck": EXIT_GRADCHECK,
    "internal": EXIT_INTERNAL,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category
        self.code = CATEGORIES[category]

    def __reduce__(self):
        return CliError, (self.category, str(self))


def error_line(category: str, message: str) -> str:
    """One machine-parsable line: ``lead-ae: error category=<c> code=<n> message=<json string>``."""
    return f"lead-ae: error category={category} code={CATEGORIES[category]} message={json.dumps(message)}"


# ---------------------------------------------------------------------------
# run manifest


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str = field(default_factory=version_string)
    # the only field that differs between identical runs
    timestamp: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_json())


def manifest_path(output: Path) -> Path:
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


# ---------------------------------------------------------------------------
# config handling


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("path", f"config file not found: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("validation", f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CliError("validation", f"config file {path} must hold a JSON object")
    return obj


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags for the keys of ``defaults``."""
    cfg = dict(defaults)
    file_cfg = load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise CliError("validation", f"unknown config keys for {args.command}: {sorted(unknown)}")
    cfg.update(file_cfg)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def env_seed() -> int:
    raw = os.environ.get("LEADAE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError("validation", f"LEADAE_SEED must be an integer, got {raw!r}") from None


def budget_from(cfg: dict, default_k: int | None = 1, default_rho: float | None = None):
    from .reduction import SelectionBudget

    k, rho = cfg.get("k"), cfg.get("rho")
    if k is not None and rho is not None:
        raise CliError("usage", "--k and --rho are mutually exclusive")
    if k is None and rho is None:
        k, rho = default_k, default_rho
    try:
        return SelectionBudget(k=k, rho=rho, chord_policy=cfg.get("chord_policy"))
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None


def budget_keys() -> dict:
    return {"k": None, "rho": None, "chord_policy": None}


# ---------------------------------------------------------------------------
# file helpers


def existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("path", f"no such file: {path}")
    return p


def existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError("path", f"no such directory: {path}")
    return p


def output_dir(path: str) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise CliError("path", f"output path exists and is not a directory: {path}")
    p.mkdir(parents=True, exist_ok=True)
    return p


def read_score(path: Path):
    from .midi import score_from_json

    return score_from_json(path.read_text())


def json_inputs(paths: list[str]) -> list[Path]:
    """Expand directories to their sorted ``*.json`` files (manifests excluded)."""
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out += sorted(q for q in p.glob("*.json") if not q.name.endswith(".manifest.json")
                          and q.name not in ("manifest.json", "corpus_config.json"))
        elif p.is_file():
            out.append(p)
        else:
            raise CliError("path", f"no such file or directory: {raw}")
    if not out:
        raise CliError("path", "no input files")
    return out


def stem(path: Path) -> str:
    name = path.name
    for suffix in (".lead.json", ".recon.json", ".json", ".mid", ".midi"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def run_jobs(fn: Callable, items: list, jobs: int) -> list:
    """Map ``fn`` over ``items`` in input order, optionally in worker processes."""
    if jobs < 1:
        raise CliError("usage", f"--jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def write_outputs(files: dict[Path, bytes | str]) -> list[str]:
    for path, data in files.items():
        if isinstance(data, str):
            path.write_text(data)
        else:
            path.write_bytes(data)
    return [str(p) for p in files]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> RunManifest:
    from .midi import score_to_json
    from .synth import SyntheticCorpusConfig, make_synthetic_corpus

    cfg = resolve(args, {"n_pieces": 50, "beats": 8, "seed": None})
    if cfg["seed"] is None:
        cfg["seed"] = env_seed()
    try:
        synth = SyntheticCorpusConfig(n_pieces=cfg["n_pieces"], beats=cfg["beats"], seed=cfg["seed"])
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    out = output_dir(args.out)
    width = len(str(synth.n_pieces - 1))
    files: dict[Path, bytes | str] = {
        out / f"piece_{i:0{width}d}.json": score_to_json(s) for i, s in enumerate(make_synthetic_corpus(synth))
    }
    files[out / "corpus_config.json"] = json.dumps(synth.to_dict(), indent=1, sort_keys=True) + "\n"
    written = write_outputs(files)
    return RunManifest("synth", synth.to_dict(), synth.seed, [], written)


def _ingest_one(task):
    from .chords import merge_chords
    from .midi import parse_midi, score_to_json

    path, out, chords = task
    score = parse_midi(Path(path).read_bytes())
    if chords:
        score = merge_chords(score)
    target = Path(out) / f"{stem(Path(path))}.json"
    target.write_text(score_to_json(score))
    return str(target)


def cmd_ingest(args) -> RunManifest:
    cfg = resolve(args, {"chords": False, "jobs": 1})
    paths = []
    for raw in args.inputs:
        p = Path(raw)
        if p.is_dir():
            paths += sorted(q for q in p.iterdir() if q.suffix.lower() in (".mid", ".midi"))
        elif p.is_file():
            paths.append(p)
        else:
            raise CliError("path", f"no such file or directory: {raw}")
    if not paths:
        raise CliError("path", "no MIDI inputs")
    out = output_dir(args.out)
    written = run_jobs(_ingest_one, [(str(p), str(out), bool(cfg["chords"])) for p in paths], cfg["jobs"])
    return RunManifest("ingest", cfg, None, [str(p) for p in paths], written)


def _lead_files(out: Path, name: str, lead) -> dict[Path, bytes | str]:
    from .midi import lead_to_json, write_midi

    return {out / f"{name}.lead.json": lead_to_json(lead), out / f"{name}.lead.mid": write_midi(lead)}


def cmd_skyline(args) -> RunManifest:
    from .reduction import skyline_reduce

    cfg = resolve(args, budget_keys())
    budget = budget_from(cfg)
    inputs = json_inputs(args.inputs)
    out = output_dir(args.out)
    files: dict[Path, bytes | str] = {}
    for p in inputs:
        files.update(_lead_files(out, stem(p), skyline_reduce(read_score(p), budget)))
    written = write_outputs(files)
    return RunManifest("skyline", {**cfg, "budget": budget.to_dict()}, None, [str(p) for p in inputs], written)


def _load_checkpoint(path: str, need: tuple[str, ...]):
    from .neural import checkpoint

    p = existing_file(path)
    try:
        config, s2l, l2s, meta = checkpoint.load(p)
    except checkpoint.CheckpointError as exc:
        raise CliError("checkpoint", f"{path}: {exc}") from None
    models = {"s2l": s2l, "l2s": l2s}
    for name in need:
        if models[name] is None:
            raise CliError("checkpoint", f"{path} holds no {name} model")
    return config, s2l, l2s, meta


def _reduce_one(task):
    import torch

    from .train import model_reduce

    src, ckpt, budget_dict, out = task
    torch.set_num_threads(1)
    from .reduction import SelectionBudget, validate_budget

    budget = SelectionBudget.from_dict(budget_dict)
    _, s2l, _, _ = _load_checkpoint(ckpt, ("s2l",))
    lead = model_reduce(s2l, read_score(Path(src)), budget)
    if not validate_budget(lead, budget):
        raise CliError("validation", f"{src}: lead sheet violates {budget}")
    return write_outputs(_lead_files(Path(out), stem(Path(src)), lead))


def cmd_reduce(args) -> RunManifest:
    cfg = resolve(args, {**budget_keys(), "jobs": 1})
    budget = budget_from(cfg, default_k=None, default_rho=0.1)
    _load_checkpoint(args.checkpoint, ("s2l",))
    inputs = json_inputs(args.inputs)
    out = output_dir(args.out)
    tasks = [(str(p), args.checkpoint, budget.to_dict(), str(out)) for p in inputs]
    written = [f for files in run_jobs(_reduce_one, tasks, cfg["jobs"]) for f in files]
    return RunManifest("reduce", {**cfg, "budget": budget.to_dict(), "checkpoint": args.checkpoint},
                       None, [str(p) for p in inputs], written)


def cmd_reconstruct(args) -> RunManifest:
    import torch

    from .midi import score_to_json, write_midi
    from .train import reconstruct

    cfg = resolve(args, {"topk": 10, "temp": 1.0, "seed": None, "max_len": None})
    if cfg["seed"] is None:
        cfg["seed"] = env_seed()
    if cfg["topk"] < 1 or cfg["temp"] <= 0:
        raise CliError("validation", "--topk must be >= 1 and --temp must be positive")
    torch.set_num_threads(1)
    _, _, l2s, _ = _load_checkpoint(args.checkpoint, ("l2s",))
    inputs = json_inputs(args.inputs)
    out = output_dir(args.out)
    files: dict[Path, bytes | str] = {}
    for p in inputs:
        lead = read_score(p)
        score = reconstruct(l2s, lead, topk=cfg["topk"], temperature=cfg["temp"], seed=cfg["seed"],
                            max_len=cfg["max_len"])
        files[out / f"{stem(p)}.recon.json"] = score_to_json(score)
        files[out / f"{stem(p)}.recon.mid"] = write_midi(score)
    written = write_outputs(files)
    return RunManifest("reconstruct", {**cfg, "checkpoint": args.checkpoint}, cfg["seed"],
                       [str(p) for p in inputs], written)


def _match(directory: Path, name: str, suffixes: tuple[str, ...]) -> Path:
    for suffix in suffixes:
        p = directory / f"{name}{suffix}"
        if p.is_file():
            return p
    raise CliError("path", f"no file for {name!r} in {directory}")


def cmd_eval(args) -> RunManifest:
    from .metrics import MetricsReport, evaluate_corpus
    from .midi import lead_from_json

    cfg = resolve(args, {"jobs": 1})
    if args.hyp is None and args.lead is None:
        raise CliError("usage", "eval needs --hyp or --lead")
    refs_dir = existing_dir(args.ref)
    refs = json_inputs([str(refs_dir)])
    hyp_dir = existing_dir(args.hyp) if args.hyp else None
    lead_dir = existing_dir(args.lead) if args.lead else None
    references, hypotheses, leads, inputs = [], [], [], [str(p) for p in refs]
    for p in refs:
        name = stem(p)
        ref = read_score(p)
        lead = None
        if lead_dir is not None:
            lp = _match(lead_dir, name, (".lead.json",))
            lead = lead_from_json(lp.read_text(), ref)
            leads.append(lead)
            inputs.append(str(lp))
        if hyp_dir is not None:
            hp = _match(hyp_dir, name, (".recon.json", ".json"))
            hyp = read_score(hp)
            inputs.append(str(hp))
        else:
            hyp = lead.to_score()
        references.append(ref)
        hypotheses.append(hyp)
    report = evaluate_corpus(references, hypotheses, leads or None, jobs=cfg["jobs"])
    label = args.label or ("lead" if hyp_dir is None else "reconstruction")
    table = MetricsReport.table({label: report})
    print(table)
    files: dict[Path, bytes | str] = {}
    if args.out:
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            raise CliError("path", f"no such directory: {out.parent}")
        files[out] = json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"
        files[out.with_suffix(".txt")] = table + "\n"
    written = write_outputs(files)
    return RunManifest("eval", cfg, None, inputs, written)


def cmd_gradcheck(args) -> RunManifest | None:
    from .neural.gradcheck import run_all

    cfg = resolve(args, {"seed": None, "tol": 1e-4})
    if cfg["seed"] is None:
        cfg["seed"] = env_seed()
    results = run_all(seed=cfg["seed"], tol=cfg["tol"])
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name} rel_err={r.error:.3e}" for r in results]
    print("\n".join(lines))
    written = []
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps([{"name": r.name, "error": r.error, "passed": r.passed} for r in results],
                                  indent=1) + "\n")
        written.append(str(out))
    failed = [r.name for r in results if not r.passed]
    manifest = RunManifest("gradcheck", cfg, cfg["seed"], [], written)
    if failed:
        if written:
            _finish(manifest, Path(written[0]), time.perf_counter())
        raise CliError("gradcheck", f"{len(failed)} checks failed: {', '.join(failed)}")
    return manifest


TRAIN_DEFAULTS = {
    "layers": 2, "d": 64, "heads": 4,
    "epochs": 100, "patience": 20, "batch_size": 10, "lr": 1e-3, "s2l_lr": None,
    "temperature": 1.0,
    "pitch_shift": 6, "beat_shift": None, "augment": True, "seed": None,
    "split": [0.8, 0.1, 0.1],
    **budget_keys(),
}


def cmd_train(args) -> RunManifest:
    import torch

    from .neural import checkpoint
    from .neural.models import ModelConfig
    from .train import Models, TrainConfig, TrainingError, pretrain_warmstart, split_corpus, train_joint

    cfg = resolve(args, TRAIN_DEFAULTS)
    if cfg["seed"] is None:
        cfg["seed"] = env_seed()
    budget = budget_from(cfg, default_k=None, default_rho=0.1)
    corpus_paths = json_inputs([str(existing_dir(args.corpus))])
    corpus = [read_score(p) for p in corpus_paths]
    try:
        tcfg = TrainConfig(
            split=tuple(cfg["split"]), batch_size=cfg["batch_size"], max_epochs=cfg["epochs"],
            patience=cfg["patience"], pitch_shift=cfg["pitch_shift"], beat_shift=cfg["beat_shift"],
            augment=cfg["augment"], budget=budget, phase=args.phase, lr=cfg["lr"],
            s2l_lr=cfg["s2l_lr"], temperature=cfg["temperature"], seed=cfg["seed"],
        )
        mcfg = ModelConfig(layers=cfg["layers"], d=cfg["d"], heads=cfg["heads"])
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    if args.phase == "joint":
        if args.init is None:
            raise CliError("usage", "--phase joint requires --init CHECKPOINT")
        ck_cfg, s2l, l2s, _ = _load_checkpoint(args.init, ("s2l", "l2s"))
        if (ck_cfg.layers, ck_cfg.d, ck_cfg.heads) != (mcfg.layers, mcfg.d, mcfg.heads):
            raise CliError("checkpoint", f"{args.init} was trained with layers={ck_cfg.layers} d={ck_cfg.d} "
                           f"heads={ck_cfg.heads}, which does not match the requested model")
        models = Models(ck_cfg, s2l, l2s)
    else:
        models = Models.init(mcfg, cfg["seed"])
    train, val, _ = split_corpus(corpus, tcfg.split)
    out = output_dir(args.out)
    fit = pretrain_warmstart if args.phase == "warmstart" else train_joint
    torch.manual_seed(cfg["seed"])
    try:
        result = fit(models, train, val, tcfg)
    except TrainingError as exc:
        raise CliError("training", str(exc)) from None
    meta = {"phase": args.phase, "best_epoch": result.best_epoch, "best_val": result.best_val,
            "train": tcfg.to_dict()}
    ckpt = out / f"{args.phase}.lae"
    checkpoint.save(ckpt, result.models.config, result.models.s2l, result.models.l2s, meta)
    log = out / f"{args.phase}_log.jsonl"
    log.write_text(result.log_lines())
    inputs = [str(p) for p in corpus_paths] + ([args.init] if args.init else [])
    return RunManifest("train", {**cfg, "phase": args.phase, "budget": budget.to_dict()}, cfg["seed"],
                       inputs, [str(ckpt), str(log)])


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(error_line("usage", message), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _budget_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=int, help="fixed number of selected events per onset")
    g.add_argument("--rho", type=float, help="fraction of each onset to keep (rounded up)")
    p.add_argument("--chord-policy", dest="chord_policy", choices=["forced", "competing"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lead-ae", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lead-ae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
        return p

    p = command("synth", "generate a synthetic corpus with a planted melody")
    p.add_argument("--out", required=True)
    p.add_argument("--n-pieces", dest="n_pieces", type=int)
    p.add_argument("--beats", type=int)
    p.add_argument("--seed", type=int)

    p = command("ingest", "convert MIDI files to score JSON")
    p.add_argument("inputs", nargs="+", help="MIDI files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--chords", action="store_true", default=None, help="add template-matched chord symbols")
    p.add_argument("--jobs", type=int)

    p = command("skyline", "reduce scores with the skyline rule")
    p.add_argument("inputs", nargs="+", help="score JSON files or directories")
    p.add_argument("--out", required=True)
    _budget_flags(p)

    p = command("train", "run one training phase")
    p.add_argument("corpus", help="directory of score JSON files")
    p.add_argument("--phase", choices=["warmstart", "joint"], required=True)
    p.add_argument("--init", help="checkpoint to start the joint phase from")
    p.add_argument("--out", required=True)
    for name, typ in (("layers", int), ("d", int), ("heads", int), ("epochs", int), ("patience", int),
                      ("batch-size", int), ("lr", float), ("s2l-lr", float), ("temperature", float),
                      ("pitch-shift", int), ("beat-shift", int), ("seed", int)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    _budget_flags(p)

    p = command("reduce", "reduce scores with a trained selector")
    p.add_argument("inputs", nargs="+", help="score JSON files or directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    _budget_flags(p)

    p = command("reconstruct", "decode scores from lead sheets")
    p.add_argument("inputs", nargs="+", help="lead-sheet JSON files or directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topk", type=int, help="sample among the N most likely values (default 10)")
    p.add_argument("--temp", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)

    p = command("eval", "score reconstructions or lead sheets against references")
    p.add_argument("--ref", required=True, help="directory of reference score JSON")
    p.add_argument("--hyp", help="directory of hypothesis score JSON")
    p.add_argument("--lead", help="directory of lead-sheet JSON (adds densities)")
    p.add_argument("--out", help="report JSON path (a .txt table is written next to it)")
    p.add_argument("--label", help="row label in the table")
    p.add_argument("--jobs", type=int)

    p = command("gradcheck", "finite-difference checks of every gradient")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="write the results as JSON")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "skyline": cmd_skyline,
    "train": cmd_train,
    "reduce": cmd_reduce,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _finish(manifest: RunManifest, anchor: Path, started: float) -> None:
    manifest.timestamp = {
        "finished_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    manifest.write(manifest_path(anchor))


def _classify(exc: BaseException) -> str:
    from .midi import MidiParseError, SchemaError
    from .neural.checkpoint import CheckpointError
    from .score import ScoreError
    from .train import TrainingError

    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, TrainingError):
        return "training"
    if isinstance(exc, (SchemaError, MidiParseError, ScoreError, ValueError, IndexError)):
        return "validation"
    if isinstance(exc, OSError):
        return "path"
    return "internal"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        manifest = COMMANDS[args.command](args)
        if manifest is not None and manifest.outputs:
            anchor = Path(args.out) if getattr(args, "out", None) else Path(manifest.outputs[0])
            _finish(manifest, anchor, started)
    except CliError as exc:
        print(error_line(exc.category, str(exc)), file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - every failure maps to a category
        category = _classify(exc)
        print(error_line(category, f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        return CATEGORIES[category]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
