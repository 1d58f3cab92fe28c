"""Command-line entry point: generate, train, evaluate, separate, export-tree.

Every command reads one JSON run configuration. Randomness comes from the
master seed through named sub-streams, so reruns with the same config give
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import data as data_mod
from .environment import EpisodeConfig
from .errors import InvalidInputError, NumericFailureError, SchemaViolationError, VTTError
from .evaluation import (
    DEFAULT_GRID_POINTS,
    episode_budget,
    reward_table,
    separation_experiment,
    write_reward_csv,
)
from .grading import AssumptionMode, GroundTruthImage
from .learn import PolicyConfig, ReplayMemory, RLQS, TrainConfig, load_checkpoint, save_checkpoint, train_mc, train_qlearning
from .responders import Responder, ResponderKind
from .strategies import RandomQS, TextbookQS, TreeQS, train_decision_tree, tree_to_dot, unroll_qs_to_tree

log = logging.getLogger("vttqs")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SUBSTREAMS = {"data": 0, "split": 1, "train": 2, "eval": 3}
QS_NAMES = ("random", "textbook", "dt-rb", "dt-tb", "rl")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SplitSection(_Strict):
    train: float = 0.6
    validation: float = 0.1
    test: float = 0.3

    @model_validator(mode="after")
    def _sums_to_one(self):
        fr = (self.train, self.validation, self.test)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return self


class DataSection(_Strict):
    annotations: Path | None = None  # load this CSV instead of generating
    n_images: int = Field(200, ge=1)
    grade_mix: tuple[float, float, float] = data_mod.DEFAULT_GRADE_MIX
    ex_quadrant_rate: float = Field(0.4, ge=0.0, le=1.0)
    od_two_quadrant_rate: float = Field(0.3, ge=0.0, le=1.0)
    split: SplitSection = SplitSection()

    @field_validator("annotations")
    @classmethod
    def _exists(cls, p):
        if p is not None and not p.is_file():
            raise ValueError(f"annotation file {p} does not exist")
        return p

    @field_validator("grade_mix")
    @classmethod
    def _mix(cls, v):
        if any(x < 0 for x in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("grade_mix must be non-negative and sum to 1")
        return v


class EnvironmentSection(_Strict):
    gamma: float = Field(0.8, gt=0.0, lt=1.0)
    max_questions: int = Field(15, ge=1, le=15)
    include_terminal_tuples: bool = True


class TrainingSection(_Strict):
    scheme: Literal["mc", "q"] = "q"
    epochs: int = Field(50, ge=1)
    replay_capacity: int = Field(500, ge=1)
    minibatch: int = Field(8, ge=1)
    epsilon: float = Field(1.0, ge=0.0, le=1.0)
    epsilon_decay: float = Field(0.9, gt=0.0, le=1.0)
    epsilon_floor: float = Field(0.1, ge=0.0, le=1.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    hidden: tuple[int, ...] = (128, 64)
    burn_in: int = Field(15, ge=0)
    repetitions: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _floor_below_start(self):
        if self.epsilon_floor > self.epsilon:
            raise ValueError("epsilon_floor cannot exceed epsilon")
        return self


class ResponderSection(_Strict):
    name: str
    kind: Literal["groundtruth", "random", "reasonable", "unreasonable"]
    accuracy: float = Field(1.0, ge=0.0, le=1.0)
    seed: int | None = None  # answer-noise seed; defaults to the eval sub-stream


class EvaluationSection(_Strict):
    qs: tuple[Literal["random", "textbook", "dt-rb", "dt-tb", "rl"], ...] = ("random", "textbook", "rl")
    grid_points: int = Field(DEFAULT_GRID_POINTS, ge=64)
    checkpoint: Path | None = None  # defaults to <output_dir>/checkpoint_<scheme>.json
    unroll_rollouts: int = Field(32, ge=1)


class RunConfig(_Strict):
    seed: int = 0
    output_dir: Path = Path("runs/default")
    mode: Literal["simple-A", "extra-U-A"] = "simple-A"
    data: DataSection = DataSection()
    environment: EnvironmentSection = EnvironmentSection()
    training: TrainingSection = TrainingSection()
    responders: tuple[ResponderSection, ...] = (
        ResponderSection(name="groundtruth", kind="groundtruth"),
    )
    evaluation: EvaluationSection = EvaluationSection()

    @model_validator(mode="after")
    def _unique_names(self):
        names = [r.name for r in self.responders]
        if len(set(names)) != len(names):
            raise ValueError("responder names must be unique")
        if len(set(self.evaluation.qs)) != len(self.evaluation.qs):
            raise ValueError("evaluation.qs entries must be unique")
        return self

    @property
    def assumption(self) -> AssumptionMode:
        return AssumptionMode.parse(self.mode)

    def episode_config(self, include_terminal_tuples: bool | None = None) -> EpisodeConfig:
        e = self.environment
        itt = e.include_terminal_tuples if include_terminal_tuples is None else include_terminal_tuples
        return EpisodeConfig(e.gamma, e.max_questions, self.assumption, itt)

    def substream(self, name: str, *extra: int) -> int:
        """Integer seed for one named component, derived from the master seed."""
        ss = np.random.SeedSequence([self.seed, SUBSTREAMS[name], *extra])
        return int(ss.generate_state(1)[0])


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: str | Path | None, seed_override: int | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidInputError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise InvalidInputError(f"{path}: top level must be an object")
    if seed_override is not None:
        doc = {**doc, "seed": seed_override}
    return RunConfig.model_validate(doc)


# ---- shared plumbing ----


def load_images(cfg: RunConfig) -> list[GroundTruthImage]:
    d = cfg.data
    if d.annotations is not None:
        return data_mod.load_annotations(d.annotations)
    dc = data_mod.DatasetConfig(d.n_images, d.grade_mix, d.ex_quadrant_rate, d.od_two_quadrant_rate, cfg.substream("data"))
    return data_mod.generate_dataset(dc)


def load_splits(cfg: RunConfig):
    s = cfg.data.split
    spec = data_mod.SplitSpec(s.train, s.validation, s.test)
    return data_mod.split_dataset(load_images(cfg), spec, cfg.substream("split"))


def _output_dir(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _guard(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def checkpoint_path(cfg: RunConfig, rep: int = 0) -> Path:
    if cfg.evaluation.checkpoint is not None and rep == 0:
        return cfg.evaluation.checkpoint
    suffix = "" if rep == 0 else f"_rep{rep}"
    return cfg.output_dir / f"checkpoint_{cfg.training.scheme}{suffix}.json"


def build_strategy(name: str, cfg: RunConfig, train_images):
    mode = cfg.assumption
    env = cfg.episode_config(include_terminal_tuples=False)
    if name == "random":
        return RandomQS()
    if name == "textbook":
        return TextbookQS(mode)
    if name in ("dt-rb", "dt-tb"):
        source = RandomQS() if name == "dt-rb" else TextbookQS(mode)
        budget = episode_budget(source, train_images, env, cfg.substream("eval", 1))
        return TreeQS(train_decision_tree(budget), mode, name=name)
    if name == "rl":
        path = checkpoint_path(cfg)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint {path} not found; run 'train' first")
        return RLQS(load_checkpoint(path), name="rl")
    raise InvalidInputError(f"unknown strategy {name!r}")


def build_responders(cfg: RunConfig, images) -> list[Responder]:
    out = []
    for r in cfg.responders:
        seed = cfg.substream("eval", 2) if r.seed is None else r.seed
        mue = Responder(ResponderKind(r.kind), r.accuracy, seed, cfg.assumption, name=r.name)
        out.append(mue.calibrated(images) if mue.kind in (ResponderKind.REASONABLE, ResponderKind.UNREASONABLE) else mue)
    return out


# ---- commands ----


def cmd_generate(cfg: RunConfig, force: bool = False) -> list[Path]:
    out = _output_dir(cfg)
    ann, manifest = out / "annotations.csv", out / "split.json"
    _guard([ann, manifest], force)
    images = load_images(cfg)
    s = cfg.data.split
    train, val, test = data_mod.split_dataset(images, data_mod.SplitSpec(s.train, s.validation, s.test), cfg.substream("split"))
    data_mod.save_annotations(images, ann)
    doc = {
        "seed": cfg.seed,
        "n_images": len(images),
        "train": [i.image_id for i in train],
        "validation": [i.image_id for i in val],
        "test": [i.image_id for i in test],
    }
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote %d images to %s", len(images), ann)
    return [ann, manifest]


def cmd_train(cfg: RunConfig, force: bool = False) -> list[Path]:
    out = _output_dir(cfg)
    t = cfg.training
    reps = range(t.repetitions)
    ckpts = [checkpoint_path(cfg, k) if k else out / f"checkpoint_{t.scheme}.json" for k in reps]
    logs = [out / (f"training_log_{t.scheme}.csv" if k == 0 else f"training_log_{t.scheme}_rep{k}.csv") for k in reps]
    _guard(ckpts + logs, force)
    train, val, _ = load_splits(cfg)
    pol = PolicyConfig(t.epsilon, t.epsilon_decay, t.epsilon_floor)
    for k in reps:
        tc = TrainConfig(
            t.epochs, cfg.environment.gamma, t.learning_rate, t.beta1, t.beta2, t.adam_eps,
            tuple(t.hidden), t.burn_in, seed=cfg.substream("train", k),
        )  # fmt: skip
        if t.scheme == "q":
            res = train_qlearning(train, val, tc, pol, ReplayMemory(t.replay_capacity, t.minibatch), cfg.episode_config())
        else:
            res = train_mc(train, val, tc, pol, cfg.episode_config())
        meta = {"scheme": t.scheme, "mode": cfg.mode, "best_epoch": res.best_epoch, "seed": cfg.seed, "repetition": k}
        save_checkpoint(res.network, ckpts[k], meta)
        with open(logs[k], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "epsilon", "validation_reward"])
            for epoch, eps, val_r in res.log:
                w.writerow([epoch, f"{eps:.6f}", f"{val_r:.6f}"])
        log.info("repetition %d: best epoch %d, validation reward %.3f", k, res.best_epoch, res.best_validation_reward)
    return ckpts + logs


def cmd_evaluate(cfg: RunConfig, force: bool = False) -> list[Path]:
    out = _output_dir(cfg)
    train, _, test = load_splits(cfg)
    strategies = [build_strategy(n, cfg, train) for n in cfg.evaluation.qs]
    responders = build_responders(cfg, test)
    env = cfg.episode_config(include_terminal_tuples=False)
    pair_paths = [out / f"rewards_{qs.name}_{m.name}.csv" for qs in strategies for m in responders]
    summary = out / "rewards.csv"
    _guard(pair_paths + [summary], force)
    rows = []
    for qs in strategies:
        for m in responders:
            rows.append((qs.name, m.name, reward_table(qs, m, test, env, cfg.substream("eval", 0))))
    for path, row in zip(pair_paths, rows):
        write_reward_csv([row], path)
    write_reward_csv(rows, summary)
    return pair_paths + [summary]


def cmd_separate(cfg: RunConfig, force: bool = False) -> list[Path]:
    out = _output_dir(cfg)
    report_path, curves_path = out / "separation.json", out / "beta_curves.csv"
    _guard([report_path, curves_path], force)
    train, _, test = load_splits(cfg)
    strategies = [build_strategy(n, cfg, train) for n in cfg.evaluation.qs]
    responders = build_responders(cfg, test)
    report = separation_experiment(
        strategies, responders, test, cfg.episode_config(False), cfg.substream("eval", 0), cfg.evaluation.grid_points
    )
    report_path.write_text(report.to_json(), encoding="utf-8")
    report.write_beta_curves(curves_path)
    return [report_path, curves_path]


def cmd_export_tree(cfg: RunConfig, qs_name: str, depth: int, force: bool = False) -> list[Path]:
    if depth < 1:
        raise InvalidInputError("depth must be >= 1")
    out = _output_dir(cfg)
    path = out / f"tree_{qs_name}.dot"
    _guard([path], force)
    train = load_splits(cfg)[0] if qs_name in ("dt-rb", "dt-tb") else []
    qs = build_strategy(qs_name, cfg, train)
    root = unroll_qs_to_tree(qs, cfg.assumption, depth, cfg.evaluation.unroll_rollouts, cfg.substream("eval", 3))
    path.write_text(tree_to_dot(root, title=qs_name), encoding="utf-8")
    return [path]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vttqs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "write a synthetic annotation CSV and split manifest"),
        ("train", "train a Q-network questioning strategy"),
        ("evaluate", "reward tables for every (strategy, responder) pair"),
        ("separate", "beta perceptions and information radius per strategy"),
        ("export-tree", "unroll a strategy into a Graphviz DOT tree"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--seed-override", type=int, help="replace the master seed from the config")
        if name == "export-tree":
            sp.add_argument("--qs", default="textbook", choices=QS_NAMES)
            sp.add_argument("--depth", type=int, default=6)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed_override)
    except ValidationError as exc:
        print(f"config error:\n{format_validation_error(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "export-tree":
            paths = cmd_export_tree(cfg, args.qs, args.depth, args.force)
        else:
            handler = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "separate": cmd_separate}
            paths = handler[args.command](cfg, args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaViolationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as exc:
        # bad checkpoints and infeasible settings surface here
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VTTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
