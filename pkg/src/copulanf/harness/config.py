"""Experiment configuration and its INI-style text encoding.

Example::

    [target]
    copula = Gumbel(2.5)
    marginals = StudentT(0, 1, 2); StudentT(0, 1, 2)
    n_train = 10000
    n_test = 10000

    [base]
    preset = exactMarginals
    # or, instead of a preset:
    # copula = Gaussian(0.7)
    # marginals = Normal(0, 1); Laplace(0, 4)

    [training]
    batch_size = 128
    epochs = 50
    lr = 0.001

    [sweep]
    trials = 100
    seed = 0
    threshold = 25
    out = runs/exactMarginals

Marginals are written ``Family(loc, scale[, df])``.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from ..copulas import Copula, GaussianCopula, GumbelCopula, IndependenceCopula
from ..coupling import PRESETS, CopulaBase, make_preset
from ..marginals import Marginal1D
from ..training import TrainConfig

OUT_ENV = "COPULANF_OUT"


class ConfigError(ValueError):
    pass


_CALL = re.compile(r"^\s*([A-Za-z]+)\s*\(([^)]*)\)\s*$")


def _call(text: str):
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"cannot parse {text!r}; expected Name(args)")
    name, args = m.group(1), m.group(2).strip()
    try:
        values = [float(a) for a in args.split(",")] if args else []
    except ValueError as exc:
        raise ConfigError(f"non-numeric argument in {text!r}") from exc
    return name, values


def parse_copula(text: str, dim: int = 2) -> Copula:
    name, args = _call(text)
    key = name.lower()
    try:
        if key == "independence" and not args:
            return IndependenceCopula(dim)
        if key == "gaussian" and len(args) == 1:
            return GaussianCopula.bivariate(args[0])
        if key == "gumbel" and len(args) == 1:
            return GumbelCopula(args[0])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown copula {text!r}")


_FAMILY_NAMES = {"normal": "Normal", "studentt": "StudentT", "laplace": "Laplace", "uniform": "Uniform"}


def parse_marginal(text: str) -> Marginal1D:
    name, args = _call(text)
    family = _FAMILY_NAMES.get(name.lower())
    if family is None:
        raise ConfigError(f"unknown marginal family in {text!r}")
    expected = 3 if family == "StudentT" else 2
    if len(args) != expected:
        raise ConfigError(f"{family} takes {expected} arguments, got {len(args)}")
    try:
        return Marginal1D.from_tuple((family, *args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_marginals(text: str) -> tuple[Marginal1D, ...]:
    return tuple(parse_marginal(part) for part in text.split(";") if part.strip())


def format_marginal(m: Marginal1D) -> str:
    return "{}({})".format(m.family, ", ".join(repr(float(v)) for v in m.to_tuple()[1:]))


@dataclass(frozen=True)
class BaseSpec:
    """A preset name, or an explicit copula + marginals encoding."""

    preset: Optional[str] = "exactMarginals"
    copula: Optional[str] = None
    marginals: Optional[str] = None

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}; expected one of {', '.join(PRESETS)}")
        elif self.copula is None or self.marginals is None:
            raise ConfigError("an explicit base needs both copula and marginals")

    def build(self) -> CopulaBase:
        if self.preset is not None:
            return make_preset(self.preset)
        marg = parse_marginals(self.marginals)
        try:
            return CopulaBase(marg, parse_copula(self.copula, len(marg)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def name(self) -> str:
        return self.preset or "custom"


@dataclass(frozen=True)
class TargetSpec:
    copula: str = "Gumbel(2.5)"
    marginals: str = "StudentT(0, 1, 2); StudentT(0, 1, 2)"

    def build(self) -> CopulaBase:
        marg = parse_marginals(self.marginals)
        try:
            return CopulaBase(marg, parse_copula(self.copula, len(marg)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    base: BaseSpec = field(default_factory=BaseSpec)
    target: TargetSpec = field(default_factory=TargetSpec)
    n_train: int = 10_000
    n_test: int = 10_000
    training: TrainConfig = field(default_factory=TrainConfig)
    trials: int = 100
    seed: int = 0
    threshold: float = 25.0
    out: str = "runs"
    workers: int = 0
    quantile_n: int = 100_000
    surfaces: bool = False
    surface_resolution: int = 100
    surface_dirs: int = 100
    surface_epsilon: float = 1e-3

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.trials, self.quantile_n) < 1:
            raise ConfigError("all counts must be positive")
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")
        if self.training.batch_size > self.n_train:
            raise ConfigError("batch size exceeds the training set")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        base = self.base
        training = self.training
        if kw.get("preset") is not None:
            base = BaseSpec(preset=kw.pop("preset"))
        kw.pop("preset", None)
        if kw.get("epochs") is not None:
            training = replace(training, epochs=int(kw.pop("epochs")))
        kw.pop("epochs", None)
        rest = {k: v for k, v in kw.items() if v is not None}
        return replace(self, base=base, training=training, **rest)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["training"] = asdict(self.training)
        return d

    def digest(self) -> str:
        """Hash of everything that influences results (output location excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["target"] = {
            "copula": self.target.copula,
            "marginals": self.target.marginals,
            "n_train": str(self.n_train),
            "n_test": str(self.n_test),
        }
        if self.base.preset is not None:
            cp["base"] = {"preset": self.base.preset}
        else:
            cp["base"] = {"copula": self.base.copula, "marginals": self.base.marginals}
        tr = {
            "batch_size": str(self.training.batch_size),
            "epochs": str(self.training.epochs),
            "lr": repr(self.training.lr),
        }
        if self.training.clip is not None:
            tr["clip"] = repr(self.training.clip)
        cp["training"] = tr
        cp["sweep"] = {
            "trials": str(self.trials),
            "seed": str(self.seed),
            "threshold": repr(self.threshold),
            "out": self.out,
            "workers": str(self.workers),
            "quantile_n": str(self.quantile_n),
            "surfaces": str(self.surfaces).lower(),
            "surface_resolution": str(self.surface_resolution),
            "surface_dirs": str(self.surface_dirs),
            "surface_epsilon": repr(self.surface_epsilon),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"target", "base", "training", "sweep"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        t = cp["target"] if cp.has_section("target") else {}
        b = cp["base"] if cp.has_section("base") else {}
        tr = cp["training"] if cp.has_section("training") else {}
        sw = cp["sweep"] if cp.has_section("sweep") else {}
        target = TargetSpec(
            t.get("copula", TargetSpec.copula), t.get("marginals", TargetSpec.marginals)
        )
        if "preset" in b:
            base = BaseSpec(preset=b["preset"])
        elif "copula" in b or "marginals" in b:
            base = BaseSpec(None, b.get("copula"), b.get("marginals"))
        else:
            base = BaseSpec()
        clip = tr.get("clip")
        training = TrainConfig(
            batch_size=int(tr.get("batch_size", 128)),
            epochs=int(tr.get("epochs", 50)),
            lr=float(tr.get("lr", 1e-3)),
            clip=None if clip in (None, "", "none") else float(clip),
        )
        cfg = ExperimentConfig(
            base=base,
            target=target,
            n_train=int(t.get("n_train", 10_000)),
            n_test=int(t.get("n_test", 10_000)),
            training=training,
            trials=int(sw.get("trials", 100)),
            seed=int(sw.get("seed", 0)),
            threshold=float(sw.get("threshold", 25.0)),
            out=sw.get("out", default_out()),
            workers=int(sw.get("workers", 0)),
            quantile_n=int(sw.get("quantile_n", 100_000)),
            surfaces=str(sw.get("surfaces", "false")).lower() in ("1", "true", "yes", "on"),
            surface_resolution=int(sw.get("surface_resolution", 100)),
            surface_dirs=int(sw.get("surface_dirs", 100)),
            surface_epsilon=float(sw.get("surface_epsilon", 1e-3)),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    # Validate the encodings eagerly so errors surface at load time.
    cfg.target.build()
    cfg.base.build()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
