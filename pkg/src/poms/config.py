"""Run and campaign configuration (JSON) with validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .autoencoder import TrainOptions
from .envs import Env, make_env
from .errors import ConfigInvalid
from .policy import PolicyShape
from .search import LATENT_VARIANTS, VARIANTS, Budget, Variant

OUTPUT_ROOT_ENV = "POMS_OUTPUT_ROOT"

# Desk-scale AE training cap; the library default keeps the 2e4-epoch cap.
DESK_MAX_EPOCHS = 2000

_NEEDS_SIGMA = ("poms", "poms-pca", "poms-no-jacobian", "mape-iso")
_TOP_KEYS = {"env", "policy", "variant", "variants", "budget", "seeds", "output_dir",
             "checkpoint_every", "workers", "jobs"}


@dataclass
class RunConfig:
    env: Env
    shape: PolicyShape
    variants: list
    budget: Budget
    seeds: list
    output_dir: Path
    checkpoint_every: int = 0
    workers: int = 1
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def variant(self) -> Variant:
        return self.variants[0]


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigInvalid(f"{where}.{key}: required field is missing")
    return d[key]


def _parse_variant(d, where: str) -> Variant:
    if not isinstance(d, dict):
        raise ConfigInvalid(f"{where}: must be an object")
    kind = _require(d, "kind", where)
    if kind not in VARIANTS:
        raise ConfigInvalid(f"{where}.kind: unknown variant {kind!r} (known: {list(VARIANTS)})")
    if kind in _NEEDS_SIGMA:
        _require(d, "sigma", where)
    known = {f.name for f in fields(Variant)}
    bad = set(d) - known
    if bad:
        raise ConfigInvalid(f"{where}: unknown field(s) {sorted(bad)}")
    kw = {k: v for k, v in d.items() if k != "train"}
    train = dict(d.get("train", {}))
    train.setdefault("max_epochs", DESK_MAX_EPOCHS)
    tknown = {f.name for f in fields(TrainOptions)}
    if set(train) - tknown:
        raise ConfigInvalid(f"{where}.train: unknown field(s) {sorted(set(train) - tknown)}")
    for name in ("sigma", "sigma1", "sigma2"):
        if name in kw:
            if isinstance(kw[name], bool) or not isinstance(kw[name], (int, float)):
                raise ConfigInvalid(f"{where}.{name}: must be a number")
            kw[name] = float(kw[name])
    try:
        return Variant(train=TrainOptions(**train), **kw)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigInvalid(f"{where}: {exc}") from None


def resolve_output_dir(path_str: str) -> Path:
    path = Path(path_str)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def parse_config(d: dict, campaign: bool = False) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigInvalid("config: top level must be a JSON object")
    bad = set(d) - _TOP_KEYS
    if bad:
        raise ConfigInvalid(f"config: unknown field(s) {sorted(bad)}")

    env_d = _require(d, "env", "config")
    if isinstance(env_d, str):
        env_d = {"name": env_d}
    env = make_env(_require(env_d, "name", "env"), **env_d.get("overrides", {}))

    pol = d.get("policy", {})
    try:
        shape = env.default_policy_shape(pol.get("hidden"))
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(f"policy.hidden: {exc}") from None

    if campaign:
        vs = _require(d, "variants", "config")
        if not isinstance(vs, list) or len(vs) < 2:
            raise ConfigInvalid("config.variants: a campaign needs at least two variants")
        variants = [_parse_variant(v, f"variants[{i}]") for i, v in enumerate(vs)]
        kinds = [v.kind for v in variants]
        if len(set(kinds)) != len(kinds):
            raise ConfigInvalid("config.variants: variant kinds must be distinct")
    else:
        variants = [_parse_variant(_require(d, "variant", "config"), "variant")]

    try:
        budget = Budget(**d.get("budget", {}))
    except TypeError as exc:
        raise ConfigInvalid(f"budget: {exc}") from None
    for v in variants:
        if v.kind in LATENT_VARIANTS and v.latent_dim >= shape.n_params:
            raise ConfigInvalid(f"variant.latent_dim: must be < number of policy parameters ({shape.n_params})")

    seeds = _require(d, "seeds", "config")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigInvalid("config.seeds: must be a non-empty list of non-negative integers")

    out = resolve_output_dir(d.get("output_dir", "runs"))
    for key in ("checkpoint_every", "workers", "jobs"):
        val = d.get(key, 0 if key == "checkpoint_every" else 1)
        if not isinstance(val, int) or val < (0 if key == "checkpoint_every" else 1):
            raise ConfigInvalid(f"config.{key}: invalid value {val!r}")
    return RunConfig(env, shape, variants, budget, list(seeds), out,
                     d.get("checkpoint_every", 0), d.get("workers", 1), d.get("jobs", 1),
                     raw=copy.deepcopy(d))


def load_config(path, campaign: bool = False) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"config: file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config: invalid JSON ({exc})") from None
    return parse_config(d, campaign=campaign)


_KIND_FIELDS = {
    "poms": ("sigma", "hidden_dim", "latent_dim", "train"),
    "poms-no-jacobian": ("sigma", "hidden_dim", "latent_dim", "train"),
    "poms-pca": ("sigma", "latent_dim"),
    "mape-iso": ("sigma",),
    "mape-isolinedd": ("sigma1", "sigma2"),
    "ps-uniform": (),
    "ps-glorot": (),
}


def variant_semantics(v: Variant) -> dict:
    d = asdict(v)
    return {"kind": v.kind, **{k: d[k] for k in _KIND_FIELDS[v.kind]}}


def semantic_dict(cfg: RunConfig) -> dict:
    """Everything that influences results; output location and parallelism excluded."""
    return {
        "env": cfg.env.to_dict(),
        "policy": cfg.shape.to_dict(),
        "variants": [variant_semantics(v) for v in cfg.variants],
        "budget": asdict(cfg.budget),
        "seeds": cfg.seeds,
    }


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(semantic_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
