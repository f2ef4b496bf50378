"""Flat parameter storage, AdamW, EMA targets, shrink-and-perturb resets, checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointVersionError, NonFiniteError, ShapeError, UnknownGroupError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple
    # "fan_in_uniform" | "zeros"
    init: str = "fan_in_uniform"
    fan_in: int = 1


def fresh_init(spec: TensorSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "fan_in_uniform":
        bound = 1.0 / np.sqrt(spec.fan_in)
        return rng.uniform(-bound, bound, size=spec.shape)
    raise ValueError(f"unknown initializer {spec.init!r}")


def dense_specs(prefix: str, n_in: int, n_out: int) -> dict[str, TensorSpec]:
    return {
        f"{prefix}.w": TensorSpec((n_in, n_out), "fan_in_uniform", n_in),
        f"{prefix}.b": TensorSpec((n_out,), "fan_in_uniform", n_in),
    }


class ParamSet:
    """Named tensors stored as views into one flat float64 buffer.

    Whole-set arithmetic (optimizer steps, EMA, copies) runs on ``flat``;
    ``params[name]`` returns the shaped view.
    """

    def __init__(self, specs: dict[str, TensorSpec], flat: np.ndarray | None = None, version: int = 0):
        self.specs = dict(specs)
        self.slices: dict[str, slice] = {}
        offset = 0
        for name, spec in self.specs.items():
            n = int(np.prod(spec.shape))
            self.slices[name] = slice(offset, offset + n)
            offset += n
        self.size = offset
        if flat is None:
            flat = np.zeros(offset)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (offset,):
            raise ShapeError(f"flat buffer has shape {flat.shape}, layout needs ({offset},)")
        self.flat = flat
        self.version = version

    @classmethod
    def initialize(cls, specs: dict[str, TensorSpec], rng) -> "ParamSet":
        ps = cls(specs)
        for name, spec in ps.specs.items():
            ps[name] = fresh_init(spec, rng)
        return ps

    def __getitem__(self, name: str) -> np.ndarray:
        return self.flat[self.slices[name]].reshape(self.specs[name].shape)

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.specs[name].shape:
            raise ShapeError(f"{name}: expected {self.specs[name].shape}, got {value.shape}")
        self.flat[self.slices[name]] = value.ravel()

    def __contains__(self, name) -> bool:
        return name in self.specs

    def names(self) -> list[str]:
        return list(self.specs)

    def copy(self) -> "ParamSet":
        return ParamSet(self.specs, self.flat.copy(), self.version)

    def to_dict(self) -> dict[str, np.ndarray]:
        return {name: self[name].copy() for name in self.specs}

    def flatten(self, tensors: dict[str, np.ndarray]) -> np.ndarray:
        """Pack a name-keyed dict (e.g. gradients) into this layout."""
        if set(tensors) != set(self.specs):
            missing = set(self.specs) ^ set(tensors)
            raise ShapeError(f"gradient keys differ from parameters: {sorted(missing)}")
        out = np.empty(self.size)
        for name, sl in self.slices.items():
            g = np.asarray(tensors[name])
            if g.shape != self.specs[name].shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != {self.specs[name].shape}")
            out[sl] = g.ravel()
        return out

    def select(self, groups) -> list[str]:
        """Tensor names matching any prefix in ``groups``; unknown prefixes raise."""
        if isinstance(groups, str):
            groups = [groups]
        chosen = []
        for g in groups:
            hits = [n for n in self.specs if n == g or n.startswith(g + ".")]
            if not hits:
                raise UnknownGroupError(g)
            chosen.extend(h for h in hits if h not in chosen)
        return chosen

    def mask(self, groups) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        for name in self.select(groups):
            m[self.slices[name]] = True
        return m


@dataclass
class OptimState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1.5e-4
    step_count: int = 0
    # boolean mask over the flat layout; None decays every entry
    decay_mask: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def for_params(cls, params: ParamSet, **kwargs) -> "OptimState":
        return cls(np.zeros(params.size), np.zeros(params.size), **kwargs)


def adamw_step(params: ParamSet, grads, opt: OptimState) -> ParamSet:
    """One AdamW step in place, with weight decay decoupled from the moments.

    ``grads`` is a name-keyed dict or a flat array in ``params`` layout. A
    non-finite gradient raises before anything is modified.
    """
    g = params.flatten(grads) if isinstance(grads, dict) else np.asarray(grads, dtype=np.float64)
    if g.shape != (params.size,):
        raise ShapeError(f"flat gradient has shape {g.shape}, expected ({params.size},)")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient; update aborted")
    b1, b2 = opt.betas
    opt.step_count += 1
    t = opt.step_count
    m, v = opt.first_moment, opt.second_moment
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    lr = opt.learning_rate
    # decoupled decay on the pre-update parameters
    if opt.weight_decay:
        if opt.decay_mask is None:
            params.flat *= 1.0 - lr * opt.weight_decay
        else:
            params.flat -= (lr * opt.weight_decay) * (params.flat * opt.decay_mask)
    denom = np.sqrt(v)
    denom *= 1.0 / np.sqrt(1.0 - b2**t)
    denom += opt.epsilon
    step = m / denom
    step *= lr / (1.0 - b1**t)
    params.flat -= step
    params.version += 1
    return params


def ema_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """``target <- tau * target + (1 - tau) * online`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.size != online.size or target.specs.keys() != online.specs.keys():
        raise ShapeError("EMA target and online parameters have different layouts")
    if tau == 1.0:
        return target
    if tau == 0.0:
        target.flat[:] = online.flat
    else:
        target.flat *= tau
        target.flat += (1.0 - tau) * online.flat
    target.version += 1
    return target


def shrink_and_perturb(params: ParamSet, keep: float, groups, rng) -> ParamSet:
    """Interpolate selected tensors toward a fresh initialization, in place.

    ``new = keep * old + (1 - keep) * fresh_init(rng)``; other tensors are
    not touched.
    """
    if not 0.0 <= keep <= 1.0:
        raise ValueError(f"keep must lie in [0, 1], got {keep}")
    names = params.select(groups)
    for name in names:
        fresh = fresh_init(params.specs[name], rng)
        if keep == 0.0:
            params[name] = fresh
        elif keep != 1.0:
            params[name] = keep * params[name] + (1.0 - keep) * fresh
    params.version += 1
    return params


# -- checkpoints -----------------------------------------------------------------


def _specs_to_json(specs: dict[str, TensorSpec]) -> list:
    return [[n, list(s.shape), s.init, s.fan_in] for n, s in specs.items()]


def _specs_from_json(rows) -> dict[str, TensorSpec]:
    return {n: TensorSpec(tuple(shape), init, fan_in) for n, shape, init, fan_in in rows}


def save_checkpoint(path, tensors: dict[str, ParamSet], opt: OptimState | None = None,
                    meta: dict | None = None) -> Path:
    """Write named parameter sets, optimizer state and metadata to one ``.npz``."""
    path = Path(path)
    arrays = {}
    layouts = {}
    for key, ps in tensors.items():
        arrays[f"params/{key}"] = ps.flat
        layouts[key] = {"specs": _specs_to_json(ps.specs), "version": ps.version}
    header = {"format_version": CHECKPOINT_VERSION, "layouts": layouts, "meta": meta or {}}
    if opt is not None:
        arrays["opt/m"] = opt.first_moment
        arrays["opt/v"] = opt.second_moment
        header["opt"] = {
            "learning_rate": opt.learning_rate, "weight_decay": opt.weight_decay,
            "betas": list(opt.betas), "epsilon": opt.epsilon, "step_count": opt.step_count,
        }
        if opt.decay_mask is not None:
            arrays["opt/decay_mask"] = opt.decay_mask
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Return ``(tensors, opt, meta)``; rejects a format-version mismatch."""
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        version = header.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format version {version!r}, this build reads {CHECKPOINT_VERSION}"
            )
        tensors = {}
        for key, layout in header["layouts"].items():
            specs = _specs_from_json(layout["specs"])
            tensors[key] = ParamSet(specs, data[f"params/{key}"].copy(), layout["version"])
        opt = None
        if "opt" in header:
            o = header["opt"]
            mask = data["opt/decay_mask"].copy() if "opt/decay_mask" in data else None
            opt = OptimState(data["opt/m"].copy(), data["opt/v"].copy(), o["learning_rate"],
                             o["weight_decay"], tuple(o["betas"]), o["epsilon"], o["step_count"], mask)
    return tensors, opt, header["meta"]
