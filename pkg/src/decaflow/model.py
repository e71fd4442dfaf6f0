"""The deconfounding causal flow: model, ELBO training and causal queries.

A generative flow maps observed data ``x`` to exogenous noise ``u`` given the
hidden confounders ``z``; a deconfounding flow maps ``z`` to noise ``eps``
given the observed columns its structural mask allows, and so defines the
amortized posterior ``q(z | x)``. All internal math runs in standardized
units, in the graph's topological order of observed nodes.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .flows import ConditionalFlow, standard_normal_log_prob
from .graph import CausalGraph, FlowMask, build_decoder_mask, build_encoder_mask
from .metrics import mmd
from .scm import Dataset

log = logging.getLogger(__name__)

DTYPE = torch.float64
ARCHIVE_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IntegrityError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    warmup_epochs: int = 30
    patience: int = 20
    lr_plateau_factor: float = 0.5
    lr_plateau_patience: int = 8
    seed: int = 0
    mc_samples_kl: int = 1
    decoder_transform: str = "affine"
    decoder_hidden: tuple[int, ...] = (32, 32)
    decoder_layers: int = 1
    encoder_transform: str = "affine"
    encoder_hidden: tuple[int, ...] = (32, 32)
    encoder_layers: int = 1
    activation: str = "relu"
    bins: int = 8
    tail_bound: float = 5.0
    mmd_samples: int = 1000
    mmd_every: int = 1

    def __post_init__(self):
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        for name in ("epochs", "warmup_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("batch_size", "learning_rate", "patience", "mc_samples_kl", "decoder_layers",
                     "encoder_layers", "bins", "tail_bound", "mmd_samples", "mmd_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lr_plateau_factor < 1:
            raise ValueError("lr_plateau_factor must be in (0, 1)")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder_hidden"] = list(self.decoder_hidden)
        d["encoder_hidden"] = list(self.encoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    elbo: list[float] = field(default_factory=list)
    reconstruction: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    beta_steps: list[float] = field(default_factory=list)
    kl_steps: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mmd: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def allocate_latent_dims(graph: CausalGraph, total: int | None = None) -> dict[str, int]:
    """Spread a latent budget over the hidden nodes.

    ``None`` or a total equal to the number of hidden nodes gives one
    dimension each. Otherwise all hidden nodes must share the same children
    (they are then interchangeable) and the whole budget goes to the first.
    """
    hidden = graph.hidden_order
    if total is None or total == len(hidden):
        return {h: 1 for h in hidden}
    if total < 0:
        raise ValueError("latent dimension must be non-negative")
    if total == 0:
        return {h: 0 for h in hidden}
    sigs = {(frozenset(graph.children(h)), frozenset(graph.parents(h))) for h in hidden}
    if len(sigs) != 1:
        raise ValueError("cannot place a scalar latent budget on hidden nodes with different children; "
                         "pass latent_dims per hidden node")
    return {h: (total if i == 0 else 0) for i, h in enumerate(hidden)}


def split_dataset(dataset: Dataset, fractions=(0.8, 0.1, 0.1)) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous train/validation/test split."""
    return dataset.split(fractions)


class DeCaFlowModel(nn.Module):
    def __init__(self, graph: CausalGraph, latent_dims: Mapping[str, int] | None = None,
                 config: TrainConfig | None = None):
        super().__init__()
        self.graph = graph
        self.config = config or TrainConfig()
        dims = allocate_latent_dims(graph) if latent_dims is None else dict(latent_dims)
        if set(dims) != set(graph.hidden):
            raise ValueError("latent_dims must have one entry per hidden node")
        self.latent_dims = {h: int(dims[h]) for h in graph.hidden_order}
        self.columns = graph.observed
        self.flow_order = graph.observed_order
        self._to_flow = [self.columns.index(v) for v in self.flow_order]
        self._from_flow = [self.flow_order.index(v) for v in self.columns]

        sizes = list(self.latent_dims.values())
        self.decoder_mask: FlowMask = build_decoder_mask(graph).expand([1] * len(self.flow_order), sizes)
        cfg = self.config
        self.generative = ConditionalFlow(
            self.decoder_mask, layers=cfg.decoder_layers, transform=cfg.decoder_transform,
            hidden=cfg.decoder_hidden, bins=cfg.bins, bound=cfg.tail_bound, activation=cfg.activation,
        )
        self.encoder_mask: FlowMask | None = None
        self.deconfounding: ConditionalFlow | None = None
        if self.latent_dim:
            self.encoder_mask = build_encoder_mask(graph).expand(sizes, [1] * len(self.flow_order))
            self.deconfounding = ConditionalFlow(
                self.encoder_mask, layers=cfg.encoder_layers, transform=cfg.encoder_transform,
                hidden=cfg.encoder_hidden, bins=cfg.bins, bound=cfg.tail_bound, activation=cfg.activation,
            )
        self.register_buffer("mean", torch.zeros(len(self.columns)))
        self.register_buffer("sd", torch.ones(len(self.columns)))
        self.to(DTYPE)

    @property
    def latent_dim(self) -> int:
        return sum(self.latent_dims.values())

    # -- unit conversion -------------------------------------------------

    def fit_standardization(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        sd = values.std(axis=0)
        if np.any(sd <= 0):
            raise ValueError("constant column; cannot standardize")
        self.mean.copy_(torch.as_tensor(values.mean(axis=0)))
        self.sd.copy_(torch.as_tensor(sd))

    def standardization(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean.numpy().copy(), self.sd.numpy().copy()

    def encode_units(self, values) -> torch.Tensor:
        """Original units, dataset column order -> standardized, flow order."""
        x = torch.as_tensor(np.asarray(values, dtype=float), dtype=DTYPE)
        x = torch.atleast_2d(x)
        return ((x - self.mean) / self.sd)[:, self._to_flow]

    def decode_units(self, x: torch.Tensor) -> np.ndarray:
        return (x[:, self._from_flow] * self.sd + self.mean).detach().numpy()

    def _flow_index(self, node: str) -> int:
        if node not in self.flow_order:
            raise KeyError(f"{node!r} is not an observed node")
        return self.flow_order.index(node)

    def _std_value(self, node: str, alpha: float) -> float:
        j = self.columns.index(node)
        return (float(alpha) - float(self.mean[j])) / float(self.sd[j])

    # -- densities -------------------------------------------------------

    def posterior_rsample(self, x: torch.Tensor, eps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized ``z ~ q(z | x)`` from base noise; returns ``(z, log q(z | x))``."""
        if not self.latent_dim:
            empty = x.new_zeros((x.shape[0], 0))
            return empty, x.new_zeros(x.shape[0])
        z, lad = self.deconfounding.inverse(eps, x)
        return z, standard_normal_log_prob(eps) - lad

    def elbo(self, x: torch.Tensor, beta: float = 1.0, generator: torch.Generator | None = None):
        """Per-row ``(value, reconstruction, kl)`` for a standardized batch in flow order.

        ``value`` is the batch mean of ``reconstruction - beta * kl``.
        """
        k = self.config.mc_samples_kl
        n = x.shape[0]
        rec = x.new_zeros(n)
        kl = x.new_zeros(n)
        for _ in range(k):
            eps = torch.randn((n, self.latent_dim), generator=generator, dtype=DTYPE)
            z, log_q = self.posterior_rsample(x, eps)
            u, lad = self.generative(x, z)
            rec = rec + standard_normal_log_prob(u) + lad
            if self.latent_dim:
                kl = kl + log_q - standard_normal_log_prob(z)
        rec, kl = rec / k, kl / k
        value = rec.mean() - beta * kl.mean() if beta else rec.mean()
        return value, rec, kl

    # -- sampling and causal queries ---------------------------------------

    def _prior_draws(self, n: int, seed: int):
        gen = torch.Generator().manual_seed(int(seed))
        z = torch.randn((n, self.latent_dim), generator=gen, dtype=DTYPE)
        u = torch.randn((n, len(self.columns)), generator=gen, dtype=DTYPE)
        return z, u

    def _dataset(self, x: torch.Tensor) -> Dataset:
        return Dataset(self.decode_units(x), self.columns, standardization=self.standardization())

    @torch.no_grad()
    def sample_observational(self, n: int, seed: int = 0) -> Dataset:
        z, u = self._prior_draws(n, seed)
        x, _ = self.generative.inverse(u, z)
        return self._dataset(x)

    @torch.no_grad()
    def _do(self, x: torch.Tensor, u: torch.Tensor, z: torch.Tensor, t: str, alpha_std: float) -> torch.Tensor:
        i = self._flow_index(t)
        x = x.clone()
        x[:, i] = alpha_std
        u = u.clone()
        u[:, i] = self.generative(x, z)[0][:, i]
        out, _ = self.generative.inverse(u, z)
        return out

    @torch.no_grad()
    def intervene_sample(self, t: str, alpha: float, n: int, seed: int = 0) -> Dataset:
        """Samples of ``p(x | do(t = alpha))``; ``alpha`` in original units.

        Shares its draws with :meth:`sample_observational` under the same seed.
        """
        z, u = self._prior_draws(n, seed)
        x, _ = self.generative.inverse(u, z)
        x = self._do(x, u, z, t, self._std_value(t, alpha))
        ds = self._dataset(x)
        ds.values[:, self.columns.index(t)] = alpha
        return ds

    @torch.no_grad()
    def counterfactual(self, x_factual, t: str, alpha: float, seed: int = 0) -> np.ndarray:
        """Counterfactual ``x`` under ``do(t = alpha)`` for one or more factual rows."""
        single = np.ndim(x_factual) == 1
        x = self.encode_units(x_factual)
        gen = torch.Generator().manual_seed(int(seed))
        eps = torch.randn((x.shape[0], self.latent_dim), generator=gen, dtype=DTYPE)
        z, _ = self.posterior_rsample(x, eps)
        u, _ = self.generative(x, z)
        x_cf = self._do(x, u, z, t, self._std_value(t, alpha))
        out = self.decode_units(x_cf)
        out[:, self.columns.index(t)] = alpha
        return out[0] if single else out

    def ate(self, t: str, alpha1: float, alpha2: float, y: str, n: int = 10000, seed: int = 0) -> float:
        """``E[y | do(t=alpha2)] - E[y | do(t=alpha1)]`` in standardized units of ``y``."""
        j = self.columns.index(y)
        lo = self.intervene_sample(t, alpha1, n, seed).values[:, j]
        hi = self.intervene_sample(t, alpha2, n, seed).values[:, j]
        return float(np.mean(hi) - np.mean(lo)) / float(self.sd[j])

    @torch.no_grad()
    def posterior_sample(self, x, n: int, seed: int = 0) -> np.ndarray:
        """``n`` draws of the confounders given one factual row (standardized latent units)."""
        xs = self.encode_units(x)
        if xs.shape[0] != 1:
            raise ValueError("posterior_sample expects a single row")
        xs = xs.expand(n, -1)
        gen = torch.Generator().manual_seed(int(seed))
        eps = torch.randn((n, self.latent_dim), generator=gen, dtype=DTYPE)
        z, _ = self.posterior_rsample(xs, eps)
        return z.numpy().copy()


# -- training ------------------------------------------------------------


def train(graph: CausalGraph, dataset: Dataset, config: TrainConfig | None = None,
          latent_dims: Mapping[str, int] | int | None = None,
          validation: Dataset | None = None) -> tuple[DeCaFlowModel, TrainReport]:
    """Maximize the ELBO with KL warm-up, LR reduction on plateau and early stopping.

    Without ``validation``, ``dataset`` is split 80/10/10 and the first two
    parts are used. Standardization is fitted on the training rows only. The
    returned model carries the weights of the best validation epoch.
    """
    config = config or TrainConfig()
    if tuple(dataset.columns) != tuple(graph.observed):
        raise ValueError(f"dataset columns {dataset.columns} do not match graph {graph.observed}")
    if validation is None:
        train_ds, validation, _ = split_dataset(dataset)
    else:
        train_ds = dataset
    if isinstance(latent_dims, int):
        latent_dims = allocate_latent_dims(graph, latent_dims)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = DeCaFlowModel(graph, latent_dims, config)
    model.fit_standardization(train_ds.values)
    report = TrainReport()
    if config.epochs == 0:
        return model, report

    x_train = model.encode_units(train_ds.values)
    x_val = model.encode_units(validation.values)
    mmd_ref = x_val[: config.mmd_samples].numpy()
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=config.lr_plateau_factor, patience=config.lr_plateau_patience)

    best, best_state, stale = math.inf, copy.deepcopy(model.state_dict()), 0
    n = x_train.shape[0]
    for epoch in range(config.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        sums = np.zeros(4)
        batches = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = x_train[perm[start:start + config.batch_size]]
            _, rec, kl = model.elbo(batch, beta=0.0, generator=gen)
            kl_mean = kl.mean()
            if epoch < config.warmup_epochs:
                beta = min(1.0, max(0.0, float(kl_mean.detach())))
            else:
                beta = 1.0
            value = rec.mean() - beta * kl_mean
            if not torch.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", report)
            opt.zero_grad()
            (-value).backward()
            opt.step()
            report.beta_steps.append(beta)
            report.kl_steps.append(float(kl_mean.detach()))
            sums += [float(value.detach()), float(rec.mean().detach()), float(kl_mean.detach()), beta]
            batches += 1
        sums /= batches
        report.elbo.append(sums[0])
        report.reconstruction.append(sums[1])
        report.kl.append(sums[2])
        report.beta.append(sums[3])

        model.eval()
        with torch.no_grad():
            vgen = torch.Generator().manual_seed(config.seed + 1)
            val_value, _, _ = model.elbo(x_val, beta=1.0, generator=vgen)
            val_loss = -float(val_value)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}", report)
            report.val_loss.append(val_loss)
            if epoch % config.mmd_every == 0 or epoch == config.epochs - 1:
                report.val_mmd.append(validation_mmd(model, mmd_ref, seed=config.seed + 2))
        report.learning_rate.append(opt.param_groups[0]["lr"])
        sched.step(val_loss)
        log.debug("epoch %d elbo %.4f val %.4f", epoch, sums[0], val_loss)

        # warm-up epochs do not count toward early stopping
        if epoch >= config.warmup_epochs and val_loss < best - 1e-6:
            best, stale = val_loss, 0
            best_state = copy.deepcopy(model.state_dict())
            report.best_epoch = epoch
        elif epoch >= config.warmup_epochs:
            stale += 1
        report.stopping_epoch = epoch
        if stale >= config.patience:
            break

    if report.best_epoch >= 0:
        model.load_state_dict(best_state)
    model.eval()
    return model, report


def validation_mmd(model: DeCaFlowModel, reference: np.ndarray, seed: int = 0) -> float:
    """MMD between model samples and ``reference`` rows (standardized, flow order)."""
    z, u = model._prior_draws(len(reference), seed)
    with torch.no_grad():
        x, _ = model.generative.inverse(u, z)
    return mmd(x.numpy(), reference)


# -- persistence ---------------------------------------------------------


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def _state_blob(model: DeCaFlowModel) -> bytes:
    arrays = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_model(model: DeCaFlowModel, path: str | Path) -> None:
    """Single-file archive: JSON manifest plus an ``.npz`` parameter blob."""
    blob = _state_blob(model)
    mean, sd = model.standardization()
    manifest = {
        "format": "decaflow-archive",
        "version": ARCHIVE_VERSION,
        "graph": model.graph.to_dict(),
        "graph_sha256": model.graph.digest(),
        "config": model.config.to_dict(),
        "latent_dims": model.latent_dims,
        "standardization": {"columns": list(model.columns), "mean": mean.tolist(), "sd": sd.tolist()},
        "params_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        _zip_write(zf, "params.npz", blob)


def load_model(path: str | Path) -> DeCaFlowModel:
    from .graph import load_graph

    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("params.npz")
    if manifest.get("format") != "decaflow-archive":
        raise IntegrityError("not a model archive")
    graph = load_graph(manifest["graph"])
    if graph.digest() != manifest["graph_sha256"]:
        raise IntegrityError("graph hash mismatch")
    if hashlib.sha256(blob).hexdigest() != manifest["params_sha256"]:
        raise IntegrityError("parameter blob hash mismatch")
    config = TrainConfig.from_dict(manifest["config"])
    model = DeCaFlowModel(graph, manifest["latent_dims"], config)
    arrays = np.load(io.BytesIO(blob))
    state = model.state_dict()
    if set(arrays.files) != set(state):
        raise IntegrityError("parameter blob does not match the manifest's architecture")
    new_state = {}
    for k in state:
        a = arrays[k]
        if a.shape != tuple(state[k].shape):
            raise IntegrityError(f"parameter {k!r} has shape {a.shape}, expected {tuple(state[k].shape)}")
        new_state[k] = torch.as_tensor(a)
    model.load_state_dict(new_state)
    st = manifest["standardization"]
    if st["columns"] != list(model.columns):
        raise IntegrityError("standardization columns do not match the graph")
    model.eval()
    return model
