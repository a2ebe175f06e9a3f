"""Alternating discriminator / generator training with budget-based stop."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from advsgm import __version__
from advsgm.adversarial import (
    GeneratorParams,
    discriminator_step,
    generate_fake_neighbor,
    generator_step,
)
from advsgm.baselines import baseline_step
from advsgm.config import TrainConfig
from advsgm.graph import Graph
from advsgm.numerics import ClipBounds
from advsgm.privacy import PrivacyLedger, RdpCurve, delta_hat, record_step, step_spend, to_dp
from advsgm.sampling import sample_negative_batch, sample_positive_batch, sample_real_pairs
from advsgm.sgm import init_embeddings

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STREAMS = ("sampling", "noise", "adversary")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainReport:
    epochs_completed: int = 0
    disc_iterations: int = 0
    gen_iterations: int = 0
    steps_recorded: int = 0
    stopped_by: str = "schedule"
    final_eps_at_delta: float = float("inf")
    best_alpha: int | None = None
    delta_hat_at_stop: float | None = None
    disc_trace: list = field(default_factory=list)
    gen_trace: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainState:
    W_in: np.ndarray
    W_out: np.ndarray
    gen: GeneratorParams
    ledger: PrivacyLedger
    rngs: dict
    position: int = 0  # index into the flattened schedule
    finished: bool = False
    report: TrainReport = field(default_factory=TrainReport)


def _uses_generator(config: TrainConfig) -> bool:
    return config.algo in ("advsgm", "dp-asgm")


def schedule_length(config: TrainConfig) -> int:
    per_epoch = config.n_D + (config.n_G if _uses_generator(config) else 0)
    return config.n_epoch * per_epoch


def _locate(config: TrainConfig, position: int) -> tuple[int, str]:
    per_epoch = config.n_D + (config.n_G if _uses_generator(config) else 0)
    epoch, offset = divmod(position, per_epoch)
    return epoch, "D" if offset < config.n_D else "G"


def initial_state(graph: Graph, config: TrainConfig) -> TrainState:
    seq = np.random.SeedSequence(config.seed)
    init_seq, *stream_seqs = seq.spawn(1 + len(STREAMS))
    init_rng = np.random.default_rng(init_seq)
    W_in, W_out = init_embeddings(graph.num_nodes, config.r, init_rng)
    gen = GeneratorParams.init(config.r, init_rng, config.sigma_g)
    rngs = {name: np.random.default_rng(s) for name, s in zip(STREAMS, stream_seqs)}
    ledger = PrivacyLedger(config.alpha_grid, config.target_eps, config.target_delta)
    return TrainState(W_in, W_out, gen, ledger, rngs)


class Trainer:
    """Runs the schedule on ``graph`` (the training graph) one iteration at a time."""

    def __init__(self, graph: Graph, config: TrainConfig, state: TrainState | None = None):
        config.check_graph(graph.num_nodes, graph.num_edges)
        self.graph = graph
        self.config = config
        self.bounds = ClipBounds(config.a, config.b)
        self.state = state if state is not None else initial_state(graph, config)
        self.curve = RdpCurve.gaussian(config.sigma) if config.private else None
        self.gamma_pos = config.B / graph.num_edges
        self.gamma_neg = config.B * config.k / graph.num_nodes

    # -- budget -----------------------------------------------------------
    def _budget_allows(self, gamma_pos: float, gamma_neg: float) -> bool:
        cfg, ledger = self.config, self.state.ledger
        if self.curve is None or cfg.target_eps is None:
            return True
        inc = step_spend(ledger.alpha_grid, gamma_pos, self.curve) + step_spend(ledger.alpha_grid, gamma_neg, self.curve)
        dh = delta_hat(ledger, cfg.target_eps, ledger.spent + inc)
        if dh >= cfg.target_delta:
            self.state.report.delta_hat_at_stop = dh
            return False
        return True

    def _record(self, gamma_pos: float, gamma_neg: float) -> None:
        if self.curve is not None:
            record_step(self.state.ledger, gamma_pos, gamma_neg, self.curve)

    # -- phases -----------------------------------------------------------
    def _fakes(self, m: int):
        if not _uses_generator(self.config):
            return None
        gen, rng = self.state.gen, self.state.rngs["adversary"]
        return (
            generate_fake_neighbor(gen.theta_for_vj_fake, gen.sigma_g, rng, self.bounds, size=m),
            generate_fake_neighbor(gen.theta_for_vi_fake, gen.sigma_g, rng, self.bounds, size=m),
        )

    def _update(self, batch) -> None:
        st, cfg = self.state, self.config
        fakes = self._fakes(len(batch))
        if cfg.algo == "advsgm":
            rep = discriminator_step(batch, st.W_in, st.W_out, st.gen, cfg, st.rngs["noise"], fakes=fakes)
        else:
            rep = baseline_step(batch, st.W_in, st.W_out, cfg, st.rngs["noise"], fakes=fakes)
        st.report.disc_trace.append(round(rep.det_norm_mean, 12))

    def _discriminator_iteration(self) -> bool:
        """Returns False when the budget stopped training."""
        st, cfg = self.state, self.config
        rng = st.rngs["sampling"]
        pos = sample_positive_batch(self.graph, cfg.B, rng)
        neg = sample_negative_batch(self.graph, pos, cfg.k, rng)
        for batch, gp, gn in ((pos, pos.gamma, 0.0), (neg, 0.0, neg.gamma)):
            if not self._budget_allows(gp, gn):
                return False
            self._update(batch)
            self._record(gp, gn)
        st.report.disc_iterations += 1
        return True

    def _generator_iteration(self) -> None:
        st, cfg = self.state, self.config
        rng = st.rngs["adversary"]
        pairs = sample_real_pairs(self.graph, cfg.B * (cfg.k + 1), rng)
        loss = generator_step(pairs, st.W_in, st.W_out, st.gen, cfg, rng)
        st.report.gen_iterations += 1
        st.report.gen_trace.append(loss)

    # -- driver -----------------------------------------------------------
    def run(self, max_iterations: int | None = None) -> TrainReport:
        """Advance through the schedule; ``max_iterations`` bounds this call."""
        st, cfg = self.state, self.config
        total = schedule_length(cfg)
        start = time.perf_counter()
        done = 0
        if st.position == 0 and not st.finished and not self._budget_allows(0.0, 0.0):
            self._finish("budget")
        while not st.finished and st.position < total:
            if max_iterations is not None and done >= max_iterations:
                break
            epoch, phase = _locate(cfg, st.position)
            if phase == "D":
                if not self._discriminator_iteration():
                    self._finish("budget")
                    break
            else:
                self._generator_iteration()
            st.position += 1
            done += 1
            st.report.epochs_completed = st.position * cfg.n_epoch // total if total else 0
        if st.position >= total and not st.finished:
            self._finish("schedule")
        st.report.wall_time += time.perf_counter() - start
        return st.report

    def _finish(self, reason: str) -> None:
        st, cfg = self.state, self.config
        st.finished = True
        st.report.stopped_by = reason
        st.report.steps_recorded = st.ledger.steps_recorded
        if self.curve is not None:
            eps, alpha = to_dp(st.ledger, cfg.target_delta)
            st.report.final_eps_at_delta = eps
            st.report.best_alpha = alpha
        if reason == "budget":
            log.info("privacy budget reached after %d ledger entries", st.ledger.steps_recorded)


def train(graph: Graph, config: TrainConfig):
    """Run the full schedule; returns ``(W_in, W_out, generator, report)``."""
    trainer = Trainer(graph, config)
    report = trainer.run()
    st = trainer.state
    return st.W_in, st.W_out, st.gen, report


# -- checkpoints ----------------------------------------------------------

def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def checkpoint(trainer: Trainer, path) -> None:
    """Write a versioned ``.npz`` container with an integrity digest."""
    st = trainer.state
    meta = {
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "config": trainer.config.to_dict(),
        "config_digest": trainer.config.digest(),
        "graph_digest": trainer.graph.digest(),
        "ledger": st.ledger.to_dict(),
        "rngs": {k: _rng_state(v) for k, v in st.rngs.items()},
        "position": st.position,
        "finished": st.finished,
        "sigma_g": st.gen.sigma_g,
        "report": st.report.to_dict(),
    }
    arrays = {
        "W_in": st.W_in,
        "W_out": st.W_out,
        "theta_for_vj_fake": st.gen.theta_for_vj_fake,
        "theta_for_vi_fake": st.gen.theta_for_vi_fake,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    digest = _digest(arrays, meta_bytes)
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(meta_bytes, dtype=np.uint8), digest=np.array(digest), **arrays)
    Path(path).write_bytes(buf.getvalue())


def _digest(arrays: dict, meta_bytes: bytes) -> str:
    h = hashlib.sha256(meta_bytes)
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


def restore(path, graph: Graph) -> Trainer:
    """Rebuild a :class:`Trainer` from :func:`checkpoint` output."""
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            meta_bytes = data["meta"].tobytes()
            digest = str(data["digest"])
            arrays = {k: data[k].copy() for k in ("W_in", "W_out", "theta_for_vj_fake", "theta_for_vi_fake")}
    except (zipfile.BadZipFile, EOFError, KeyError, ValueError, OSError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if _digest(arrays, meta_bytes) != digest:
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    meta = json.loads(meta_bytes)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
    config = TrainConfig.from_dict(meta["config"])
    if config.digest() != meta["config_digest"]:
        raise CheckpointError("config digest mismatch")
    if graph.digest() != meta["graph_digest"]:
        raise CheckpointError("checkpoint was written for a different training graph")
    gen = GeneratorParams(arrays["theta_for_vj_fake"], arrays["theta_for_vi_fake"], meta["sigma_g"])
    report = TrainReport(**meta["report"])
    state = TrainState(
        arrays["W_in"], arrays["W_out"], gen, PrivacyLedger.from_dict(meta["ledger"]),
        {k: _rng_from_state(v) for k, v in meta["rngs"].items()},
        meta["position"], meta["finished"], report,
    )
    return Trainer(graph, config, state)
