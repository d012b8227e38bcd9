"""Mixture-of-experts core: top-k routing, dual-branch block, fusion gate.

A hybrid block runs two MoE branches over the same image features: the
DD branch routes on the globally pooled image feature, the DE branch
routes on a gaze-derived feature. A sigmoid gate conditioned on both
features mixes the branch outputs convexly.

Routing is per sample. The router scores all N experts; the k highest
scores are selected (ties to the lowest index) and their softmax becomes
the combination weights, so k=1 degenerates to weight 1.0 on the argmax
expert. Unselected experts never enter the graph and receive no
gradient. Load-balance statistics use the full softmax over all N raw
scores regardless of k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .layers import Linear, Module, ResidualBasicBlock, router_mlp
from .tensor import Tensor


@dataclass
class RoutingRecord:
    """One branch's routing outcome for a whole batch.

    ``raw_scores`` stays graph-connected so the balance loss can
    differentiate through the full softmax; ``weights`` is a detached
    copy for inspection and export. ``gate_p`` is filled by the owning
    block once the fusion gate has run.
    """

    block_id: int
    branch: str  # "DD" | "DE"
    raw_scores: Tensor  # [B, N]
    indices: np.ndarray  # [B, k], descending score order
    weights: np.ndarray  # [B, k]
    gate_p: np.ndarray = field(default=None)  # [B]

    @property
    def top1(self) -> np.ndarray:
        return self.indices[:, 0]

    @property
    def batch_size(self) -> int:
        return self.indices.shape[0]

    @property
    def num_experts(self) -> int:
        return self.raw_scores.shape[1]


class Router(Module):
    """Scores all experts from a routing feature via a small MLP."""

    def __init__(self, feature_width: int, num_experts: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.num_experts = num_experts
        self.mlp = router_mlp(feature_width, num_experts, rng, dtype)

    def __call__(self, feature: Tensor) -> Tensor:
        return self.mlp(feature)


class ExpertBank(Module):
    """N residual blocks with independent parameters and identical shapes.

    ``eval_count`` tallies how many sample rows each forward actually
    pushed through an expert, proving sparse activation.
    """

    def __init__(self, num_experts: int, in_channels: int, out_channels: int,
                 rng: np.random.Generator, stride: int = 1, dtype=np.float64):
        self.num_experts = num_experts
        self.experts = [
            ResidualBasicBlock(in_channels, out_channels, rng, stride=stride, dtype=dtype)
            for _ in range(num_experts)
        ]
        self.eval_count = 0

    def run_expert(self, index: int, x: Tensor) -> Tensor:
        self.eval_count += x.shape[0]
        return self.experts[index](x)

    def reset_eval_count(self) -> None:
        self.eval_count = 0


class MoeBranch(Module):
    """One routed expert mixture: router + bank + sparsity level k."""

    def __init__(self, router: Router, experts: ExpertBank, top_k: int):
        n = experts.num_experts
        if not 1 <= top_k <= n:
            raise ConfigError(f"top_k must be in [1, {n}], got {top_k}")
        self.router = router
        self.experts = experts
        self.top_k = top_k

    def route(self, routing_feature: Tensor) -> tuple[np.ndarray, Tensor, Tensor]:
        """Select the k highest-scoring experts per sample.

        Returns (indices [B,k], weights Tensor [B,k], raw_scores Tensor
        [B,N]). Weights are the softmax of the selected raw scores, ties
        break toward the lowest expert index.
        """
        raw = self.router(routing_feature)
        order = np.argsort(-raw.data, axis=1, kind="stable")
        indices = np.ascontiguousarray(order[:, : self.top_k])
        selected = T.take_per_row(raw, indices)
        weights = T.softmax(selected, axis=1)
        return indices, weights, raw

    def __call__(self, x: Tensor, routing_feature: Tensor, block_id: int,
                 branch: str) -> tuple[Tensor, RoutingRecord]:
        """h[b] = sum over selected j of weight[b,j] * expert_j(x[b])."""
        indices, weights, raw = self.route(routing_feature)
        batch = x.shape[0]
        n = self.experts.num_experts
        combine = T.put_per_row(weights, indices, width=n)  # [B, N], zeros unselected
        out = None
        for i in range(n):
            rows = np.nonzero((indices == i).any(axis=1))[0]
            if rows.size == 0:
                continue
            h_i = self.experts.run_expert(i, T.take_rows(x, rows))
            w_i = T.take_rows(combine, rows)  # [m, N]
            w_col = T.take_per_row(w_i, np.full((rows.size, 1), i))  # [m, 1]
            weighted = h_i * w_col.reshape(rows.size, 1, 1, 1)
            scattered = T.put_rows(weighted, rows, num_rows=batch)
            out = scattered if out is None else out + scattered
        record = RoutingRecord(
            block_id=block_id,
            branch=branch,
            raw_scores=raw,
            indices=indices,
            weights=weights.data.copy(),
        )
        return out, record


class FusionGate(Module):
    """p = sigmoid(w_p([x_f || x_exp])), one scalar per sample in (0,1)."""

    def __init__(self, image_width: int, gaze_width: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.proj = Linear(image_width + gaze_width, 1, rng, dtype)

    def __call__(self, x_f: Tensor, x_exp: Tensor) -> Tensor:
        return T.sigmoid(self.proj(T.concat([x_f, x_exp], axis=1)))


class HybridMoeBlock(Module):
    """Drop-in residual-block replacement mixing two routed expert branches.

    Output x_hat = p * h_DE + (1 - p) * h_DD where p comes from the
    fusion gate and both h's are expert mixtures over the same input
    feature map. The gaze feature is mandatory; there is no silent
    image-only fallback.
    """

    def __init__(self, in_channels: int, out_channels: int, num_experts: int,
                 top_k: int, gaze_width: int, rng: np.random.Generator,
                 stride: int = 1, block_id: int = 0, dtype=np.float64):
        self.block_id = block_id
        self.dd = MoeBranch(
            Router(in_channels, num_experts, rng, dtype),
            ExpertBank(num_experts, in_channels, out_channels, rng, stride, dtype),
            top_k,
        )
        self.de = MoeBranch(
            Router(gaze_width, num_experts, rng, dtype),
            ExpertBank(num_experts, in_channels, out_channels, rng, stride, dtype),
            top_k,
        )
        self.gate = FusionGate(in_channels, gaze_width, rng, dtype)

    def __call__(self, x: Tensor, x_exp: Tensor) -> tuple[Tensor, tuple[RoutingRecord, RoutingRecord]]:
        if x_exp is None:
            raise ContractError("hybrid block requires a gaze feature; none provided")
        if x_exp.shape[0] != x.shape[0]:
            raise ContractError(
                f"batch mismatch: image features {x.shape[0]} rows, "
                f"gaze features {x_exp.shape[0]} rows"
            )
        x_f = T.global_avg_pool(x)
        h_dd, rec_dd = self.dd(x, x_f, self.block_id, "DD")
        h_de, rec_de = self.de(x, x_exp, self.block_id, "DE")
        p = self.gate(x_f, x_exp)  # [B, 1]
        rec_dd.gate_p = rec_de.gate_p = p.data[:, 0].copy()
        pb = p.reshape(x.shape[0], 1, 1, 1)
        x_hat = pb * h_de + (1.0 - pb) * h_dd
        return x_hat, (rec_dd, rec_de)

    def expert_eval_count(self) -> int:
        return self.dd.experts.eval_count + self.de.experts.eval_count

    def reset_eval_counts(self) -> None:
        self.dd.experts.reset_eval_count()
        self.de.experts.reset_eval_count()


def batch_routing_stats(record: RoutingRecord, num_experts: int) -> tuple[np.ndarray, Tensor]:
    """Per-expert usage frequency f and mean routing probability p_bar.

    f_i counts top-1 assignments (a detached constant); p_bar_i is the
    batch mean of the softmax over all N raw scores and stays
    differentiable. Both sum to 1.
    """
    if record.batch_size == 0:
        raise ContractError("routing stats need a nonempty batch")
    if record.num_experts != num_experts:
        raise ContractError(
            f"record has {record.num_experts} experts, expected {num_experts}"
        )
    f = np.bincount(record.top1, minlength=num_experts) / record.batch_size
    p_bar = T.softmax(record.raw_scores, axis=1).mean(axis=0)
    return f, p_bar


def write_routing_csv(path, records: list[RoutingRecord], sample_ids: list[str]) -> None:
    """Dump per-sample routing rows for every record.

    Columns: sample_id, block_id, branch, raw_score_0..N-1, top1_index,
    gate_p.
    """
    if not records:
        raise ContractError("no routing records to export")
    n = records[0].num_experts
    header = (
        ["sample_id", "block_id", "branch"]
        + [f"raw_score_{i}" for i in range(n)]
        + ["top1_index", "gate_p"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records:
            if rec.batch_size != len(sample_ids):
                raise ContractError(
                    f"record batch {rec.batch_size} != {len(sample_ids)} sample ids"
                )
            gate = rec.gate_p if rec.gate_p is not None else np.full(rec.batch_size, np.nan)
            for b, sid in enumerate(sample_ids):
                row = [sid, str(rec.block_id), rec.branch]
                row += [repr(float(v)) for v in rec.raw_scores.data[b]]
                row += [str(int(rec.top1[b])), repr(float(gate[b]))]
                writer.writerow(row)
