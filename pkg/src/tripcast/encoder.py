"""Per-interval traffic-causality encoder.

Three stages over the trip graph, evaluated once per time interval:

1. Path embedding: each path's segment sequence runs through a stacked
   bidirectional GRU; per-segment states (forward ++ backward) are
   concatenated in order and zero-padded to a fixed width.
2. Route learning: paths serving the same OD pair attend to each other
   (multi-head, LeakyReLU-scored softmax attention); an MLP scores each
   attended embedding and a softmax yields the per-OD route preferences.
3. Segment embedding: each path embedding is scaled by the demand assigned
   to it (demand * preference) and segments collect the sub-vector at
   their position along every incident path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import BiGRU, MLP, uniform_init
from .tripgraph import TripGraph


class EncoderError(ValueError):
    pass


class PathCapacityError(EncoderError):
    """A path is longer than the configured position budget."""


class GraphIntegrityError(EncoderError):
    """Trip-graph edge orders exceed the configured position budget."""


@dataclass
class EncoderConfig:
    gru_hidden: int = 16  # per direction; per-segment embedding n = 2 * gru_hidden
    gru_layers: int = 2
    att_heads: int = 2
    att_dim: int = 32  # attention score space, per head
    att_out: int = 32  # attended output width, per head
    route_mlp_depth: int = 7
    route_mlp_hidden: int = 32
    leaky_slope: float = 0.2  # attention-score slope (canonical GAT value)
    assign_uses_attended: bool = False
    no_od: bool = False  # ablation: all OD demands treated as 1
    no_tf: bool = False  # ablation: dynamic traffic features zeroed
    demand_scale: float = 1.0  # demands divided by this before assignment


@dataclass(frozen=True)
class IntervalFeatures:
    """Raw observations for one interval (normalization happens in the model)."""

    volumes: np.ndarray  # (|V|,)
    speeds: np.ndarray  # (|V|,)
    demands: dict  # (origin, destination) -> count


class CompiledGraph:
    """Trip graph indexed for the encoder: path order, OD blocks, incidences."""

    def __init__(self, graph: TripGraph, num_segments: int, p_max: int | None = None):
        self.graph = graph
        self.num_segments = num_segments
        self.paths = sorted(graph.path_nodes, key=lambda p: p.path_id)
        longest = max(len(p.segment_seq) for p in self.paths)
        self.p_max = longest if p_max is None else p_max
        if longest > self.p_max:
            raise PathCapacityError(
                f"longest path has {longest} segments, exceeding the budget {self.p_max}")
        self.od_paths: dict[int, list[int]] = {}
        for od in graph.od_nodes:
            self.od_paths[od.od_id] = sorted(p.path_id for p in graph.paths_of_od(od.od_id))
        self.od_key: dict[int, tuple[int, int]] = {
            od.od_id: (od.origin, od.destination) for od in graph.od_nodes}
        # per segment: incident (path_id, order) pairs, ascending path_id then order
        self.incidences: list[list[tuple[int, int]]] = [[] for _ in range(num_segments)]
        for path_id, node_id, k in graph.edges_rprime:
            if k > self.p_max:
                raise GraphIntegrityError(
                    f"edge order {k} on path {path_id} exceeds position budget {self.p_max}")
            if node_id >= num_segments:
                raise GraphIntegrityError(
                    f"trip graph references segment {node_id} outside the network")
            self.incidences[node_id].append((path_id, k))
        for inc in self.incidences:
            inc.sort()


class CausalEncoder:
    """Learnable per-interval encoder over a compiled trip graph."""

    def __init__(self, rng: np.random.Generator, compiled: CompiledGraph,
                 static: np.ndarray, config: EncoderConfig):
        self.compiled = compiled
        self.config = config
        self.n = 2 * config.gru_hidden  # per-segment embedding width
        self.path_dim = compiled.p_max * self.n
        if config.assign_uses_attended and config.att_heads * config.att_out != self.path_dim:
            raise EncoderError(
                "assign_uses_attended requires att_heads * att_out == p_max * 2 * gru_hidden "
                f"({config.att_heads} * {config.att_out} != {self.path_dim})")
        num_segments = compiled.num_segments
        # one-hot identity ++ static attributes, fixed per segment
        self._static_inputs = np.concatenate([np.eye(num_segments), static], axis=1)
        in_dim = num_segments + static.shape[1] + 2  # + (volume, speed)
        self.bigru = BiGRU(rng, in_dim, config.gru_hidden, config.gru_layers, "encoder.bigru")
        self.att_W = []
        self.att_a = []
        self.att_Wp = []
        for h in range(config.att_heads):
            self.att_W.append(ad.param(
                uniform_init(rng, (config.att_dim, self.path_dim), self.path_dim),
                f"encoder.att.h{h}.W"))
            # near-antisymmetric halves: pre-activations approximate
            # a1 . (W H_j - W H_d), so score pairs straddle the LeakyReLU kink
            # by construction. This avoids the exact uniform-attention saddle
            # where all scores share one linear piece and the target term
            # cancels inside the softmax. The jitter keeps diagonal scores off
            # the kink itself (finite-difference checks land there otherwise).
            half = rng.uniform(-1.0, 1.0, size=config.att_dim)
            jitter = rng.uniform(-0.2, 0.2, size=config.att_dim)
            self.att_a.append(ad.param(np.concatenate([half, -half + jitter]),
                                       f"encoder.att.h{h}.a"))
            self.att_Wp.append(ad.param(
                uniform_init(rng, (config.att_out, self.path_dim), self.path_dim),
                f"encoder.att.h{h}.Wp"))
        self.route_mlp = MLP(rng, config.att_heads * config.att_out,
                             config.route_mlp_hidden, 1, config.route_mlp_depth,
                             "encoder.route_mlp")

    # -- stage 1: path embedding ------------------------------------------

    def segment_input(self, seg: int, vol_norm: np.ndarray, spd_norm: np.ndarray) -> Tensor:
        if self.config.no_tf:
            dynamic = np.zeros(2)
        else:
            dynamic = np.array([vol_norm[seg], spd_norm[seg]])
        return ad.constant(np.concatenate([self._static_inputs[seg], dynamic]))

    def embed_path(self, inputs: list[Tensor]) -> tuple[list[Tensor], Tensor]:
        """Bi-GRU over a path's segment inputs -> (per-segment states, padded concat)."""
        if not inputs:
            raise EncoderError("cannot embed an empty path")
        if len(inputs) > self.compiled.p_max:
            raise PathCapacityError(
                f"path of length {len(inputs)} exceeds position budget {self.compiled.p_max}")
        per_segment = self.bigru.run(inputs)
        pad = self.path_dim - len(inputs) * self.n
        parts = list(per_segment)
        if pad > 0:
            parts.append(ad.constant(np.zeros(pad)))
        return per_segment, ad.concat(parts)

    # -- stage 2: route learning --------------------------------------------

    def meta_path_attention(self, embeddings: list[Tensor]) -> tuple[list[Tensor], list[Tensor]]:
        """Attend across one OD's path embeddings.

        Returns (updated embeddings, attention weight vectors); weights[j]
        holds the softmax-normalized scores of path j over all neighbors
        (the path itself included).
        """
        heads_out: list[list[Tensor]] = [[] for _ in embeddings]
        alphas: list[Tensor] = []
        slope = self.config.leaky_slope
        for h in range(self.config.att_heads):
            projected = [ad.matmul(self.att_W[h], e) for e in embeddings]
            messages = [ad.matmul(self.att_Wp[h], e) for e in embeddings]
            for j in range(len(embeddings)):
                scores = []
                for d in range(len(embeddings)):
                    pair = ad.concat([projected[j], projected[d]])
                    scores.append(ad.sum_(ad.mul(self.att_a[h], pair)))
                alpha = ad.softmax(ad.leaky_relu(ad.stack(scores), slope))
                if h == 0:
                    alphas.append(alpha)
                mix = None
                for d in range(len(embeddings)):
                    term = ad.mul(ad.element(alpha, d), messages[d])
                    mix = term if mix is None else ad.add(mix, term)
                heads_out[j].append(mix)
        updated = [ad.concat(parts) if len(parts) > 1 else parts[0] for parts in heads_out]
        return updated, alphas

    def route_preferences(self, updated: list[Tensor]) -> Tensor:
        """Softmax over per-path MLP scores -> preference vector for one OD."""
        scores = [ad.element(self.route_mlp(e), 0) for e in updated]
        return ad.softmax(ad.stack(scores))

    # -- stage 3: assignment and segment embedding ---------------------------

    def apply_od_assignment(self, base: Tensor, preference: Tensor, index: int,
                            demand: float) -> Tensor:
        """Scale a path embedding by the demand assigned to it."""
        if demand < 0:
            raise EncoderError(f"negative OD demand {demand}")
        share = ad.element(preference, index)
        return ad.mul(ad.mul(ad.constant(float(demand)), share), base)

    def segment_embeddings(self, assigned: dict[int, Tensor]) -> list[Tensor]:
        """Sum position sub-vectors of incident paths per segment (ascending path id)."""
        out = []
        zero = np.zeros(self.n)
        for seg in range(self.compiled.num_segments):
            total: Tensor | None = None
            for path_id, k in self.compiled.incidences[seg]:
                piece = ad.subvec(assigned[path_id], (k - 1) * self.n, self.n)
                total = piece if total is None else ad.add(total, piece)
            out.append(total if total is not None else ad.constant(zero))
        return out

    # -- full pass ------------------------------------------------------------

    def forward_reference(self, features: IntervalFeatures, vol_norm: np.ndarray,
                          spd_norm: np.ndarray) -> tuple[Tensor, dict[int, Tensor]]:
        """One interval through the unbatched stage operations.

        Kept as the readable contract path; `forward_intervals` is the
        column-batched equivalent (same math, fewer graph nodes).
        """
        cfg = self.config
        padded: dict[int, Tensor] = {}
        for path in self.compiled.paths:
            inputs = [self.segment_input(s, vol_norm, spd_norm) for s in path.segment_seq]
            _, padded[path.path_id] = self.embed_path(inputs)
        preferences: dict[int, Tensor] = {}
        assigned: dict[int, Tensor] = {}
        for od_id, path_ids in self.compiled.od_paths.items():
            embeddings = [padded[p] for p in path_ids]
            updated, _ = self.meta_path_attention(embeddings)
            co = self.route_preferences(updated)
            preferences[od_id] = co
            base = updated if cfg.assign_uses_attended else embeddings
            demand = self._effective_demand(features, od_id)
            for idx, path_id in enumerate(path_ids):
                assigned[path_id] = self.apply_od_assignment(base[idx], co, idx, demand)
        segments = self.segment_embeddings(assigned)
        return ad.concat(segments), preferences

    def _effective_demand(self, features: IntervalFeatures, od_id: int) -> float:
        if self.config.no_od:
            return 1.0
        raw = float(features.demands.get(self.compiled.od_key[od_id], 0.0))
        if raw < 0:
            raise EncoderError(f"negative OD demand {raw}")
        return raw / self.config.demand_scale

    def _attention_block(self, embeddings: list[Tensor]) -> list[Tensor]:
        """Batched meta-path attention over one OD's path embeddings."""
        q = len(embeddings)
        mat = ad.stack_columns(embeddings)
        heads: list[list[Tensor]] = [[] for _ in range(q)]
        for h in range(self.config.att_heads):
            projected = ad.matmul(self.att_W[h], mat)
            messages = ad.matmul(self.att_Wp[h], mat)
            a_target = ad.subvec(self.att_a[h], 0, self.config.att_dim)
            a_source = ad.subvec(self.att_a[h], self.config.att_dim, self.config.att_dim)
            u = ad.matmul(a_target, projected)
            v = ad.matmul(a_source, projected)
            scores = ad.leaky_relu(ad.outer_add(u, v), self.config.leaky_slope)
            for j in range(q):
                alpha = ad.softmax(ad.row(scores, j))
                heads[j].append(ad.matmul(messages, alpha))
        return [ad.concat(parts) if len(parts) > 1 else parts[0] for parts in heads]

    def forward_intervals(self, batch: list[tuple[IntervalFeatures, np.ndarray, np.ndarray]],
                          need_segments: bool = True
                          ) -> list[tuple[Tensor | None, dict[int, Tensor]]]:
        """Encode several intervals in one column-batched pass.

        ``batch`` holds (features, normalized volumes, normalized speeds)
        per interval. Returns per interval the concatenated segment
        embedding vector (None when ``need_segments`` is off) and the
        per-OD preference vectors.
        """
        cfg = self.config
        intervals = range(len(batch))
        # 1. bidirectional encoding, grouped by path length
        groups: dict[int, list[tuple[int, int]]] = {}
        for t in intervals:
            for path in self.compiled.paths:
                groups.setdefault(len(path.segment_seq), []).append((t, path.path_id))
        padded: dict[tuple[int, int], Tensor] = {}
        paths_by_id = {p.path_id: p for p in self.compiled.paths}
        for length, members in sorted(groups.items()):
            columns = []
            for t, path_id in members:
                _, vol_norm, spd_norm = batch[t]
                columns.append([self.segment_input(s, vol_norm, spd_norm)
                                for s in paths_by_id[path_id].segment_seq])
            outputs = self.bigru.run_batch(columns)
            pad = self.path_dim - length * self.n
            for (t, path_id), states in zip(members, outputs):
                parts = list(states)
                if pad > 0:
                    parts.append(ad.constant(np.zeros(pad)))
                padded[(t, path_id)] = ad.concat(parts)

        # 2. attention per OD-interval block, route scores batched across blocks
        block_cols: list[Tensor] = []
        block_index: dict[tuple[int, int], tuple[int, list[int]]] = {}
        attended: dict[tuple[int, int], list[Tensor]] = {}
        for t in intervals:
            for od_id, path_ids in self.compiled.od_paths.items():
                embeddings = [padded[(t, p)] for p in path_ids]
                updated = self._attention_block(embeddings)
                attended[(t, od_id)] = updated
                block_index[(t, od_id)] = (len(block_cols), list(path_ids))
                block_cols.extend(updated)
        scores = ad.row(self.route_mlp.batch(ad.stack_columns(block_cols)), 0)

        # 3. preferences, demand assignment, segment collection
        results: list[tuple[Tensor | None, dict[int, Tensor]]] = []
        for t in intervals:
            features = batch[t][0]
            preferences: dict[int, Tensor] = {}
            assigned: dict[int, Tensor] = {}
            for od_id, path_ids in self.compiled.od_paths.items():
                start, ids = block_index[(t, od_id)]
                co = ad.softmax(ad.subvec(scores, start, len(ids)))
                preferences[od_id] = co
                demand = self._effective_demand(features, od_id)
                base = attended[(t, od_id)] if cfg.assign_uses_attended else \
                    [padded[(t, p)] for p in ids]
                for idx, path_id in enumerate(ids):
                    assigned[path_id] = self.apply_od_assignment(base[idx], co, idx, demand)
            if need_segments:
                segments = self.segment_embeddings(assigned)
                results.append((ad.concat(segments), preferences))
            else:
                results.append((None, preferences))
        return results

    def forward(self, features: IntervalFeatures, vol_norm: np.ndarray,
                spd_norm: np.ndarray) -> tuple[Tensor, dict[int, Tensor]]:
        """One interval -> (concatenated segment embeddings, per-OD preferences)."""
        return self.forward_intervals([(features, vol_norm, spd_norm)])[0]

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.bigru.named_params())
        for h in range(self.config.att_heads):
            for t in (self.att_W[h], self.att_a[h], self.att_Wp[h]):
                out[t.name] = t
        out.update(self.route_mlp.named_params())
        return out
