"""Neural building blocks (dense, GRU, MLP) on the autodiff substrate.

The gated recurrent cell follows the standard formulation
``z = sigmoid(Wz x + Uz h + bz)``, ``r = sigmoid(Wr x + Ur h + br)``,
``c = tanh(Wc x + Uc (r * h) + bc)``, ``h' = (1 - z) * h + z * c``,
with the input-side gate matrices packed into one matrix per cell.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine map y = W x + b."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, name: str):
        self.name = name
        self.W = ad.param(uniform_init(rng, (out_dim, in_dim), in_dim), f"{name}.W")
        self.b = ad.param(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(self.W, x), self.b)

    def batch(self, x: Tensor) -> Tensor:
        """Apply to a column batch: x is (in, B)."""
        return ad.add(ad.matmul(self.W, x), ad.colbroadcast(self.b, x.values.shape[1]))

    def named_params(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}


class GRUCell:
    """One gated recurrent cell with packed input-side gate weights."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int, name: str):
        self.name = name
        self.hidden = hidden
        self.W_x = ad.param(uniform_init(rng, (3 * hidden, in_dim), in_dim), f"{name}.W_x")
        self.U_zr = ad.param(uniform_init(rng, (2 * hidden, hidden), hidden), f"{name}.U_zr")
        self.U_c = ad.param(uniform_init(rng, (hidden, hidden), hidden), f"{name}.U_c")
        self.b = ad.param(np.zeros(3 * hidden), f"{name}.b")

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        n = self.hidden
        gx = ad.add(ad.matmul(self.W_x, x), self.b)
        zr = ad.sigmoid(ad.add(ad.subvec(gx, 0, 2 * n), ad.matmul(self.U_zr, h)))
        z = ad.subvec(zr, 0, n)
        r = ad.subvec(zr, n, n)
        c = ad.tanh_(ad.add(ad.subvec(gx, 2 * n, n), ad.matmul(self.U_c, ad.mul(r, h))))
        keep = ad.mul(ad.sub(ad.constant(1.0), z), h)
        return ad.add(keep, ad.mul(z, c))

    def step_batch(self, x: Tensor, h: Tensor) -> Tensor:
        """Column-batched step: x is (in, B), h is (hidden, B)."""
        n = self.hidden
        cols = x.values.shape[1]
        gx = ad.add(ad.matmul(self.W_x, x), ad.colbroadcast(self.b, cols))
        zr = ad.sigmoid(ad.add(ad.rowslice(gx, 0, 2 * n), ad.matmul(self.U_zr, h)))
        z = ad.rowslice(zr, 0, n)
        r = ad.rowslice(zr, n, n)
        c = ad.tanh_(ad.add(ad.rowslice(gx, 2 * n, n), ad.matmul(self.U_c, ad.mul(r, h))))
        keep = ad.mul(ad.sub(ad.constant(1.0), z), h)
        return ad.add(keep, ad.mul(z, c))

    def zero_state(self) -> Tensor:
        return ad.constant(np.zeros(self.hidden))

    def zero_state_batch(self, cols: int) -> Tensor:
        return ad.constant(np.zeros((self.hidden, cols)))

    def named_params(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.W_x, self.U_zr, self.U_c, self.b)}


class GRUStack:
    """Unidirectional multi-layer GRU."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int,
                 num_layers: int, name: str):
        self.cells = [GRUCell(rng, in_dim if i == 0 else hidden, hidden, f"{name}.l{i}")
                      for i in range(num_layers)]

    def zero_state(self) -> list[Tensor]:
        return [c.zero_state() for c in self.cells]

    def zero_state_batch(self, cols: int) -> list[Tensor]:
        return [c.zero_state_batch(cols) for c in self.cells]

    def step(self, x: Tensor, state: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        new_state = []
        cur = x
        for cell, h in zip(self.cells, state):
            cur = cell.step(cur, h)
            new_state.append(cur)
        return cur, new_state

    def step_batch(self, x: Tensor, state: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        new_state = []
        cur = x
        for cell, h in zip(self.cells, state):
            cur = cell.step_batch(cur, h)
            new_state.append(cur)
        return cur, new_state

    def run(self, xs: list[Tensor], state: list[Tensor] | None = None) -> tuple[list[Tensor], list[Tensor]]:
        state = state if state is not None else self.zero_state()
        outputs = []
        for x in xs:
            top, state = self.step(x, state)
            outputs.append(top)
        return outputs, state

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for cell in self.cells:
            out.update(cell.named_params())
        return out


class BiGRU:
    """Bidirectional multi-layer GRU over a sequence.

    Per position the output is the concatenation of the top layer's
    forward and backward hidden states (length 2 * hidden).
    """

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int,
                 num_layers: int, name: str):
        self.hidden = hidden
        self.layers = []
        for i in range(num_layers):
            layer_in = in_dim if i == 0 else 2 * hidden
            self.layers.append((
                GRUCell(rng, layer_in, hidden, f"{name}.l{i}.fwd"),
                GRUCell(rng, layer_in, hidden, f"{name}.l{i}.bwd"),
            ))

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def run(self, xs: list[Tensor]) -> list[Tensor]:
        cur = xs
        for fwd, bwd in self.layers:
            f_states = []
            h = fwd.zero_state()
            for x in cur:
                h = fwd.step(x, h)
                f_states.append(h)
            b_states: list[Tensor] = [None] * len(cur)  # type: ignore[list-item]
            h = bwd.zero_state()
            for i in range(len(cur) - 1, -1, -1):
                h = bwd.step(cur[i], h)
                b_states[i] = h
            cur = [ad.concat([f, b]) for f, b in zip(f_states, b_states)]
        return cur

    def run_batch(self, columns: list[list[Tensor]]) -> list[list[Tensor]]:
        """Run many equal-length input sequences as one column batch.

        ``columns[j]`` is one sequence of 1-D inputs; all sequences must
        share a length. Returns per sequence the per-position output
        vectors (top layer forward ++ backward states), matching
        :meth:`run` up to float reassociation.
        """
        length = len(columns[0])
        if any(len(seq) != length for seq in columns):
            raise ValueError("run_batch needs equal-length sequences")
        B = len(columns)
        cur = [ad.stack_columns([seq[i] for seq in columns]) for i in range(length)]
        for fwd, bwd in self.layers:
            f_states = []
            h = fwd.zero_state_batch(B)
            for x in cur:
                h = fwd.step_batch(x, h)
                f_states.append(h)
            b_states: list[Tensor] = [None] * length  # type: ignore[list-item]
            h = bwd.zero_state_batch(B)
            for i in range(length - 1, -1, -1):
                h = bwd.step_batch(cur[i], h)
                b_states[i] = h
            cur = [ad.vstack([f, b]) for f, b in zip(f_states, b_states)]
        return [[ad.column(cur[i], j) for i in range(length)] for j in range(B)]

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for fwd, bwd in self.layers:
            out.update(fwd.named_params())
            out.update(bwd.named_params())
        return out


class MLP:
    """Fully connected stack: ``depth`` affine layers, ReLU between them."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int,
                 out_dim: int, depth: int, name: str):
        if depth < 1:
            raise ValueError("MLP depth must be >= 1")
        self.layers = []
        for i in range(depth):
            a = in_dim if i == 0 else hidden
            b = out_dim if i == depth - 1 else hidden
            self.layers.append(Dense(rng, a, b, f"{name}.fc{i}"))

    def __call__(self, x: Tensor) -> Tensor:
        cur = x
        for i, layer in enumerate(self.layers):
            cur = layer(cur)
            if i < len(self.layers) - 1:
                cur = ad.relu(cur)
        return cur

    def batch(self, x: Tensor) -> Tensor:
        cur = x
        for i, layer in enumerate(self.layers):
            cur = layer.batch(cur)
            if i < len(self.layers) - 1:
                cur = ad.relu(cur)
        return cur

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            out.update(layer.named_params())
        return out
