"""Temporal model: stacked GRU over per-interval embeddings, residual head.

The encoder GRU consumes the history window; the final hidden state seeds
an L-step rollout. Future steps have no observed input, so by default the
last observed embedding vector is re-fed at every step (a zero-input
rollout is available behind ``decoder_refeed=False``). Each step's output
is ``relu(Z @ W_res + MLP(Z))`` reshaped to one volume per segment, which
also guarantees nonnegative forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import GRUStack, MLP, uniform_init


class TemporalError(ValueError):
    pass


@dataclass
class TemporalConfig:
    hidden: int = 64
    layers: int = 2
    head_depth: int = 3
    head_hidden: int = 64
    decoder_refeed: bool = True  # re-feed last observed input at future steps


class TemporalForecaster:
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int,
                 config: TemporalConfig):
        self.config = config
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.gru = GRUStack(rng, in_dim, config.hidden, config.layers, "temporal.gru")
        self.W_res = ad.param(uniform_init(rng, (out_dim, config.hidden), config.hidden),
                              "temporal.W_res")
        self.head = MLP(rng, config.hidden, config.head_hidden, out_dim,
                        config.head_depth, "temporal.head")

    def encode(self, window: list[Tensor], expected_steps: int | None = None
               ) -> tuple[Tensor, list[Tensor], Tensor]:
        """Unroll over the history window; returns (top state, carry, last input)."""
        if expected_steps is not None and len(window) != expected_steps:
            raise TemporalError(f"expected {expected_steps} input steps, got {len(window)}")
        if not window:
            raise TemporalError("empty history window")
        state = self.gru.zero_state()
        top = None
        for x in window:
            top, state = self.gru.step(x, state)
        return top, state, window[-1]

    def output_head(self, z: Tensor) -> Tensor:
        return ad.relu(ad.add(ad.matmul(self.W_res, z), self.head(z)))

    def decode_and_output(self, top: Tensor, state: list[Tensor], last_input: Tensor,
                          horizons: int) -> list[Tensor]:
        """Roll the GRU ``horizons`` steps; first output uses the encoder state."""
        outputs = [self.output_head(top)]
        if self.config.decoder_refeed:
            step_input = last_input
        else:
            step_input = ad.constant(np.zeros(self.in_dim))
        for _ in range(horizons - 1):
            top, state = self.gru.step(step_input, state)
            outputs.append(self.output_head(top))
        return outputs

    def forward(self, window: list[Tensor], horizons: int,
                expected_steps: int | None = None) -> list[Tensor]:
        top, state, last = self.encode(window, expected_steps)
        return self.decode_and_output(top, state, last, horizons)

    def forward_batch(self, windows: list[list[Tensor]], horizons: int,
                      expected_steps: int | None = None) -> list[list[Tensor]]:
        """Column-batched rollout over equal-length windows.

        Matches per-window :meth:`forward` up to float reassociation.
        """
        length = len(windows[0])
        if any(len(w) != length for w in windows):
            raise TemporalError("forward_batch needs equal-length windows")
        if expected_steps is not None and length != expected_steps:
            raise TemporalError(f"expected {expected_steps} input steps, got {length}")
        cols = len(windows)
        xs = [ad.stack_columns([w[i] for w in windows]) for i in range(length)]
        state = self.gru.zero_state_batch(cols)
        top = None
        for x in xs:
            top, state = self.gru.step_batch(x, state)

        def head_batch(z: Tensor) -> Tensor:
            return ad.relu(ad.add(ad.matmul(self.W_res, z), self.head.batch(z)))

        outputs = [head_batch(top)]
        if self.config.decoder_refeed:
            step_input = xs[-1]
        else:
            step_input = ad.constant(np.zeros((self.in_dim, cols)))
        for _ in range(horizons - 1):
            top, state = self.gru.step_batch(step_input, state)
            outputs.append(head_batch(top))
        return [[ad.column(outputs[h], j) for h in range(horizons)]
                for j in range(cols)]

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.gru.named_params())
        out[self.W_res.name] = self.W_res
        out.update(self.head.named_params())
        return out
