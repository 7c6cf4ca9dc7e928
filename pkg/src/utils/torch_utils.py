# src/utils/torch_utils.py
import math
from typing import Iterable, Optional, Tuple

import torch
from torch import nn

DTYPE = torch.float64


def configure_torch(threads: int = 1) -> None:
    """Pins intra-op threads so trained parameters are reproducible bit for bit."""
    torch.set_num_threads(threads)


def seeded_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def init_linear_(layer: nn.Linear, generator: torch.Generator) -> None:
    """Scaled-uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias."""
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.copy_(uniform(layer.weight.shape, bound, generator))
        if layer.bias is not None:
            layer.bias.copy_(uniform(layer.bias.shape, bound, generator))


def uniform(shape: Tuple[int, ...], bound: float, generator: torch.Generator) -> torch.Tensor:
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound


def dropout_mask(shape: Tuple[int, ...], rate: float, generator: Optional[torch.Generator]) -> Optional[torch.Tensor]:
    """
    Inverted-dropout mask: zeros with probability `rate`, survivors scaled by
    1 / (1 - rate). Returns None when dropout is off.
    """
    if rate <= 0.0:
        return None
    keep = torch.rand(shape, generator=generator, dtype=DTYPE) >= rate
    return keep.to(DTYPE) / (1.0 - rate)


def apply_dropout(x: torch.Tensor, rate: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    mask = dropout_mask(tuple(x.shape), rate, generator) if generator is not None else None
    return x if mask is None else x * mask


def zero_parameters_(parameters: Iterable[nn.Parameter]) -> None:
    with torch.no_grad():
        for parameter in parameters:
            parameter.zero_()
