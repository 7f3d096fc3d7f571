from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from ultralytics.utils import LOGGER

from ltc_rerank.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, LTC_COLORSTR
from ltc_rerank.engine.model import ModelConfig, RerankerTransformer
from ltc_rerank.exceptions import ConfigurationError, DataFormatError

# Little-endian header: magic, version, then the ModelConfig fields in declaration order
HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("num_layers", "<u4"),
        ("hidden", "<u4"),
        ("num_heads", "<u4"),
        ("mlp_dim", "<u4"),
        ("vocab_size", "<u4"),
        ("max_seq", "<u4"),
        ("rope_base", "<f8"),
        ("num_identifiers", "<u4"),
        ("norm_eps", "<f8"),
    ]
)
_CONFIG_FIELDS = [name for name in HEADER_DTYPE.names if name not in ("magic", "version")]


def save_checkpoint(model: RerankerTransformer, path: str | Path) -> None:
    """Write the model config and all parameters (as 32-bit floats, declaration order) to `path`."""
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = CHECKPOINT_MAGIC
    header["version"] = CHECKPOINT_VERSION
    for name in _CONFIG_FIELDS:
        header[name] = getattr(model.config, name)

    chunks = [header.tobytes()]
    for _, parameter in model.named_parameters():
        chunks.append(np.ascontiguousarray(parameter.detach().cpu().numpy(), dtype="<f4").tobytes())

    Path(path).write_bytes(b"".join(chunks))
    LOGGER.info(f"{LTC_COLORSTR}Saved checkpoint to {path}")


def load_checkpoint(path: str | Path) -> RerankerTransformer:
    """Read a checkpoint written by `save_checkpoint`.

    :raises DataFormatError: If the file is not a valid checkpoint.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_DTYPE.itemsize:
        raise DataFormatError("File is too short to hold a checkpoint header.", path=str(path))

    header = np.frombuffer(data, dtype=HEADER_DTYPE, count=1)[0]
    if header["magic"] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"Bad magic {header['magic']!r}, expected {CHECKPOINT_MAGIC!r}.", path=str(path))
    if header["version"] != CHECKPOINT_VERSION:
        raise DataFormatError(f"Unsupported checkpoint version {header['version']}.", path=str(path))

    try:
        config = ModelConfig(**{name: header[name].item() for name in _CONFIG_FIELDS})
    except ConfigurationError as e:
        raise DataFormatError(f"Header describes an invalid model: {e}", path=str(path)) from e
    model = RerankerTransformer(config)

    expected = HEADER_DTYPE.itemsize + 4 * sum(p.numel() for p in model.parameters())
    if len(data) != expected:
        raise DataFormatError(
            f"Checkpoint holds {len(data)} bytes but the header describes a model of {expected} bytes.", path=str(path)
        )

    offset = HEADER_DTYPE.itemsize
    with torch.no_grad():
        for _, parameter in model.named_parameters():
            values = np.frombuffer(data, dtype="<f4", count=parameter.numel(), offset=offset)
            parameter.copy_(torch.from_numpy(values.astype(np.float32)).view_as(parameter))
            offset += 4 * parameter.numel()

    return model
