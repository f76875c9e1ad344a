# SPDX-License-Identifier: Apache-2.0
"""Infant cry analysis pipeline: log-mel features, pooled CNN classifiers,
knowledge distillation and int8 quantization."""

try:
    from . import _infantcrynet as _core
except ImportError:  # extension living outside the package (build tree)
    import _infantcrynet as _core

globals().update(
    {name: getattr(_core, name) for name in dir(_core) if not name.startswith("_")}
)

__version__ = "0.1.0"
