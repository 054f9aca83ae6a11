from .lang import parse_source
from .check import validate, KernelIR
from .codegen import emit_source, compile_ir

__all__ = ["parse_source", "validate", "KernelIR", "emit_source", "compile_ir"]


def parse_and_validate(source: str) -> dict[str, KernelIR]:
    """Source text -> {kernel name: validated IR}. Raises CompileError."""
    kernels = parse_source(source)
    return {k.name: validate(k) for k in kernels}
