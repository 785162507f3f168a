"""Typed point-free program synthesis over trainable neural modules."""

from .lang import (Compose, ConvC, FoldC, FunType, GraphType, Hole, LibRef,
                   ListType, MapC, TensorType, Zeros, parse_program,
                   parse_type, print_program, program_size, type_text)
from .typecheck import (TypeInconsistency, TypeUniverse, UniverseConfig,
                        check_type, enumerate_universe, infer_type)

__all__ = [
    "Compose", "ConvC", "FoldC", "FunType", "GraphType", "Hole", "LibRef",
    "ListType", "MapC", "TensorType", "Zeros", "parse_program", "parse_type",
    "print_program", "program_size", "type_text", "TypeInconsistency",
    "TypeUniverse", "UniverseConfig", "check_type", "enumerate_universe",
    "infer_type",
]

__version__ = "0.1.0"
