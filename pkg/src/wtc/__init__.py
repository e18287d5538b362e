"""Weight-tensor compaction: shared-block sparse storage and Huffman coding."""

from wtc.tensor import DenseTensor, flatten_to_matrix, synth_planted
from wtc.container import load_container, save_container
from wtc.reduce import PruneSpec, QuantGrid, prune, quantize, default_scale
from wtc.formats import (
    BsrMatrix,
    SbsrMatrix,
    to_bsr,
    to_sbsr,
    decode,
    get_block,
    update_block,
    spmv,
)
from wtc.huffman import (
    Codebook,
    EncodedTensor,
    build_codebook,
    encode_elementwise,
    encode_vectorwise,
)
from wtc.accounting import (
    WidthPolicy,
    SizeBreakdown,
    size_dense,
    size_bsr,
    size_sbsr,
    size_huffman,
    cr_over_bsr,
    cr_huffman,
    breakdown_report,
)
from wtc.sweep import (
    block_histogram,
    sweep_block_width,
    compare_rounding,
    analyze_layer,
)

__version__ = "0.1.0"

__all__ = [
    "DenseTensor",
    "flatten_to_matrix",
    "synth_planted",
    "load_container",
    "save_container",
    "PruneSpec",
    "QuantGrid",
    "prune",
    "quantize",
    "default_scale",
    "BsrMatrix",
    "SbsrMatrix",
    "to_bsr",
    "to_sbsr",
    "decode",
    "get_block",
    "update_block",
    "spmv",
    "Codebook",
    "EncodedTensor",
    "build_codebook",
    "encode_elementwise",
    "encode_vectorwise",
    "WidthPolicy",
    "SizeBreakdown",
    "size_dense",
    "size_bsr",
    "size_sbsr",
    "size_huffman",
    "cr_over_bsr",
    "cr_huffman",
    "breakdown_report",
    "block_histogram",
    "sweep_block_width",
    "compare_rounding",
    "analyze_layer",
]
